//! External responder over HTTP.
//!
//! Request: `POST <url>` with body `{"question": "..."}`.
//! Response: `200` with body `{"answer": "..."}`. Any other status, a
//! malformed body or a timeout marks the question unavailable.

use std::time::Duration;

use ncm_core::eval::Responder;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionBody {
    pub question: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerBody {
    pub answer: String,
}

pub struct HttpResponder {
    label: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpResponder {
    pub fn new(
        label: impl Into<String>,
        url: impl Into<String>,
        timeout: Duration,
    ) -> anyhow::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()?;
        Ok(HttpResponder {
            label: label.into(),
            url: url.into(),
            client,
        })
    }
}

impl Responder for HttpResponder {
    fn label(&self) -> &str {
        &self.label
    }

    fn respond(&self, question: &str) -> Result<String, String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&QuestionBody {
                question: question.to_string(),
            })
            .send()
            .map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("responder returned {status}"));
        }
        let body: AnswerBody = resp
            .json()
            .map_err(|e| format!("bad responder body: {e}"))?;
        Ok(body.answer)
    }
}
