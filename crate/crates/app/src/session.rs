//! Chat sessions: the running token context plus a readable transcript.

use std::collections::VecDeque;
use std::time::{SystemTime, UNIX_EPOCH};

use ncm_core::text::{TokenId, ACTOR_A, ACTOR_B, TURN};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Model,
}

impl Speaker {
    fn marker(self) -> TokenId {
        match self {
            Speaker::User => ACTOR_A,
            Speaker::Model => ACTOR_B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptEntry {
    pub speaker: Speaker,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
}

/// Milliseconds since the Unix epoch.
pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone)]
pub struct ChatSession {
    pub id: String,
    pub created_ms: u64,
    pub last_active_ms: u64,
    pub turn_count: usize,
    pub transcript: Vec<TranscriptEntry>,
    context_cap: usize,
    /// Encoded turns, oldest first, each laid out as `actor tokens <turn>`.
    turns: VecDeque<Vec<TokenId>>,
    len: usize,
}

impl ChatSession {
    pub fn new(id: impl Into<String>, context_cap: usize) -> Self {
        let now = now_millis();
        ChatSession {
            id: id.into(),
            created_ms: now,
            last_active_ms: now,
            turn_count: 0,
            transcript: Vec::new(),
            context_cap: context_cap.max(2),
            turns: VecDeque::new(),
            len: 0,
        }
    }

    pub fn context_cap(&self) -> usize {
        self.context_cap
    }

    /// The model input: every retained turn, concatenated.
    pub fn context(&self) -> Vec<TokenId> {
        self.turns.iter().flatten().copied().collect()
    }

    pub fn context_len(&self) -> usize {
        self.len
    }

    /// Appends a turn, then drops whole turns from the front until the
    /// context fits. A lone turn longer than the cap keeps its actor marker
    /// followed by its newest tokens.
    pub fn push_turn(
        &mut self,
        speaker: Speaker,
        tokens: &[TokenId],
        text: &str,
        logprob: Option<f64>,
    ) {
        let mut turn = Vec::with_capacity(tokens.len() + 2);
        turn.push(speaker.marker());
        turn.extend_from_slice(tokens);
        turn.push(TURN);
        if turn.len() > self.context_cap {
            let excess = turn.len() - self.context_cap;
            turn.drain(1..1 + excess);
        }
        self.len += turn.len();
        self.turns.push_back(turn);
        while self.len > self.context_cap {
            let dropped = self.turns.pop_front().expect("over-cap context has turns");
            self.len -= dropped.len();
        }
        self.turn_count += 1;
        self.last_active_ms = now_millis();
        self.transcript.push(TranscriptEntry {
            speaker,
            text: text.to_string(),
            logprob,
        });
    }
}
