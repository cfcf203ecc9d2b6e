use std::path::Path;

use anyhow::Context as _;
use ncm_core::checkpoint::{self, Checkpoint};
use ncm_core::decode::{beam_search, DecodeConfig, DecodeError};
use ncm_core::eval::ModelResponder;
use ncm_core::text::{anonymize, detokenize, NameLexicon, TokenId, Tokenizer};
use serde::Serialize;

/// A loaded checkpoint plus the text-side settings needed to talk to it.
pub struct Engine {
    pub checkpoint: Checkpoint,
    pub tokenizer: Tokenizer,
    pub names: NameLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    #[serde(skip)]
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub logprob: f64,
}

impl Engine {
    pub fn new(checkpoint: Checkpoint, names: NameLexicon) -> Self {
        Engine {
            checkpoint,
            tokenizer: Tokenizer::default(),
            names,
        }
    }

    pub fn load(path: &Path, names: Option<&Path>) -> anyhow::Result<Self> {
        let ck = checkpoint::load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        let names = match names {
            Some(p) => NameLexicon::parse(
                &std::fs::read_to_string(p)
                    .with_context(|| format!("reading name lexicon {}", p.display()))?,
            ),
            None => NameLexicon::default(),
        };
        Ok(Engine::new(ck, names))
    }

    /// Anonymized, tokenized form of user text.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        self.tokenizer
            .tokenize(&anonymize(text, &self.names, &self.tokenizer))
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.checkpoint.vocab.encode(&self.tokens(text))
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        let vocab = &self.checkpoint.vocab;
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| vocab.word(id).unwrap_or("<unk>"))
            .collect();
        detokenize(&words)
    }

    /// Ranked replies for an encoded context; width 1 is greedy decoding.
    pub fn decode(
        &self,
        context: &[TokenId],
        dconfig: &DecodeConfig,
    ) -> Result<Vec<Candidate>, DecodeError> {
        let ck = &self.checkpoint;
        let hyps = beam_search(context, &ck.params, &ck.config, dconfig)?;
        Ok(hyps
            .iter()
            .map(|h| Candidate {
                tokens: h.reply().to_vec(),
                text: self.render(h.reply()),
                logprob: h.logprob,
            })
            .collect())
    }

    pub fn responder(&self, label: &str, decode: DecodeConfig) -> ModelResponder<'_, f32> {
        ModelResponder {
            label: label.to_string(),
            tokenizer: self.tokenizer,
            names: self.names.clone(),
            vocab: &self.checkpoint.vocab,
            params: &self.checkpoint.params,
            config: &self.checkpoint.config,
            decode,
        }
    }
}
