//! Perplexity for the neural model and the blind A/B judging workflow.

mod judging;
mod perplexity;

use thiserror::Error;

use crate::decode::{beam_search, DecodeConfig, DecodeError};
use crate::math::Real;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::text::{anonymize, detokenize, NameLexicon, Tokenizer, Vocabulary};

pub use judging::{
    aggregate_judgments, aggregate_votes, build_comparison, from_jsonl, partial_tally,
    resolve_item, to_jsonl, Choice, ComparisonItem, ComparisonSet, ComparisonTally, ExportRecord,
    JudgeVote, Outcome, Presentation, Responder, Side, Unavailable, AGREEMENT, JUDGES_PER_ITEM,
};
pub use perplexity::{model_perplexity, PerplexityReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("perplexity needs at least one pair")]
    EmptyPairs,
    #[error("non-finite loss on pair {pair_index} (document {source_doc})")]
    NonFinite {
        pair_index: usize,
        source_doc: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("item {item_id:?} has {found} votes, expected 4")]
    VoteCount { item_id: String, found: usize },
    #[error("judge {judge_id:?} voted twice on item {item_id:?}")]
    DuplicateVote { item_id: String, judge_id: String },
    #[error("vote for unknown item {0:?}")]
    UnknownItem(String),
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
}

/// Answers questions with the local model: anonymize, tokenize, encode,
/// beam search, detokenize.
pub struct ModelResponder<'a, F> {
    pub label: String,
    pub tokenizer: Tokenizer,
    pub names: NameLexicon,
    pub vocab: &'a Vocabulary,
    pub params: &'a ModelParams<F>,
    pub config: &'a ModelConfig,
    pub decode: DecodeConfig,
}

impl<'a, F: Real> ModelResponder<'a, F> {
    pub fn answer(&self, question: &str) -> Result<String, DecodeError> {
        let text = anonymize(question, &self.names, &self.tokenizer);
        let ids = self.vocab.encode(&self.tokenizer.tokenize(&text));
        let best = beam_search(&ids, self.params, self.config, &self.decode)?;
        let words: Vec<&str> = best[0]
            .reply()
            .iter()
            .map(|&id| self.vocab.word(id).unwrap_or("<unk>"))
            .collect();
        Ok(detokenize(&words))
    }
}

impl<'a, F: Real> Responder for ModelResponder<'a, F> {
    fn label(&self) -> &str {
        &self.label
    }

    fn respond(&self, question: &str) -> Result<String, String> {
        self.answer(question).map_err(|e| e.to_string())
    }
}
