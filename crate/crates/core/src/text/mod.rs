//! Tokenization, vocabulary, corpus ingestion and pair construction.

mod corpus;
mod pairs;
mod tokenize;
mod vocab;

use thiserror::Error;

pub use corpus::{
    anonymize, is_url, parse_dialogue_corpus, strip_markup, subtitle_conversation, Actor,
    Conversation, MarkupStats, NameLexicon, StrippedDocument, Utterance, NAME_MARKER,
    NUMBER_MARKER, URL_MARKER,
};
pub use pairs::{
    build_helpdesk_pairs, pair_consecutive, pairs_to_file_string, parse_pairs_file, push_turn,
    split_documents, split_pairs, DocumentPairs, TextPair, TrainingPair, DEFAULT_CONTEXT_CAP,
};
pub use tokenize::{detokenize, is_marker, tokenize, Tokenizer};
pub use vocab::{
    TokenId, Vocabulary, ACTOR_A, ACTOR_B, EOS, NUM_SPECIALS, PAD, SPECIALS, TURN, UNK,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TextError {
    #[error("vocabulary cap must exceed the {NUM_SPECIALS} special tokens, got {0}", NUM_SPECIALS = NUM_SPECIALS)]
    VocabCap(usize),
    #[error("invalid token {0:?}")]
    InvalidToken(String),
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary file: {0}")]
    VocabFile(String),
    #[error("context and reply must be non-empty")]
    EmptySequence,
    #[error("pad token inside a training pair")]
    PadInPair,
    #[error("malformed pair line: {0:?}")]
    PairLine(String),
    #[error("valid fraction must lie in (0, 1), got {0}")]
    SplitFraction(f64),
    #[error("need at least 2 documents to split, got {0}")]
    TooFewDocuments(usize),
}
