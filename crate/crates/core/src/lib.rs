//! A seq2seq LSTM conversational model built from scratch: corpus
//! pipelines, a single shared recurrent network with hand-derived
//! backpropagation through time, SGD/AdaGrad training with gradient
//! clipping, greedy and beam decoding, an interpolated n-gram baseline,
//! perplexity and blind A/B judging, and a checksummed checkpoint format.

pub mod checkpoint;
pub mod decode;
pub mod eval;
pub mod math;
pub mod model;
pub mod ngram;
pub mod text;
pub mod train;

pub use math::Real;
pub use model::{ModelConfig, ModelParams};
pub use text::{TokenId, TrainingPair, Vocabulary};
