#![allow(dead_code)]

use ncm_app::Engine;
use ncm_core::checkpoint::Checkpoint;
use ncm_core::text::{NameLexicon, Vocabulary};
use ncm_core::{ModelConfig, ModelParams};

pub const WORDS: [&str; 12] = [
    "hello", "hi", "how", "are", "you", "fine", "thanks", "bye", "my", "laptop", "?", ".",
];

pub fn checkpoint() -> Checkpoint {
    let vocab = Vocabulary::from_words(WORDS).unwrap();
    let config = ModelConfig {
        seed: 7,
        ..ModelConfig::new(vocab.len(), 8)
    };
    let mut params = ModelParams::<f32>::init(&config).unwrap();
    // Spread the output distribution so decoding is not a near-tie everywhere.
    params.scale(10.0);
    Checkpoint::new(config, vocab, params)
}

pub fn engine() -> Engine {
    Engine::new(checkpoint(), NameLexicon::new(["sam"]))
}
