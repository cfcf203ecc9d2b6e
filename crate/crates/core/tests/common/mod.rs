//! Synthetic corpora and small helpers shared by the integration tests.
#![allow(dead_code)]

use ncm_core::decode::{DecodeError, StepModel};
use ncm_core::math::{log_softmax, rng_from_seed, unit_f64};
use ncm_core::text::{TokenId, TrainingPair, NUM_SPECIALS};
use rand::Rng;

pub const FIRST_WORD: TokenId = NUM_SPECIALS as TokenId;

/// Random non-special ids in `[6, vocab_size)`.
pub fn random_seq(rng: &mut impl Rng, len: usize, vocab_size: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.gen_range(FIRST_WORD..vocab_size as TokenId))
        .collect()
}

pub fn random_pairs(seed: u64, n: usize, vocab_size: usize, max_len: usize) -> Vec<TrainingPair> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let c = rng.gen_range(1..=max_len);
            let r = rng.gen_range(1..=max_len);
            let ctx = random_seq(&mut rng, c, vocab_size);
            let reply = random_seq(&mut rng, r, vocab_size);
            TrainingPair::new(ctx, reply, format!("doc{i}")).unwrap()
        })
        .collect()
}

/// Pairs whose reply repeats the context.
pub fn echo_corpus(seed: u64, n: usize, vocab_size: usize, max_len: usize) -> Vec<TrainingPair> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let ctx = random_seq(&mut rng, len, vocab_size);
            TrainingPair::new(ctx.clone(), ctx, format!("echo{i}")).unwrap()
        })
        .collect()
}

/// Layout of the long-range corpus: contexts of [`LR_CONTEXT_LEN`] tokens
/// with a key at [`LR_KEY_POS`]; the reply is `[answer(key), stop]`.
///
/// In the stream `context ⊕ eos ⊕ reply`, the key sits 8 positions before
/// the first reply token, out of reach of a 5-gram history.
pub const LR_CONTEXT_LEN: usize = 10;
pub const LR_KEY_POS: usize = LR_CONTEXT_LEN + 1 - 8;
pub const LR_KEYS: u32 = 4;
pub const LR_FILLERS: u32 = 10;
pub const LR_VOCAB: usize = NUM_SPECIALS + 2 * LR_KEYS as usize + LR_FILLERS as usize + 1;

pub fn long_range_corpus(seed: u64, n: usize, doc_prefix: &str) -> Vec<TrainingPair> {
    let key0 = FIRST_WORD;
    let answer0 = key0 + LR_KEYS;
    let filler0 = answer0 + LR_KEYS;
    let stop = filler0 + LR_FILLERS;
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let key = rng.gen_range(0..LR_KEYS);
            let mut ctx: Vec<TokenId> = (0..LR_CONTEXT_LEN)
                .map(|_| filler0 + rng.gen_range(0..LR_FILLERS))
                .collect();
            ctx[LR_KEY_POS] = key0 + key;
            TrainingPair::new(ctx, vec![answer0 + key, stop], format!("{doc_prefix}{i}")).unwrap()
        })
        .collect()
}

/// A fixed random autoregressive model over `vocab` tokens. Next-token
/// log-probabilities are a pseudo-random function of the whole prefix.
pub struct TableModel {
    pub vocab: usize,
    pub seed: u64,
}

impl StepModel for TableModel {
    type State = Vec<TokenId>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self, context: &[TokenId]) -> Result<Self::State, DecodeError> {
        let mut s = context.to_vec();
        s.push(u32::MAX);
        Ok(s)
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State, DecodeError> {
        let mut s = state.clone();
        s.push(token);
        Ok(s)
    }

    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>, DecodeError> {
        let mut h = self.seed;
        for &t in state {
            h = h
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(t as u64 + 1);
        }
        let mut rng = rng_from_seed(h);
        let logits: Vec<f64> = (0..self.vocab)
            .map(|_| 4.0 * unit_f64(&mut rng) - 2.0)
            .collect();
        Ok(log_softmax(&logits))
    }
}
