//! Greedy decoding and beam search.
//!
//! Both searches run against [`StepModel`], so they work for the LSTM
//! network and for small hand-built models used in tests. Scores are
//! natural-log probabilities accumulated in 64-bit.

use std::cmp::Ordering;

use thiserror::Error;

use crate::math::{log_softmax, Real};
use crate::model::{self, ModelConfig, ModelError, ModelParams, SequenceState};
use crate::text::{TokenId, EOS, PAD, UNK};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("context must be non-empty")]
    EmptyContext,
    #[error("invalid decode config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub beam_width: usize,
    /// Never emit `<unk>`. `<pad>` is never emitted regardless.
    pub ban_unk: bool,
    /// Rank finished hypotheses by mean per-token log-probability instead
    /// of the raw sum. Off by default.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: 64,
            beam_width: 1,
            ban_unk: true,
            length_normalize: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.max_len == 0 {
            return Err(DecodeError::Config("max_len must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(DecodeError::Config("beam_width must be at least 1".into()));
        }
        Ok(())
    }

    fn allowed(&self, token: usize) -> bool {
        token != PAD as usize && !(self.ban_unk && token == UNK as usize)
    }
}

/// An autoregressive model exposed one step at a time.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// State from which the first reply token is predicted.
    fn start(&self, context: &[TokenId]) -> Result<Self::State, DecodeError>;

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State, DecodeError>;

    /// Natural-log next-token probabilities, one per vocabulary entry.
    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>, DecodeError>;
}

/// The LSTM network viewed as a [`StepModel`].
#[derive(Debug, Clone, Copy)]
pub struct Seq2Seq<'a, F> {
    pub params: &'a ModelParams<F>,
    pub config: &'a ModelConfig,
}

impl<'a, F: Real> Seq2Seq<'a, F> {
    pub fn new(params: &'a ModelParams<F>, config: &'a ModelConfig) -> Self {
        Seq2Seq { params, config }
    }
}

impl<F: Real> StepModel for Seq2Seq<'_, F> {
    type State = SequenceState<F>;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn start(&self, context: &[TokenId]) -> Result<Self::State, DecodeError> {
        if context.is_empty() {
            return Err(DecodeError::EmptyContext);
        }
        Ok(model::encode_context(context, self.params, self.config)?)
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Result<Self::State, DecodeError> {
        Ok(model::step(self.params, self.config, state, token)?)
    }

    fn log_probs(&self, state: &Self::State) -> Result<Vec<f64>, DecodeError> {
        let (_, logits) = model::output_logits(state.top_hidden(), self.params);
        Ok(log_softmax(&logits).into_iter().map(Real::as_f64).collect())
    }
}

/// Result of greedy decoding; `tokens` excludes the terminating eos.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub ended_with_eos: bool,
}

/// Repeated argmax (lowest id wins ties), fed back until eos or `max_len`.
pub fn greedy_search<M: StepModel>(
    model: &M,
    context: &[TokenId],
    dconfig: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    dconfig.validate()?;
    if context.is_empty() {
        return Err(DecodeError::EmptyContext);
    }
    let mut state = model.start(context)?;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    while tokens.len() < dconfig.max_len {
        let lps = model.log_probs(&state)?;
        let mut best: Option<(usize, f64)> = None;
        for (t, &lp) in lps.iter().enumerate() {
            if dconfig.allowed(t) && best.is_none_or(|(_, b)| lp > b) {
                best = Some((t, lp));
            }
        }
        let (token, lp) = best.ok_or_else(|| DecodeError::Config("no emittable token".into()))?;
        let token = token as TokenId;
        logprob += lp;
        if token == EOS {
            return Ok(Decoded {
                tokens,
                logprob,
                ended_with_eos: true,
            });
        }
        tokens.push(token);
        if tokens.len() < dconfig.max_len {
            state = model.advance(&state, token)?;
        }
    }
    Ok(Decoded {
        tokens,
        logprob,
        ended_with_eos: false,
    })
}

pub fn greedy_decode<F: Real>(
    context: &[TokenId],
    params: &ModelParams<F>,
    config: &ModelConfig,
    dconfig: &DecodeConfig,
) -> Result<Decoded, DecodeError> {
    greedy_search(&Seq2Seq::new(params, config), context, dconfig)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis<S> {
    /// Emitted tokens, including the eos when the hypothesis ended on one.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub state: S,
    pub finished: bool,
}

impl<S> BeamHypothesis<S> {
    /// The reply without its terminating eos.
    pub fn reply(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    fn score(&self, normalize: bool) -> f64 {
        if normalize && !self.tokens.is_empty() {
            self.logprob / self.tokens.len() as f64
        } else {
            self.logprob
        }
    }
}

/// Higher score first, then shorter, then lexicographically smaller tokens.
fn rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Standard beam search without length normalization (unless configured).
///
/// Each step expands every live hypothesis over the allowed vocabulary and
/// keeps the best `beam_width` expansions. Expansions ending in eos or
/// reaching `max_len` retire to the finished pool; search stops once the
/// pool holds `beam_width` hypotheses or nothing is live. Output is sorted
/// best first and has at most `beam_width` entries.
pub fn beam_search_with<M: StepModel>(
    model: &M,
    context: &[TokenId],
    dconfig: &DecodeConfig,
) -> Result<Vec<BeamHypothesis<M::State>>, DecodeError> {
    dconfig.validate()?;
    if context.is_empty() {
        return Err(DecodeError::EmptyContext);
    }
    let width = dconfig.beam_width;
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: model.start(context)?,
        finished: false,
    }];
    let mut pool: Vec<BeamHypothesis<M::State>> = Vec::new();

    while !live.is_empty() && pool.len() < width {
        struct Candidate {
            parent: usize,
            tokens: Vec<TokenId>,
            logprob: f64,
        }
        let mut candidates = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let lps = model.log_probs(&hyp.state)?;
            for (t, &lp) in lps.iter().enumerate() {
                if !dconfig.allowed(t) {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(t as TokenId);
                candidates.push(Candidate {
                    parent,
                    tokens,
                    logprob: hyp.logprob + lp,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a.logprob, &a.tokens, b.logprob, &b.tokens));
        candidates.truncate(width);

        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let last = *c.tokens.last().expect("non-empty");
            let parent_state = &live[c.parent].state;
            if last == EOS || c.tokens.len() >= dconfig.max_len {
                let state = if last == EOS {
                    parent_state.clone()
                } else {
                    model.advance(parent_state, last)?
                };
                pool.push(BeamHypothesis {
                    tokens: c.tokens,
                    logprob: c.logprob,
                    state,
                    finished: true,
                });
            } else {
                next.push(BeamHypothesis {
                    state: model.advance(parent_state, last)?,
                    tokens: c.tokens,
                    logprob: c.logprob,
                    finished: false,
                });
            }
        }
        live = next;
    }

    let normalize = dconfig.length_normalize;
    pool.sort_by(|a, b| rank(a.score(normalize), &a.tokens, b.score(normalize), &b.tokens));
    pool.truncate(width);
    Ok(pool)
}

pub fn beam_search<F: Real>(
    context: &[TokenId],
    params: &ModelParams<F>,
    config: &ModelConfig,
    dconfig: &DecodeConfig,
) -> Result<Vec<BeamHypothesis<SequenceState<F>>>, DecodeError> {
    beam_search_with(&Seq2Seq::new(params, config), context, dconfig)
}
