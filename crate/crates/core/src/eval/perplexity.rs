use crate::math::Real;
use crate::model::{forward_pair, ModelConfig, ModelParams};
use crate::text::TrainingPair;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityReport {
    pub total_nll: f64,
    /// Σ (reply length + 1) over the pairs.
    pub token_count: usize,
    pub perplexity: f64,
    pub pair_count: usize,
}

impl PerplexityReport {
    pub fn mean_nll(&self) -> f64 {
        self.total_nll / self.token_count as f64
    }
}

/// `exp` of the mean per-token cross-entropy over every reply token and
/// its terminating eos, pooled across pairs.
pub fn model_perplexity<F: Real>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    pairs: &[TrainingPair],
) -> Result<PerplexityReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let mut total_nll = 0.0;
    let mut token_count = 0;
    for (index, pair) in pairs.iter().enumerate() {
        let (_, trace) = forward_pair(pair, params, config)?;
        let nll = trace.total_nll();
        if !nll.is_finite() {
            return Err(EvalError::NonFinite {
                pair_index: index,
                source_doc: pair.source_doc.clone(),
            });
        }
        total_nll += nll;
        token_count += trace.target_count();
    }
    Ok(PerplexityReport {
        total_nll,
        token_count,
        perplexity: (total_nll / token_count as f64).exp(),
        pair_count: pairs.len(),
    })
}
