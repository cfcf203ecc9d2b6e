//! Interpolated n-gram baseline with a uniform floor.
//!
//! Each pair is counted as the stream
//! `<pad>×(n−1) ⊕ context ⊕ <eos> ⊕ reply ⊕ <eos>`, and
//!
//! ```text
//! P(w | h) = λ₀/V + Σₖ λₖ · count(h_{k−1}, w) / count(h_{k−1})
//! ```
//!
//! where `h_{k−1}` is the last `k − 1` tokens of the history. Orders whose
//! history was never seen contribute nothing and their weight moves to the
//! floor, so every query is a proper distribution over the vocabulary.
//! Perplexity scores only reply tokens and the final eos, the same targets
//! the neural model is trained on.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::text::{TokenId, TrainingPair, EOS, PAD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NGramError {
    #[error("order must be at least 1")]
    Order,
    #[error("invalid smoothing weights: {0}")]
    Weights(String),
    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    Token { token: TokenId, vocab_size: usize },
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("count tables differ in {0}")]
    Incompatible(&'static str),
    #[error("malformed count file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HistoryCounts {
    pub total: u64,
    pub next: BTreeMap<TokenId, u64>,
}

/// Count tables for orders `1..=n`; `tables[k-1]` is keyed by histories of length `k-1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    order: usize,
    vocab_size: usize,
    tables: Vec<BTreeMap<Vec<TokenId>, HistoryCounts>>,
}

impl NGramCounts {
    pub fn new(order: usize, vocab_size: usize) -> Result<Self, NGramError> {
        if order == 0 {
            return Err(NGramError::Order);
        }
        Ok(NGramCounts {
            order,
            vocab_size,
            tables: vec![BTreeMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn table(&self, k: usize) -> &BTreeMap<Vec<TokenId>, HistoryCounts> {
        &self.tables[k - 1]
    }

    pub fn count(&self, history: &[TokenId], token: TokenId) -> u64 {
        self.tables[history.len()]
            .get(history)
            .and_then(|h| h.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    /// Counts every position of `tokens` after `order − 1` leading pads.
    pub fn add_sequence(&mut self, tokens: &[TokenId]) -> Result<(), NGramError> {
        let stream = self.padded(tokens)?;
        let lead = self.order - 1;
        for i in lead..stream.len() {
            for k in 1..=self.order {
                let history = stream[i + 1 - k..i].to_vec();
                let entry = self.tables[k - 1].entry(history).or_default();
                entry.total += 1;
                *entry.next.entry(stream[i]).or_insert(0) += 1;
            }
        }
        Ok(())
    }

    pub fn add_pair(&mut self, pair: &TrainingPair) -> Result<(), NGramError> {
        self.add_sequence(&pair_stream(pair))
    }

    fn padded(&self, tokens: &[TokenId]) -> Result<Vec<TokenId>, NGramError> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(NGramError::Token {
                token: bad,
                vocab_size: self.vocab_size,
            });
        }
        let mut stream = vec![PAD; self.order - 1];
        stream.extend_from_slice(tokens);
        Ok(stream)
    }

    /// Total number of counted token positions.
    pub fn token_count(&self) -> u64 {
        self.tables[0].values().map(|h| h.total).sum()
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &NGramCounts) -> Result<(), NGramError> {
        if self.order != other.order {
            return Err(NGramError::Incompatible("order"));
        }
        if self.vocab_size != other.vocab_size {
            return Err(NGramError::Incompatible("vocabulary size"));
        }
        for (mine, theirs) in self.tables.iter_mut().zip(&other.tables) {
            for (history, counts) in theirs {
                let entry = mine.entry(history.clone()).or_default();
                entry.total += counts.total;
                for (&t, &c) in &counts.next {
                    *entry.next.entry(t).or_insert(0) += c;
                }
            }
        }
        Ok(())
    }

    /// Sorted `history<TAB>token<TAB>count` lines under an `order`/`vocab` header.
    ///
    /// History ids are space-separated; the unigram history is `-`.
    pub fn to_text(&self) -> String {
        let mut s = format!("order\t{}\nvocab\t{}\n", self.order, self.vocab_size);
        for table in &self.tables {
            for (history, counts) in table {
                let h = if history.is_empty() {
                    "-".to_string()
                } else {
                    history
                        .iter()
                        .map(u32::to_string)
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                for (t, c) in &counts.next {
                    let _ = writeln!(s, "{h}\t{t}\t{c}");
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, NGramError> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<usize, NGramError> {
            let (i, line) = lines.next().ok_or(NGramError::Parse {
                line: 0,
                reason: format!("missing {key} header"),
            })?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('\t'))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| NGramError::Parse {
                    line: i + 1,
                    reason: format!("expected `{key}<TAB>n`"),
                })
        };
        let order = header("order")?;
        let vocab = header("vocab")?;
        let mut counts = NGramCounts::new(order, vocab)?;
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| NGramError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad("expected 3 tab-separated fields"));
            }
            let history: Vec<TokenId> = if fields[0] == "-" {
                Vec::new()
            } else {
                fields[0]
                    .split(' ')
                    .map(|x| x.parse().map_err(|_| bad("bad history id")))
                    .collect::<Result<_, _>>()?
            };
            if history.len() >= order {
                return Err(bad("history longer than order − 1"));
            }
            let token: TokenId = fields[1].parse().map_err(|_| bad("bad token id"))?;
            let count: u64 = fields[2].parse().map_err(|_| bad("bad count"))?;
            if token as usize >= vocab || history.iter().any(|&h| h as usize >= vocab) {
                return Err(bad("id out of vocabulary range"));
            }
            let entry = counts.tables[history.len()].entry(history).or_default();
            entry.total += count;
            *entry.next.entry(token).or_insert(0) += count;
        }
        Ok(counts)
    }
}

/// `context ⊕ <eos> ⊕ reply ⊕ <eos>`.
pub fn pair_stream(pair: &TrainingPair) -> Vec<TokenId> {
    let mut s = Vec::with_capacity(pair.context.len() + pair.reply.len() + 2);
    s.extend_from_slice(&pair.context);
    s.push(EOS);
    s.extend_from_slice(&pair.reply);
    s.push(EOS);
    s
}

pub fn train_ngram(
    pairs: &[TrainingPair],
    order: usize,
    vocab_size: usize,
) -> Result<NGramCounts, NGramError> {
    let mut counts = NGramCounts::new(order, vocab_size)?;
    for p in pairs {
        counts.add_pair(p)?;
    }
    Ok(counts)
}

/// Interpolation weights `λ₀ … λₙ`; `λ₀` is the uniform floor.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    weights: Vec<f64>,
}

impl SmoothingConfig {
    pub fn new(weights: Vec<f64>) -> Result<Self, NGramError> {
        if weights.len() < 2 {
            return Err(NGramError::Weights(
                "need a floor and at least one order".into(),
            ));
        }
        if weights[0].is_nan() || weights[0] <= 0.0 {
            return Err(NGramError::Weights("floor weight must be positive".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(NGramError::Weights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(NGramError::Weights(format!("weights sum to {sum}, not 1")));
        }
        Ok(SmoothingConfig { weights })
    }

    /// Defaults: `(0.1, 0.1, 0.15, 0.2, 0.2, 0.25)` for order 5; other orders
    /// use a floor of 0.1 and the rest split evenly.
    pub fn default_for(order: usize) -> Self {
        if order == 5 {
            return SmoothingConfig {
                weights: vec![0.1, 0.1, 0.15, 0.2, 0.2, 0.25],
            };
        }
        let rest = 0.9 / order as f64;
        let mut w = vec![0.1];
        w.extend(std::iter::repeat_n(rest, order));
        SmoothingConfig { weights: w }
    }

    /// Floor `floor`, remaining mass proportional to `ratio^k` for order `k`.
    pub fn geometric(order: usize, floor: f64, ratio: f64) -> Result<Self, NGramError> {
        let raw: Vec<f64> = (1..=order).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = raw.iter().sum();
        let mut w = vec![floor];
        w.extend(raw.iter().map(|r| (1.0 - floor) * r / total));
        // absorb rounding into the floor so the sum is 1 to the last bit possible
        let drift: f64 = 1.0 - w.iter().sum::<f64>();
        w[0] += drift;
        Self::new(w)
    }

    pub fn order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Smoothed probability of `token` after `history` (most recent last).
///
/// Histories shorter than `n − 1` are left-extended with pads; longer ones
/// are cut to their last `n − 1` ids.
pub fn ngram_prob(
    counts: &NGramCounts,
    smoothing: &SmoothingConfig,
    history: &[TokenId],
    token: TokenId,
) -> Result<f64, NGramError> {
    if smoothing.order() != counts.order {
        return Err(NGramError::Weights(format!(
            "{} weights for an order-{} model",
            smoothing.weights.len(),
            counts.order
        )));
    }
    if token as usize >= counts.vocab_size {
        return Err(NGramError::Token {
            token,
            vocab_size: counts.vocab_size,
        });
    }
    let n = counts.order;
    let mut full = vec![PAD; (n - 1).saturating_sub(history.len())];
    full.extend_from_slice(&history[history.len().saturating_sub(n - 1)..]);

    let w = &smoothing.weights;
    let mut floor = w[0];
    let mut p = 0.0;
    for k in 1..=n {
        let h = &full[full.len() - (k - 1)..];
        match counts.tables[k - 1].get(h) {
            Some(hc) if hc.total > 0 => {
                let c = hc.next.get(&token).copied().unwrap_or(0);
                p += w[k] * c as f64 / hc.total as f64;
            }
            _ => floor += w[k],
        }
    }
    Ok(p + floor / counts.vocab_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NGramPerplexity {
    pub total_nll: f64,
    pub token_count: usize,
    pub perplexity: f64,
}

pub fn ngram_perplexity(
    counts: &NGramCounts,
    smoothing: &SmoothingConfig,
    eval_pairs: &[TrainingPair],
) -> Result<NGramPerplexity, NGramError> {
    if eval_pairs.is_empty() {
        return Err(NGramError::EmptyEval);
    }
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for pair in eval_pairs {
        let stream = pair_stream(pair);
        let first_target = pair.context.len() + 1;
        for i in first_target..stream.len() {
            let p = ngram_prob(counts, smoothing, &stream[..i], stream[i])?;
            nll -= p.ln();
            tokens += 1;
        }
    }
    Ok(NGramPerplexity {
        total_nll: nll,
        token_count: tokens,
        perplexity: (nll / tokens as f64).exp(),
    })
}

/// Picks the candidate weights with the lowest perplexity on `eval_pairs`.
pub fn grid_search(
    counts: &NGramCounts,
    eval_pairs: &[TrainingPair],
    candidates: &[SmoothingConfig],
) -> Result<(SmoothingConfig, f64), NGramError> {
    let mut best: Option<(SmoothingConfig, f64)> = None;
    for c in candidates {
        let ppl = ngram_perplexity(counts, c, eval_pairs)?.perplexity;
        if best.as_ref().is_none_or(|(_, b)| ppl < *b) {
            best = Some((c.clone(), ppl));
        }
    }
    best.ok_or_else(|| NGramError::Weights("no candidates".into()))
}

/// Floors × ratios grid of [`SmoothingConfig::geometric`] weights.
pub fn default_grid(order: usize) -> Vec<SmoothingConfig> {
    let mut out = Vec::new();
    for floor in [0.01, 0.05, 0.1, 0.2] {
        for ratio in [0.5, 1.0, 1.5, 2.0, 3.0] {
            if let Ok(c) = SmoothingConfig::geometric(order, floor, ratio) {
                out.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(ctx: &[TokenId], reply: &[TokenId]) -> TrainingPair {
        TrainingPair::new(ctx.to_vec(), reply.to_vec(), "t").unwrap()
    }

    #[test]
    fn bigram_counts_over_a_sequence() {
        let (a, b) = (6, 7);
        let mut c = NGramCounts::new(2, 8).unwrap();
        c.add_sequence(&[a, b, EOS]).unwrap();
        assert_eq!(c.count(&[PAD], a), 1);
        assert_eq!(c.count(&[a], b), 1);
        assert_eq!(c.count(&[b], EOS), 1);
        assert_eq!(c.table(2).values().map(|h| h.total).sum::<u64>(), 3);
    }

    #[test]
    fn unigram_counts() {
        let mut c = NGramCounts::new(1, 8).unwrap();
        c.add_sequence(&[6, 6, 7, EOS]).unwrap();
        assert_eq!(c.count(&[], 6), 2);
        assert_eq!(c.count(&[], 7), 1);
        assert_eq!(c.count(&[], EOS), 1);
    }

    #[test]
    fn accounting_identity() {
        let pairs = vec![pair(&[6, 7], &[8]), pair(&[9], &[6, 6, 7])];
        let c = train_ngram(&pairs, 3, 10).unwrap();
        let expected: usize = pairs
            .iter()
            .map(|p| p.context.len() + p.reply.len() + 2)
            .sum();
        assert_eq!(c.token_count(), expected as u64);
        for k in 1..=3 {
            for h in c.table(k).values() {
                assert_eq!(h.total, h.next.values().sum::<u64>());
            }
        }
    }

    #[test]
    fn empty_counts_are_uniform() {
        let c = NGramCounts::new(5, 12).unwrap();
        let s = SmoothingConfig::default_for(5);
        for t in 0..12 {
            assert_eq!(ngram_prob(&c, &s, &[6, 7], t).unwrap(), 1.0 / 12.0);
        }
        let ppl = ngram_perplexity(&c, &s, &[pair(&[6], &[7, 8])]).unwrap();
        assert!((ppl.perplexity - 12.0).abs() < 1e-12);
    }

    #[test]
    fn memorized_pair_approaches_one() {
        let p = pair(&[6, 7, 8], &[9, 10, 11]);
        let c = train_ngram(std::slice::from_ref(&p), 3, 12).unwrap();
        let s = SmoothingConfig::new(vec![1e-9, 0.0, 0.0, 1.0 - 1e-9]).unwrap();
        let ppl = ngram_perplexity(&c, &s, &[p]).unwrap().perplexity;
        assert!((1.0..1.0 + 1e-6).contains(&ppl), "{ppl}");
    }

    #[test]
    fn weight_validation() {
        assert!(SmoothingConfig::new(vec![0.0, 1.0]).is_err());
        assert!(SmoothingConfig::new(vec![0.5, 0.6]).is_err());
        assert!(SmoothingConfig::new(vec![0.5]).is_err());
        assert!(SmoothingConfig::new(vec![0.2, -0.1, 0.9]).is_err());
        let d = SmoothingConfig::default_for(5);
        assert_eq!(d.weights(), &[0.1, 0.1, 0.15, 0.2, 0.2, 0.25]);
        for n in 1..8 {
            let w = SmoothingConfig::default_for(n);
            assert!((w.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let g = SmoothingConfig::geometric(n, 0.05, 2.0).unwrap();
            assert_eq!(g.order(), n);
        }
        let c = NGramCounts::new(2, 8).unwrap();
        assert!(ngram_prob(&c, &SmoothingConfig::default_for(3), &[], 6).is_err());
    }

    #[test]
    fn text_round_trip_and_merge() {
        let pairs = vec![pair(&[6, 7], &[8]), pair(&[9], &[6, 6, 7])];
        let c = train_ngram(&pairs, 3, 10).unwrap();
        let text = c.to_text();
        assert!(text.starts_with("order\t3\nvocab\t10\n-\t"));
        assert_eq!(NGramCounts::from_text(&text).unwrap(), c);
        assert_eq!(NGramCounts::from_text(&text).unwrap().to_text(), text);

        let mut a = train_ngram(&pairs[..1], 3, 10).unwrap();
        let b = train_ngram(&pairs[1..], 3, 10).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, c);
        assert!(a.merge(&NGramCounts::new(2, 10).unwrap()).is_err());
        assert!(NGramCounts::from_text("order\t2\nvocab\t5\n-\t9\t1\n").is_err());
    }

    #[test]
    fn grid_search_prefers_lower_perplexity() {
        let pairs: Vec<_> = (0..20)
            .map(|i| pair(&[6 + i % 3], &[7 + i % 3, 11]))
            .collect();
        let c = train_ngram(&pairs, 2, 12).unwrap();
        let grid = default_grid(2);
        let (best, ppl) = grid_search(&c, &pairs, &grid).unwrap();
        for g in &grid {
            assert!(ppl <= ngram_perplexity(&c, g, &pairs).unwrap().perplexity);
        }
        assert_eq!(best.order(), 2);
    }
}
