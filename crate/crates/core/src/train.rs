//! SGD and AdaGrad with global-norm clipping, and the epoch loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::eval::{model_perplexity, EvalError};
use crate::math::{rng_from_seed, Real};
use crate::model::{
    backward_accumulate, forward_pair, Gradients, ModelConfig, ModelError, ModelParams,
};
use crate::text::TrainingPair;

pub const DEFAULT_CLIP: f64 = 5.0;
pub const DEFAULT_PATIENCE: usize = 3;
pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("training needs non-empty train and validation sets")]
    EmptyData,
    #[error("non-finite loss on training pair {pair_index} (document {source_doc})")]
    NonFiniteLoss {
        pair_index: usize,
        source_doc: String,
    },
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("parameter and gradient shapes differ")]
    Shape,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdaGrad,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.5,
            OptimizerKind::AdaGrad => 0.1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::AdaGrad => "adagrad",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adagrad" => Some(OptimizerKind::AdaGrad),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Halve the learning rate after an epoch without validation improvement.
    pub lr_halving: bool,
    /// Stop after this many consecutive epochs without validation improvement.
    pub patience: Option<usize>,
}

impl TrainSchedule {
    pub fn new(optimizer: OptimizerKind, epochs: usize) -> Self {
        TrainSchedule {
            optimizer,
            learning_rate: optimizer.default_learning_rate(),
            clip_threshold: DEFAULT_CLIP,
            epochs,
            batch_size: 1,
            shuffle_seed: 0,
            lr_halving: false,
            patience: Some(DEFAULT_PATIENCE),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Schedule(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_threshold > 0.0 && self.clip_threshold.is_finite()) {
            return bad("clip_threshold must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

/// AdaGrad accumulators; `None` until the first AdaGrad step.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub accumulators: Option<ModelParams<F>>,
    pub epsilon: f64,
}

impl<F: Real> Default for OptimizerState<F> {
    fn default() -> Self {
        OptimizerState {
            accumulators: None,
            epsilon: ADAGRAD_EPSILON,
        }
    }
}

/// Rescales all gradients together so their global norm is at most
/// `threshold`. Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(
    grads: &mut Gradients<F>,
    threshold: f64,
) -> Result<f64, TrainError> {
    let mut sq = 0.0f64;
    for (name, t) in grads.tensors() {
        for &g in t {
            let g = g.as_f64();
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient { tensor: name });
            }
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > threshold {
        grads.scale(F::from_f64(threshold / norm));
    }
    Ok(norm)
}

pub fn sgd_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    lr: f64,
) -> Result<(), TrainError> {
    if !params.same_shape(grads) {
        return Err(TrainError::Shape);
    }
    let lr = F::from_f64(lr);
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (p, &g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// `acc ← acc + g²; p ← p − lr·g/(√acc + ε)`.
pub fn adagrad_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
) -> Result<(), TrainError> {
    if !params.same_shape(grads) {
        return Err(TrainError::Shape);
    }
    let acc = state
        .accumulators
        .get_or_insert_with(|| params.zeros_like());
    if !acc.same_shape(params) {
        return Err(TrainError::Shape);
    }
    let lr = F::from_f64(lr);
    let eps = F::from_f64(state.epsilon);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(acc.tensors_mut());
    for (((_, p), (_, g)), (_, a)) in tensors {
        for ((p, &g), a) in p.iter_mut().zip(g).zip(a.iter_mut()) {
            *a += g * g;
            if g != F::zero() {
                *p -= lr * g / (a.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Token-weighted mean loss over the epoch, measured before each batch update.
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_perplexity: f64,
    /// Rate used during this epoch.
    pub learning_rate: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

impl EpochRecord {
    pub const LOG_HEADER: &'static str = "epoch\ttrain_loss\tvalid_loss\tvalid_ppl\tlr\telapsed_s";

    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.4}\t{}\t{:.3}",
            self.epoch,
            self.train_loss,
            self.valid_loss,
            self.valid_perplexity,
            self.learning_rate,
            self.wall_time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EpochLimit,
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainHistory {
    /// Bitwise comparison of everything except wall-clock time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        let key = |r: &EpochRecord| {
            (
                r.epoch,
                r.train_loss.to_bits(),
                r.valid_loss.to_bits(),
                r.valid_perplexity.to_bits(),
                r.learning_rate.to_bits(),
            )
        };
        self.stop == other.stop
            && self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| key(a) == key(b))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams<F>,
    pub best_epoch: usize,
    pub history: TrainHistory,
    /// Optimizer state at the end of the last epoch.
    pub optimizer: OptimizerState<F>,
}

pub fn train<F: Real>(
    params: ModelParams<F>,
    config: &ModelConfig,
    train_pairs: &[TrainingPair],
    valid_pairs: &[TrainingPair],
    schedule: &TrainSchedule,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>, TrainError> {
    train_resume(
        params,
        OptimizerState::default(),
        config,
        train_pairs,
        valid_pairs,
        schedule,
        on_epoch,
    )
}

/// [`train`] starting from existing optimizer state.
pub fn train_resume<F: Real>(
    mut params: ModelParams<F>,
    mut optimizer: OptimizerState<F>,
    config: &ModelConfig,
    train_pairs: &[TrainingPair],
    valid_pairs: &[TrainingPair],
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>, TrainError> {
    schedule.validate()?;
    params.check_shapes(config)?;
    if train_pairs.is_empty() || valid_pairs.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let started = Instant::now();
    let mut rng = rng_from_seed(schedule.shuffle_seed);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut grads = params.zeros_like();
    let mut lr = schedule.learning_rate;
    let mut best: Option<(f64, usize, ModelParams<F>)> = None;
    let mut stale = 0;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        stop: StopReason::EpochLimit,
    };

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        let (mut nll, mut tokens) = (0.0f64, 0usize);
        for batch in order.chunks(schedule.batch_size) {
            for (_, g) in grads.tensors_mut() {
                g.fill(F::zero());
            }
            for &i in batch {
                let pair = &train_pairs[i];
                let (loss, trace) = forward_pair(pair, &params, config)?;
                let pair_nll = trace.total_nll();
                if !loss.is_finite() || !pair_nll.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        pair_index: i,
                        source_doc: pair.source_doc.clone(),
                    });
                }
                nll += pair_nll;
                tokens += trace.target_count();
                backward_accumulate(&trace, &params, config, F::one(), &mut grads)?;
            }
            clip_global_norm(&mut grads, schedule.clip_threshold)?;
            match schedule.optimizer {
                OptimizerKind::Sgd => sgd_step(&mut params, &grads, lr)?,
                OptimizerKind::AdaGrad => adagrad_step(&mut params, &grads, &mut optimizer, lr)?,
            }
        }

        let valid = model_perplexity(&params, config, valid_pairs)?;
        let record = EpochRecord {
            epoch,
            train_loss: nll / tokens as f64,
            valid_loss: valid.mean_nll(),
            valid_perplexity: valid.perplexity,
            learning_rate: lr,
            wall_time: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);

        let improved = best.as_ref().is_none_or(|(b, _, _)| record.valid_loss < *b);
        if improved {
            best = Some((record.valid_loss, epoch, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if schedule.lr_halving {
                lr *= 0.5;
            }
            if schedule.patience.is_some_and(|p| stale >= p) {
                history.stop = StopReason::Converged;
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        history,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Matrix, Vector};
    use crate::model::LstmLayer;

    /// One-tensor-per-slot parameter set small enough to write by hand.
    fn tiny(values: &[f64]) -> ModelParams<f64> {
        ModelParams {
            embedding: Matrix::new(1, values.len(), values.to_vec()).unwrap(),
            layers: vec![LstmLayer {
                w_x: Matrix::zeros(1, 1),
                w_h: Matrix::zeros(1, 1),
                b: Vector::zeros(1),
            }],
            projection: None,
            output_w: Matrix::zeros(1, 1),
            output_b: Vector::zeros(1),
        }
    }

    #[test]
    fn clip_examples() {
        let mut g = tiny(&[6.0, 8.0]);
        let norm = clip_global_norm(&mut g, 5.0).unwrap();
        assert_eq!(norm, 10.0);
        assert_eq!(g.embedding.as_slice(), &[3.0, 4.0]);

        let mut g = tiny(&[1.2, 1.6]);
        let before = g.clone();
        assert!((clip_global_norm(&mut g, 5.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(g, before);

        let mut g = tiny(&[0.0, 0.0]);
        assert_eq!(clip_global_norm(&mut g, 5.0).unwrap(), 0.0);

        let mut g = tiny(&[1.0, f64::NAN]);
        assert_eq!(
            clip_global_norm(&mut g, 5.0).unwrap_err(),
            TrainError::NonFiniteGradient {
                tensor: "embedding".into()
            }
        );
    }

    #[test]
    fn sgd_examples() {
        let mut p = tiny(&[1.0]);
        sgd_step(&mut p, &tiny(&[0.5]), 0.1).unwrap();
        assert!((p.embedding.get(0, 0) - 0.95).abs() < 1e-15);

        let mut p = tiny(&[1.0]);
        sgd_step(&mut p, &tiny(&[0.0]), 0.1).unwrap();
        assert_eq!(p.embedding.get(0, 0), 1.0);

        let (mut twice, mut once) = (tiny(&[0.25]), tiny(&[0.25]));
        sgd_step(&mut twice, &tiny(&[0.5]), 0.1).unwrap();
        sgd_step(&mut twice, &tiny(&[0.5]), 0.1).unwrap();
        sgd_step(&mut once, &tiny(&[1.0]), 0.1).unwrap();
        assert!((twice.embedding.get(0, 0) - once.embedding.get(0, 0)).abs() < 1e-15);

        assert_eq!(
            sgd_step(&mut p, &tiny(&[0.0, 1.0]), 0.1),
            Err(TrainError::Shape)
        );
    }

    #[test]
    fn adagrad_examples() {
        let mut p = tiny(&[0.0]);
        let mut st = OptimizerState {
            accumulators: None,
            epsilon: 0.0,
        };
        adagrad_step(&mut p, &tiny(&[1.0]), &mut st, 0.1).unwrap();
        assert_eq!(st.accumulators.as_ref().unwrap().embedding.get(0, 0), 1.0);
        assert!((p.embedding.get(0, 0) + 0.1).abs() < 1e-15);
        adagrad_step(&mut p, &tiny(&[1.0]), &mut st, 0.1).unwrap();
        assert_eq!(st.accumulators.as_ref().unwrap().embedding.get(0, 0), 2.0);
        assert!((p.embedding.get(0, 0) + 0.1 + 0.1 / 2f64.sqrt()).abs() < 1e-15);

        let before = (p.clone(), st.clone());
        adagrad_step(&mut p, &tiny(&[0.0]), &mut st, 0.1).unwrap();
        assert_eq!((p, st), before);
    }

    #[test]
    fn adagrad_with_epsilon_handles_zero_accumulators() {
        let mut p = tiny(&[0.5, 0.5]);
        let mut st = OptimizerState::default();
        adagrad_step(&mut p, &tiny(&[0.0, 1e-30]), &mut st, 0.1).unwrap();
        assert!(p.first_non_finite().is_none());
    }

    #[test]
    fn schedule_validation() {
        let mut s = TrainSchedule::new(OptimizerKind::Sgd, 0);
        assert!(matches!(s.validate(), Err(TrainError::Schedule(_))));
        s.epochs = 1;
        assert!(s.validate().is_ok());
        s.batch_size = 0;
        assert!(s.validate().is_err());
        s.batch_size = 1;
        s.learning_rate = 0.0;
        assert!(s.validate().is_err());
        s.learning_rate = 0.1;
        s.clip_threshold = -1.0;
        assert!(s.validate().is_err());
        assert_eq!(
            TrainSchedule::new(OptimizerKind::AdaGrad, 1).learning_rate,
            0.1
        );
        assert_eq!(TrainSchedule::new(OptimizerKind::Sgd, 1).learning_rate, 0.5);
    }

    fn data() -> (ModelConfig, Vec<TrainingPair>) {
        let config = ModelConfig {
            vocab_size: 12,
            embedding_size: 6,
            hidden_size: 8,
            num_layers: 1,
            projection_size: 0,
            seed: 5,
            reverse_input: false,
        };
        let pairs = (0..8u32)
            .map(|i| {
                TrainingPair::new(
                    vec![6 + i % 6, 6 + (i + 1) % 6],
                    vec![6 + (i + 2) % 6],
                    format!("d{i}"),
                )
                .unwrap()
            })
            .collect();
        (config, pairs)
    }

    #[test]
    fn training_is_repeatable_and_reduces_loss() {
        let (config, pairs) = data();
        let mut schedule = TrainSchedule::new(OptimizerKind::AdaGrad, 15);
        schedule.batch_size = 3;
        schedule.patience = None;
        let run = || {
            train(
                ModelParams::<f32>::init(&config).unwrap(),
                &config,
                &pairs,
                &pairs,
                &schedule,
                |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.history.same_numbers(&b.history));
        assert_eq!(a.params, b.params);
        let h = &a.history.epochs;
        assert_eq!(h.len(), 15);
        assert!(h.last().unwrap().train_loss < h[0].train_loss);
        let best = h.iter().map(|r| r.valid_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h[a.best_epoch - 1].valid_loss, best);
        assert!(a.optimizer.accumulators.is_some());
    }

    #[test]
    fn patience_and_halving() {
        let (config, pairs) = data();
        let mut schedule = TrainSchedule::new(OptimizerKind::Sgd, 50);
        // A huge rate makes validation loss bounce so the plateau logic fires.
        schedule.learning_rate = 40.0;
        schedule.lr_halving = true;
        schedule.patience = Some(2);
        let out = train(
            ModelParams::<f64>::init(&config).unwrap(),
            &config,
            &pairs,
            &pairs[..2],
            &schedule,
            |_| {},
        )
        .unwrap();
        let h = &out.history.epochs;
        if out.history.stop == StopReason::Converged {
            assert!(h.len() < 50);
        }
        for w in h.windows(2) {
            assert!(
                w[1].learning_rate == w[0].learning_rate
                    || w[1].learning_rate == w[0].learning_rate / 2.0
            );
        }
    }

    #[test]
    fn empty_sets_rejected() {
        let (config, pairs) = data();
        let s = TrainSchedule::new(OptimizerKind::Sgd, 1);
        let p = ModelParams::<f32>::init(&config).unwrap();
        assert_eq!(
            train(p.clone(), &config, &[], &pairs, &s, |_| {}).unwrap_err(),
            TrainError::EmptyData
        );
        assert_eq!(
            train(p, &config, &pairs, &[], &s, |_| {}).unwrap_err(),
            TrainError::EmptyData
        );
    }

    #[test]
    fn log_line_is_tab_separated() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 1.5,
            valid_loss: 2.0,
            valid_perplexity: 2f64.exp(),
            learning_rate: 0.1,
            wall_time: 0.25,
        };
        let line = r.log_line();
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), EpochRecord::LOG_HEADER.split('\t').count());
        assert_eq!(fields[0], "3");
        assert_eq!(fields[4], "0.1");
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::math::{Matrix, Vector};
    use crate::model::LstmLayer;
    use proptest::prelude::*;

    fn params(v: Vec<f64>) -> ModelParams<f64> {
        let n = v.len();
        ModelParams {
            embedding: Matrix::new(1, n, v).unwrap(),
            layers: vec![LstmLayer {
                w_x: Matrix::zeros(1, 1),
                w_h: Matrix::zeros(1, 1),
                b: Vector::zeros(1),
            }],
            projection: None,
            output_w: Matrix::zeros(1, 1),
            output_b: Vector::zeros(1),
        }
    }

    proptest! {
        #[test]
        fn clipping_bounds_norm_and_keeps_direction(
            v in prop::collection::vec(-100.0f64..100.0, 1..20),
            threshold in 0.01f64..50.0,
        ) {
            let input = params(v);
            let mut g = input.clone();
            clip_global_norm(&mut g, threshold).unwrap();
            let norm: f64 = g.tensors().iter().flat_map(|(_, t)| t.iter()).map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= threshold + 1e-6);
            let a = input.embedding.as_slice();
            let b = g.embedding.as_slice();
            let i = (0..a.len()).max_by(|&x, &y| a[x].abs().total_cmp(&a[y].abs())).unwrap();
            if a[i] != 0.0 {
                let alpha = b[i] / a[i];
                prop_assert!(alpha > 0.0 && alpha <= 1.0 + 1e-12);
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((y - alpha * x).abs() <= 1e-9 * (1.0 + x.abs()));
                }
            }
        }

        #[test]
        fn accumulators_never_decrease(
            steps in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..10),
        ) {
            let mut p = params(vec![0.0; 4]);
            let mut st = OptimizerState::default();
            let mut prev = vec![0.0; 4];
            for g in steps {
                adagrad_step(&mut p, &params(g), &mut st, 0.1).unwrap();
                let acc = st.accumulators.as_ref().unwrap().embedding.as_slice().to_vec();
                for (a, b) in acc.iter().zip(&prev) {
                    prop_assert!(a >= b);
                }
                prev = acc;
                prop_assert!(p.first_non_finite().is_none());
            }
        }
    }
}
