//! The seq2seq network: one embedding table, one stack of LSTM layers shared
//! by context reading and reply emission, an optional linear projection and
//! a softmax classifier.

mod lstm;
mod network;

use thiserror::Error;

use crate::math::{fill_uniform, rng_from_seed, MathError, Matrix, Real, Vector};
use crate::text::NUM_SPECIALS;

pub use lstm::{lstm_cell, CellStep, LstmLayer};
pub use network::{
    backward_accumulate, backward_pair, backward_pair_scaled, encode_context, forward_pair,
    initial_state, output_logits, predict_distribution, step, thought_vector, ForwardTrace,
    LayerState, OutputStep, SequenceState,
};

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("parameter shapes do not match config: {0}")]
    ParamShape(String),
    #[error("context and reply must both be non-empty")]
    EmptySequence,
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Width of the linear projection before the classifier; 0 disables it.
    pub projection_size: usize,
    pub seed: u64,
    /// Feed the context back to front. Off by default.
    pub reverse_input: bool,
}

impl ModelConfig {
    /// Single layer, no projection, embedding size equal to `hidden_size`.
    pub fn new(vocab_size: usize, hidden_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embedding_size: hidden_size,
            hidden_size,
            num_layers: 1,
            projection_size: 0,
            seed: 0,
            reverse_input: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size <= NUM_SPECIALS {
            return Err(ModelError::Config(format!(
                "vocab_size must be at least {}, got {}",
                NUM_SPECIALS + 1,
                self.vocab_size
            )));
        }
        for (name, v) in [
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of the vector fed to the classifier.
    pub fn classifier_input(&self) -> usize {
        if self.projection_size > 0 {
            self.projection_size
        } else {
            self.hidden_size
        }
    }

    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embedding_size
        } else {
            self.hidden_size
        }
    }

    /// Named tensor shapes in canonical (directory) order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h4 = 4 * self.hidden_size;
        let mut shapes = vec![(
            "embedding".to_string(),
            vec![self.vocab_size, self.embedding_size],
        )];
        for l in 0..self.num_layers {
            shapes.push((format!("lstm.{l}.w_x"), vec![h4, self.layer_input(l)]));
            shapes.push((format!("lstm.{l}.w_h"), vec![h4, self.hidden_size]));
            shapes.push((format!("lstm.{l}.b"), vec![h4]));
        }
        if self.projection_size > 0 {
            shapes.push((
                "projection".to_string(),
                vec![self.projection_size, self.hidden_size],
            ));
        }
        shapes.push((
            "output.w".to_string(),
            vec![self.vocab_size, self.classifier_input()],
        ));
        shapes.push(("output.b".to_string(), vec![self.vocab_size]));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Embedding, LSTM stack, optional projection and classifier weights.
///
/// Also used for gradients and optimizer accumulators, which share the shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub embedding: Matrix<F>,
    pub layers: Vec<LstmLayer<F>>,
    pub projection: Option<Matrix<F>>,
    pub output_w: Matrix<F>,
    pub output_b: Vector<F>,
}

pub type Gradients<F> = ModelParams<F>;

impl<F: Real> ModelParams<F> {
    /// All-zero parameters shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let h = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| LstmLayer {
                w_x: Matrix::zeros(4 * h, config.layer_input(l)),
                w_h: Matrix::zeros(4 * h, h),
                b: Vector::zeros(4 * h),
            })
            .collect();
        Ok(ModelParams {
            embedding: Matrix::zeros(config.vocab_size, config.embedding_size),
            layers,
            projection: (config.projection_size > 0)
                .then(|| Matrix::zeros(config.projection_size, h)),
            output_w: Matrix::zeros(config.vocab_size, config.classifier_input()),
            output_b: Vector::zeros(config.vocab_size),
        })
    }

    /// Weights uniform in `[−0.08, 0.08)` from `config.seed`; biases zero
    /// except the forget-gate slice, which starts at 1.
    ///
    /// Values are drawn in 64-bit and narrowed, so f32 and f64 models from
    /// the same seed agree up to rounding.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng_from_seed(config.seed);
        let h = config.hidden_size;
        for (name, data) in params.tensors_mut() {
            if name.ends_with(".b") {
                if name.starts_with("lstm.") {
                    for v in &mut data[h..2 * h] {
                        *v = F::from_f64(FORGET_BIAS_INIT);
                    }
                }
                continue;
            }
            fill_uniform(data, -INIT_SCALE, INIT_SCALE, &mut rng);
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(F::zero());
        }
        z
    }

    /// `(name, data)` for every tensor, in [`ModelConfig::tensor_shapes`] order.
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = vec![("embedding".into(), self.embedding.as_slice())];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.w_x"), layer.w_x.as_slice()));
            out.push((format!("lstm.{l}.w_h"), layer.w_h.as_slice()));
            out.push((format!("lstm.{l}.b"), &layer.b));
        }
        if let Some(p) = &self.projection {
            out.push(("projection".into(), p.as_slice()));
        }
        out.push(("output.w".into(), self.output_w.as_slice()));
        out.push(("output.b".into(), &self.output_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let mut out: Vec<(String, &mut [F])> =
            vec![("embedding".into(), self.embedding.as_mut_slice())];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("lstm.{l}.w_x"), layer.w_x.as_mut_slice()));
            out.push((format!("lstm.{l}.w_h"), layer.w_h.as_mut_slice()));
            out.push((format!("lstm.{l}.b"), &mut layer.b));
        }
        if let Some(p) = &mut self.projection {
            out.push(("projection".into(), p.as_mut_slice()));
        }
        out.push(("output.w".into(), self.output_w.as_mut_slice()));
        out.push(("output.b".into(), &mut self.output_b));
        out
    }

    /// Shapes as `(name, dims)` read off the tensors themselves.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("embedding".to_string(), dims(&self.embedding))];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.w_x"), dims(&layer.w_x)));
            out.push((format!("lstm.{l}.w_h"), dims(&layer.w_h)));
            out.push((format!("lstm.{l}.b"), vec![layer.b.len()]));
        }
        if let Some(p) = &self.projection {
            out.push(("projection".to_string(), dims(p)));
        }
        out.push(("output.w".to_string(), dims(&self.output_w)));
        out.push(("output.b".to_string(), vec![self.output_b.len()]));
        out
    }

    pub fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = config.tensor_shapes();
        let found = self.shapes();
        if expected != found {
            return Err(ModelError::ParamShape(format!(
                "expected {expected:?}, found {found:?}"
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }

    pub fn scale(&mut self, factor: F) {
        for (_, t) in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    /// `self += other`; shapes must already agree.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            embedding: self.embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w_x: l.w_x.cast(),
                    w_h: l.w_h.cast(),
                    b: cast_vector(&l.b),
                })
                .collect(),
            projection: self.projection.as_ref().map(Matrix::cast),
            output_w: self.output_w.cast(),
            output_b: cast_vector(&self.output_b),
        }
    }
}

fn dims<F: Real>(m: &Matrix<F>) -> Vec<usize> {
    vec![m.rows(), m.cols()]
}

fn cast_vector<F: Real, G: Real>(v: &Vector<F>) -> Vector<G> {
    Vector::new(v.iter().map(|x| G::from_f64(x.as_f64())).collect()).expect("non-empty")
}
