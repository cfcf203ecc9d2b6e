//! Forward pass with teacher forcing and exact backpropagation through time.
//!
//! A pair is fed as one stream through a single layer stack:
//!
//! ```text
//! input : c1 .. cn  <eos>  r1 .. rm
//! target:            r1    r2 .. <eos>
//! ```
//!
//! Logits exist only at the eos step and the reply steps; the loss is the
//! mean cross-entropy over those `m + 1` targets.

use crate::math::{cross_entropy, gemv_acc, gemv_t_acc, outer_acc, softmax, Real, Vector};
use crate::text::{TokenId, TrainingPair, EOS};

use super::lstm::{lstm_cell, CellStep};
use super::{Gradients, ModelConfig, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

/// Per-layer `(h, c)` of the recurrent stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState<F> {
    pub layers: Vec<LayerState<F>>,
}

impl<F: Real> SequenceState<F> {
    pub fn top_hidden(&self) -> &[F] {
        &self.layers.last().expect("at least one layer").h
    }
}

pub fn initial_state<F: Real>(config: &ModelConfig) -> SequenceState<F> {
    SequenceState {
        layers: (0..config.num_layers)
            .map(|_| LayerState {
                h: vec![F::zero(); config.hidden_size],
                c: vec![F::zero(); config.hidden_size],
            })
            .collect(),
    }
}

fn check_token(token: TokenId, config: &ModelConfig) -> Result<(), ModelError> {
    if token as usize >= config.vocab_size {
        return Err(ModelError::TokenOutOfRange {
            id: token,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

fn check_state<F: Real>(state: &SequenceState<F>, config: &ModelConfig) -> Result<(), ModelError> {
    let ok = state.layers.len() == config.num_layers
        && state
            .layers
            .iter()
            .all(|l| l.h.len() == config.hidden_size && l.c.len() == config.hidden_size);
    if ok {
        Ok(())
    } else {
        Err(ModelError::TraceMismatch(format!(
            "state does not have {} layers of width {}",
            config.num_layers, config.hidden_size
        )))
    }
}

fn step_traced<F: Real>(
    params: &ModelParams<F>,
    state: &SequenceState<F>,
    token: TokenId,
) -> Result<Vec<CellStep<F>>, ModelError> {
    let mut steps: Vec<CellStep<F>> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let x = match steps.last() {
            Some(below) => below.h.as_slice(),
            None => params.embedding.row(token as usize),
        };
        let s = &state.layers[l];
        let cell = lstm_cell(x, &s.h, &s.c, layer)?;
        steps.push(cell);
    }
    Ok(steps)
}

fn state_after<F: Real>(steps: &[CellStep<F>]) -> SequenceState<F> {
    SequenceState {
        layers: steps
            .iter()
            .map(|s| LayerState {
                h: s.h.clone(),
                c: s.c.clone(),
            })
            .collect(),
    }
}

/// Feeds one token through the stack.
pub fn step<F: Real>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    state: &SequenceState<F>,
    token: TokenId,
) -> Result<SequenceState<F>, ModelError> {
    check_token(token, config)?;
    check_state(state, config)?;
    let steps = step_traced(params, state, token)?;
    Ok(SequenceState {
        layers: steps
            .into_iter()
            .map(|s| LayerState { h: s.h, c: s.c })
            .collect(),
    })
}

fn context_order(context: &[TokenId], config: &ModelConfig) -> Vec<TokenId> {
    let mut order = context.to_vec();
    if config.reverse_input {
        order.reverse();
    }
    order
}

/// State after reading the context and then eos: the decoder's start state.
pub fn encode_context<F: Real>(
    context: &[TokenId],
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<SequenceState<F>, ModelError> {
    if context.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    params.check_shapes(config)?;
    let mut state = initial_state(config);
    for &t in context_order(context, config).iter().chain([EOS].iter()) {
        state = step(params, config, &state, t)?;
    }
    Ok(state)
}

/// Top-layer hidden state after the context and eos.
pub fn thought_vector<F: Real>(
    context: &[TokenId],
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<Vector<F>, ModelError> {
    let state = encode_context(context, params, config)?;
    Ok(Vector::new(state.top_hidden().to_vec())?)
}

/// `(projected, logits)`: the projection output (when enabled) and the
/// classifier logits for the state's top hidden vector.
pub fn output_logits<F: Real>(
    top_hidden: &[F],
    params: &ModelParams<F>,
) -> (Option<Vec<F>>, Vec<F>) {
    let projected = params.projection.as_ref().map(|p| {
        let mut r = vec![F::zero(); p.rows()];
        gemv_acc(&mut r, p, top_hidden);
        r
    });
    let feature = projected.as_deref().unwrap_or(top_hidden);
    let mut logits = params.output_b.to_vec();
    gemv_acc(&mut logits, &params.output_w, feature);
    (projected, logits)
}

/// Next-token distribution from a state. The projection is linear, no activation.
pub fn predict_distribution<F: Real>(
    state: &SequenceState<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<Vector<F>, ModelError> {
    check_state(state, config)?;
    let (_, logits) = output_logits(state.top_hidden(), params);
    Ok(Vector::new(softmax(&logits))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputStep<F> {
    /// Index into [`ForwardTrace::steps`] whose top hidden state fed this output.
    pub time: usize,
    pub target: TokenId,
    pub projected: Option<Vec<F>>,
    pub logits: Vec<F>,
    pub probs: Vec<F>,
    pub loss: F,
}

/// Cached activations of one forward pass over a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    /// Token fed at each timestep.
    pub inputs: Vec<TokenId>,
    /// `steps[t][layer]`.
    pub steps: Vec<Vec<CellStep<F>>>,
    pub outputs: Vec<OutputStep<F>>,
    /// Mean cross-entropy over `outputs`.
    pub loss: F,
}

impl<F: Real> ForwardTrace<F> {
    /// Number of scored targets: reply length plus the final eos.
    pub fn target_count(&self) -> usize {
        self.outputs.len()
    }

    /// Sum of per-target negative log-likelihoods, accumulated in 64-bit.
    pub fn total_nll(&self) -> f64 {
        self.outputs.iter().map(|o| o.loss.as_f64()).sum()
    }
}

/// Teacher-forced forward pass; returns the per-token mean loss and the trace.
pub fn forward_pair<F: Real>(
    pair: &TrainingPair,
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<(F, ForwardTrace<F>), ModelError> {
    if pair.context.is_empty() || pair.reply.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    params.check_shapes(config)?;
    for &t in pair.context.iter().chain(&pair.reply) {
        check_token(t, config)?;
    }

    let mut inputs = context_order(&pair.context, config);
    let first_output = inputs.len();
    inputs.push(EOS);
    inputs.extend_from_slice(&pair.reply);

    let mut state = initial_state::<F>(config);
    let mut steps = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(pair.reply.len() + 1);
    let mut loss_sum = F::zero();
    for (t, &token) in inputs.iter().enumerate() {
        let cells = step_traced(params, &state, token)?;
        state = state_after(&cells);
        if t >= first_output {
            let j = t - first_output;
            let target = pair.reply.get(j).copied().unwrap_or(EOS);
            let (projected, logits) = output_logits(state.top_hidden(), params);
            let loss = cross_entropy(&logits, target as usize)?;
            let probs = softmax(&logits);
            loss_sum += loss;
            outputs.push(OutputStep {
                time: t,
                target,
                projected,
                logits,
                probs,
                loss,
            });
        }
        steps.push(cells);
    }
    let loss = loss_sum / F::from_f64(outputs.len() as f64);
    Ok((
        loss,
        ForwardTrace {
            inputs,
            steps,
            outputs,
            loss,
        },
    ))
}

fn check_trace<F: Real>(
    trace: &ForwardTrace<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<(), ModelError> {
    params.check_shapes(config)?;
    let mismatch = |msg: String| Err(ModelError::TraceMismatch(msg));
    if trace.steps.len() != trace.inputs.len() || trace.outputs.is_empty() {
        return mismatch(format!(
            "{} steps for {} inputs and {} outputs",
            trace.steps.len(),
            trace.inputs.len(),
            trace.outputs.len()
        ));
    }
    for (t, cells) in trace.steps.iter().enumerate() {
        if cells.len() != config.num_layers {
            return mismatch(format!("step {t} has {} layers", cells.len()));
        }
        for (l, c) in cells.iter().enumerate() {
            if c.h.len() != config.hidden_size || c.x.len() != config.layer_input(l) {
                return mismatch(format!("step {t} layer {l} has wrong widths"));
            }
        }
    }
    for (&t, _) in trace.inputs.iter().zip(&trace.steps) {
        check_token(t, config)?;
    }
    for o in &trace.outputs {
        if o.time >= trace.steps.len()
            || o.logits.len() != config.vocab_size
            || o.projected.as_ref().map_or(0, Vec::len) != config.projection_size
        {
            return mismatch(format!("output at time {} does not fit the model", o.time));
        }
        check_token(o.target, config)?;
    }
    Ok(())
}

/// Exact gradients of the trace's mean per-token loss.
pub fn backward_pair<F: Real>(
    trace: &ForwardTrace<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
) -> Result<Gradients<F>, ModelError> {
    backward_pair_scaled(trace, params, config, F::one())
}

/// Gradients of `loss_scale · loss`.
pub fn backward_pair_scaled<F: Real>(
    trace: &ForwardTrace<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
    loss_scale: F,
) -> Result<Gradients<F>, ModelError> {
    let mut grads = params.zeros_like();
    backward_accumulate(trace, params, config, loss_scale, &mut grads)?;
    Ok(grads)
}

/// Adds the gradients of `loss_scale · loss` into `grads`.
pub fn backward_accumulate<F: Real>(
    trace: &ForwardTrace<F>,
    params: &ModelParams<F>,
    config: &ModelConfig,
    loss_scale: F,
    grads: &mut Gradients<F>,
) -> Result<(), ModelError> {
    check_trace(trace, params, config)?;
    if !grads.same_shape(params) {
        return Err(ModelError::ParamShape(
            "gradient buffer does not match parameters".into(),
        ));
    }
    let hs = config.hidden_size;
    let steps = trace.steps.len();
    let top = config.num_layers - 1;
    let per_target = loss_scale / F::from_f64(trace.outputs.len() as f64);

    // classifier and projection; collect dL/dh_top per timestep
    let mut dh_top: Vec<Option<Vec<F>>> = vec![None; steps];
    for out in &trace.outputs {
        let mut dlogits = out.probs.clone();
        dlogits[out.target as usize] -= F::one();
        for d in &mut dlogits {
            *d *= per_target;
        }
        let h_top = &trace.steps[out.time][top].h;
        let feature = out.projected.as_deref().unwrap_or(h_top);
        outer_acc(&mut grads.output_w, &dlogits, feature);
        for (gb, &d) in grads.output_b.iter_mut().zip(&dlogits) {
            *gb += d;
        }
        let mut dfeature = vec![F::zero(); feature.len()];
        gemv_t_acc(&mut dfeature, &params.output_w, &dlogits);
        let dh = match (&params.projection, &mut grads.projection) {
            (Some(p), Some(gp)) => {
                outer_acc(gp, &dfeature, h_top);
                let mut dh = vec![F::zero(); hs];
                gemv_t_acc(&mut dh, p, &dfeature);
                dh
            }
            _ => dfeature,
        };
        match &mut dh_top[out.time] {
            Some(acc) => acc.iter_mut().zip(&dh).for_each(|(a, &b)| *a += b),
            slot => *slot = Some(dh),
        }
    }

    let mut dh_next = vec![vec![F::zero(); hs]; config.num_layers];
    let mut dc_next = vec![vec![F::zero(); hs]; config.num_layers];
    let mut dz = vec![F::zero(); 4 * hs];
    for t in (0..steps).rev() {
        // gradient arriving at the current layer's h from above
        let mut dh_from_above: Vec<F> = dh_top[t].take().unwrap_or_else(|| vec![F::zero(); hs]);
        for l in (0..config.num_layers).rev() {
            let cell = &trace.steps[t][l];
            let layer = &params.layers[l];
            let (i, rest) = cell.gates.split_at(hs);
            let (f, rest) = rest.split_at(hs);
            let (g, o) = rest.split_at(hs);
            for k in 0..hs {
                let dh = dh_from_above[k] + dh_next[l][k];
                let d_o = dh * cell.tanh_c[k];
                let tc = cell.tanh_c[k];
                let dc = dc_next[l][k] + dh * o[k] * (F::one() - tc * tc);
                let d_i = dc * g[k];
                let d_g = dc * i[k];
                let d_f = dc * cell.c_prev[k];
                dc_next[l][k] = dc * f[k];
                dz[k] = d_i * i[k] * (F::one() - i[k]);
                dz[hs + k] = d_f * f[k] * (F::one() - f[k]);
                dz[2 * hs + k] = d_g * (F::one() - g[k] * g[k]);
                dz[3 * hs + k] = d_o * o[k] * (F::one() - o[k]);
            }
            let gl = &mut grads.layers[l];
            outer_acc(&mut gl.w_x, &dz, &cell.x);
            outer_acc(&mut gl.w_h, &dz, &cell.h_prev);
            for (gb, &d) in gl.b.iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut dh_prev = vec![F::zero(); hs];
            gemv_t_acc(&mut dh_prev, &layer.w_h, &dz);
            dh_next[l] = dh_prev;
            let mut dx = vec![F::zero(); cell.x.len()];
            gemv_t_acc(&mut dx, &layer.w_x, &dz);
            if l == 0 {
                let row = grads.embedding.row_mut(trace.inputs[t] as usize);
                for (r, &d) in row.iter_mut().zip(&dx) {
                    *r += d;
                }
            } else {
                dh_from_above = dx;
            }
        }
    }
    Ok(())
}
