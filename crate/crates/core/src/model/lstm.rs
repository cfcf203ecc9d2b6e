use crate::math::{gemv_acc, sigmoid, MathError, Matrix, Real, Vector};

use super::ModelError;

/// One LSTM layer. Gate rows are stacked in (input, forget, cell, output) order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F> {
    pub w_x: Matrix<F>,
    pub w_h: Matrix<F>,
    pub b: Vector<F>,
}

impl<F: Real> LstmLayer<F> {
    pub fn hidden_size(&self) -> usize {
        self.w_h.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols()
    }
}

/// Everything one cell evaluation produces; backward reads it back.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStep<F> {
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    pub c_prev: Vec<F>,
    /// `W_x·x + W_h·h_prev + b`, length 4H.
    pub preact: Vec<F>,
    /// Activated gates `[i | f | g | o]`.
    pub gates: Vec<F>,
    pub c: Vec<F>,
    pub tanh_c: Vec<F>,
    pub h: Vec<F>,
}

impl<F: Real> CellStep<F> {
    pub fn input_gate(&self) -> &[F] {
        let h = self.h.len();
        &self.gates[..h]
    }

    pub fn forget_gate(&self) -> &[F] {
        let h = self.h.len();
        &self.gates[h..2 * h]
    }

    pub fn candidate(&self) -> &[F] {
        let h = self.h.len();
        &self.gates[2 * h..3 * h]
    }

    pub fn output_gate(&self) -> &[F] {
        let h = self.h.len();
        &self.gates[3 * h..]
    }
}

/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')` with sigmoid i, f, o and tanh g.
pub fn lstm_cell<F: Real>(
    x: &[F],
    h_prev: &[F],
    c_prev: &[F],
    layer: &LstmLayer<F>,
) -> Result<CellStep<F>, ModelError> {
    let hs = layer.hidden_size();
    if x.len() != layer.input_size() {
        return Err(MathError::shape(
            format!("w_x {}x{}", layer.w_x.rows(), layer.w_x.cols()),
            format!("input of length {}", x.len()),
        )
        .into());
    }
    if h_prev.len() != hs || c_prev.len() != hs {
        return Err(MathError::shape(
            format!("hidden size {hs}"),
            format!("state of lengths ({}, {})", h_prev.len(), c_prev.len()),
        )
        .into());
    }
    let mut preact = layer.b.to_vec();
    gemv_acc(&mut preact, &layer.w_x, x);
    gemv_acc(&mut preact, &layer.w_h, h_prev);

    let mut gates = Vec::with_capacity(4 * hs);
    for (k, &z) in preact.iter().enumerate() {
        gates.push(if (2 * hs..3 * hs).contains(&k) {
            z.tanh()
        } else {
            sigmoid(z)
        });
    }
    let (i, rest) = gates.split_at(hs);
    let (f, rest) = rest.split_at(hs);
    let (g, o) = rest.split_at(hs);
    let mut c = Vec::with_capacity(hs);
    let mut tanh_c = Vec::with_capacity(hs);
    let mut h = Vec::with_capacity(hs);
    for k in 0..hs {
        let ck = f[k] * c_prev[k] + i[k] * g[k];
        let tk = ck.tanh();
        c.push(ck);
        tanh_c.push(tk);
        h.push(o[k] * tk);
    }
    Ok(CellStep {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        preact,
        gates,
        c,
        tanh_c,
        h,
    })
}
