use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{sigmoid, Matrix};
use super::PredictorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

    fn offset(self) -> usize {
        match self {
            Gate::Forget => 0,
            Gate::Input => 1,
            Gate::Candidate => 2,
            Gate::Output => 3,
        }
    }
}

/// Weights of one LSTM cell.
///
/// The four gates are stacked row-wise in the order forget, input,
/// candidate, output, so `input` is `4H x F`, `recurrent` is `4H x H` and
/// `bias` has `4H` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCellWeights {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl LstmCellWeights {
    pub fn zeros(features: usize, hidden: usize) -> Self {
        LstmCellWeights {
            input: Matrix::zeros(4 * hidden, features),
            recurrent: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    /// Glorot-uniform weights, zero bias except a forget-gate bias of 1.
    pub fn glorot<R: Rng>(features: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(features, hidden);
        let fill = |m: &mut Matrix, fan_in: usize, rng: &mut R| {
            let limit = (6.0 / (fan_in + hidden) as f64).sqrt();
            for v in m.data_mut() {
                *v = rng.gen_range(-limit..limit);
            }
        };
        fill(&mut w.input, features, rng);
        fill(&mut w.recurrent, hidden, rng);
        for b in &mut w.bias[..hidden] {
            *b = 1.0;
        }
        w
    }

    pub fn hidden(&self) -> usize {
        self.recurrent.cols()
    }

    pub fn features(&self) -> usize {
        self.input.cols()
    }

    /// Rows of the input weights belonging to `gate` (row-major `H x F`).
    pub fn gate_input(&self, gate: Gate) -> &[f64] {
        let h = self.hidden();
        let f = self.features();
        &self.input.data()[gate.offset() * h * f..(gate.offset() + 1) * h * f]
    }

    pub fn gate_recurrent(&self, gate: Gate) -> &[f64] {
        let h = self.hidden();
        &self.recurrent.data()[gate.offset() * h * h..(gate.offset() + 1) * h * h]
    }

    pub fn gate_bias(&self, gate: Gate) -> &[f64] {
        let h = self.hidden();
        &self.bias[gate.offset() * h..(gate.offset() + 1) * h]
    }

    fn check_shapes(&self) -> Result<(), PredictorError> {
        let h4 = 4 * self.hidden();
        if self.input.rows() != h4 || self.recurrent.rows() != h4 || self.bias.len() != h4 {
            return Err(PredictorError::Shape(format!(
                "gate blocks disagree: input {}x{}, recurrent {}x{}, bias {}",
                self.input.rows(),
                self.input.cols(),
                self.recurrent.rows(),
                self.recurrent.cols(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 3] {
        [self.input.data(), self.recurrent.data(), &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [self.input.data_mut(), self.recurrent.data_mut(), &mut self.bias]
    }
}

/// Activations of one time step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked like the weights.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

pub(crate) fn step(w: &LstmCellWeights, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let h = w.hidden();
    let mut z = w.bias.clone();
    w.input.matvec_add(x, &mut z);
    w.recurrent.matvec_add(h_prev, &mut z);
    for v in &mut z[..2 * h] {
        *v = sigmoid(*v);
    }
    for v in &mut z[2 * h..3 * h] {
        *v = v.tanh();
    }
    for v in &mut z[3 * h..] {
        *v = sigmoid(*v);
    }
    let (f, rest) = z.split_at(h);
    let (i, rest) = rest.split_at(h);
    let (g, o) = rest.split_at(h);
    let c: Vec<f64> = (0..h).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h_new: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: z,
        tanh_c,
        h: h_new,
        c,
    }
}

/// One LSTM time step: returns the new hidden and cell state.
///
/// `f, i, o = logistic(Wx + Uh + b)`, `g = tanh(Wx + Uh + b)`,
/// `c' = f * c + i * g`, `h' = o * tanh(c')`.
pub fn lstm_cell_step(
    x: &[f64],
    h: &[f64],
    c: &[f64],
    w: &LstmCellWeights,
) -> Result<(Vec<f64>, Vec<f64>), PredictorError> {
    w.check_shapes()?;
    if x.len() != w.features() || h.len() != w.hidden() || c.len() != w.hidden() {
        return Err(PredictorError::Shape(format!(
            "x {} / h {} / c {} do not match a {}-feature, {}-unit cell",
            x.len(),
            h.len(),
            c.len(),
            w.features(),
            w.hidden()
        )));
    }
    if !x.iter().chain(h).chain(c).all(|v| v.is_finite()) {
        return Err(PredictorError::NonFinite("LSTM step input".into()));
    }
    let s = step(w, x, h, c);
    Ok((s.h, s.c))
}

/// Runs a layer over a sequence from zero state.
pub(crate) fn forward_sequence(w: &LstmCellWeights, xs: &[Vec<f64>]) -> Vec<StepCache> {
    let h = w.hidden();
    let mut caches: Vec<StepCache> = Vec::with_capacity(xs.len());
    let zeros = vec![0.0; h];
    for x in xs {
        let cache = match caches.last() {
            Some(prev) => step(w, x, &prev.h, &prev.c),
            None => step(w, x, &zeros, &zeros),
        };
        caches.push(cache);
    }
    caches
}

/// Backpropagation through time for one layer.
///
/// `dh_out[t]` is the loss gradient arriving at the hidden output of step
/// `t` from above. Parameter gradients are accumulated into `grad`. Returns
/// the gradients with respect to the inputs when `want_dx` is set.
pub(crate) fn backward_sequence(
    w: &LstmCellWeights,
    caches: &[StepCache],
    dh_out: &[Option<Vec<f64>>],
    grad: &mut LstmCellWeights,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let h = w.hidden();
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dxs = vec![Vec::new(); if want_dx { caches.len() } else { 0 }];
    let mut dz = vec![0.0; 4 * h];
    for (t, cache) in caches.iter().enumerate().rev() {
        let mut dh = dh_next.clone();
        if let Some(ext) = &dh_out[t] {
            for (a, b) in dh.iter_mut().zip(ext) {
                *a += b;
            }
        }
        let (f, rest) = cache.gates.split_at(h);
        let (i, rest) = rest.split_at(h);
        let (g, o) = rest.split_at(h);
        for j in 0..h {
            let tc = cache.tanh_c[j];
            let dc = dc_next[j] + dh[j] * o[j] * (1.0 - tc * tc);
            let d_o = dh[j] * tc;
            let d_f = dc * cache.c_prev[j];
            let d_i = dc * g[j];
            let d_g = dc * i[j];
            dz[j] = d_f * f[j] * (1.0 - f[j]);
            dz[h + j] = d_i * i[j] * (1.0 - i[j]);
            dz[2 * h + j] = d_g * (1.0 - g[j] * g[j]);
            dz[3 * h + j] = d_o * o[j] * (1.0 - o[j]);
            dc_next[j] = dc * f[j];
        }
        grad.input.outer_add(&dz, &cache.x);
        grad.recurrent.outer_add(&dz, &cache.h_prev);
        for (b, d) in grad.bias.iter_mut().zip(&dz) {
            *b += d;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        w.recurrent.matvec_t_add(&dz, &mut dh_next);
        if want_dx {
            let mut dx = vec![0.0; w.features()];
            w.input.matvec_t_add(&dz, &mut dx);
            dxs[t] = dx;
        }
    }
    dxs
}
