use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{backward_sequence, forward_sequence, LstmCellWeights};
use super::matrix::{softmax, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(inputs, outputs);
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        for v in layer.weights.data_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        layer
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.weights.matvec_add(x, &mut out);
        out
    }
}

/// Shared LSTM layer feeding two LSTM branches: one ends in a softmax over
/// activities, the other in a single linear KPI output.
///
/// Both branches read the shared layer's full hidden sequence; only their
/// last hidden state reaches the heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub shared: LstmCellWeights,
    pub activity_lstm: LstmCellWeights,
    pub kpi_lstm: LstmCellWeights,
    pub activity_head: DenseLayer,
    pub kpi_head: DenseLayer,
}

pub const TENSOR_NAMES: [&str; 13] = [
    "shared.input",
    "shared.recurrent",
    "shared.bias",
    "activity_lstm.input",
    "activity_lstm.recurrent",
    "activity_lstm.bias",
    "kpi_lstm.input",
    "kpi_lstm.recurrent",
    "kpi_lstm.bias",
    "activity_head.weights",
    "activity_head.bias",
    "kpi_head.weights",
    "kpi_head.bias",
];

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub squared_error: f64,
}

impl LossParts {
    pub fn joint(&self, kpi_weight: f64) -> f64 {
        self.cross_entropy + kpi_weight * self.squared_error
    }
}

/// Raw network output for one prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub logits: Vec<f64>,
    /// KPI estimate in normalised units.
    pub kpi: f64,
}

impl Network {
    pub fn random<R: Rng>(features: usize, hidden: usize, rng: &mut R) -> Self {
        Network {
            shared: LstmCellWeights::glorot(features, hidden, rng),
            activity_lstm: LstmCellWeights::glorot(hidden, hidden, rng),
            kpi_lstm: LstmCellWeights::glorot(hidden, hidden, rng),
            activity_head: DenseLayer::glorot(hidden, features, rng),
            kpi_head: DenseLayer::glorot(hidden, 1, rng),
        }
    }

    pub fn zeros(features: usize, hidden: usize) -> Self {
        Network {
            shared: LstmCellWeights::zeros(features, hidden),
            activity_lstm: LstmCellWeights::zeros(hidden, hidden),
            kpi_lstm: LstmCellWeights::zeros(hidden, hidden),
            activity_head: DenseLayer::zeros(hidden, features),
            kpi_head: DenseLayer::zeros(hidden, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.features(), self.hidden())
    }

    pub fn features(&self) -> usize {
        self.shared.features()
    }

    pub fn hidden(&self) -> usize {
        self.shared.hidden()
    }

    /// All parameter tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(13);
        for cell in [&self.shared, &self.activity_lstm, &self.kpi_lstm] {
            out.extend(cell.tensors());
        }
        for head in [&self.activity_head, &self.kpi_head] {
            out.push(head.weights.data());
            out.push(&head.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(13);
        for cell in [&mut self.shared, &mut self.activity_lstm, &mut self.kpi_lstm] {
            out.extend(cell.tensors_mut());
        }
        for head in [&mut self.activity_head, &mut self.kpi_head] {
            out.push(head.weights.data_mut());
            out.push(&mut head.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Network) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> NetworkOutput {
        let shared = forward_sequence(&self.shared, xs);
        let hs: Vec<Vec<f64>> = shared.iter().map(|c| c.h.clone()).collect();
        let act = forward_sequence(&self.activity_lstm, &hs);
        let kpi = forward_sequence(&self.kpi_lstm, &hs);
        NetworkOutput {
            logits: self.activity_head.apply(&act.last().expect("non-empty prefix").h),
            kpi: self.kpi_head.apply(&kpi.last().expect("non-empty prefix").h)[0],
        }
    }

    pub fn loss(&self, xs: &[Vec<f64>], label: usize, kpi_target: f64) -> LossParts {
        let out = self.forward(xs);
        loss_terms(&out, label, kpi_target)
    }

    /// Adds the gradient of `ce + kpi_weight * se` for one sample to `grad`.
    pub fn accumulate_gradient(
        &self,
        xs: &[Vec<f64>],
        label: usize,
        kpi_target: f64,
        kpi_weight: f64,
        grad: &mut Network,
    ) -> LossParts {
        let shared = forward_sequence(&self.shared, xs);
        let hs: Vec<Vec<f64>> = shared.iter().map(|c| c.h.clone()).collect();
        let act = forward_sequence(&self.activity_lstm, &hs);
        let kpi = forward_sequence(&self.kpi_lstm, &hs);
        let h_act = &act.last().expect("non-empty prefix").h;
        let h_kpi = &kpi.last().expect("non-empty prefix").h;
        let out = NetworkOutput {
            logits: self.activity_head.apply(h_act),
            kpi: self.kpi_head.apply(h_kpi)[0],
        };
        let parts = loss_terms(&out, label, kpi_target);

        let mut d_logits = softmax(&out.logits);
        d_logits[label] -= 1.0;
        let d_kpi = [2.0 * kpi_weight * (out.kpi - kpi_target)];

        grad.activity_head.weights.outer_add(&d_logits, h_act);
        add(&mut grad.activity_head.bias, &d_logits);
        grad.kpi_head.weights.outer_add(&d_kpi, h_kpi);
        add(&mut grad.kpi_head.bias, &d_kpi);

        let t_last = xs.len() - 1;
        let mut dh_act = vec![None; xs.len()];
        let mut top = vec![0.0; self.hidden()];
        self.activity_head.weights.matvec_t_add(&d_logits, &mut top);
        dh_act[t_last] = Some(top);
        let mut dh_kpi = vec![None; xs.len()];
        let mut top = vec![0.0; self.hidden()];
        self.kpi_head.weights.matvec_t_add(&d_kpi, &mut top);
        dh_kpi[t_last] = Some(top);

        let dx_act = backward_sequence(&self.activity_lstm, &act, &dh_act, &mut grad.activity_lstm, true);
        let dx_kpi = backward_sequence(&self.kpi_lstm, &kpi, &dh_kpi, &mut grad.kpi_lstm, true);
        let dh_shared: Vec<Option<Vec<f64>>> = dx_act
            .into_iter()
            .zip(dx_kpi)
            .map(|(mut a, b)| {
                add(&mut a, &b);
                Some(a)
            })
            .collect();
        backward_sequence(&self.shared, &shared, &dh_shared, &mut grad.shared, false);
        parts
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn loss_terms(out: &NetworkOutput, label: usize, kpi_target: f64) -> LossParts {
    let max = out.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = out.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    LossParts {
        cross_entropy: log_sum - out.logits[label],
        squared_error: (out.kpi - kpi_target).powi(2),
    }
}
