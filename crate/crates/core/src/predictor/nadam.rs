use serde::{Deserialize, Serialize};

use super::network::Network;

/// Nadam hyperparameters. Defaults follow the common Keras settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            learning_rate: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            schedule_decay: 0.004,
        }
    }
}

/// Adam with Nesterov momentum and a warming momentum schedule (Dozat).
#[derive(Debug, Clone)]
pub struct Nadam {
    config: NadamConfig,
    iterations: u64,
    m_schedule: f64,
    m: Network,
    v: Network,
}

impl Nadam {
    pub fn new(config: NadamConfig, like: &Network) -> Self {
        Nadam {
            config,
            iterations: 0,
            m_schedule: 1.0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Network, grad: &Network) {
        let NadamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
            schedule_decay,
        } = self.config;
        self.iterations += 1;
        let t = self.iterations as f64;
        let mu_t = beta1 * (1.0 - 0.5 * 0.96f64.powf(t * schedule_decay));
        let mu_next = beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * schedule_decay));
        let m_schedule_new = self.m_schedule * mu_t;
        let m_schedule_next = m_schedule_new * mu_next;
        self.m_schedule = m_schedule_new;
        let v_correction = 1.0 - beta2.powf(t);

        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let g_hat = gj / (1.0 - m_schedule_new);
                let m_hat = m[j] / (1.0 - m_schedule_next);
                let v_hat = v[j] / v_correction;
                let m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
                p[j] -= lr * m_bar / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_against_gradient_by_about_lr() {
        let mut params = Network::zeros(2, 1);
        let mut grad = params.zeros_like();
        grad.kpi_head.bias[0] = 0.5;
        grad.activity_head.bias[1] = -2.0;
        let mut opt = Nadam::new(NadamConfig::default(), &params);
        opt.step(&mut params, &grad);
        let b = params.kpi_head.bias[0];
        assert!(b < 0.0 && (b.abs() - 0.002).abs() < 0.002 * 0.2, "{b}");
        assert!(params.activity_head.bias[1] > 0.0);
        assert_eq!(params.activity_head.bias[0], 0.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        // f(b) = (b - 3)^2 on a single bias.
        let mut params = Network::zeros(2, 1);
        let mut opt = Nadam::new(
            NadamConfig {
                learning_rate: 0.05,
                ..NadamConfig::default()
            },
            &params,
        );
        for _ in 0..2000 {
            let mut grad = params.zeros_like();
            grad.kpi_head.bias[0] = 2.0 * (params.kpi_head.bias[0] - 3.0);
            opt.step(&mut params, &grad);
        }
        assert!((params.kpi_head.bias[0] - 3.0).abs() < 1e-2);
    }
}
