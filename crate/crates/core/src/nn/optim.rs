use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam with a Nesterov look-ahead on the first moment.
///
/// With bias-corrected moments, the update at step `t` is
/// `lr * (beta1 * m_t / (1 - beta1^(t+1)) + (1 - beta1) * g_t / (1 - beta1^t)) / (sqrt(v_t / (1 - beta2^t)) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam {
    pub config: NadamConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Nadam {
    pub fn new(config: NadamConfig, n_params: usize) -> Self {
        Self { config, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let NadamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1_next = 1.0 / (1.0 - beta1.powi(t + 1));
        let c1 = 1.0 / (1.0 - beta1.powi(t));
        let c2 = 1.0 / (1.0 - beta2.powi(t));
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = beta1 * *m * c1_next + (1.0 - beta1) * g * c1;
            let v_hat = *v * c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_a_no_op() {
        let mut opt = Nadam::new(NadamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.update(&mut p, &[0.0; 3]);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_size_is_scale_free() {
        // Closed form at t = 1: m = 0.1 g, v = 0.001 g^2, so
        // m_hat = 0.9 * 0.1 g / (1 - 0.81) + g = (0.09 / 0.19 + 1) g and v_hat = g^2.
        let expected = 1e-3 * (0.09 / 0.19 + 1.0);
        for g in [1e-3, 0.5, 40.0] {
            let mut opt = Nadam::new(NadamConfig::default(), 1);
            let mut p = vec![0.0];
            opt.update(&mut p, &[g]);
            let step = -p[0];
            assert!((step - expected * g / (g + 1e-8)).abs() < 1e-14, "g={g} step={step}");
        }
        assert!((expected - 1.4737e-3).abs() < 1e-7);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut opt = Nadam::new(NadamConfig::default(), 2);
            let mut p = vec![1.0, 1.0];
            for i in 0..50 {
                let g = [p[0] * 2.0 + i as f64 * 0.01, (p[1] - 3.0).signum()];
                opt.update(&mut p, &g);
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = Nadam::new(NadamConfig { learning_rate: 0.05, ..Default::default() }, 1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.update(&mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-2);
    }
}
