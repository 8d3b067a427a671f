//! Adam ascent steps over a parameter matrix.

use ndarray::{Array2, Zip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Array2<f64>,
    second: Array2<f64>,
    steps: i32,
}

impl AdamState {
    pub fn new(dim: (usize, usize)) -> Self {
        Self {
            first: Array2::zeros(dim),
            second: Array2::zeros(dim),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// Moves `params` along `grad` (maximization).
    pub fn ascend(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, cfg: &AdamConfig) {
        self.steps = self.steps.saturating_add(1);
        let bias1 = 1.0 - cfg.beta1.powi(self.steps);
        let bias2 = 1.0 - cfg.beta2.powi(self.steps);
        Zip::from(params)
            .and(&mut self.first)
            .and(&mut self.second)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p += lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }

    pub fn reset_row(&mut self, row: usize) {
        self.first.row_mut(row).fill(0.0);
        self.second.row_mut(row).fill(0.0);
    }
}
