//! SGD with a per-parameter RMS accumulator, shared by field training and
//! policy training.

/// Cosine schedule from `lr0` down to 1% of `lr0` over `total` steps.
/// The adaptive step keeps a near-constant step magnitude once gradients
/// stabilize, so training needs the decay to converge tightly.
pub fn cosine_decay(lr0: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let t = step as f64 / (total - 1) as f64;
    let floor = 0.01 * lr0;
    floor + 0.5 * (lr0 - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Per-parameter adaptive step: acc <- rho*acc + (1-rho)*g^2,
/// p <- p - lr * g / (sqrt(acc) + eps).
#[derive(Debug, Clone)]
pub struct RmsState {
    acc: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
}

impl RmsState {
    pub fn new(n_params: usize) -> Self {
        RmsState {
            acc: vec![0.0; n_params],
            rho: 0.9,
            eps: 1e-8,
        }
    }

    /// Dense update over all parameters.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.acc.len());
        for i in 0..params.len() {
            let g = grads[i];
            let a = &mut self.acc[i];
            *a = self.rho * *a + (1.0 - self.rho) * g * g;
            params[i] -= lr * g / (a.sqrt() + self.eps);
        }
    }

    /// Sparse update for one parameter index.
    #[inline]
    pub fn apply_one(&mut self, param: &mut f64, grad: f64, lr: f64, index: usize) {
        let a = &mut self.acc[index];
        *a = self.rho * *a + (1.0 - self.rho) * grad * grad;
        *param -= lr * grad / (a.sqrt() + self.eps);
    }
}
