//! First-order optimizer: Adam on the flattened parameter vector, global
//! gradient-norm clipping, and a cosine step-size schedule.

/// Adam moment buffers over the flat parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of `theta` in place.
    pub fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Scale `grad` in place so its global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Cosine decay from `lr0` to zero over `total` steps.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let progress = (step as f64 / total as f64).clamp(0.0, 1.0);
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut theta = vec![3.0, -2.0];
        let mut state = AdamState::new(2);
        for _ in 0..2000 {
            let grad: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
            state.apply(&mut theta, &grad, 0.01);
        }
        assert!(theta[0].abs() < 1e-3 && theta[1].abs() < 1e-3, "{theta:?}");
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut g = vec![0.3, 0.4];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(g, vec![0.3, 0.4]);
    }

    #[test]
    fn clip_scales_large_gradients_to_the_bound() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let new_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((new_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(0.1, 0, 100) - 0.1).abs() < 1e-12);
        assert!(cosine_lr(0.1, 100, 100) < 1e-12);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-12);
    }
}
