/// Diagonal variable metric `s = √(v / (1 − αᵗ)) + ε` with
/// `v ← αv + (1 − α)g²`.
#[derive(Debug, Clone)]
pub struct DiagonalMetric {
    alpha: f64,
    epsilon: f64,
    v: Vec<f64>,
    alpha_pow: f64,
}

impl DiagonalMetric {
    pub fn new(len: usize, alpha: f64, epsilon: f64) -> Self {
        Self {
            alpha,
            epsilon,
            v: vec![0.0; len],
            alpha_pow: 1.0,
        }
    }

    /// Folds in the gradient of the next iteration and returns `s`.
    pub fn update(&mut self, grad: &[f64]) -> Vec<f64> {
        self.alpha_pow *= self.alpha;
        let correction = 1.0 - self.alpha_pow;
        self.v
            .iter_mut()
            .zip(grad)
            .map(|(v, g)| {
                *v = self.alpha * *v + (1.0 - self.alpha) * g * g;
                (*v / correction).sqrt() + self.epsilon
            })
            .collect()
    }

    /// Forward step `δ − λ H⁻¹ g` with `H = Diag(s)`.
    pub fn forward_step(delta: &[f64], grad: &[f64], metric: &[f64], step: f64) -> Vec<f64> {
        delta
            .iter()
            .zip(grad)
            .zip(metric)
            .map(|((d, g), s)| d - step * g / s)
            .collect()
    }
}
