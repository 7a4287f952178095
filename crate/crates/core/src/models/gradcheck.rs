use serde::{Deserialize, Serialize};

use super::SegmentationModel;
use crate::error::Result;
use crate::rng::RngSeed;
use crate::tensor::TensorGrid;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

const MIN_COORDINATES: usize = 32;
const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Flat input index with the largest error.
    pub worst_index: usize,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `vjp(x, u)` with central differences of `⟨u, f(x)⟩` on at least
/// 32 random input coordinates (all of them for smaller inputs), for a random
/// Gaussian `u`. Relative errors use `max(|a|, |b|, 1e-6)` as denominator.
pub fn gradcheck<M: SegmentationModel + ?Sized>(
    model: &M,
    x: &TensorGrid,
    tolerance: f64,
    coordinates: usize,
    seed: RngSeed,
) -> Result<GradcheckReport> {
    let mut rng = seed.rng();
    let out_shape = model.output_shape();
    let upstream = TensorGrid::new(out_shape, rng.gaussian_vec(out_shape.len(), 1.0))?;
    let analytic = model.vjp(x, &upstream)?;

    let n = x.len();
    let wanted = coordinates.max(MIN_COORDINATES).min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..wanted {
        let j = i + rng.index(n - i);
        pool.swap(i, j);
    }

    let mut worst = (0.0_f64, 0usize);
    for &j in &pool[..wanted] {
        let shifted = |sign: f64| {
            let mut d = x.data().to_vec();
            d[j] += sign * FD_STEP;
            TensorGrid::new(x.shape(), d).and_then(|v| model.forward(&v))
        };
        let plus = shifted(1.0)?;
        let minus = shifted(-1.0)?;
        // difference elementwise first so untouched logits cancel exactly
        let fd = plus
            .data()
            .iter()
            .zip(minus.data())
            .zip(upstream.data())
            .map(|((p, m), u)| u * (p - m))
            .sum::<f64>()
            / (2.0 * FD_STEP);
        let a = analytic.data()[j];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(ERROR_FLOOR);
        if err > worst.0 || err.is_nan() {
            worst = (err, j);
        }
    }
    Ok(GradcheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        coordinates: wanted,
        tolerance,
        passed: worst.0 < tolerance,
    })
}
