//! Augmented-Lagrangian controller: constraint masking, global constraint
//! scaling, multiplier smoothing and penalty-parameter growth.

use serde::{Deserialize, Serialize};

use super::penalty::penalty_dy;
use crate::error::{shape_err, Error, Result};
use crate::labels::BinaryMask;

/// How the per-iteration constraint mask is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Only the validity mask `m`.
    Labeled,
    /// `m` minus the largest `(1 − ν)` fraction of constraints, every iteration.
    Fixed,
    /// Linearly tightened from the full mask at `t = 1` to `ν` at `t = N`.
    Scheduled,
}

/// Population over which the percentile threshold is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileScope {
    /// Constraints of pixels inside `m` only.
    Masked,
    /// All pixels.
    All,
}

/// Percentile level `q = 1 − (1 − ν)(t − 1)/(N − 1)`; `1` when `N = 1`.
pub fn mask_quantile(t: usize, iterations: usize, nu: f64) -> f64 {
    if iterations <= 1 {
        return 1.0;
    }
    1.0 - (1.0 - nu) * (t - 1) as f64 / (iterations - 1) as f64
}

/// Nearest-rank `q`-percentile of `values` (`q ∈ (0, 1]`).
fn nearest_rank(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    // guard the product against representation error (0.99 * 1000 > 990)
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    values[rank - 1]
}

/// `m̃ᵢ = mᵢ ∧ [dᵢ <= ξ]` with `ξ` the nearest-rank `q`-percentile of `d`
/// over `scope`. The result may be empty for [`PercentileScope::All`].
pub fn constraint_mask(d: &[f64], mask: &BinaryMask, q: f64, scope: PercentileScope) -> Result<Vec<bool>> {
    if d.len() != mask.len() {
        return Err(shape_err(mask.len(), d.len()));
    }
    if q >= 1.0 {
        return Ok(mask.bits().to_vec());
    }
    let population: Vec<f64> = match scope {
        PercentileScope::Masked => d
            .iter()
            .zip(mask.bits())
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect(),
        PercentileScope::All => d.to_vec(),
    };
    let xi = nearest_rank(population, q);
    Ok(d.iter()
        .zip(mask.bits())
        .map(|(&v, &m)| m && v <= xi)
        .collect())
}

/// Scheduled constraint mask at iteration `t` of `iterations`, with the
/// percentile taken over masked pixels. Keeps at least `ν‖m‖₁` pixels.
pub fn compute_mask(d: &[f64], mask: &BinaryMask, t: usize, iterations: usize, nu: f64) -> Result<BinaryMask> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")));
    }
    if t == 0 || t > iterations.max(1) {
        return Err(Error::InvalidArgument(format!(
            "iteration {t} outside 1..={iterations}"
        )));
    }
    let bits = constraint_mask(d, mask, mask_quantile(t, iterations, nu), PercentileScope::Masked)?;
    BinaryMask::new(mask.height(), mask.width(), bits)
}

/// Global constraint scale `w ∈ [w_min, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleState {
    pub w: f64,
    pub gamma_w: f64,
    pub w_min: f64,
    pub nu: f64,
}

impl ScaleState {
    pub fn new(gamma_w: f64, w_min: f64, nu: f64) -> Self {
        Self {
            w: 1.0,
            gamma_w,
            w_min,
            nu,
        }
    }
}

/// Raise `w` by `1/(1 − γ_w)` when the success rate is below `ν`, lower it
/// by `1/(1 + γ_w)` otherwise, then clamp to `[w_min, 1]`.
pub fn update_scale(state: ScaleState, success_rate: f64) -> ScaleState {
    let w = if success_rate < state.nu {
        state.w / (1.0 - state.gamma_w)
    } else {
        state.w / (1.0 + state.gamma_w)
    };
    ScaleState {
        w: w.clamp(state.w_min, 1.0),
        ..state
    }
}

/// Per-pixel multipliers `μ` and penalty parameters `ρ` with their update
/// rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_min: f64,
    pub mu_max: f64,
    /// `ρ` growth factor `γ > 1`.
    pub gamma: f64,
    /// Iterations `M` between `ρ` checks.
    pub check_period: usize,
    /// Required improvement ratio `τ ∈ (0, 1)`.
    pub improvement_rate: f64,
    /// Multiplier smoothing `α ∈ [0, 1)`.
    pub alpha: f64,
}

impl PenaltyParams {
    pub fn uniform(pixels: usize, rho: f64, mu: f64) -> Self {
        Self {
            rho: vec![rho; pixels],
            mu: vec![mu; pixels],
            mu_min: 1e-6,
            mu_max: 1e6,
            gamma: 2.0,
            check_period: 10,
            improvement_rate: 0.95,
            alpha: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rho.len() == self.mu.len()
            && self.rho.iter().all(|&r| r > 0.0)
            && self.mu_min > 0.0
            && self.mu_min <= self.mu_max
            && self.gamma > 1.0
            && self.check_period >= 1
            && self.improvement_rate > 0.0
            && self.improvement_rate < 1.0
            && (0.0..1.0).contains(&self.alpha);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid penalty parameters".into()))
        }
    }

    /// `μ̂ᵢ = m̃ᵢ · w · P'(w dᵢ, ρᵢ, μᵢ)` (derivative of the scaled masked
    /// penalty in `dᵢ`), then `μ ← clamp(αμ + (1 − α)μ̂, μ_min, μ_max)`.
    pub fn update_multipliers(&mut self, d: &[f64], mask: &[bool], w: f64) -> Result<()> {
        if d.len() != self.mu.len() || mask.len() != self.mu.len() {
            return Err(shape_err(self.mu.len(), (d.len(), mask.len())));
        }
        for i in 0..self.mu.len() {
            let target = if mask[i] {
                w * penalty_dy(w * d[i], self.rho[i], self.mu[i])
            } else {
                0.0
            };
            self.mu[i] = (self.alpha * self.mu[i] + (1.0 - self.alpha) * target)
                .clamp(self.mu_min, self.mu_max);
        }
        Ok(())
    }

    /// `ρ` check at a multiple of `M`. `history` holds `d⁽ᵗ⁻ᴹ⁾, …, d⁽ᵗ⁾`
    /// (oldest first). A masked pixel keeps its `ρ` if it was satisfied in
    /// one of the last `M` iterations or improved by the factor `τ`; every
    /// other pixel, unmasked ones included, gets `ρ ← γρ`.
    pub fn update_rho(&mut self, history: &[Vec<f64>], mask: &[bool]) -> Result<()> {
        let m = self.check_period;
        if history.len() < m + 1 {
            return Err(Error::InvalidArgument(format!(
                "rho update needs {} history entries, got {}",
                m + 1,
                history.len()
            )));
        }
        let window = &history[history.len() - (m + 1)..];
        let oldest = &window[0];
        let current = &window[m];
        if mask.len() != self.rho.len() || window.iter().any(|d| d.len() != self.rho.len()) {
            return Err(shape_err(self.rho.len(), mask.len()));
        }
        for i in 0..self.rho.len() {
            let satisfied = window[1..].iter().any(|d| d[i] <= 0.0);
            let improved = current[i] <= self.improvement_rate * oldest[i];
            if !(mask[i] && (satisfied || improved)) {
                self.rho[i] *= self.gamma;
            }
        }
        Ok(())
    }

    pub fn mean_mu(&self) -> f64 {
        self.mu.iter().sum::<f64>() / self.mu.len().max(1) as f64
    }
}
