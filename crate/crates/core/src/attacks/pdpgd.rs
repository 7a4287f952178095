//! Primal-dual proximal gradient attack with one dual variable per pixel.
//!
//! Dual weights live on the simplex padded with the norm term:
//! `λ_Δ = m ⊙ exp λ / (1 + mᵀ exp λ)`, and the primal objective is
//! `(1 − mᵀλ_Δ)‖δ‖∞ + λ_Δᵀ d(x + δ)` with `d` the difference-of-logits-ratio
//! constraints.

use serde::{Deserialize, Serialize};

use super::losses::{constraint_upstream, constraint_values};
use super::{ensure_finite, validate_nu, AttackInput, AttackResult, BestTracker, CallMeter, TraceEntry};
use crate::error::{Error, Result};
use crate::models::SegmentationModel;
use crate::objective::{constraint_mask, mask_quantile, Constraint, MaskStrategy, PercentileScope};
use crate::prox::{prox_ternary, ProxProblem};
use crate::tensor::{linf_norm, TensorGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdpgdConfig {
    pub iterations: usize,
    pub primal_lr: f64,
    /// Primal step at the last iteration relative to the first
    /// (exponential decay).
    pub primal_lr_decay: f64,
    /// Dual step, decayed linearly towards zero.
    pub dual_lr: f64,
    /// Initial ratio of norm weight to total constraint weight.
    pub ratio: f64,
    pub masking: MaskStrategy,
    pub nu: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub precision: f64,
}

impl Default for PdpgdConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            primal_lr: 0.01,
            primal_lr_decay: 0.01,
            dual_lr: 0.1,
            ratio: 1.0,
            masking: MaskStrategy::Labeled,
            nu: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            precision: 1e-5,
        }
    }
}

/// `ω = −log(r ‖m‖₁)`, so that `λ⁽⁰⁾ = ω·1` gives `mᵀ exp λ⁽⁰⁾ = 1/r`.
pub fn initial_dual(mask_count: usize, ratio: f64) -> Result<f64> {
    if mask_count == 0 || !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidArgument("initial dual needs a non-empty mask and r > 0".into()));
    }
    Ok(-(ratio * mask_count as f64).ln())
}

/// Norm weight `1/(1 + mᵀ exp λ)` and constraint weights `λ_Δ`, computed
/// with a shift so large `λ` do not overflow.
pub fn simplex_weights(lambda: &[f64], mask: &[bool]) -> (f64, Vec<f64>) {
    let shift = lambda
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(0.0_f64, f64::max);
    let pad = (-shift).exp();
    let exps: Vec<f64> = lambda
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - shift).exp() } else { 0.0 })
        .collect();
    let denom = pad + exps.iter().sum::<f64>();
    (pad / denom, exps.into_iter().map(|e| e / denom).collect())
}

impl PdpgdConfig {
    pub fn validate(&self) -> Result<()> {
        validate_nu(self.nu)?;
        let ok = self.iterations >= 1
            && self.primal_lr > 0.0
            && self.primal_lr_decay > 0.0
            && self.dual_lr >= 0.0
            && self.ratio > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_epsilon > 0.0
            && self.precision > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid PDPGD configuration".into()))
        }
    }
}

pub fn pdpgd_linf<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, cfg: &PdpgdConfig) -> Result<AttackResult> {
    cfg.validate()?;
    input.check_model(model)?;
    let meter = CallMeter::start(model);
    let constraint = Constraint::from_targeted(input.targeted);
    let x = input.x.data();
    let shape = input.x.shape();
    let n = cfg.iterations;

    let omega = initial_dual(input.mask.count(), cfg.ratio)?;
    let mut lambda = vec![omega; input.mask.len()];
    let mut delta = vec![0.0; x.len()];
    let mut m1 = vec![0.0; x.len()];
    let mut m2 = vec![0.0; x.len()];
    let mut best = BestTracker::new();
    let mut trace = Vec::with_capacity(n);
    let mut iterations = 0;

    for t in 1..=n {
        iterations = t;
        let x_adv = input.perturbed(&delta)?;
        let logits = model.forward(&x_adv)?;
        let d = constraint_values(&logits, &input.labels, &input.mask, constraint, 0.0)?;
        let apsr = input.apsr(&logits)?;
        let norm = linf_norm(&delta);
        if apsr >= cfg.nu {
            best.offer(&delta, norm);
        }
        let active = match cfg.masking {
            MaskStrategy::Labeled => input.mask.bits().to_vec(),
            MaskStrategy::Fixed => constraint_mask(&d, &input.mask, cfg.nu, PercentileScope::Masked)?,
            MaskStrategy::Scheduled => constraint_mask(&d, &input.mask, mask_quantile(t, n, cfg.nu), PercentileScope::Masked)?,
        };
        let (norm_weight, weights) = simplex_weights(&lambda, &active);
        let loss = norm_weight * norm + weights.iter().zip(&d).map(|(w, v)| w * v).sum::<f64>();
        let mut entry = TraceEntry::new(t, apsr, norm, loss);
        entry.best_norm = best.best_norm();
        trace.push(entry);
        if best.norm == 0.0 {
            break;
        }

        let progress = (t - 1) as f64 / (n.max(2) - 1) as f64;
        let primal_lr = cfg.primal_lr * cfg.primal_lr_decay.powf(progress);
        let dual_lr = cfg.dual_lr * (1.0 - (t - 1) as f64 / n as f64);

        // primal: Adam-normalised step on the constraint term, then the
        // Euclidean proximity operator of the weighted norm and the box
        let upstream = constraint_upstream(&logits, &input.labels, &input.mask, constraint, &weights)?;
        let grad = model.vjp(&x_adv, &upstream)?;
        let c1 = 1.0 - cfg.beta1.powi(t as i32);
        let c2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut forward = delta.clone();
        for (i, g) in grad.data().iter().enumerate() {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
            forward[i] -= primal_lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + cfg.adam_epsilon);
        }
        ensure_finite(&forward, "forward step", t)?;
        let weight = primal_lr * norm_weight;
        delta = if weight > 0.0 {
            let problem = ProxProblem::new(TensorGrid::new(shape, forward)?, input.x.clone(), weight)?
                .with_precision(cfg.precision)?;
            prox_ternary(&problem).solution.into_data()
        } else {
            forward.iter().zip(x).map(|(d, xv)| d.clamp(-xv, 1.0 - xv)).collect()
        };

        // dual: ascent in the log domain on active constraints
        for i in 0..lambda.len() {
            if active[i] {
                lambda[i] += dual_lr * d[i];
            }
        }
    }
    best.into_result(model, &meter, input, delta, trace, iterations)
}
