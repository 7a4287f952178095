//! Fast minimum-norm `ℓ∞` attack, adapted to segmentation: the loss is the
//! masked mean logit difference and "adversarial" means `APSR >= ν`.

use serde::{Deserialize, Serialize};

use super::losses::mean_logit_difference;
use super::{ensure_finite, project_ball_and_box, validate_nu, AttackInput, AttackResult, BestTracker, CallMeter, TraceEntry};
use crate::error::{Error, Result};
use crate::models::SegmentationModel;
use crate::tensor::linf_norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FmnConfig {
    pub iterations: usize,
    pub alpha_init: f64,
    /// Defaults to `alpha_init / 100`.
    pub alpha_final: Option<f64>,
    pub gamma_init: f64,
    pub gamma_final: f64,
    pub nu: f64,
}

impl Default for FmnConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            alpha_init: 10.0,
            alpha_final: None,
            gamma_init: 0.05,
            gamma_final: 0.001,
            nu: 0.99,
        }
    }
}

impl FmnConfig {
    pub fn validate(&self) -> Result<()> {
        validate_nu(self.nu)?;
        let alpha_final = self.alpha_final.unwrap_or(self.alpha_init / 100.0);
        let ok = self.iterations >= 1
            && self.alpha_init > 0.0
            && alpha_final > 0.0
            && self.gamma_init > 0.0
            && self.gamma_init < 1.0
            && (0.0..1.0).contains(&self.gamma_final);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid FMN configuration".into()))
        }
    }
}

/// Cosine annealing from `start` (at `t = 0`) to `end` (at `t = total`).
pub fn cosine_anneal(start: f64, end: f64, t: usize, total: usize) -> f64 {
    let phase = std::f64::consts::PI * t as f64 / total.max(1) as f64;
    end + 0.5 * (start - end) * (1.0 + phase.cos())
}

pub fn fmn_linf<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, cfg: &FmnConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let alpha_final = cfg.alpha_final.unwrap_or(cfg.alpha_init / 100.0);
    input.check_model(model)?;
    let meter = CallMeter::start(model);
    let x = input.x.data();
    let mut delta = vec![0.0; x.len()];
    let mut epsilon = f64::INFINITY;
    let mut found = false;
    let mut best = BestTracker::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut iterations = 0;

    for k in 0..cfg.iterations {
        iterations = k + 1;
        let x_adv = input.perturbed(&delta)?;
        let logits = model.forward(&x_adv)?;
        let apsr = input.apsr(&logits)?;
        let norm = linf_norm(&delta);
        let adversarial = apsr >= cfg.nu;
        if adversarial {
            found = true;
            best.offer(&delta, norm);
        }
        let (loss, upstream) = mean_logit_difference(&logits, &input.labels, &input.mask, input.targeted)?;
        let grad = model.vjp(&x_adv, &upstream)?;
        let g = grad.data();

        let gamma = cosine_anneal(cfg.gamma_init, cfg.gamma_final, k, cfg.iterations);
        let alpha = cosine_anneal(cfg.alpha_init, alpha_final, k, cfg.iterations);
        if adversarial {
            epsilon = (epsilon * (1.0 - gamma)).min(best.norm);
        } else if found {
            epsilon *= 1.0 + gamma;
        } else {
            // first-order estimate of the distance to the boundary; a masked
            // mean can turn negative before APSR reaches ν, and then the ball
            // stays open until the first adversarial iterate
            let dual: f64 = g.iter().map(|v| v.abs()).sum();
            epsilon = if loss > 0.0 && dual > 0.0 { norm + loss / dual } else { f64::INFINITY };
        }
        let mut entry = TraceEntry::new(k + 1, apsr, norm, loss);
        entry.best_norm = best.best_norm();
        entry.epsilon = epsilon.is_finite().then_some(epsilon);
        trace.push(entry);

        let l2 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if l2 > 0.0 {
            for (d, gi) in delta.iter_mut().zip(g) {
                *d -= alpha * gi / l2;
            }
        }
        project_ball_and_box(&mut delta, x, epsilon.max(0.0));
        ensure_finite(&delta, "perturbation", k + 1)?;
    }
    best.into_result(model, &meter, input, delta, trace, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annealing_endpoints() {
        assert_eq!(cosine_anneal(10.0, 0.1, 0, 100), 10.0);
        assert!((cosine_anneal(10.0, 0.1, 100, 100) - 0.1).abs() < 1e-12);
        assert!((cosine_anneal(1.0, 0.0, 50, 100) - 0.5).abs() < 1e-12);
    }
}
