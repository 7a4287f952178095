//! Dense adversary generation: normalised gradient accumulation with an
//! early stop at the pixel success threshold.

use serde::{Deserialize, Serialize};

use super::losses::logit_differences;
use super::{ensure_finite, validate_nu, AttackInput, AttackResult, CallMeter, TraceEntry};
use crate::error::{Error, Result};
use crate::models::SegmentationModel;
use crate::tensor::{linf_norm, TensorGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DagConfig {
    pub eta: f64,
    pub iterations: usize,
    pub nu: f64,
}

impl Default for DagConfig {
    fn default() -> Self {
        Self {
            eta: 0.003,
            iterations: 500,
            nu: 0.99,
        }
    }
}

impl DagConfig {
    pub fn validate(&self) -> Result<()> {
        validate_nu(self.nu)?;
        if self.eta > 0.0 && self.eta.is_finite() && self.iterations >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("DAG needs eta > 0 and at least one iteration".into()))
        }
    }
}

/// The perturbation is accumulated without clipping; the model always sees
/// `clip(x + δ, 0, 1)` and coordinates outside the box get no gradient. The
/// reported perturbation is the clipped one.
pub fn dag<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, cfg: &DagConfig) -> Result<AttackResult> {
    cfg.validate()?;
    input.check_model(model)?;
    let meter = CallMeter::start(model);
    let x = input.x.data();
    let shape = input.x.shape();
    let n = input.mask.len();
    let mut delta = vec![0.0; x.len()];
    let mut clipped = delta.clone();
    let mut trace = Vec::new();
    let mut success = false;
    let mut iterations = 0;

    for t in 1..=cfg.iterations {
        iterations = t;
        clipped = x.iter().zip(&delta).map(|(a, b)| (a + b).clamp(0.0, 1.0) - a).collect();
        let x_adv = input.perturbed(&clipped)?;
        let logits = model.forward(&x_adv)?;
        let apsr = input.apsr(&logits)?;
        let diffs = logit_differences(&logits, &input.labels, input.targeted);
        let mut loss = 0.0;
        let k = logits.shape().channels;
        let mut upstream = vec![0.0; k * n];
        let sign = if input.targeted { -1.0 } else { 1.0 };
        for (i, &(dz, y, j)) in diffs.iter().enumerate() {
            if input.mask.is_set(i) && dz > 0.0 {
                loss += dz;
                upstream[y * n + i] += sign;
                upstream[j * n + i] -= sign;
            }
        }
        trace.push(TraceEntry::new(t, apsr, linf_norm(&clipped), loss));
        if apsr >= cfg.nu {
            success = true;
            break;
        }
        let grad = model.vjp(&x_adv, &TensorGrid::new(logits.shape(), upstream)?)?;
        let g: Vec<f64> = grad
            .data()
            .iter()
            .zip(x.iter().zip(&delta))
            .map(|(g, (a, b))| if (0.0..=1.0).contains(&(a + b)) { *g } else { 0.0 })
            .collect();
        let gmax = linf_norm(&g);
        if gmax == 0.0 {
            break;
        }
        for (d, gi) in delta.iter_mut().zip(&g) {
            *d -= cfg.eta * (gi / gmax);
        }
        ensure_finite(&delta, "perturbation", t)?;
    }
    let (forwards, backwards) = meter.finish(model);
    Ok(AttackResult {
        best_norm: linf_norm(&clipped),
        best_delta: TensorGrid::new(shape, clipped)?,
        success,
        trace,
        forwards,
        backwards,
        iterations,
    })
}
