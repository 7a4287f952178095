//! Difference-of-logits-ratio constraints.
//!
//! Both functions are negative exactly when the pixel meets the attack goal
//! and are invariant to positive scaling and shifts of the logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices of the largest and third-largest logits; ties go to the lower
/// index.
fn top_and_third(z: &[f64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    (order[0], order[2])
}

fn best_other(z: &[f64], excluded: usize) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in z.iter().enumerate() {
        if k != excluded && (best == usize::MAX || v > z[best]) {
            best = k;
        }
    }
    best
}

fn check(z: &[f64], class: usize) -> Result<()> {
    if z.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "difference-of-logits ratio needs at least 3 classes, got {}",
            z.len()
        )));
    }
    if class >= z.len() {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} logits",
            z.len()
        )));
    }
    Ok(())
}

/// `(num_pos - num_neg) / (z_π1 - z_π3)` and its gradient in `z`.
fn ratio_with_grad(z: &[f64], num_pos: usize, num_neg: usize, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    let (first, third) = top_and_third(z);
    let denom = z[first] - z[third];
    if denom <= 0.0 {
        return Err(Error::DegenerateLogits);
    }
    let numer = z[num_pos] - z[num_neg];
    let value = numer / denom;
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    let mut grad = vec![0.0; z.len()];
    grad[num_pos] += 1.0 / denom;
    grad[num_neg] -= 1.0 / denom;
    let scale = value / denom;
    grad[first] -= scale;
    grad[third] += scale;
    Ok((value, grad))
}

/// `DLR⁺(z, y) = (z_y − max_{k≠y} z_k) / (z_π1 − z_π3)`.
pub fn dlr_plus(z: &[f64], y: usize) -> Result<f64> {
    check(z, y)?;
    Ok(ratio_with_grad(z, y, best_other(z, y), false)?.0)
}

pub fn dlr_plus_with_grad(z: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    check(z, y)?;
    ratio_with_grad(z, y, best_other(z, y), true)
}

/// Targeted variant `(max_{k≠t} z_k − z_t) / (z_π1 − z_π3)`.
pub fn dlr_targeted(z: &[f64], t: usize) -> Result<f64> {
    check(z, t)?;
    Ok(ratio_with_grad(z, best_other(z, t), t, false)?.0)
}

pub fn dlr_targeted_with_grad(z: &[f64], t: usize) -> Result<(f64, Vec<f64>)> {
    check(z, t)?;
    ratio_with_grad(z, best_other(z, t), t, true)
}

/// Which constraint an attack enforces per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Untargeted,
    Targeted,
}

impl Constraint {
    pub fn from_targeted(targeted: bool) -> Self {
        if targeted {
            Constraint::Targeted
        } else {
            Constraint::Untargeted
        }
    }

    pub fn eval(&self, z: &[f64], label: usize) -> Result<f64> {
        match self {
            Constraint::Untargeted => dlr_plus(z, label),
            Constraint::Targeted => dlr_targeted(z, label),
        }
    }

    pub fn eval_with_grad(&self, z: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        match self {
            Constraint::Untargeted => dlr_plus_with_grad(z, label),
            Constraint::Targeted => dlr_targeted_with_grad(z, label),
        }
    }
}
