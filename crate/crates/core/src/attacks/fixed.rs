//! Fixed-budget `ℓ∞` attacks: I-FGSM, MI-FGSM and PGD.
//!
//! Each returns the perturbation with the highest pixel success rate among
//! its evaluated iterates and stops early once the rate reaches `ν`.

use serde::{Deserialize, Serialize};

use super::losses::{cross_entropy, dlr_objective};
use super::{ensure_finite, project_ball_and_box, validate_nu, AttackInput};
use crate::error::{Error, Result};
use crate::models::SegmentationModel;
use crate::rng::RngSeed;
use crate::tensor::{linf_norm, TensorGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedLoss {
    Ce,
    Dlr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    pub loss: FixedLoss,
    pub steps: usize,
    /// Independent runs; every run after the first starts from a uniform
    /// random point of the `ε`-ball.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            loss: FixedLoss::Ce,
            steps: 40,
            restarts: 1,
            seed: 0,
        }
    }
}

/// A fixed-`ε` attack usable inside the binary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixedAttack {
    Ifgsm { steps: usize },
    Mifgsm { steps: usize, decay: f64 },
    Pgd(PgdConfig),
}

impl FixedAttack {
    pub fn name(&self) -> String {
        match self {
            FixedAttack::Ifgsm { .. } => "ifgsm".into(),
            FixedAttack::Mifgsm { .. } => "mifgsm".into(),
            FixedAttack::Pgd(c) => format!("pgd_{}", match c.loss {
                FixedLoss::Ce => "ce",
                FixedLoss::Dlr => "dlr",
            }),
        }
    }

    /// Checks everything except `ε`, which varies per call.
    pub fn validate(&self, nu: f64) -> Result<()> {
        validate_nu(nu)?;
        let ok = match self {
            FixedAttack::Ifgsm { steps } => *steps >= 1,
            FixedAttack::Mifgsm { steps, decay } => *steps >= 1 && *decay >= 0.0 && decay.is_finite(),
            FixedAttack::Pgd(c) => c.steps >= 1 && c.restarts >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid {} configuration", self.name())))
        }
    }

    pub fn run<M: SegmentationModel + ?Sized>(&self, model: &M, input: &AttackInput, eps: f64, nu: f64) -> Result<TensorGrid> {
        match self {
            FixedAttack::Ifgsm { steps } => ifgsm(model, input, eps, *steps, nu),
            FixedAttack::Mifgsm { steps, decay } => mifgsm(model, input, eps, *steps, *decay, nu),
            FixedAttack::Pgd(cfg) => pgd(model, input, eps, cfg, nu),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Ascent<'a> {
    input: &'a AttackInput,
    eps: f64,
    steps: usize,
    step_size: f64,
    loss: FixedLoss,
    /// MI-FGSM momentum decay.
    momentum: Option<f64>,
    nu: f64,
}

/// Best `(apsr, δ)` of one signed-gradient ascent run.
fn ascend<M: SegmentationModel + ?Sized>(model: &M, run: &Ascent<'_>, mut delta: Vec<f64>) -> Result<(f64, Vec<f64>)> {
    let input = run.input;
    let x = input.x.data();
    let mut velocity = vec![0.0; delta.len()];
    let mut best = (-1.0, delta.clone());
    for t in 0..=run.steps {
        let x_adv = input.perturbed(&delta)?;
        let logits = model.forward(&x_adv)?;
        let apsr = input.apsr(&logits)?;
        if apsr > best.0 {
            best = (apsr, delta.clone());
        }
        if apsr >= run.nu || t == run.steps {
            break;
        }
        let (_, upstream) = match run.loss {
            FixedLoss::Ce => cross_entropy(&logits, &input.labels, &input.mask, input.targeted)?,
            FixedLoss::Dlr => dlr_objective(&logits, &input.labels, &input.mask, input.targeted)?,
        };
        let grad = model.vjp(&x_adv, &upstream)?;
        let direction: &[f64] = match run.momentum {
            Some(decay) => {
                let l1: f64 = grad.data().iter().map(|g| g.abs()).sum();
                let l1 = if l1 > 0.0 { l1 } else { 1.0 };
                for (v, g) in velocity.iter_mut().zip(grad.data()) {
                    *v = decay * *v + g / l1;
                }
                &velocity
            }
            None => grad.data(),
        };
        for (d, g) in delta.iter_mut().zip(direction) {
            *d += run.step_size * sign(*g);
        }
        project_ball_and_box(&mut delta, x, run.eps);
        ensure_finite(&delta, "perturbation", t + 1)?;
    }
    Ok(best)
}

fn check(eps: f64, steps: usize, nu: f64) -> Result<()> {
    validate_nu(nu)?;
    if !(eps >= 0.0 && eps.is_finite()) || steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "fixed-budget attacks need eps >= 0 and steps >= 1, got eps = {eps}, steps = {steps}"
        )));
    }
    Ok(())
}

/// I-FGSM on the cross-entropy with step `ε/steps`.
pub fn ifgsm<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, eps: f64, steps: usize, nu: f64) -> Result<TensorGrid> {
    check(eps, steps, nu)?;
    input.check_model(model)?;
    let run = Ascent {
        input,
        eps,
        steps,
        step_size: eps / steps as f64,
        loss: FixedLoss::Ce,
        momentum: None,
        nu,
    };
    let (_, d) = ascend(model, &run, vec![0.0; input.x.len()])?;
    TensorGrid::new(input.x.shape(), d)
}

/// MI-FGSM: momentum on `ℓ1`-normalised gradients, step `ε/steps`.
pub fn mifgsm<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, eps: f64, steps: usize, decay: f64, nu: f64) -> Result<TensorGrid> {
    check(eps, steps, nu)?;
    if !(decay >= 0.0 && decay.is_finite()) {
        return Err(Error::InvalidArgument(format!("momentum decay must be >= 0, got {decay}")));
    }
    input.check_model(model)?;
    let run = Ascent {
        input,
        eps,
        steps,
        step_size: eps / steps as f64,
        loss: FixedLoss::Ce,
        momentum: Some(decay),
        nu,
    };
    let (_, d) = ascend(model, &run, vec![0.0; input.x.len()])?;
    TensorGrid::new(input.x.shape(), d)
}

/// PGD with step `2ε/steps`.
pub fn pgd<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, eps: f64, cfg: &PgdConfig, nu: f64) -> Result<TensorGrid> {
    check(eps, cfg.steps, nu)?;
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("PGD needs at least one run".into()));
    }
    input.check_model(model)?;
    let run = Ascent {
        input,
        eps,
        steps: cfg.steps,
        step_size: 2.0 * eps / cfg.steps as f64,
        loss: cfg.loss,
        momentum: None,
        nu,
    };
    let x = input.x.data();
    let mut rng = RngSeed(cfg.seed).rng();
    let mut best = (-1.0, Vec::new());
    for r in 0..cfg.restarts {
        let mut init = vec![0.0; x.len()];
        if r > 0 {
            for v in init.iter_mut() {
                *v = rng.uniform_range(-eps, eps);
            }
            project_ball_and_box(&mut init, x, eps);
        }
        let (apsr, d) = ascend(model, &run, init)?;
        if apsr > best.0 {
            best = (apsr, d);
        }
        if best.0 >= nu {
            break;
        }
    }
    debug_assert!(linf_norm(&best.1) <= eps + 1e-12);
    TensorGrid::new(input.x.shape(), best.1)
}
