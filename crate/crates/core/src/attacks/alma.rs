//! ALMA prox: augmented Lagrangian constraints, variable-metric
//! forward-backward steps, and the ternary-search proximity operator as the
//! backward step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::losses::{constraint_upstream, constraint_values};
use super::{ensure_finite, validate_nu, AttackInput, AttackResult, BestTracker, CallMeter, DiagonalMetric, TraceEntry};
use crate::error::{Error, Result};
use crate::labels::masked_fraction;
use crate::models::SegmentationModel;
use crate::objective::{constraint_mask, mask_quantile, penalty, penalty_dy, update_scale, Constraint, MaskStrategy, PenaltyParams, PercentileScope, ScaleState};
use crate::prox::{prox_ternary, ProxProblem};
use crate::tensor::{linf_norm, TensorGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlmaProxConfig {
    pub iterations: usize,
    pub step_init: f64,
    pub step_final: f64,
    pub alpha: f64,
    pub mu_init: f64,
    pub rho_init: f64,
    pub gamma: f64,
    pub gamma_w: f64,
    pub w_min: f64,
    pub nu: f64,
    pub precision: f64,
    pub metric_epsilon: f64,
    pub masking: MaskStrategy,
    pub percentile_scope: PercentileScope,
    pub mu_min: f64,
    pub mu_max: f64,
    pub check_period: usize,
    pub improvement_rate: f64,
    /// Added to every constraint value; success is still judged by argmax.
    pub margin: f64,
}

impl Default for AlmaProxConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            step_init: 1e-3,
            step_final: 1e-4,
            alpha: 0.8,
            mu_init: 1.0,
            rho_init: 0.01,
            gamma: 2.0,
            gamma_w: 0.02,
            w_min: 0.1,
            nu: 0.99,
            precision: 1e-5,
            metric_epsilon: 1e-8,
            masking: MaskStrategy::Scheduled,
            percentile_scope: PercentileScope::Masked,
            mu_min: 1e-6,
            mu_max: 1e6,
            check_period: 10,
            improvement_rate: 0.95,
            margin: 0.0,
        }
    }
}

impl AlmaProxConfig {
    pub fn validate(&self) -> Result<()> {
        validate_nu(self.nu)?;
        let positive = [
            self.step_init,
            self.step_final,
            self.mu_init,
            self.rho_init,
            self.gamma_w,
            self.w_min,
            self.precision,
            self.metric_epsilon,
        ];
        let ok = self.iterations >= 1
            && positive.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.gamma_w < 1.0
            && self.w_min <= 1.0
            && (0.0..1.0).contains(&self.alpha)
            && self.margin.is_finite();
        if !ok {
            return Err(Error::InvalidArgument("invalid ALMA prox configuration".into()));
        }
        self.penalty_params(1).validate()
    }

    fn penalty_params(&self, pixels: usize) -> PenaltyParams {
        PenaltyParams {
            rho: vec![self.rho_init; pixels],
            mu: vec![self.mu_init; pixels],
            mu_min: self.mu_min,
            mu_max: self.mu_max,
            gamma: self.gamma,
            check_period: self.check_period,
            improvement_rate: self.improvement_rate,
            alpha: self.alpha,
        }
    }
}

/// `λ⁽ᵗ⁾ = λ⁽⁰⁾ (λ⁽ᴺ⁾/λ⁽⁰⁾)^{t/N}`.
pub fn geometric_step(init: f64, last: f64, t: usize, iterations: usize) -> f64 {
    init * (last / init).powf(t as f64 / iterations as f64)
}

pub fn alma_prox<M: SegmentationModel + ?Sized>(model: &M, input: &AttackInput, cfg: &AlmaProxConfig) -> Result<AttackResult> {
    cfg.validate()?;
    input.check_model(model)?;
    let meter = CallMeter::start(model);
    let constraint = Constraint::from_targeted(input.targeted);
    let n_pix = input.mask.len();
    let x = input.x.data();
    let shape = input.x.shape();

    let mut delta = vec![0.0; x.len()];
    let mut metric = DiagonalMetric::new(x.len(), cfg.alpha, cfg.metric_epsilon);
    let mut scale = ScaleState::new(cfg.gamma_w, cfg.w_min, cfg.nu);
    let mut params = cfg.penalty_params(n_pix);
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.check_period + 1);
    let mut best = BestTracker::new();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut iterations = 0;

    for t in 1..=cfg.iterations {
        iterations = t;
        let x_adv = input.perturbed(&delta)?;
        let logits = model.forward(&x_adv)?;
        let d = constraint_values(&logits, &input.labels, &input.mask, constraint, cfg.margin)?;
        let apsr = input.apsr(&logits)?;
        let norm = linf_norm(&delta);
        if apsr >= cfg.nu {
            best.offer(&delta, norm);
        }

        let satisfied: Vec<bool> = d.iter().map(|&v| v <= 0.0).collect();
        scale = update_scale(scale, masked_fraction(&satisfied, &input.mask)?);
        let w = scale.w;

        let active = match cfg.masking {
            MaskStrategy::Labeled => input.mask.bits().to_vec(),
            MaskStrategy::Fixed => constraint_mask(&d, &input.mask, cfg.nu, cfg.percentile_scope)?,
            MaskStrategy::Scheduled => constraint_mask(
                &d,
                &input.mask,
                mask_quantile(t, cfg.iterations, cfg.nu),
                cfg.percentile_scope,
            )?,
        };

        params.update_multipliers(&d, &active, w)?;
        if history.len() == cfg.check_period + 1 {
            history.pop_front();
        }
        history.push_back(d.clone());
        // d⁽⁰⁾ does not exist, so the first check happens at t = 2M
        if t % cfg.check_period == 0 && history.len() == cfg.check_period + 1 {
            params.update_rho(history.make_contiguous(), &active)?;
        }

        let mut loss = 0.0;
        let coeffs: Vec<f64> = (0..n_pix)
            .map(|i| {
                if !active[i] {
                    return 0.0;
                }
                loss += penalty(w * d[i], params.rho[i], params.mu[i]);
                w * penalty_dy(w * d[i], params.rho[i], params.mu[i])
            })
            .collect();
        let mut entry = TraceEntry::new(t, apsr, norm, loss);
        entry.scale = Some(w);
        entry.mean_mu = Some(params.mean_mu());
        entry.best_norm = best.best_norm();
        trace.push(entry);
        if best.norm == 0.0 {
            break;
        }

        let upstream = constraint_upstream(&logits, &input.labels, &input.mask, constraint, &coeffs)?;
        let grad = model.vjp(&x_adv, &upstream)?;
        ensure_finite(grad.data(), "gradient", t)?;
        let s = metric.update(grad.data());
        let step = geometric_step(cfg.step_init, cfg.step_final, t, cfg.iterations);
        let forward = DiagonalMetric::forward_step(&delta, grad.data(), &s, step);
        ensure_finite(&forward, "forward step", t)?;
        let problem = ProxProblem::new(TensorGrid::new(shape, forward)?, input.x.clone(), step)?
            .with_metric(TensorGrid::new(shape, s)?)?
            .with_precision(cfg.precision)?;
        delta = prox_ternary(&problem).solution.into_data();
    }
    best.into_result(model, &meter, input, delta, trace, iterations)
}
