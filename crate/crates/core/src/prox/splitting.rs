//! Iterative splitting baselines for the same proximity operator.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ProxProblem, ProxSolverReport};
use crate::error::{Error, Result};
use crate::tensor::{linf_norm, TensorGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplittingMethod {
    /// Dual forward-backward.
    Dfb,
    /// Dual forward-backward with Nesterov (FISTA) extrapolation.
    Adfb,
    /// Douglas–Rachford.
    Dr,
}

impl SplittingMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SplittingMethod::Dfb => "dfb",
            SplittingMethod::Adfb => "adfb",
            SplittingMethod::Dr => "dr",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingConfig {
    /// Stop once `‖p⁽ᵗ⁺¹⁾ − p⁽ᵗ⁾‖∞ <= stop_tol`.
    pub stop_tol: f64,
    pub max_iterations: usize,
    /// Dual step for DFB/ADFB as a multiple of `1/L` (`L = 1` here).
    pub dual_step_scale: f64,
    /// Douglas–Rachford step `γ`.
    pub dr_step: f64,
    /// Douglas–Rachford relaxation.
    pub dr_relaxation: f64,
}

impl Default for SplittingConfig {
    fn default() -> Self {
        Self {
            stop_tol: 1e-5,
            max_iterations: 10_000,
            dual_step_scale: 1.0,
            dr_step: 1.0,
            dr_relaxation: 1.0,
        }
    }
}

impl SplittingConfig {
    pub fn with_tol(stop_tol: f64) -> Self {
        Self {
            stop_tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.stop_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.dual_step_scale > 0.0 && self.dual_step_scale < 2.0) {
            return Err(Error::InvalidArgument(
                "dual_step_scale must lie in (0, 2)".into(),
            ));
        }
        if !(self.dr_step > 0.0) || !(self.dr_relaxation > 0.0 && self.dr_relaxation < 2.0) {
            return Err(Error::InvalidArgument(
                "dr_step must be positive and dr_relaxation in (0, 2)".into(),
            ));
        }
        Ok(())
    }
}

pub fn prox_dfb(problem: &ProxProblem, stop_tol: f64) -> Result<ProxSolverReport> {
    solve_splitting(problem, SplittingMethod::Dfb, &SplittingConfig::with_tol(stop_tol))
}

pub fn prox_adfb(problem: &ProxProblem, stop_tol: f64) -> Result<ProxSolverReport> {
    solve_splitting(problem, SplittingMethod::Adfb, &SplittingConfig::with_tol(stop_tol))
}

pub fn prox_dr(problem: &ProxProblem, stop_tol: f64) -> Result<ProxSolverReport> {
    solve_splitting(problem, SplittingMethod::Dr, &SplittingConfig::with_tol(stop_tol))
}

pub fn solve_splitting(
    problem: &ProxProblem,
    method: SplittingMethod,
    config: &SplittingConfig,
) -> Result<ProxSolverReport> {
    config.validate()?;
    if problem.metric().is_some() && method != SplittingMethod::Dr {
        return Err(Error::InvalidArgument(format!(
            "{} supports only the Euclidean metric",
            method.name()
        )));
    }
    let start = Instant::now();
    let ctx = Context::new(problem);
    let (raw, iterations, converged) = match method {
        SplittingMethod::Dfb => ctx.dual_forward_backward(config, false),
        SplittingMethod::Adfb => ctx.dual_forward_backward(config, true),
        SplittingMethod::Dr => ctx.douglas_rachford(config),
    };
    // the returned point is always made feasible
    let solution = super::project_onto_anchor_box(&raw, ctx.anchor);
    let beta_star = linf_norm(&solution);
    let objective = problem.objective(&solution);
    Ok(ProxSolverReport {
        solution: TensorGrid::new(problem.delta().shape(), solution)?,
        beta_star,
        objective,
        iterations,
        wall_time: start.elapsed(),
        converged,
    })
}

struct Context<'a> {
    delta: &'a [f64],
    anchor: &'a [f64],
    metric: Option<&'a [f64]>,
    lambda: f64,
}

impl<'a> Context<'a> {
    fn new(problem: &'a ProxProblem) -> Self {
        Self {
            delta: problem.delta().data(),
            anchor: problem.anchor().data(),
            metric: problem.metric().map(|m| m.data()),
            lambda: problem.lambda(),
        }
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.metric.map_or(1.0, |s| s[i])
    }

    /// `argmin_p ½‖p − δ‖² + λ‖p‖∞ + ⟨v, p⟩ = prox_{λ‖·‖∞}(δ − v)`.
    fn primal_from_dual(&self, v: &[f64], out: &mut [f64]) {
        for (o, (d, w)) in out.iter_mut().zip(self.delta.iter().zip(v)) {
            *o = d - w;
        }
        prox_linf(out, self.lambda);
    }

    /// Dual forward-backward with the box constraint dualised:
    /// `v ← prox_{γσ_Λ}(v + γ p(v)) = w − γ proj_Λ(w / γ)`.
    fn dual_forward_backward(&self, cfg: &SplittingConfig, accelerated: bool) -> (Vec<f64>, usize, bool) {
        let n = self.delta.len();
        let step = cfg.dual_step_scale;

        let mut v = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut v_prev = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut p_next = vec![0.0; n];
        let mut grad_point = vec![0.0; n];
        let mut momentum = 1.0_f64;
        self.primal_from_dual(&v, &mut p);

        for it in 1..=cfg.max_iterations {
            v_prev.copy_from_slice(&v);
            // gradient point: the extrapolated dual for ADFB, the iterate itself for DFB
            let base = if accelerated { &y } else { &v_prev };
            self.primal_from_dual(base, &mut grad_point);
            for i in 0..n {
                let w = base[i] + step * grad_point[i];
                let x = self.anchor[i];
                v[i] = w - step * (w / step).clamp(-x, 1.0 - x);
            }
            if accelerated {
                let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / next;
                momentum = next;
                for i in 0..n {
                    y[i] = v[i] + beta * (v[i] - v_prev[i]);
                }
            }
            self.primal_from_dual(&v, &mut p_next);
            let change = max_abs_diff(&p, &p_next);
            std::mem::swap(&mut p, &mut p_next);
            if change <= cfg.stop_tol {
                return (p, it, true);
            }
        }
        (p, cfg.max_iterations, false)
    }

    /// DR on `F = ½‖· − δ‖²_H + ι_Λ` and `G = λ‖·‖∞`. The tracked iterate
    /// is the `G`-prox output, which need not lie in `Λ`.
    fn douglas_rachford(&self, cfg: &SplittingConfig) -> (Vec<f64>, usize, bool) {
        let n = self.delta.len();
        let gamma = cfg.dr_step;
        let mut z = super::project_onto_anchor_box(self.delta, self.anchor);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let mut q_next = vec![0.0; n];
        let reflect_prox = |z: &[f64], p: &mut [f64], q: &mut [f64]| {
            self.prox_f(z, gamma, p);
            for i in 0..n {
                q[i] = 2.0 * p[i] - z[i];
            }
            prox_linf(q, gamma * self.lambda);
        };
        reflect_prox(&z, &mut p, &mut q);

        for it in 1..=cfg.max_iterations {
            for i in 0..n {
                z[i] += cfg.dr_relaxation * (q[i] - p[i]);
            }
            reflect_prox(&z, &mut p, &mut q_next);
            let change = max_abs_diff(&q, &q_next);
            std::mem::swap(&mut q, &mut q_next);
            if change <= cfg.stop_tol {
                return (q, it, true);
            }
        }
        (q, cfg.max_iterations, false)
    }

    /// `prox_{γF}(z) = clip((z + γ s δ) / (1 + γ s))`.
    fn prox_f(&self, z: &[f64], gamma: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let s = self.weight(i);
            let x = self.anchor[i];
            *o = ((z[i] + gamma * s * self.delta[i]) / (1.0 + gamma * s)).clamp(-x, 1.0 - x);
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// In-place Euclidean projection onto `{v : ‖v‖₁ <= radius}` (Michelot's
/// pivot iteration).
pub(crate) fn project_l1_ball(v: &mut [f64], radius: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return;
    }
    let mut active: Vec<f64> = v.iter().map(|x| x.abs()).filter(|&a| a > 0.0).collect();
    let mut theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|&a| a > theta);
        theta = (active.iter().sum::<f64>() - radius) / active.len() as f64;
        if active.len() == before {
            break;
        }
    }
    let theta = theta.max(0.0);
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// In-place `prox_{t‖·‖∞}` via Moreau: `v − proj_{B₁(t)}(v)`.
fn prox_linf(v: &mut [f64], t: f64) {
    let mut proj = v.to_vec();
    project_l1_ball(&mut proj, t);
    for (x, p) in v.iter_mut().zip(proj) {
        *x -= p;
    }
}
