use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{prox_ternary, solve_splitting, ProxProblem, SplittingConfig, SplittingMethod, DEFAULT_PRECISION};
use crate::rng::RngSeed;
use crate::tensor::{Shape, TensorGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Ternary,
    Dfb,
    Adfb,
    Dr,
}

impl Solver {
    pub const ALL: [Solver; 4] = [Solver::Ternary, Solver::Dfb, Solver::Adfb, Solver::Dr];

    pub fn name(&self) -> &'static str {
        match self {
            Solver::Ternary => "ternary",
            Solver::Dfb => "dfb",
            Solver::Adfb => "adfb",
            Solver::Dr => "dr",
        }
    }
}

/// Random instances: `x ~ U(0,1)^d`, `δ ~ N(0, σ²I)`, `λ ~ 10^U(lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxBenchConfig {
    pub d_sizes: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub stop_tol: f64,
    pub precision: f64,
    pub log10_lambda_range: (f64, f64),
    /// Worker threads; 1 runs instances serially for cleaner timings.
    pub jobs: usize,
}

impl Default for ProxBenchConfig {
    fn default() -> Self {
        Self {
            d_sizes: vec![1 << 12],
            sigmas: vec![0.1, 0.5, 1.0, 2.0],
            repeats: 100,
            seed: 0,
            stop_tol: 1e-5,
            precision: DEFAULT_PRECISION,
            log10_lambda_range: (-1.0, 3.0),
            jobs: 1,
        }
    }
}

impl ProxBenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.repeats == 0 {
            return bad("repeats must be >= 1");
        }
        if self.d_sizes.is_empty() || self.d_sizes.contains(&0) {
            return bad("dimensions must be positive");
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("sigmas must be finite and non-negative");
        }
        if !(self.stop_tol > 0.0 && self.precision > 0.0) {
            return bad("stop_tol and precision must be positive");
        }
        let (lo, hi) = self.log10_lambda_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("invalid lambda range");
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxBenchRecord {
    pub d: usize,
    pub sigma: f64,
    pub repeat: usize,
    pub lambda: f64,
    pub solver: Solver,
    pub wall_time_s: f64,
    pub objective: f64,
    /// Objective divided by the ternary objective of the same instance
    /// (`0/0` counts as 1).
    pub relative_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn instance(d: usize, sigma: f64, lambda_range: (f64, f64), seed: RngSeed) -> Result<(ProxProblem, f64)> {
    let mut rng = seed.rng();
    let shape = Shape::new(1, 1, d);
    let x = TensorGrid::new(shape, rng.uniform_vec(d))?;
    let delta = TensorGrid::new(shape, rng.gaussian_vec(d, sigma))?;
    let lambda = 10f64.powf(rng.uniform_range(lambda_range.0, lambda_range.1));
    Ok((ProxProblem::new(delta, x, lambda)?, lambda))
}

fn run_instance(cfg: &ProxBenchConfig, d: usize, sigma: f64, repeat: usize, seed: RngSeed) -> Result<Vec<ProxBenchRecord>> {
    let (problem, lambda) = instance(d, sigma, cfg.log10_lambda_range, seed)?;
    let problem = problem.with_precision(cfg.precision)?;
    let split_cfg = SplittingConfig::with_tol(cfg.stop_tol);
    let mut out = Vec::with_capacity(4);
    let mut reference = 0.0;
    for solver in Solver::ALL {
        let report = match solver {
            Solver::Ternary => prox_ternary(&problem),
            Solver::Dfb => solve_splitting(&problem, SplittingMethod::Dfb, &split_cfg)?,
            Solver::Adfb => solve_splitting(&problem, SplittingMethod::Adfb, &split_cfg)?,
            Solver::Dr => solve_splitting(&problem, SplittingMethod::Dr, &split_cfg)?,
        };
        if solver == Solver::Ternary {
            reference = report.objective;
        }
        let relative = if reference == 0.0 && report.objective == 0.0 {
            1.0
        } else {
            report.objective / reference
        };
        out.push(ProxBenchRecord {
            d,
            sigma,
            repeat,
            lambda,
            solver,
            wall_time_s: report.wall_time.as_secs_f64(),
            objective: report.objective,
            relative_objective: relative,
            iterations: report.iterations,
            converged: report.converged,
        });
    }
    Ok(out)
}

/// Runs every solver on `repeats` instances per `(d, σ)` pair. Records come
/// out in `(d, σ, repeat, solver)` order regardless of `jobs`.
pub fn prox_benchmark(cfg: &ProxBenchConfig) -> Result<Vec<ProxBenchRecord>> {
    cfg.validate()?;
    let base = RngSeed(cfg.seed);
    let mut tasks = Vec::new();
    for (di, &d) in cfg.d_sizes.iter().enumerate() {
        for (si, &sigma) in cfg.sigmas.iter().enumerate() {
            for r in 0..cfg.repeats {
                let stream = ((di as u64) << 48) ^ ((si as u64) << 32) ^ r as u64;
                tasks.push((d, sigma, r, base.derive(stream)));
            }
        }
    }
    let results: Vec<Result<Vec<ProxBenchRecord>>> = if cfg.jobs == 1 {
        tasks.iter().map(|&(d, s, r, seed)| run_instance(cfg, d, s, r, seed)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| {
            tasks
                .par_iter()
                .map(|&(d, s, r, seed)| run_instance(cfg, d, s, r, seed))
                .collect()
        })
    };
    let mut out = Vec::with_capacity(tasks.len() * 4);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxBenchSummary {
    pub d: usize,
    pub sigma: f64,
    pub solver: Solver,
    pub runs: usize,
    pub mean_wall_time_s: f64,
    pub mean_relative_objective: f64,
    pub min_relative_objective: f64,
    pub not_converged: usize,
}

/// Aggregates records per `(d, σ, solver)`, in that order.
pub fn summarize_prox(records: &[ProxBenchRecord]) -> Vec<ProxBenchSummary> {
    let mut groups: BTreeMap<(usize, u64, Solver), Vec<&ProxBenchRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.d, r.sigma.to_bits(), r.solver))
            .or_default()
            .push(r);
    }
    let mut out: Vec<ProxBenchSummary> = groups
        .into_iter()
        .map(|((d, sigma, solver), rs)| {
            let n = rs.len() as f64;
            ProxBenchSummary {
                d,
                sigma: f64::from_bits(sigma),
                solver,
                runs: rs.len(),
                mean_wall_time_s: rs.iter().map(|r| r.wall_time_s).sum::<f64>() / n,
                mean_relative_objective: rs.iter().map(|r| r.relative_objective).sum::<f64>() / n,
                min_relative_objective: rs.iter().map(|r| r.relative_objective).fold(f64::INFINITY, f64::min),
                not_converged: rs.iter().filter(|r| !r.converged).count(),
            }
        })
        .collect();
    out.sort_by(|a, b| (a.d, a.sigma, a.solver).partial_cmp(&(b.d, b.sigma, b.solver)).unwrap());
    out
}
