//! Proximity operator of `λ‖·‖∞ + ι_Λ`, where `Λ = [0,1]^n − x`.
//!
//! [`prox_ternary`] solves the problem through its one-dimensional marginal
//! in the radius `β`; [`prox_dfb`], [`prox_adfb`] and [`prox_dr`] are
//! iterative splitting baselines used for benchmarking. All solvers accept an
//! optional positive diagonal metric `s`, in which case the quadratic term is
//! `½ Σ sᵢ (pᵢ − δᵢ)²`.

mod splitting;
mod ternary;

pub use splitting::{prox_adfb, prox_dfb, prox_dr, solve_splitting, SplittingConfig, SplittingMethod};
pub use ternary::{prox_ternary, ternary_iterations};

use std::time::Duration;

use crate::error::{shape_err, Error, Result};
use crate::tensor::TensorGrid;

/// Default absolute precision on `β` for the ternary search.
pub const DEFAULT_PRECISION: f64 = 1e-5;

/// One instance of `argmin_p ½‖p − δ‖²_H + λ‖p‖∞ + ι_Λ(p)`.
#[derive(Debug, Clone)]
pub struct ProxProblem {
    delta: TensorGrid,
    anchor: TensorGrid,
    lambda: f64,
    metric: Option<TensorGrid>,
    precision: f64,
}

impl ProxProblem {
    /// `anchor` is the image `x`; the feasible box is `[-x, 1 - x]`.
    pub fn new(delta: TensorGrid, anchor: TensorGrid, lambda: f64) -> Result<Self> {
        anchor.expect_shape(delta.shape())?;
        if let Some(v) = anchor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "anchor values must lie in [0, 1], found {v}"
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            delta,
            anchor,
            lambda,
            metric: None,
            precision: DEFAULT_PRECISION,
        })
    }

    pub fn with_metric(mut self, metric: TensorGrid) -> Result<Self> {
        metric.expect_shape(self.delta.shape())?;
        if let Some(v) = metric.data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "metric entries must be positive, found {v}"
            )));
        }
        self.metric = Some(metric);
        Ok(self)
    }

    pub fn with_precision(mut self, precision: f64) -> Result<Self> {
        if !(precision > 0.0 && precision.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "precision must be positive, got {precision}"
            )));
        }
        self.precision = precision;
        Ok(self)
    }

    pub fn delta(&self) -> &TensorGrid {
        &self.delta
    }

    pub fn anchor(&self) -> &TensorGrid {
        &self.anchor
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn metric(&self) -> Option<&TensorGrid> {
        self.metric.as_ref()
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    /// `proj_Λ(δ)`.
    pub fn projected_delta(&self) -> Vec<f64> {
        project_onto_anchor_box(self.delta.data(), self.anchor.data())
    }

    /// `½‖p − δ‖²_H + λ‖p‖∞` (the indicator is not evaluated).
    pub fn objective(&self, p: &[f64]) -> f64 {
        prox_objective(
            p,
            self.delta.data(),
            self.lambda,
            self.metric.as_ref().map(|m| m.data()),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ProxSolverReport {
    pub solution: TensorGrid,
    pub beta_star: f64,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    /// False when an iterative solver hit its iteration cap.
    pub converged: bool,
}

/// `½ Σ sᵢ (pᵢ − δᵢ)² + λ‖p‖∞`, with `s = 1` when no metric is given.
pub fn prox_objective(p: &[f64], delta: &[f64], lambda: f64, metric: Option<&[f64]>) -> f64 {
    let quad: f64 = match metric {
        Some(s) => p
            .iter()
            .zip(delta)
            .zip(s)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum(),
        None => p.iter().zip(delta).map(|(a, b)| (a - b) * (a - b)).sum(),
    };
    0.5 * quad + lambda * crate::tensor::linf_norm(p)
}

pub(crate) fn project_onto_anchor_box(v: &[f64], anchor: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(anchor)
        .map(|(&d, &x)| d.clamp(-x, 1.0 - x))
        .collect()
}

/// A box bound: one value for every component, or one per component.
#[derive(Debug, Clone, Copy)]
pub enum Bound<'a> {
    Scalar(f64),
    Grid(&'a TensorGrid),
}

impl Bound<'_> {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            Bound::Scalar(v) => *v,
            Bound::Grid(g) => g.data()[i],
        }
    }

    fn check(&self, v: &TensorGrid) -> Result<()> {
        match self {
            Bound::Scalar(b) if b.is_nan() => {
                Err(Error::InvalidArgument("bound is NaN".into()))
            }
            Bound::Grid(g) if g.shape() != v.shape() => Err(shape_err(v.shape(), g.shape())),
            _ => Ok(()),
        }
    }
}

/// Componentwise clamp of `v` into `[lo, hi]`.
///
/// Because the box is separable, this is also the projection under any
/// positive diagonal metric.
pub fn project_box(v: &TensorGrid, lo: Bound<'_>, hi: Bound<'_>) -> Result<TensorGrid> {
    lo.check(v)?;
    hi.check(v)?;
    let mut out = Vec::with_capacity(v.len());
    for (i, &value) in v.data().iter().enumerate() {
        let (l, h) = (lo.at(i), hi.at(i));
        if l > h {
            return Err(Error::InvalidArgument(format!(
                "empty box at component {i}: lo {l} > hi {h}"
            )));
        }
        out.push(value.max(l).min(h));
    }
    TensorGrid::new(v.shape(), out)
}

/// Box `[-x, 1 - x]` for an image `x`.
pub fn feasible_bounds(anchor: &TensorGrid) -> Result<(TensorGrid, TensorGrid)> {
    Ok((anchor.map(|x| -x)?, anchor.map(|x| 1.0 - x)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn grid(v: &[f64]) -> TensorGrid {
        TensorGrid::new(Shape::new(1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn clamp_example() {
        let v = grid(&[-0.5, 0.3, 2.0]);
        let x = grid(&[0.2, 0.5, 1.0]);
        let (lo, hi) = feasible_bounds(&x).unwrap();
        assert_eq!(lo.data(), &[-0.2, -0.5, -1.0]);
        let p = project_box(&v, Bound::Grid(&lo), Bound::Grid(&hi)).unwrap();
        assert_eq!(p.data(), &[-0.2, 0.3, 0.0]);
    }

    #[test]
    fn inside_box_unchanged() {
        let v = grid(&[0.1, -0.1]);
        let p = project_box(&v, Bound::Scalar(-0.5), Bound::Scalar(0.5)).unwrap();
        assert_eq!(p, v);
    }

    #[test]
    fn inverted_box_rejected() {
        let v = grid(&[0.0, 0.0]);
        let lo = grid(&[0.0, 1.0]);
        assert!(project_box(&v, Bound::Grid(&lo), Bound::Scalar(0.5)).is_err());
        assert!(project_box(&v, Bound::Scalar(f64::NAN), Bound::Scalar(0.5)).is_err());
    }

    #[test]
    fn problem_validation() {
        let d = grid(&[0.1, 0.2]);
        assert!(ProxProblem::new(d.clone(), grid(&[0.5, 1.5]), 1.0).is_err());
        assert!(ProxProblem::new(d.clone(), grid(&[0.5, 0.5]), 0.0).is_err());
        assert!(ProxProblem::new(d.clone(), grid(&[0.5]), 1.0).is_err());
        let p = ProxProblem::new(d.clone(), grid(&[0.5, 0.5]), 1.0).unwrap();
        assert!(p.clone().with_metric(grid(&[1.0, 0.0])).is_err());
        assert!(p.with_precision(-1.0).is_err());
    }

    /// Brute-force weighted projection: minimise `s (p - v)²` over a fine grid
    /// of the interval, which must land on the Euclidean clamp.
    #[test]
    fn metric_projection_matches_euclidean() {
        let mut rng = RngSeed(5).rng();
        for _ in 0..200 {
            let v = rng.gaussian() * 2.0;
            let x = rng.uniform();
            let s = 0.01 + 10.0 * rng.uniform();
            let (lo, hi) = (-x, 1.0 - x);
            let best = (0..=10_000)
                .map(|k| lo + (hi - lo) * k as f64 / 10_000.0)
                .min_by(|a, b| (s * (a - v).powi(2)).total_cmp(&(s * (b - v).powi(2))))
                .unwrap();
            assert!((best - v.clamp(lo, hi)).abs() <= (hi - lo) / 10_000.0);
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent(
            v in prop::collection::vec(-3.0f64..3.0, 1..32),
            seed in any::<u64>(),
        ) {
            let n = v.len();
            let x = RngSeed(seed).rng().uniform_vec(n);
            let v = grid(&v);
            let x = grid(&x);
            let (lo, hi) = feasible_bounds(&x).unwrap();
            let once = project_box(&v, Bound::Grid(&lo), Bound::Grid(&hi)).unwrap();
            let twice = project_box(&once, Bound::Grid(&lo), Bound::Grid(&hi)).unwrap();
            prop_assert_eq!(&once, &twice);
            for ((p, l), h) in once.data().iter().zip(lo.data()).zip(hi.data()) {
                prop_assert!(l <= p && p <= h);
            }
        }
    }
}
