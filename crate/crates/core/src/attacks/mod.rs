//! Minimal-norm and fixed-budget attacks.
//!
//! Every attack works on an [`AttackInput`] and judges success through
//! [`crate::bench::apsr`], so the success flag in an [`AttackResult`] always
//! agrees with an independent re-evaluation.

mod alma;
mod dag;
mod fixed;
mod fmn;
pub mod losses;
mod metric;
mod pdpgd;
mod search;

pub use alma::{alma_prox, geometric_step, AlmaProxConfig};
pub use dag::{dag, DagConfig};
pub use fixed::{ifgsm, mifgsm, pgd, FixedAttack, FixedLoss, PgdConfig};
pub use fmn::{cosine_anneal, fmn_linf, FmnConfig};
pub use metric::DiagonalMetric;
pub use pdpgd::{initial_dual, pdpgd_linf, simplex_weights, PdpgdConfig};
pub use search::{binary_search, binary_search_attack, SearchOutcome, SEARCH_STEPS};

use serde::{Deserialize, Serialize};

use crate::bench::apsr;
use crate::error::{shape_err, Error, Result};
use crate::labels::{BinaryMask, LabelMap};
use crate::models::SegmentationModel;
use crate::tensor::{linf_norm, TensorGrid};

/// Image, reference (or target) labels and validity mask of one sample.
#[derive(Debug, Clone)]
pub struct AttackInput {
    pub x: TensorGrid,
    pub labels: LabelMap,
    pub mask: BinaryMask,
    /// When set, `labels` are targets to reach rather than labels to escape.
    pub targeted: bool,
}

impl AttackInput {
    pub fn new(x: TensorGrid, labels: LabelMap, mask: BinaryMask, targeted: bool) -> Result<Self> {
        let s = x.shape();
        if (labels.height(), labels.width()) != (s.height, s.width) {
            return Err(shape_err((s.height, s.width), (labels.height(), labels.width())));
        }
        if (mask.height(), mask.width()) != (s.height, s.width) {
            return Err(shape_err((s.height, s.width), (mask.height(), mask.width())));
        }
        if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("image values must lie in [0, 1], found {v}")));
        }
        Ok(Self {
            x,
            labels,
            mask,
            targeted,
        })
    }

    pub fn check_model<M: SegmentationModel + ?Sized>(&self, model: &M) -> Result<()> {
        self.x.expect_shape(model.input_shape())?;
        if model.num_classes() != self.labels.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "model predicts {} classes, labels declare {}",
                model.num_classes(),
                self.labels.num_classes()
            )));
        }
        Ok(())
    }

    /// `x + δ` as a tensor (no clipping).
    pub(crate) fn perturbed(&self, delta: &[f64]) -> Result<TensorGrid> {
        let data = self.x.data().iter().zip(delta).map(|(a, b)| a + b).collect();
        TensorGrid::new(self.x.shape(), data)
            .map_err(|_| Error::Numerical("non-finite perturbation".into()))
    }

    pub(crate) fn apsr(&self, logits: &TensorGrid) -> Result<f64> {
        apsr(logits, &self.labels, &self.mask, self.targeted)
    }
}

/// One row of an attack trace. Attack-specific quantities are `None` where
/// they do not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub apsr: f64,
    /// `‖δ‖∞` of the evaluated iterate.
    pub norm: f64,
    pub loss: f64,
    pub scale: Option<f64>,
    pub mean_mu: Option<f64>,
    pub best_norm: Option<f64>,
    pub epsilon: Option<f64>,
}

impl TraceEntry {
    pub(crate) fn new(iteration: usize, apsr: f64, norm: f64, loss: f64) -> Self {
        Self {
            iteration,
            apsr,
            norm,
            loss,
            scale: None,
            mean_mu: None,
            best_norm: None,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    /// Smallest successful perturbation, or the last iterate on failure.
    pub best_delta: TensorGrid,
    pub best_norm: f64,
    /// `APSR(x + best_delta) >= ν`.
    pub success: bool,
    pub trace: Vec<TraceEntry>,
    pub forwards: u64,
    pub backwards: u64,
    pub iterations: usize,
}

/// Call-count snapshot used to attribute model calls to one run.
pub(crate) struct CallMeter {
    forwards: u64,
    backwards: u64,
}

impl CallMeter {
    pub(crate) fn start<M: SegmentationModel + ?Sized>(model: &M) -> Self {
        Self {
            forwards: model.counters().forwards(),
            backwards: model.counters().backwards(),
        }
    }

    pub(crate) fn finish<M: SegmentationModel + ?Sized>(&self, model: &M) -> (u64, u64) {
        (
            model.counters().forwards() - self.forwards,
            model.counters().backwards() - self.backwards,
        )
    }
}

/// Best successful iterate seen so far.
pub(crate) struct BestTracker {
    pub(crate) delta: Option<Vec<f64>>,
    pub(crate) norm: f64,
}

impl BestTracker {
    pub(crate) fn new() -> Self {
        Self {
            delta: None,
            norm: f64::INFINITY,
        }
    }

    pub(crate) fn offer(&mut self, delta: &[f64], norm: f64) {
        if norm < self.norm {
            self.norm = norm;
            self.delta = Some(delta.to_vec());
        }
    }

    pub(crate) fn best_norm(&self) -> Option<f64> {
        self.delta.as_ref().map(|_| self.norm)
    }

    pub(crate) fn into_result<M: SegmentationModel + ?Sized>(
        self,
        model: &M,
        meter: &CallMeter,
        input: &AttackInput,
        last: Vec<f64>,
        trace: Vec<TraceEntry>,
        iterations: usize,
    ) -> Result<AttackResult> {
        let (forwards, backwards) = meter.finish(model);
        let (delta, success) = match self.delta {
            Some(d) => (d, true),
            None => (last, false),
        };
        let best_norm = linf_norm(&delta);
        Ok(AttackResult {
            best_delta: TensorGrid::new(input.x.shape(), delta)?,
            best_norm,
            success,
            trace,
            forwards,
            backwards,
            iterations,
        })
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str, iteration: usize) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "{what} became non-finite at index {i} in iteration {iteration}"
        )));
    }
    Ok(())
}

/// Clamp `x + δ` into `[0, 1]` and `δ` into `[-ε, ε]`.
pub(crate) fn project_ball_and_box(delta: &mut [f64], x: &[f64], eps: f64) {
    for (d, &xv) in delta.iter_mut().zip(x) {
        *d = d.clamp(-eps, eps).clamp(-xv, 1.0 - xv);
    }
}

pub(crate) fn validate_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && nu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")))
    }
}
