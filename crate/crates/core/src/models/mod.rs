//! Differentiable per-pixel classifiers `f: x ↦ z ∈ ℝ^{K×H×W}`.

mod affine;
mod conv;
mod gradcheck;
mod store;

use std::sync::atomic::{AtomicU64, Ordering};

pub use affine::PixelAffineModel;
pub use conv::{TinyConvGrads, TinyConvModel};
pub use gradcheck::{gradcheck, GradcheckReport, FD_STEP};
pub use store::{load_model, save_model, AnyModel, Manifest, ModelKind, MANIFEST_FILE};

use crate::error::Result;
use crate::tensor::{Shape, TensorGrid};

/// Forward and backward call counts of one model instance.
///
/// Cloning yields fresh zero counters.
#[derive(Debug, Default)]
pub struct CallCounters {
    forwards: AtomicU64,
    backwards: AtomicU64,
}

impl CallCounters {
    pub fn forwards(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn backwards(&self) -> u64 {
        self.backwards.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.forwards.store(0, Ordering::Relaxed);
        self.backwards.store(0, Ordering::Relaxed);
    }

    pub(crate) fn tick_forward(&self) {
        self.forwards.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn tick_backward(&self) {
        self.backwards.fetch_add(1, Ordering::Relaxed);
    }
}

impl Clone for CallCounters {
    fn clone(&self) -> Self {
        Self::default()
    }
}

/// A segmentation network with an explicit vector-Jacobian product.
pub trait SegmentationModel: Send + Sync {
    fn num_classes(&self) -> usize;

    /// `(C, H, W)` of accepted inputs.
    fn input_shape(&self) -> Shape;

    /// Logits of shape `(K, H, W)`. Counts one forward call.
    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid>;

    /// `∇_x ⟨upstream, f(x)⟩`. Counts one backward call.
    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid>;

    fn counters(&self) -> &CallCounters;

    /// Shape of the logits.
    fn output_shape(&self) -> Shape {
        let s = self.input_shape();
        Shape::new(self.num_classes(), s.height, s.width)
    }
}

impl<M: SegmentationModel + ?Sized> SegmentationModel for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid> {
        (**self).forward(x)
    }
    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid> {
        (**self).vjp(x, upstream)
    }
    fn counters(&self) -> &CallCounters {
        (**self).counters()
    }
}

impl<M: SegmentationModel + ?Sized> SegmentationModel for Box<M> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn input_shape(&self) -> Shape {
        (**self).input_shape()
    }
    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid> {
        (**self).forward(x)
    }
    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid> {
        (**self).vjp(x, upstream)
    }
    fn counters(&self) -> &CallCounters {
        (**self).counters()
    }
}
