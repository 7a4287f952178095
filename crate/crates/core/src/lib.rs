//! Minimal ℓ∞ adversarial perturbations for dense per-pixel classifiers.
//!
//! The main attack, [`attacks::alma_prox`], minimises `‖δ‖∞ + ι_Λ(δ)` under
//! per-pixel misclassification constraints handled by an augmented
//! Lagrangian, using a variable-metric forward-backward iteration whose
//! backward step is the proximity operator in [`prox`].

pub mod attacks;
pub mod bench;
pub mod error;
pub mod io;
pub mod labels;
pub mod models;
pub mod objective;
pub mod prox;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use attacks::{AttackInput, AttackResult};
pub use error::{Error, Result};
pub use labels::{masked_fraction, BinaryMask, LabelMap};
pub use models::SegmentationModel;
pub use rng::{RngSeed, SeededRng};
pub use tensor::{Shape, TensorGrid};
