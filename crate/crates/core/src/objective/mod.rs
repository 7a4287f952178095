//! Constraint functions, the augmented-Lagrangian penalty and the controller
//! state (masking, scaling, multipliers, penalty parameters).

mod constraints;
mod controller;
mod penalty;

pub use constraints::{dlr_plus, dlr_plus_with_grad, dlr_targeted, dlr_targeted_with_grad, Constraint};
pub use controller::{
    compute_mask, constraint_mask, mask_quantile, update_scale, MaskStrategy, PenaltyParams,
    PercentileScope, ScaleState,
};
pub use penalty::{penalty, penalty_dy};
