//! Bisection on the `ℓ∞` budget around a fixed-budget attack.

use super::{validate_nu, AttackInput, AttackResult, CallMeter, FixedAttack, TraceEntry};
use crate::error::{Error, Result};
use crate::models::SegmentationModel;
use crate::tensor::{linf_norm, TensorGrid};

/// Probes per search; the final bracket has width `2⁻¹³`.
pub const SEARCH_STEPS: usize = 13;

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Perturbation of the smallest succeeding probe.
    pub delta: Option<TensorGrid>,
    pub lower: f64,
    pub upper: f64,
    pub probes: usize,
    /// `(ε, succeeded)` per probe.
    pub history: Vec<(f64, bool)>,
}

/// Bisects `ε ∈ [0, 1]` with `steps` probes. `probe(ε)` returns a
/// perturbation when the attack at budget `ε` succeeds.
pub fn binary_search(steps: usize, mut probe: impl FnMut(f64) -> Result<Option<TensorGrid>>) -> Result<SearchOutcome> {
    let (mut lower, mut upper) = (0.0, 1.0);
    let mut delta = None;
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let eps = 0.5 * (lower + upper);
        match probe(eps)? {
            Some(d) => {
                upper = eps;
                delta = Some(d);
                history.push((eps, true));
            }
            None => {
                lower = eps;
                history.push((eps, false));
            }
        }
    }
    Ok(SearchOutcome {
        delta,
        lower,
        upper,
        probes: history.len(),
        history,
    })
}

/// Smallest-budget success of `inner` found by [`binary_search`].
pub fn binary_search_attack<M: SegmentationModel + ?Sized>(
    model: &M,
    input: &AttackInput,
    inner: &FixedAttack,
    steps: usize,
    nu: f64,
) -> Result<AttackResult> {
    validate_nu(nu)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("binary search needs at least one probe".into()));
    }
    input.check_model(model)?;
    let meter = CallMeter::start(model);
    let mut trace = Vec::with_capacity(steps);
    let mut last = TensorGrid::zeros(input.x.shape());
    let outcome = binary_search(steps, |eps| {
        let delta = inner.run(model, input, eps, nu)?;
        let logits = model.forward(&input.perturbed(delta.data())?)?;
        let apsr = input.apsr(&logits)?;
        let mut entry = TraceEntry::new(trace.len() + 1, apsr, linf_norm(delta.data()), 0.0);
        entry.epsilon = Some(eps);
        trace.push(entry);
        last = delta.clone();
        Ok((apsr >= nu).then_some(delta))
    })?;
    let (forwards, backwards) = meter.finish(model);
    let success = outcome.delta.is_some();
    let best_delta = outcome.delta.unwrap_or(last);
    Ok(AttackResult {
        best_norm: linf_norm(best_delta.data()),
        best_delta,
        success,
        trace,
        forwards,
        backwards,
        iterations: outcome.probes,
    })
}
