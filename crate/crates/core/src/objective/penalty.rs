/// Modified `P₂` penalty:
/// `μy + μρy² + ρ²y³/6` for `y >= 0`, `μy / (1 − max(1, ρ) y)` otherwise.
///
/// Continuously differentiable at zero with slope `μ`.
#[inline]
pub fn penalty(y: f64, rho: f64, mu: f64) -> f64 {
    if y >= 0.0 {
        mu * y + mu * rho * y * y + rho * rho * y * y * y / 6.0
    } else {
        mu * y / (1.0 - rho.max(1.0) * y)
    }
}

/// `∂P/∂y`.
#[inline]
pub fn penalty_dy(y: f64, rho: f64, mu: f64) -> f64 {
    if y >= 0.0 {
        mu + 2.0 * mu * rho * y + 0.5 * rho * rho * y * y
    } else {
        let denom = 1.0 - rho.max(1.0) * y;
        mu / (denom * denom)
    }
}
