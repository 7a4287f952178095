/// Smallest `ε` at which class `j` overtakes `y` at a single pixel of a
/// linear model, using the best box-limited move; infinite if unreachable.
pub fn class_distance(w: &[f64], b: &[f64], x: &[f64], y: usize, j: usize) -> f64 {
    let c = x.len();
    let a: Vec<f64> = (0..c).map(|i| w[j * c + i] - w[y * c + i]).collect();
    let gap = |eps: f64| -> f64 {
        (0..c)
            .map(|i| a[i] * (x[i] + (eps * a[i].signum()).clamp(-x[i], 1.0 - x[i])))
            .sum::<f64>()
            + b[j]
            - b[y]
    };
    if gap(1.0) <= 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimal `ℓ∞` decision-boundary distance over all classes `j ≠ y`.
pub fn linear_boundary_distance(w: &[f64], b: &[f64], x: &[f64], y: usize) -> f64 {
    (0..b.len())
        .filter(|&j| j != y)
        .map(|j| class_distance(w, b, x, y, j))
        .fold(f64::INFINITY, f64::min)
}
