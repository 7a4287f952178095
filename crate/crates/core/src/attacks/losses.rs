//! Per-pixel losses on logits, returning values and logit-space gradients
//! (the upstream for a vector-Jacobian product).

use crate::bench::argmax_lowest;
use crate::error::{Error, Result};
use crate::labels::{BinaryMask, LabelMap};
use crate::objective::Constraint;
use crate::tensor::TensorGrid;

fn gather(data: &[f64], classes: usize, pixels: usize, i: usize, buf: &mut [f64]) {
    for k in 0..classes {
        buf[k] = data[k * pixels + i];
    }
}

fn check(logits: &TensorGrid, labels: &LabelMap, mask: &BinaryMask) -> Result<(usize, usize)> {
    let s = logits.shape();
    if s.channels != labels.num_classes()
        || (s.height, s.width) != (labels.height(), labels.width())
        || labels.len() != mask.len()
    {
        return Err(Error::ShapeMismatch {
            expected: format!("({}, {}, {})", labels.num_classes(), labels.height(), labels.width()),
            got: format!("{s:?}"),
        });
    }
    Ok((s.channels, s.pixels()))
}

fn best_other(z: &[f64], excluded: usize) -> usize {
    let mut best = if excluded == 0 { 1 } else { 0 };
    for k in 0..z.len() {
        if k != excluded && z[k] > z[best] {
            best = k;
        }
    }
    best
}

/// Constraint values `d_i + margin` on masked pixels, `0` elsewhere.
pub fn constraint_values(
    logits: &TensorGrid,
    labels: &LabelMap,
    mask: &BinaryMask,
    constraint: Constraint,
    margin: f64,
) -> Result<Vec<f64>> {
    let (k, n) = check(logits, labels, mask)?;
    let mut z = vec![0.0; k];
    (0..n)
        .map(|i| {
            if !mask.is_set(i) {
                return Ok(0.0);
            }
            gather(logits.data(), k, n, i, &mut z);
            Ok(constraint.eval(&z, labels.label(i))? + margin)
        })
        .collect()
}

/// Logit gradient of `Σᵢ cᵢ dᵢ(z)`; pixels with `cᵢ = 0` are skipped.
pub fn constraint_upstream(
    logits: &TensorGrid,
    labels: &LabelMap,
    mask: &BinaryMask,
    constraint: Constraint,
    coeffs: &[f64],
) -> Result<TensorGrid> {
    let (k, n) = check(logits, labels, mask)?;
    let mut out = vec![0.0; k * n];
    let mut z = vec![0.0; k];
    for i in 0..n {
        if coeffs[i] == 0.0 {
            continue;
        }
        gather(logits.data(), k, n, i, &mut z);
        let (_, g) = constraint.eval_with_grad(&z, labels.label(i))?;
        for c in 0..k {
            out[c * n + i] = coeffs[i] * g[c];
        }
    }
    TensorGrid::new(logits.shape(), out)
}

/// Masked mean cross-entropy of the labels, signed so that larger is better
/// for the attacker: `+CE(y)` untargeted, `−CE(t)` targeted.
pub fn cross_entropy(logits: &TensorGrid, labels: &LabelMap, mask: &BinaryMask, targeted: bool) -> Result<(f64, TensorGrid)> {
    let (k, n) = check(logits, labels, mask)?;
    let sign = if targeted { -1.0 } else { 1.0 };
    let scale = sign / mask.count() as f64;
    let mut out = vec![0.0; k * n];
    let mut z = vec![0.0; k];
    let mut total = 0.0;
    for i in (0..n).filter(|&i| mask.is_set(i)) {
        gather(logits.data(), k, n, i, &mut z);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let y = labels.label(i);
        total += lse - z[y];
        for c in 0..k {
            let p = (z[c] - lse).exp();
            out[c * n + i] = scale * (p - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((total * scale, TensorGrid::new(logits.shape(), out)?))
}

/// `−mean_m d_i` for the difference-of-logits-ratio constraint (larger is
/// better for the attacker).
pub fn dlr_objective(logits: &TensorGrid, labels: &LabelMap, mask: &BinaryMask, targeted: bool) -> Result<(f64, TensorGrid)> {
    let constraint = Constraint::from_targeted(targeted);
    let d = constraint_values(logits, labels, mask, constraint, 0.0)?;
    let scale = -1.0 / mask.count() as f64;
    let coeffs: Vec<f64> = mask.bits().iter().map(|&b| if b { scale } else { 0.0 }).collect();
    let up = constraint_upstream(logits, labels, mask, constraint, &coeffs)?;
    Ok((scale * d.iter().sum::<f64>(), up))
}

/// Signed logit difference per pixel: `z_y − max_{j≠y} z_j` untargeted,
/// `max_{j≠t} z_j − z_t` targeted. Negative means the pixel is fooled.
pub fn logit_differences(logits: &TensorGrid, labels: &LabelMap, targeted: bool) -> Vec<(f64, usize, usize)> {
    let s = logits.shape();
    let (k, n) = (s.channels, s.pixels());
    let mut z = vec![0.0; k];
    (0..n)
        .map(|i| {
            gather(logits.data(), k, n, i, &mut z);
            let y = labels.label(i);
            let j = best_other(&z, y);
            let diff = z[y] - z[j];
            if targeted {
                (-diff, y, j)
            } else {
                (diff, y, j)
            }
        })
        .collect()
}

/// Masked mean of the signed logit difference (to be minimised).
pub fn mean_logit_difference(logits: &TensorGrid, labels: &LabelMap, mask: &BinaryMask, targeted: bool) -> Result<(f64, TensorGrid)> {
    let (k, n) = check(logits, labels, mask)?;
    let sign = if targeted { -1.0 } else { 1.0 };
    let scale = 1.0 / mask.count() as f64;
    let mut out = vec![0.0; k * n];
    let mut total = 0.0;
    for (i, (diff, y, j)) in logit_differences(logits, labels, targeted).into_iter().enumerate() {
        if !mask.is_set(i) {
            continue;
        }
        total += diff;
        out[y * n + i] += sign * scale;
        out[j * n + i] -= sign * scale;
    }
    Ok((total * scale, TensorGrid::new(logits.shape(), out)?))
}

/// Index of the predicted class at every pixel.
pub fn predictions(logits: &TensorGrid) -> Vec<usize> {
    let s = logits.shape();
    let (k, n) = (s.channels, s.pixels());
    let mut z = vec![0.0; k];
    (0..n)
        .map(|i| {
            gather(logits.data(), k, n, i, &mut z);
            argmax_lowest(&z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use crate::tensor::Shape;

    fn setup(seed: u64) -> (TensorGrid, LabelMap, BinaryMask) {
        let mut rng = RngSeed(seed).rng();
        let s = Shape::new(4, 3, 3);
        let z = TensorGrid::new(s, rng.gaussian_vec(s.len(), 2.0)).unwrap();
        let labels = LabelMap::new(3, 3, 4, (0..9).map(|_| rng.index(4) as u16).collect()).unwrap();
        let mask = BinaryMask::new(3, 3, (0..9).map(|i| i != 4).collect()).unwrap();
        (z, labels, mask)
    }

    /// Central differences of a scalar loss in logit space.
    fn fd_check(f: impl Fn(&TensorGrid) -> (f64, TensorGrid), z: &TensorGrid) {
        let (_, g) = f(z);
        let h = 1e-6;
        for j in 0..z.len() {
            let mut p = z.data().to_vec();
            p[j] += h;
            let mut m = z.data().to_vec();
            m[j] -= h;
            let fp = f(&TensorGrid::new(z.shape(), p).unwrap()).0;
            let fm = f(&TensorGrid::new(z.shape(), m).unwrap()).0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g.data()[j]).abs() < 1e-6, "index {j}: {fd} vs {}", g.data()[j]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let (z, y, m) = setup(seed);
            for targeted in [false, true] {
                fd_check(|v| cross_entropy(v, &y, &m, targeted).unwrap(), &z);
                fd_check(|v| dlr_objective(v, &y, &m, targeted).unwrap(), &z);
                fd_check(|v| mean_logit_difference(v, &y, &m, targeted).unwrap(), &z);
            }
        }
    }

    #[test]
    fn cross_entropy_value() {
        let z = TensorGrid::new(Shape::new(3, 1, 1), vec![0.0, 0.0, 0.0]).unwrap();
        let y = LabelMap::filled(1, 1, 3, 2).unwrap();
        let (v, _) = cross_entropy(&z, &y, &BinaryMask::full(1, 1), false).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn unmasked_pixels_do_not_contribute() {
        let (z, y, m) = setup(4);
        let (_, g) = cross_entropy(&z, &y, &m, false).unwrap();
        for c in 0..4 {
            assert_eq!(g.data()[c * 9 + 4], 0.0);
        }
        let d = constraint_values(&z, &y, &m, Constraint::Untargeted, 0.25).unwrap();
        assert_eq!(d[4], 0.0);
    }

    #[test]
    fn logit_difference_sign_matches_prediction() {
        let (z, y, _) = setup(5);
        let pred = predictions(&z);
        for (i, (diff, _, _)) in logit_differences(&z, &y, false).into_iter().enumerate() {
            assert_eq!(diff < 0.0, pred[i] != y.label(i));
        }
    }
}
