use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::labels::{masked_fraction, BinaryMask, LabelMap};
use crate::tensor::TensorGrid;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// Per-pixel attack success: `argmax ≠ y` (untargeted) or `argmax = t`
/// (targeted), with argmax ties broken towards the lowest class index.
pub fn pixel_success(logits: &TensorGrid, labels: &LabelMap, targeted: bool) -> Result<Vec<bool>> {
    let s = logits.shape();
    if s.height != labels.height() || s.width != labels.width() {
        return Err(shape_err((labels.height(), labels.width()), (s.height, s.width)));
    }
    if s.channels != labels.num_classes() {
        return Err(Error::InvalidArgument(format!(
            "logits have {} classes, labels declare {}",
            s.channels,
            labels.num_classes()
        )));
    }
    let n = s.pixels();
    let data = logits.data();
    let mut z = vec![0.0; s.channels];
    Ok((0..n)
        .map(|i| {
            for (k, v) in z.iter_mut().enumerate() {
                *v = data[k * n + i];
            }
            let hit = argmax_lowest(&z) == labels.label(i);
            hit == targeted
        })
        .collect())
}

/// Attack pixel success rate over the mask.
pub fn apsr(logits: &TensorGrid, labels: &LabelMap, mask: &BinaryMask, targeted: bool) -> Result<f64> {
    masked_fraction(&pixel_success(logits, labels, targeted)?, mask)
}

/// One attacked sample. `linf_norm` is `1.0` for failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub sample_id: String,
    pub attack: String,
    pub success: bool,
    pub linf_norm: f64,
    pub apsr: f64,
    pub wall_time_s: f64,
    pub forwards: u64,
    pub backwards: u64,
}

impl BenchRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sample_id: impl Into<String>,
        attack: impl Into<String>,
        success: bool,
        norm: f64,
        apsr: f64,
        wall_time_s: f64,
        forwards: u64,
        backwards: u64,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            attack: attack.into(),
            success,
            linf_norm: if success { norm.clamp(0.0, 1.0) } else { 1.0 },
            apsr,
            wall_time_s,
            forwards,
            backwards,
        }
    }

    fn effective_norm(&self) -> f64 {
        if self.success {
            self.linf_norm
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub failure_rate: f64,
}

/// Fraction of samples that failed or needed a norm above each `ε`.
pub fn failure_curve(records: &[BenchRecord], grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("failure curve needs at least one record".into()));
    }
    let n = records.len() as f64;
    Ok(grid
        .iter()
        .map(|&epsilon| {
            let failed = records
                .iter()
                .filter(|r| !r.success || r.linf_norm > epsilon)
                .count();
            CurvePoint {
                epsilon,
                failure_rate: failed as f64 / n,
            }
        })
        .collect())
}

/// Median and mean of `255 · ‖δ‖∞`, failures counted as 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub median: f64,
    pub mean: f64,
}

pub fn norm_stats(records: &[BenchRecord]) -> Result<NormStats> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("norm statistics need at least one record".into()));
    }
    let mut v: Vec<f64> = records.iter().map(|r| 255.0 * r.effective_norm()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Ok(NormStats {
        median,
        mean: v.iter().sum::<f64>() / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn record(success: bool, norm: f64) -> BenchRecord {
        BenchRecord::new("s", "a", success, norm, 0.0, 0.0, 0, 0)
    }

    #[test]
    fn apsr_cases() {
        let s = Shape::new(3, 2, 2);
        let labels = LabelMap::filled(2, 2, 3, 0).unwrap();
        let mask = BinaryMask::full(2, 2);
        let correct = TensorGrid::from_fn(s, |c, _, _| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(apsr(&correct, &labels, &mask, false).unwrap(), 0.0);
        assert_eq!(apsr(&correct, &labels, &mask, true).unwrap(), 1.0);
        let wrong = TensorGrid::from_fn(s, |c, _, _| if c == 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(apsr(&wrong, &labels, &mask, false).unwrap(), 1.0);
        // pixel 3 flipped but unmasked; pixels 0..3 flipped, 3 of 4 masked
        let partial = TensorGrid::from_fn(s, |c, r, col| {
            let flipped = r * 2 + col != 3;
            match (c, flipped) {
                (1, true) | (0, false) => 1.0,
                _ => 0.0,
            }
        })
        .unwrap();
        assert_eq!(apsr(&partial, &labels, &mask, false).unwrap(), 0.75);
    }

    #[test]
    fn ties_go_to_lowest_class() {
        assert_eq!(argmax_lowest(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
        let s = Shape::new(3, 1, 1);
        let z = TensorGrid::new(s, vec![1.0, 1.0, 0.0]).unwrap();
        let y1 = LabelMap::filled(1, 1, 3, 1).unwrap();
        assert_eq!(pixel_success(&z, &y1, false).unwrap(), vec![true]);
    }

    #[test]
    fn apsr_checks_shapes() {
        let z = TensorGrid::zeros(Shape::new(3, 2, 2));
        let labels = LabelMap::filled(2, 3, 3, 0).unwrap();
        assert!(apsr(&z, &labels, &BinaryMask::full(2, 3), false).is_err());
        let k4 = LabelMap::filled(2, 2, 4, 0).unwrap();
        assert!(apsr(&z, &k4, &BinaryMask::full(2, 2), false).is_err());
    }

    #[test]
    fn norm_stat_conventions() {
        let one = norm_stats(&[record(true, 0.5 / 255.0)]).unwrap();
        assert!((one.median - 0.5).abs() < 1e-12 && (one.mean - 0.5).abs() < 1e-12);
        let with_failure = norm_stats(&[record(true, 0.5 / 255.0), record(false, 0.01)]).unwrap();
        assert!((with_failure.median - 127.75).abs() < 1e-12);
        assert!((with_failure.mean - 127.75).abs() < 1e-12);
        assert!(norm_stats(&[]).is_err());
    }

    #[test]
    fn failure_is_reported_as_unit_norm() {
        assert_eq!(record(false, 0.02).linf_norm, 1.0);
        assert_eq!(record(true, 0.02).linf_norm, 0.02);
    }

    #[test]
    fn curve_extremes() {
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let ok = failure_curve(&vec![record(true, 0.0); 3], &grid).unwrap();
        assert!(ok.iter().all(|p| p.failure_rate == 0.0));
        let bad = failure_curve(&vec![record(false, 0.0); 3], &grid).unwrap();
        assert!(bad.iter().all(|p| p.failure_rate == 1.0));
    }

    proptest! {
        #[test]
        fn curve_and_stats_match_sort_oracle(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = RngSeed(seed).rng();
            let records: Vec<BenchRecord> = (0..n)
                .map(|_| record(rng.uniform() < 0.8, rng.uniform() * 0.1))
                .collect();
            let mut norms: Vec<f64> = records
                .iter()
                .map(|r| if r.success { r.linf_norm } else { f64::INFINITY })
                .collect();
            norms.sort_by(f64::total_cmp);
            let grid: Vec<f64> = (0..50).map(|k| k as f64 * 0.0025).collect();
            let curve = failure_curve(&records, &grid).unwrap();
            for (p, w) in curve.iter().zip(curve.iter().skip(1)) {
                prop_assert!(w.failure_rate <= p.failure_rate);
            }
            for p in &curve {
                let below = norms.iter().filter(|&&v| v <= p.epsilon).count();
                prop_assert_eq!(p.failure_rate, (n - below) as f64 / n as f64);
            }
            let scaled: Vec<f64> = norms.iter().map(|v| if v.is_finite() { 255.0 * v } else { 255.0 }).collect();
            let median = if n % 2 == 1 { scaled[n / 2] } else { (scaled[n / 2 - 1] + scaled[n / 2]) / 2.0 };
            let stats = norm_stats(&records).unwrap();
            prop_assert!((stats.median - median).abs() < 1e-9);
            prop_assert!((stats.mean - scaled.iter().sum::<f64>() / n as f64).abs() < 1e-9);
        }
    }
}
