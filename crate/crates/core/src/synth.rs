//! Synthetic segmentation data and a small fitting routine, so the toy
//! models have decision boundaries worth attacking.

use serde::{Deserialize, Serialize};

use crate::attacks::losses::cross_entropy;
use crate::bench::pixel_success;
use crate::error::{Error, Result};
use crate::labels::{BinaryMask, LabelMap};
use crate::models::{SegmentationModel, TinyConvModel};
use crate::rng::RngSeed;
use crate::tensor::{Shape, TensorGrid};

/// Images are Voronoi partitions into class regions; each class lifts its
/// own colour channel (channel `k mod C`) by `contrast` above a grey level,
/// plus Gaussian pixel noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub regions: usize,
    pub contrast: f64,
    pub noise: f64,
    /// Fraction of pixels left unlabeled (excluded from the mask).
    pub unlabeled: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 16,
            width: 16,
            classes: 3,
            regions: 4,
            contrast: 0.1,
            noise: 0.02,
            unlabeled: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.channels >= 1
            && self.height >= 1
            && self.width >= 1
            && self.classes >= 2
            && self.classes <= u16::MAX as usize
            && self.regions >= 1
            && (0.0..=0.5).contains(&self.contrast)
            && self.noise >= 0.0
            && (0.0..1.0).contains(&self.unlabeled);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid synthetic data configuration".into()))
        }
    }
}

/// One synthetic image with labels and mask.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub x: TensorGrid,
    pub labels: LabelMap,
    pub mask: BinaryMask,
}

pub fn synth_sample(cfg: &SynthConfig, seed: RngSeed) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = seed.rng();
    let (h, w) = (cfg.height, cfg.width);
    let centres: Vec<(f64, f64, u16)> = (0..cfg.regions)
        .map(|r| {
            // every class appears once before any repeats
            let class = if r < cfg.classes { r } else { rng.index(cfg.classes) };
            (rng.uniform() * h as f64, rng.uniform() * w as f64, class as u16)
        })
        .collect();
    let labels: Vec<u16> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            centres
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - r).powi(2) + (a.1 - c).powi(2);
                    let db = (b.0 - r).powi(2) + (b.1 - c).powi(2);
                    da.total_cmp(&db)
                })
                .map(|p| p.2)
                .unwrap_or(0)
        })
        .collect();
    let shape = cfg.shape();
    let base = 0.5 - cfg.contrast / cfg.channels as f64;
    let mut data = vec![0.0; shape.len()];
    for ch in 0..cfg.channels {
        for i in 0..h * w {
            let lift = if labels[i] as usize % cfg.channels == ch { cfg.contrast } else { 0.0 };
            data[ch * h * w + i] = (base + lift + cfg.noise * rng.gaussian()).clamp(0.0, 1.0);
        }
    }
    let mut bits: Vec<bool> = (0..h * w).map(|_| rng.uniform() >= cfg.unlabeled).collect();
    if !bits.iter().any(|&b| b) {
        bits[0] = true;
    }
    Ok(SynthSample {
        x: TensorGrid::new(shape, data)?,
        labels: LabelMap::new(h, w, cfg.classes, labels)?,
        mask: BinaryMask::new(h, w, bits)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    /// Masked pixel accuracy on the training samples.
    pub accuracy: f64,
}

/// Full-batch Adam on the masked mean cross-entropy. Model call counters are
/// reset afterwards.
pub fn fit_tiny_conv(model: &mut TinyConvModel, samples: &[SynthSample], cfg: &FitConfig) -> Result<FitReport> {
    if samples.is_empty() || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("fitting needs samples, epochs and a positive rate".into()));
    }
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut m1: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut m2 = m1.clone();
    let mut final_loss = 0.0;
    for epoch in 1..=cfg.epochs {
        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        let mut loss = 0.0;
        for s in samples {
            let logits = model.forward(&s.x)?;
            // the attacker-signed objective of an untargeted run is +CE
            let (ce, upstream) = cross_entropy(&logits, &s.labels, &s.mask, false)?;
            loss += ce;
            let g = model.gradients(&s.x, &upstream)?;
            for (acc, part) in grads.iter_mut().zip(g.as_slices()) {
                for (a, v) in acc.iter_mut().zip(part) {
                    *a += v / samples.len() as f64;
                }
            }
        }
        final_loss = loss / samples.len() as f64;
        let c1 = 1.0 - cfg.beta1.powi(epoch as i32);
        let c2 = 1.0 - cfg.beta2.powi(epoch as i32);
        for (p, params) in model.parameters_mut().into_iter().enumerate() {
            for (j, w) in params.iter_mut().enumerate() {
                let g = grads[p][j];
                m1[p][j] = cfg.beta1 * m1[p][j] + (1.0 - cfg.beta1) * g;
                m2[p][j] = cfg.beta2 * m2[p][j] + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (m1[p][j] / c1) / ((m2[p][j] / c2).sqrt() + 1e-8);
            }
        }
        if !final_loss.is_finite() {
            return Err(Error::Numerical(format!("fitting diverged at epoch {epoch}")));
        }
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in samples {
        let hit = pixel_success(&model.forward(&s.x)?, &s.labels, true)?;
        correct += hit.iter().zip(s.mask.bits()).filter(|(h, m)| **h && **m).count();
        total += s.mask.count();
    }
    model.counters().reset();
    Ok(FitReport {
        final_loss,
        accuracy: correct as f64 / total as f64,
    })
}

/// A TinyConv model (8 hidden channels) fitted on `train` synthetic samples.
pub fn fitted_toy_model(cfg: &SynthConfig, train: usize, seed: RngSeed) -> Result<(TinyConvModel, FitReport)> {
    let samples: Vec<SynthSample> = (0..train)
        .map(|i| synth_sample(cfg, seed.derive(1_000 + i as u64)))
        .collect::<Result<_>>()?;
    let mut model = TinyConvModel::random(cfg.shape(), 8, cfg.classes, seed.derive(0))?;
    let report = fit_tiny_conv(&mut model, &samples, &FitConfig::default())?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_valid_and_deterministic() {
        let cfg = SynthConfig::default();
        let a = synth_sample(&cfg, RngSeed(4)).unwrap();
        let b = synth_sample(&cfg, RngSeed(4)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
        for k in 0..3u16 {
            assert!(a.labels.labels().contains(&k));
        }
        assert!(a.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fitting_reaches_high_accuracy() {
        let cfg = SynthConfig::default();
        let (model, report) = fitted_toy_model(&cfg, 8, RngSeed(1)).unwrap();
        assert!(report.accuracy > 0.95, "{report:?}");
        assert_eq!(model.counters().forwards(), 0);
    }
}
