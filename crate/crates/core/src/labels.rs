//! Per-pixel class maps and validity masks.

use crate::error::{shape_err, Error, Result};

/// Integer class map of shape `(H, W)` with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "label map needs at least 2 classes, got {num_classes}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::PayloadMismatch {
                expected: height * width,
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, num_classes: usize, label: u16) -> Result<Self> {
        Self::new(height, width, num_classes, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn label(&self, pixel: usize) -> usize {
        usize::from(self.labels[pixel])
    }
}

/// 0/1 mask of shape `(H, W)` with at least one set pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    count: usize,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::PayloadMismatch {
                expected: height * width,
                got: bits.len(),
            });
        }
        let count = bits.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::InvalidArgument(
                "mask must contain at least one set pixel".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            bits,
            count,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width]).expect("non-empty grid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_set(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    /// `‖m‖₁`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Mask as a two-class label map (1 = constrained pixel).
    pub fn to_labels(&self) -> LabelMap {
        LabelMap::new(
            self.height,
            self.width,
            2,
            self.bits.iter().map(|&b| u16::from(b)).collect(),
        )
        .expect("0/1 labels are valid")
    }

    pub fn from_labels(labels: &LabelMap) -> Result<Self> {
        if labels.labels().iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument("mask labels must be 0 or 1".into()));
        }
        Self::new(
            labels.height(),
            labels.width(),
            labels.labels().iter().map(|&l| l == 1).collect(),
        )
    }
}

/// `mᵀcond / ‖m‖₁`: the fraction of masked pixels where `cond` holds.
pub fn masked_fraction(cond: &[bool], mask: &BinaryMask) -> Result<f64> {
    if cond.len() != mask.len() {
        return Err(shape_err(mask.len(), cond.len()));
    }
    let hits = cond
        .iter()
        .zip(mask.bits())
        .filter(|(&c, &m)| c && m)
        .count();
    Ok(hits as f64 / mask.count() as f64)
}
