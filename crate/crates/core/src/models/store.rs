//! Model directories: one tensor container per parameter plus a JSON
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CallCounters, PixelAffineModel, SegmentationModel, TinyConvModel};
use crate::error::{Error, Result};
use crate::io::{load_tensor, save_tensor};
use crate::tensor::{Shape, TensorGrid};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PixelAffine,
    TinyConv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub architecture: ModelKind,
    pub num_classes: usize,
    /// `[C, H, W]`.
    pub input_shape: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Parameter name to file name, relative to the directory.
    pub tensors: BTreeMap<String, String>,
}

/// Either built-in model, as loaded from disk.
#[derive(Debug, Clone)]
pub enum AnyModel {
    PixelAffine(PixelAffineModel),
    TinyConv(TinyConvModel),
}

impl From<PixelAffineModel> for AnyModel {
    fn from(m: PixelAffineModel) -> Self {
        Self::PixelAffine(m)
    }
}

impl From<TinyConvModel> for AnyModel {
    fn from(m: TinyConvModel) -> Self {
        Self::TinyConv(m)
    }
}

impl AnyModel {
    fn inner(&self) -> &dyn SegmentationModel {
        match self {
            Self::PixelAffine(m) => m,
            Self::TinyConv(m) => m,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::PixelAffine(_) => ModelKind::PixelAffine,
            Self::TinyConv(_) => ModelKind::TinyConv,
        }
    }
}

impl SegmentationModel for AnyModel {
    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }
    fn input_shape(&self) -> Shape {
        self.inner().input_shape()
    }
    fn forward(&self, x: &TensorGrid) -> Result<TensorGrid> {
        self.inner().forward(x)
    }
    fn vjp(&self, x: &TensorGrid, upstream: &TensorGrid) -> Result<TensorGrid> {
        self.inner().vjp(x, upstream)
    }
    fn counters(&self) -> &CallCounters {
        self.inner().counters()
    }
}

fn flat(values: &[f64], shape: Shape) -> Result<TensorGrid> {
    TensorGrid::new(shape, values.to_vec())
}

/// Writes `model` into `dir` (created if missing).
pub fn save_model(dir: impl AsRef<Path>, model: &AnyModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let s = model.input_shape();
    let k = model.num_classes();
    let (hidden, tensors): (Option<usize>, Vec<(&str, TensorGrid)>) = match model {
        AnyModel::PixelAffine(m) => (
            None,
            vec![
                ("weight", flat(m.weight(), Shape::new(1, k, s.channels))?),
                ("bias", flat(m.bias(), Shape::new(1, 1, k))?),
            ],
        ),
        AnyModel::TinyConv(m) => {
            let f = m.hidden();
            let [w1, b1, w2, b2] = m.parameters();
            (
                Some(f),
                vec![
                    ("conv1_weight", flat(w1, Shape::new(f * s.channels, 3, 3))?),
                    ("conv1_bias", flat(b1, Shape::new(1, 1, f))?),
                    ("conv2_weight", flat(w2, Shape::new(k * f, 3, 3))?),
                    ("conv2_bias", flat(b2, Shape::new(1, 1, k))?),
                ],
            )
        }
    };
    let mut files = BTreeMap::new();
    for (name, t) in &tensors {
        let file = format!("{name}.bin");
        save_tensor(dir.join(&file), t)?;
        files.insert((*name).to_string(), file);
    }
    let manifest = Manifest {
        architecture: model.kind(),
        num_classes: k,
        input_shape: [s.channels, s.height, s.width],
        hidden,
        tensors: files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Model(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

fn read_param(dir: &Path, manifest: &Manifest, name: &str, expected: usize) -> Result<Vec<f64>> {
    let file = manifest
        .tensors
        .get(name)
        .ok_or_else(|| Error::Model(format!("manifest lists no tensor '{name}'")))?;
    let t = load_tensor(dir.join(file))?;
    if t.len() != expected {
        return Err(Error::Model(format!(
            "tensor '{name}' holds {} values, architecture needs {expected}",
            t.len()
        )));
    }
    Ok(t.into_data())
}

/// Loads a model directory written by [`save_model`]. Manifest or parameter
/// inconsistencies are [`Error::Model`]; missing files are [`Error::Io`].
pub fn load_model(dir: impl AsRef<Path>) -> Result<AnyModel> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Model(format!("bad manifest: {e}")))?;
    let [c, h, w] = manifest.input_shape;
    let input = Shape::new(c, h, w);
    let k = manifest.num_classes;
    match manifest.architecture {
        ModelKind::PixelAffine => {
            let weight = read_param(dir, &manifest, "weight", k * c)?;
            let bias = read_param(dir, &manifest, "bias", k)?;
            Ok(PixelAffineModel::new(input, k, weight, bias)?.into())
        }
        ModelKind::TinyConv => {
            let f = manifest
                .hidden
                .ok_or_else(|| Error::Model("tiny_conv manifest needs 'hidden'".into()))?;
            let w1 = read_param(dir, &manifest, "conv1_weight", f * c * 9)?;
            let b1 = read_param(dir, &manifest, "conv1_bias", f)?;
            let w2 = read_param(dir, &manifest, "conv2_weight", k * f * 9)?;
            let b2 = read_param(dir, &manifest, "conv2_bias", k)?;
            Ok(TinyConvModel::new(input, f, k, w1, b1, w2, b2)?.into())
        }
    }
}
