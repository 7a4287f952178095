//! Tensor and label containers.
//!
//! A container is one UTF-8 JSON header line, e.g.
//! `{"dims":[3,16,16],"dtype":"f32"}`, terminated by `\n`, followed by the
//! row-major little-endian payload. Tensors use `f32`, label maps and masks
//! use `u16`. Label headers carry `dims: [h, w]` and an optional
//! `num_classes`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{BinaryMask, LabelMap};
use crate::tensor::{Shape, TensorGrid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U16,
}

impl Dtype {
    fn width(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

fn read_container(mut reader: impl BufRead) -> Result<(Header, Vec<u8>)> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("header line is not newline-terminated".into()));
    }
    line.pop();
    let text = std::str::from_utf8(&line)
        .map_err(|_| Error::Format("header is not valid UTF-8".into()))?;
    let header: Header =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.dims.is_empty() {
        return Err(Error::Format("header has no dims".into()));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    let expected: usize = header.dims.iter().product();
    let width = header.dtype.width();
    if payload.len() != expected * width {
        return Err(Error::PayloadMismatch {
            expected,
            got: payload.len() / width,
        });
    }
    Ok((header, payload))
}

fn write_container(mut writer: impl Write, header: &Header, payload: &[u8]) -> Result<()> {
    let text = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    writer.write_all(text.as_bytes())?;
    writer.write_all(b"\n")?;
    writer.write_all(payload)?;
    writer.flush()?;
    Ok(())
}

pub fn read_tensor(reader: impl BufRead) -> Result<TensorGrid> {
    let (header, payload) = read_container(reader)?;
    if header.dtype != Dtype::F32 {
        return Err(Error::Format("tensor container must have dtype f32".into()));
    }
    let shape = match header.dims[..] {
        [c, h, w] => Shape::new(c, h, w),
        [h, w] => Shape::new(1, h, w),
        _ => {
            return Err(Error::Format(format!(
                "tensor dims must have 2 or 3 entries, got {:?}",
                header.dims
            )))
        }
    };
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    TensorGrid::new(shape, data)
}

pub fn write_tensor(writer: impl Write, tensor: &TensorGrid) -> Result<()> {
    let s = tensor.shape();
    let mut payload = Vec::with_capacity(tensor.len() * 4);
    for (index, &v) in tensor.data().iter().enumerate() {
        let narrowed = v as f32;
        if !narrowed.is_finite() {
            return Err(Error::NonFinite { index });
        }
        payload.extend_from_slice(&narrowed.to_le_bytes());
    }
    let header = Header {
        dims: vec![s.channels, s.height, s.width],
        dtype: Dtype::F32,
        num_classes: None,
    };
    write_container(writer, &header, &payload)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorGrid> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &TensorGrid) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), tensor)
}

/// Reads a label map. `num_classes` overrides the header; without either,
/// `K = max(label) + 1` (at least 2).
pub fn read_labels(reader: impl BufRead, num_classes: Option<usize>) -> Result<LabelMap> {
    let (header, payload) = read_container(reader)?;
    if header.dtype != Dtype::U16 {
        return Err(Error::Format("label container must have dtype u16".into()));
    }
    let (h, w) = match header.dims[..] {
        [h, w] | [1, h, w] => (h, w),
        _ => {
            return Err(Error::Format(format!(
                "label dims must be [h, w], got {:?}",
                header.dims
            )))
        }
    };
    let labels: Vec<u16> = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let k = num_classes.or(header.num_classes).unwrap_or_else(|| {
        labels
            .iter()
            .map(|&l| usize::from(l) + 1)
            .max()
            .unwrap_or(2)
            .max(2)
    });
    LabelMap::new(h, w, k, labels)
}

pub fn write_labels(writer: impl Write, labels: &LabelMap) -> Result<()> {
    let payload: Vec<u8> = labels
        .labels()
        .iter()
        .flat_map(|l| l.to_le_bytes())
        .collect();
    let header = Header {
        dims: vec![labels.height(), labels.width()],
        dtype: Dtype::U16,
        num_classes: Some(labels.num_classes()),
    };
    write_container(writer, &header, &payload)
}

pub fn load_labels(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabelMap> {
    read_labels(BufReader::new(File::open(path)?), num_classes)
}

pub fn save_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    write_labels(BufWriter::new(File::create(path)?), labels)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    BinaryMask::from_labels(&load_labels(path, Some(2))?)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    save_labels(path, &mask.to_labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    fn encode(header: &str, floats: &[f32]) -> Vec<u8> {
        let mut bytes = header.as_bytes().to_vec();
        bytes.push(b'\n');
        for f in floats {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn reads_literal_container() {
        let bytes = encode(r#"{"dims":[1,2,2],"dtype":"f32"}"#, &[0.0, 0.5, 1.0, 0.25]);
        let t = read_tensor(&bytes[..]).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 2, 2));
        assert_eq!(t.data(), &[0.0, 0.5, 1.0, 0.25]);
    }

    #[test]
    fn short_payload_is_payload_mismatch() {
        let bytes = encode(r#"{"dims":[1,2,2],"dtype":"f32"}"#, &[0.0, 0.5, 1.0]);
        let err = read_tensor(&bytes[..]).unwrap_err();
        assert!(err.to_string().contains("payload mismatch"), "{err}");
    }

    #[test]
    fn malformed_header() {
        let bytes = encode(r#"{"dims":[1,2,2]"#, &[0.0; 4]);
        assert!(matches!(read_tensor(&bytes[..]), Err(Error::Format(_))));
        let bytes = encode(r#"{"dims":[4],"dtype":"f32"}"#, &[0.0; 4]);
        assert!(matches!(read_tensor(&bytes[..]), Err(Error::Format(_))));
        assert!(read_tensor(&b"no newline"[..]).is_err());
    }

    #[test]
    fn non_finite_payload_rejected() {
        let bytes = encode(r#"{"dims":[1,1,2],"dtype":"f32"}"#, &[0.0, f32::NAN]);
        assert!(matches!(read_tensor(&bytes[..]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn seeded_round_trip_is_bit_exact() {
        let mut rng = RngSeed(11).rng();
        let shape = Shape::new(3, 5, 7);
        let data: Vec<f64> = (0..shape.len())
            .map(|_| f64::from((rng.gaussian() * 3.0) as f32))
            .collect();
        let t = TensorGrid::new(shape, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        save_tensor(&path, &t).unwrap();
        let back = load_tensor(&path).unwrap();
        assert_eq!(back.shape(), shape);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn labels_round_trip_and_infer_k() {
        let l = LabelMap::new(2, 2, 5, vec![0, 4, 2, 1]).unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &l).unwrap();
        assert_eq!(read_labels(&buf[..], None).unwrap(), l);

        let mut bytes = br#"{"dims":[1,2],"dtype":"u16"}"#.to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(&[2, 0, 0, 0]);
        assert_eq!(read_labels(&bytes[..], None).unwrap().num_classes(), 3);
    }

    #[test]
    fn wrong_dtype_rejected() {
        let l = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &l).unwrap();
        assert!(read_tensor(&buf[..]).is_err());
    }
}
