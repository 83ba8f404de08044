//! The `GRIDTNSR` container for images, label fields, responsibilities and
//! masks.
//!
//! Layout: the 8 magic bytes `GRIDTNSR`, one UTF-8 JSON header line such as
//! `{"dtype":"f64","shape":[64,64,1],"kind":"image"}` ending in `\n`, then the
//! row-major little-endian payload of exactly `H·W·C` elements. Label headers
//! also carry `"classes": K`; readers fall back to `max + 1` without it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use hpotts_core::{ImageGrid, LabelField, Mask, ResponsibilityField};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GRIDTNSR";
const MAX_HEADER_BYTES: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Image,
    Labels,
    Resp,
    Mask,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: Dtype,
    shape: [usize; 3],
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
}

/// Any of the four tensors the format carries.
#[derive(Debug, Clone, PartialEq)]
pub enum GridTensor {
    Image(ImageGrid),
    Labels(LabelField),
    Resp(ResponsibilityField),
    Mask(Mask),
}

impl GridTensor {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GridTensor::Image(_) => "image",
            GridTensor::Labels(_) => "labels",
            GridTensor::Resp(_) => "resp",
            GridTensor::Mask(_) => "mask",
        }
    }

    pub fn into_image(self) -> Result<ImageGrid> {
        match self {
            GridTensor::Image(t) => Ok(t),
            other => Err(Error::WrongKind { expected: "image", found: other.kind_name() }),
        }
    }

    pub fn into_labels(self) -> Result<LabelField> {
        match self {
            GridTensor::Labels(t) => Ok(t),
            other => Err(Error::WrongKind { expected: "labels", found: other.kind_name() }),
        }
    }

    pub fn into_resp(self) -> Result<ResponsibilityField> {
        match self {
            GridTensor::Resp(t) => Ok(t),
            other => Err(Error::WrongKind { expected: "resp", found: other.kind_name() }),
        }
    }

    pub fn into_mask(self) -> Result<Mask> {
        match self {
            GridTensor::Mask(t) => Ok(t),
            other => Err(Error::WrongKind { expected: "mask", found: other.kind_name() }),
        }
    }
}

impl From<ImageGrid> for GridTensor {
    fn from(t: ImageGrid) -> Self {
        GridTensor::Image(t)
    }
}

impl From<LabelField> for GridTensor {
    fn from(t: LabelField) -> Self {
        GridTensor::Labels(t)
    }
}

impl From<ResponsibilityField> for GridTensor {
    fn from(t: ResponsibilityField) -> Self {
        GridTensor::Resp(t)
    }
}

impl From<Mask> for GridTensor {
    fn from(t: Mask) -> Self {
        GridTensor::Mask(t)
    }
}

pub fn write_grid<W: Write>(mut out: W, tensor: &GridTensor) -> Result<()> {
    let (header, payload) = match tensor {
        GridTensor::Image(t) => (
            Header { dtype: Dtype::F64, shape: [t.height(), t.width(), t.channels()], kind: Kind::Image, classes: None },
            f64_bytes(t.data()),
        ),
        GridTensor::Resp(t) => (
            Header { dtype: Dtype::F64, shape: [t.height(), t.width(), t.classes()], kind: Kind::Resp, classes: None },
            f64_bytes(t.values()),
        ),
        GridTensor::Labels(t) => {
            if t.classes() > 256 {
                return Err(Error::Header(format!("{} classes do not fit one byte per label", t.classes())));
            }
            let payload = t.labels().iter().map(|&l| l as u8).collect();
            (
                Header {
                    dtype: Dtype::U8,
                    shape: [t.height(), t.width(), 1],
                    kind: Kind::Labels,
                    classes: Some(t.classes()),
                },
                payload,
            )
        }
        GridTensor::Mask(t) => (
            Header { dtype: Dtype::U8, shape: [t.height(), t.width(), 1], kind: Kind::Mask, classes: None },
            t.values().iter().map(|&m| u8::from(m)).collect(),
        ),
    };
    out.write_all(MAGIC)?;
    let line = serde_json::to_string(&header).map_err(|e| Error::Header(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn read_grid<R: Read>(input: R) -> Result<GridTensor> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 8];
    let mut filled = 0;
    while filled < magic.len() {
        match input.read(&mut magic[filled..])? {
            0 => return Err(Error::NotGridTensor),
            n => filled += n,
        }
    }
    if &magic != MAGIC {
        return Err(Error::NotGridTensor);
    }

    let mut line = Vec::new();
    (&mut input).take(MAX_HEADER_BYTES).read_until(b'\n', &mut line)?;
    if line.pop() != Some(b'\n') {
        return Err(Error::Header("header line is not newline-terminated".into()));
    }
    let text = std::str::from_utf8(&line).map_err(|_| Error::Header("header is not UTF-8".into()))?;
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Header(e.to_string()))?;
    let [h, w, c] = header.shape;
    let expected_dtype = match header.kind {
        Kind::Image | Kind::Resp => Dtype::F64,
        Kind::Labels | Kind::Mask => Dtype::U8,
    };
    if header.dtype != expected_dtype {
        return Err(Error::Header(format!("{:?} tensors must be {:?}", header.kind, expected_dtype)));
    }
    if matches!(header.kind, Kind::Labels | Kind::Mask) && c != 1 {
        return Err(Error::Header(format!("{:?} tensors have one channel, header says {c}", header.kind)));
    }
    if header.classes.is_some() && header.kind != Kind::Labels {
        return Err(Error::Header("only label tensors carry a class count".into()));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(header.dtype.size()))
        .ok_or_else(|| Error::Header(format!("shape {:?} overflows", header.shape)))?;

    let mut payload = Vec::with_capacity(expected.min(1 << 28));
    input.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::PayloadLength { expected, found: payload.len() });
    }

    let tensor = match header.kind {
        Kind::Image => GridTensor::Image(ImageGrid::new(h, w, c, f64_values(&payload))?),
        Kind::Resp => GridTensor::Resp(ResponsibilityField::new(h, w, c, f64_values(&payload))?),
        Kind::Labels => {
            let labels: Vec<usize> = payload.iter().map(|&b| b as usize).collect();
            let classes = match header.classes {
                Some(k) => k,
                None => labels.iter().max().map_or(1, |m| m + 1),
            };
            GridTensor::Labels(LabelField::new(h, w, classes, labels)?)
        }
        Kind::Mask => {
            if let Some(b) = payload.iter().find(|&&b| b > 1) {
                return Err(Error::Header(format!("mask byte {b} is neither 0 nor 1")));
            }
            GridTensor::Mask(Mask::new(h, w, payload.iter().map(|&b| b == 1).collect())?)
        }
    };
    Ok(tensor)
}

fn f64_values(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect()
}

pub fn write_grid_file(path: impl AsRef<Path>, tensor: &GridTensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_grid(BufWriter::new(file), tensor).map_err(|e| with_path(path, e))
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<GridTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(file).map_err(|e| with_path(path, e))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    read_grid_file(path)?.into_image()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelField> {
    read_grid_file(path)?.into_labels()
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_grid_file(path)?.into_mask()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(t: GridTensor) -> GridTensor {
        let mut buf = Vec::new();
        write_grid(&mut buf, &t).unwrap();
        read_grid(buf.as_slice()).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        let img = ImageGrid::from_scalar(1, 2, vec![0.25, 1.0]).unwrap();
        write_grid(&mut buf, &img.into()).unwrap();
        let header = b"GRIDTNSR{\"dtype\":\"f64\",\"shape\":[1,2,1],\"kind\":\"image\"}\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 16);
        assert_eq!(&buf[header.len()..header.len() + 8], &0.25f64.to_le_bytes());
    }

    #[test]
    fn each_kind_round_trips() {
        let tensors: Vec<GridTensor> = vec![
            ImageGrid::new(2, 3, 2, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap().into(),
            LabelField::new(2, 2, 5, vec![0, 4, 2, 2]).unwrap().into(),
            ResponsibilityField::new(1, 2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap().into(),
            Mask::new(2, 2, vec![true, false, false, true]).unwrap().into(),
        ];
        for t in tensors {
            assert_eq!(round_trip(t.clone()), t);
        }
    }

    #[test]
    fn labels_without_class_count_infer_it() {
        let mut buf = MAGIC.to_vec();
        buf.extend_from_slice(b"{\"dtype\":\"u8\",\"shape\":[1,3,1],\"kind\":\"labels\"}\n");
        buf.extend_from_slice(&[0, 2, 1]);
        let labels = read_grid(buf.as_slice()).unwrap().into_labels().unwrap();
        assert_eq!(labels.classes(), 3);
    }

    #[test]
    fn distinct_errors() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &Mask::full(3, 3).unwrap().into()).unwrap();

        let truncated = &buf[..buf.len() - 2];
        let err = read_grid(truncated).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");

        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert_eq!(read_grid(wrong.as_slice()).unwrap_err().to_string(), "not a grid tensor file");
        assert!(matches!(read_grid(&b"GRID"[..]), Err(Error::NotGridTensor)));

        let mut bad = MAGIC.to_vec();
        bad.extend_from_slice(b"{\"dtype\":\"f64\",\"shape\":[1,1]}\n");
        assert!(matches!(read_grid(bad.as_slice()), Err(Error::Header(_))));

        let mut mismatched = MAGIC.to_vec();
        mismatched.extend_from_slice(b"{\"dtype\":\"u8\",\"shape\":[1,1,1],\"kind\":\"image\"}\n\x00");
        assert!(matches!(read_grid(mismatched.as_slice()), Err(Error::Header(_))));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_grid(extra.as_slice()), Err(Error::PayloadLength { .. })));
    }

    #[test]
    fn typed_accessors_reject_other_kinds() {
        let t: GridTensor = Mask::full(1, 1).unwrap().into();
        let err = t.into_image().unwrap_err();
        assert_eq!(err.to_string(), "expected image tensor, found mask");
    }
}
