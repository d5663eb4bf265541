//! `SSLW` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SSLW" | version: u32 | header_len: u64 | header: UTF-8 JSON | payload
//! ```
//!
//! The header maps tensor names to `{shape, dtype, offset, length}` with
//! offsets relative to the start of the payload. The optional key
//! `__metadata__` holds a string→string map. Tensors are written in name
//! order, back to back.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"SSLW";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("header truncated: need {needed} bytes, have {available}")]
    HeaderTruncated { needed: u64, available: u64 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensors {first} and {second} overlap in the payload")]
    Overlap { first: String, second: String },
    #[error("payload truncated: tensor {name} ends at byte {end}, payload has {available}")]
    PayloadTruncated { name: String, end: u64, available: u64 },
    #[error("{0} unexpected bytes after the last tensor")]
    TrailingBytes(u64),
    #[error("tensor {name}: {detail}")]
    BadTensor { name: String, detail: String },
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

impl ContainerError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            ContainerError::BadMagic => 1,
            ContainerError::UnsupportedVersion(_) => 2,
            ContainerError::HeaderTruncated { .. } => 3,
            ContainerError::MalformedHeader(_) => 4,
            ContainerError::Overlap { .. } => 5,
            ContainerError::PayloadTruncated { .. } => 6,
            ContainerError::TrailingBytes(_) => 7,
            ContainerError::BadTensor { .. } => 8,
            ContainerError::MissingTensor(_) => 9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, ContainerError> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(ContainerError::BadTensor {
                name: String::new(),
                detail: format!("shape {shape:?} holds {count} elements, data has {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: TensorData::F64(m.as_slice().to_vec()),
        }
    }

    /// Same as [`Tensor::from_matrix`] but rounded to 32-bit storage.
    pub fn from_matrix_f32(m: &Matrix) -> Self {
        Self {
            shape: vec![m.rows(), m.cols()],
            data: TensorData::F32(m.as_slice().iter().map(|v| *v as f32).collect()),
        }
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: TensorData::F64(v.to_vec()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|x| f64::from(*x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Rank-2 tensors map directly; rank-1 tensors become column vectors.
    pub fn to_matrix(&self) -> Result<Matrix, ContainerError> {
        let (rows, cols) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            other => {
                return Err(ContainerError::BadTensor {
                    name: String::new(),
                    detail: format!("rank {} cannot be read as a matrix", other.len()),
                })
            }
        };
        Matrix::new(rows, cols, self.to_f64_vec()).map_err(|e| ContainerError::BadTensor {
            name: String::new(),
            detail: e.to_string(),
        })
    }

    fn byte_len(&self) -> usize {
        self.data.len() * self.dtype().size()
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Matrix) {
        self.insert(name, Tensor::from_matrix(m));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ContainerError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix, ContainerError> {
        self.get(name)?.to_matrix().map_err(|e| match e {
            ContainerError::BadTensor { detail, .. } => ContainerError::BadTensor {
                name: name.to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>, ContainerError> {
        Ok(self.get(name)?.to_f64_vec())
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    length: u64,
}

pub fn write_container(container: &TensorContainer) -> Vec<u8> {
    let mut header = Map::new();
    if !container.metadata.is_empty() {
        header.insert(
            METADATA_KEY.to_string(),
            serde_json::to_value(&container.metadata).expect("string map serialises"),
        );
    }
    let mut offset = 0u64;
    for (name, tensor) in &container.tensors {
        let length = tensor.byte_len() as u64;
        let entry = Entry {
            shape: tensor.shape.clone(),
            dtype: tensor.dtype(),
            offset,
            length,
        };
        header.insert(name.clone(), serde_json::to_value(entry).expect("entry serialises"));
        offset += length;
    }
    let header = serde_json::to_vec(&Value::Object(header)).expect("header serialises");

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for tensor in container.tensors.values() {
        tensor.write_payload(&mut out);
    }
    out
}

pub fn read_container(bytes: &[u8]) -> Result<TensorContainer, ContainerError> {
    let available = bytes.len() as u64;
    let magic_len = bytes.len().min(4);
    if bytes[..magic_len] != MAGIC[..magic_len] {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(ContainerError::HeaderTruncated {
            needed: PREAMBLE as u64,
            available,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64).checked_add(header_len).ok_or_else(|| {
        ContainerError::MalformedHeader("header length overflows".into())
    })?;
    if header_end > available {
        return Err(ContainerError::HeaderTruncated {
            needed: header_end,
            available,
        });
    }
    let header_end = header_end as usize;
    let header: Map<String, Value> = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
    let payload = &bytes[header_end..];

    let mut metadata = BTreeMap::new();
    let mut entries = Vec::with_capacity(header.len());
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata = serde_json::from_value(value)
                .map_err(|e| ContainerError::MalformedHeader(format!("metadata: {e}")))?;
            continue;
        }
        let entry: Entry = serde_json::from_value(value)
            .map_err(|e| ContainerError::MalformedHeader(format!("{name}: {e}")))?;
        let count = entry
            .shape
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d as u64));
        let expected = count.and_then(|c| c.checked_mul(entry.dtype.size() as u64));
        if expected != Some(entry.length) {
            return Err(ContainerError::BadTensor {
                name,
                detail: format!(
                    "shape {:?} as {:?} does not fill {} bytes",
                    entry.shape, entry.dtype, entry.length
                ),
            });
        }
        entries.push((name, entry));
    }

    entries.sort_by_key(|e| (e.1.offset, e.1.length));
    for pair in entries.windows(2) {
        let (first, second) = (&pair[0], &pair[1]);
        if first.1.offset + first.1.length > second.1.offset {
            return Err(ContainerError::Overlap {
                first: first.0.clone(),
                second: second.0.clone(),
            });
        }
    }
    let mut payload_end = 0u64;
    for (name, entry) in &entries {
        let end = entry.offset.checked_add(entry.length).ok_or_else(|| {
            ContainerError::MalformedHeader(format!("{name}: offset overflows"))
        })?;
        if end > payload.len() as u64 {
            return Err(ContainerError::PayloadTruncated {
                name: name.clone(),
                end,
                available: payload.len() as u64,
            });
        }
        payload_end = payload_end.max(end);
    }
    if payload_end < payload.len() as u64 {
        return Err(ContainerError::TrailingBytes(payload.len() as u64 - payload_end));
    }

    let mut tensors = BTreeMap::new();
    for (name, entry) in entries {
        let raw = &payload[entry.offset as usize..(entry.offset + entry.length) as usize];
        let data = match entry.dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        tensors.insert(
            name,
            Tensor {
                shape: entry.shape,
                data,
            },
        );
    }
    Ok(TensorContainer { tensors, metadata })
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl TensorContainer {
    pub fn save(&self, path: &Path) -> crate::Result<()> {
        write_atomic(path, &write_container(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let bytes = fs::read(path)?;
        Ok(read_container(&bytes)?)
    }
}
