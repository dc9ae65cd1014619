//! Binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "STYW"  u32 version  u32 tensor_count
//! per tensor: u16 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64),
//!             u8 ndim, ndim x u32 dims, payload (numel x dtype, LE)
//! u32 record_len, record (UTF-8 `key=value` lines)
//! u64 checksum
//! ```
//!
//! The checksum is the wrapping sum of every byte before it, so any single
//! byte change anywhere in the file is detected.

use std::collections::HashSet;
use std::path::Path;

use crate::config::{model_from_record, model_record};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TransformerConfig};
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"STYW";
pub const VERSION: u32 = 1;

/// A tensor as stored on disk. Values are widened to `f64`, which is exact
/// for `f32` payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            values: t.to_f64_vec(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::from_f64(&self.values, &self.shape)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightFile {
    pub tensors: Vec<StoredTensor>,
    /// Ordered `key=value` record.
    pub metadata: Vec<(String, String)>,
}

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, tensor: Option<&str>, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::load(tensor, format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, tensor: Option<&str>, what: &str) -> Result<u8> {
        Ok(self.take(1, tensor, what)?[0])
    }

    fn u16(&mut self, tensor: Option<&str>, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, tensor, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, tensor: Option<&str>, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, tensor, what)?.try_into().unwrap()))
    }
}

impl WeightFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::load(Some(name), "missing tensor"))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let numel: usize = t.shape.iter().product();
            if name.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize || numel != t.values.len() {
                return Err(Error::load(Some(&t.name), "tensor cannot be encoded"));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.dtype as u8);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t.dtype {
                DType::F32 => t.values.iter().for_each(|&v| (v as f32).write_le(&mut out)),
                DType::F64 => t.values.iter().for_each(|&v| v.write_le(&mut out)),
            }
        }
        let mut record = String::new();
        for (k, v) in &self.metadata {
            record.push_str(&format!("{k}={v}\n"));
        }
        out.extend_from_slice(&(record.len() as u32).to_le_bytes());
        out.extend_from_slice(record.as_bytes());
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::load(None, "not a weight file (bad magic)"));
        }
        if bytes.len() < 4 + 4 + 4 + 4 + 8 {
            return Err(Error::load(None, "file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = checksum(body);
        if stored != computed {
            return Err(Error::load(
                None,
                format!("checksum mismatch (stored {stored:#018x}, computed {computed:#018x})"),
            ));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32(None, "version")?;
        if version != VERSION {
            return Err(Error::load(
                None,
                format!("unsupported format version {version} (expected {VERSION})"),
            ));
        }
        let count = r.u32(None, "tensor count")?;
        let mut tensors = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u16(None, "name length")? as usize;
            let name = std::str::from_utf8(r.take(len, None, "name")?)
                .map_err(|_| Error::load(None, "tensor name is not UTF-8"))?
                .to_owned();
            let tn = Some(name.as_str());
            if !seen.insert(name.clone()) {
                return Err(Error::load(tn, "duplicate tensor name"));
            }
            let tag = r.u8(tn, "dtype")?;
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::load(tn, format!("unknown dtype tag {tag}")))?;
            let ndim = r.u8(tn, "ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32(tn, "dims")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::load(tn, "shape overflows"))?;
            let nbytes = numel
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::load(tn, "shape overflows"))?;
            let payload = r.take(nbytes, tn, "payload")?;
            let values = match dtype {
                DType::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            tensors.push(StoredTensor { name, dtype, shape, values });
        }
        let len = r.u32(None, "record length")? as usize;
        let record = std::str::from_utf8(r.take(len, None, "record")?)
            .map_err(|_| Error::load(None, "config record is not UTF-8"))?;
        let mut metadata = Vec::new();
        for line in record.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::load(None, format!("malformed record line `{line}`")))?;
            metadata.push((k.to_owned(), v.to_owned()));
        }
        if r.pos != body.len() {
            return Err(Error::load(None, format!("{} trailing bytes before checksum", body.len() - r.pos)));
        }
        Ok(Self { tensors, metadata })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Weight file for a model: every parameter plus `kind=model` and the
/// configuration record.
pub fn model_file<T: Real>(params: &ModelParams<T>, config: &TransformerConfig) -> WeightFile {
    let mut metadata = vec![("kind".to_owned(), "model".to_owned())];
    metadata.extend(model_record(config));
    WeightFile {
        tensors: params.iter().map(|(n, t)| StoredTensor::from_tensor(n, t)).collect(),
        metadata,
    }
}

pub fn save_weights<T: Real>(path: &Path, params: &ModelParams<T>, config: &TransformerConfig) -> Result<()> {
    params.check_against(config)?;
    model_file(params, config).write(path)
}

/// Parameters and configuration from a model weight file, checked for
/// consistency with each other.
pub fn model_from_file<T: Real>(file: &WeightFile) -> Result<(ModelParams<T>, TransformerConfig)> {
    match file.meta("kind") {
        Some("model") => {}
        other => {
            return Err(Error::load(
                None,
                format!("expected a model weight file, found kind {:?}", other.unwrap_or("<none>")),
            ))
        }
    }
    let config = model_from_record(file.metadata.iter().filter(|(k, _)| k != "kind"))
        .map_err(|e| Error::load(None, format!("config record: {e}")))?;
    let mut params = ModelParams::new();
    for t in &file.tensors {
        params.insert(t.name.clone(), t.to_tensor()?);
    }
    params.check_against(&config)?;
    Ok((params, config))
}

pub fn load_weights<T: Real>(path: &Path) -> Result<(ModelParams<T>, TransformerConfig)> {
    model_from_file(&WeightFile::read(path)?)
}

/// Rejects a loaded configuration that differs from `expected` in anything
/// that changes parameter shapes.
pub fn check_compatible(loaded: &TransformerConfig, expected: &TransformerConfig) -> Result<()> {
    let a = model_record(loaded);
    let b = model_record(expected);
    for ((k, va), (_, vb)) in a.iter().zip(&b) {
        let shape_key = !matches!(k.as_str(), "content_pe" | "style_pe");
        if shape_key && va != vb {
            return Err(Error::load(None, format!("config mismatch: {k} is {va} in file, {vb} expected")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WeightFile {
        WeightFile {
            tensors: vec![
                StoredTensor {
                    name: "a".into(),
                    dtype: DType::F32,
                    shape: vec![2, 2],
                    values: vec![1.5, -0.25, 3.0, 0.1f32 as f64],
                },
                StoredTensor {
                    name: "b".into(),
                    dtype: DType::F64,
                    shape: vec![],
                    values: vec![std::f64::consts::PI],
                },
            ],
            metadata: vec![("kind".into(), "test".into())],
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let f = small();
        assert_eq!(WeightFile::decode(&f.encode().unwrap()).unwrap(), f);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = small().encode().unwrap();
        for i in 0..bytes.len() {
            for delta in [1u8, 0x80] {
                let mut b = bytes.clone();
                b[i] = b[i].wrapping_add(delta);
                assert!(WeightFile::decode(&b).is_err(), "flip at byte {i} accepted");
            }
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = small().encode().unwrap();
        bytes[4] += 1;
        let n = bytes.len();
        let sum = checksum(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        let err = WeightFile::decode(&bytes).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn truncated_payload_names_tensor() {
        let mut f = small();
        f.metadata.clear();
        let mut bytes = f.encode().unwrap();
        // drop the trailing f64 tensor payload and record, then re-seal
        let n = bytes.len();
        bytes.truncate(n - 8 - 4 - 4);
        let sum = checksum(&bytes);
        bytes.extend_from_slice(&sum.to_le_bytes());
        let err = WeightFile::decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::Load { tensor: Some(ref t), .. } if t == "b"), "{err}");
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let config = TransformerConfig::toy();
        let params = ModelParams::<f32>::init(&config, 11);
        let (back, cfg) = model_from_file::<f32>(&WeightFile::decode(&model_file(&params, &config).encode().unwrap()).unwrap()).unwrap();
        assert_eq!(cfg, config);
        for ((n1, a), (n2, b)) in params.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn missing_tensor_is_named() {
        let config = TransformerConfig::toy();
        let mut f = model_file(&ModelParams::<f32>::init(&config, 1), &config);
        f.tensors.retain(|t| t.name != "dec.0.ln2.gamma");
        let err = model_from_file::<f32>(&f).unwrap_err();
        assert!(err.to_string().contains("dec.0.ln2.gamma"), "{err}");
    }

    #[test]
    fn compatibility_ignores_pe_modes_only() {
        let a = TransformerConfig::toy();
        let mut b = a.clone();
        b.content_pe = crate::posenc::PeMode::Sinusoidal;
        assert!(check_compatible(&a, &b).is_ok());
        b.channels = 32;
        assert!(check_compatible(&a, &b).is_err());
    }
}
