//! Binary container: `SGKP` magic, u32 LE version, u64 LE header length,
//! a JSON header, then little-endian f64 arrays each aligned to 64 bytes.
//! Array offsets in the header are relative to the start of the data
//! section, which is itself 64-byte aligned.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelError, ModelSpec};
use crate::preprocess::PipelineConfig;
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"SGKP";
pub const VERSION: u32 = 1;
const ALIGN: usize = 64;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Model,
    TensorOnly,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pipeline: Option<PipelineConfig>,
    tensors: Vec<TensorEntry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn encode(mut header: Header, tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut offset = 0usize;
    header.tensors = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: DType::F64,
                offset: offset as u64,
            };
            offset = align(offset + t.len() * 8);
            e
        })
        .collect();
    let json = serde_json::to_vec(&header).expect("header serializes");
    let data_start = align(PREAMBLE + json.len());
    let mut out = Vec::with_capacity(data_start + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(data_start, 0);
    for ((_, t), e) in tensors.iter().zip(&header.tensors) {
        out.resize(data_start + e.offset as usize, 0);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.resize(data_start + offset, 0);
    out
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>), ModelError> {
    if bytes.len() < PREAMBLE || &bytes[..4] != MAGIC {
        return Err(ModelError::Format("missing SGKP magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| ModelError::Corrupt("header extends past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| ModelError::Corrupt(format!("header: {e}")))?;
    let data_start = align(header_end);
    let data = bytes.get(data_start..).unwrap_or(&[]);
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != DType::F64 {
            return Err(ModelError::Corrupt(format!("{}: arrays are stored as f64", e.name)));
        }
        let len: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start
            .checked_add(len * 8)
            .filter(|&end| end <= data.len() && start.is_multiple_of(ALIGN))
            .ok_or_else(|| ModelError::Corrupt(format!("{}: array out of bounds", e.name)))?;
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((e.name.clone(), Tensor::from_vec(&e.shape, values)?));
    }
    Ok((header, tensors))
}

pub fn save_tensors(path: &Path, tensors: &[(String, &Tensor)]) -> Result<(), ModelError> {
    let header = Header {
        kind: CheckpointKind::TensorOnly,
        spec: None,
        class_names: Vec::new(),
        pipeline: None,
        tensors: Vec::new(),
    };
    Ok(std::fs::write(path, encode(header, tensors))?)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>, ModelError> {
    Ok(decode(&std::fs::read(path)?)?.1)
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: CheckpointKind::Model,
            spec: Some(self.spec.clone()),
            class_names: self.class_names.clone(),
            pipeline: Some(self.pipeline.clone()),
            tensors: Vec::new(),
        };
        let mut named: Vec<(String, &Tensor)> = self.params.named();
        named.extend(self.stats.named());
        encode(header, &named)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (header, tensors) = decode(bytes)?;
        if header.kind != CheckpointKind::Model {
            return Err(ModelError::Format("file holds tensors, not a model".into()));
        }
        let spec = header
            .spec
            .ok_or_else(|| ModelError::Corrupt("model checkpoint without a spec".into()))?;
        let mut model = Model::build(spec, 0)?;
        model = model
            .with_class_names(header.class_names)
            .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        model.pipeline = header.pipeline.unwrap_or_default();
        let expected: Vec<String> = model
            .params
            .named()
            .into_iter()
            .chain(model.stats.named())
            .map(|(n, _)| n)
            .collect();
        let mut by_name: HashMap<String, Tensor> = tensors.into_iter().collect();
        if by_name.len() != expected.len() {
            return Err(ModelError::Corrupt(format!(
                "{} arrays stored, {} expected",
                by_name.len(),
                expected.len()
            )));
        }
        let slots = model.params.tensors_mut().into_iter().chain(model.stats.tensors_mut());
        for (name, slot) in expected.iter().zip(slots) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| ModelError::Corrupt(format!("missing array {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Corrupt(format!(
                    "{name}: stored shape {:?}, spec needs {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn model() -> Model {
        let mut m = Model::build(ModelSpec::scaled(3), 9).unwrap();
        m.stats.mean[0].data_mut()[0] = 0.125;
        m
    }

    #[test]
    fn round_trip_is_identity() {
        let m = model();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn arrays_are_aligned() {
        let bytes = model().to_bytes();
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[16..16 + hl]).unwrap();
        assert!(header.tensors.iter().all(|e| e.offset % 64 == 0));
        assert_eq!(bytes.len() % 64, 0);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = model().to_bytes();
        let cut = &bytes[..bytes.len() - 100];
        assert!(matches!(Model::from_bytes(cut), Err(ModelError::Corrupt(_))));
        assert!(matches!(Model::from_bytes(&bytes[..20]), Err(ModelError::Corrupt(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = model().to_bytes();
        bytes[4] = 2;
        assert!(matches!(Model::from_bytes(&bytes), Err(ModelError::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(Model::from_bytes(&bytes), Err(ModelError::Format(_))));
    }

    #[test]
    fn tensor_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sgkp");
        let a = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.5);
        let b = Tensor::from_vec(&[1], vec![-1.0]).unwrap();
        save_tensors(&p, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let back = load_tensors(&p).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("b".to_string(), b)]);
        assert!(matches!(Model::load(&p), Err(ModelError::Format(_))));
    }
}
