//! Binary model container.
//!
//! Layout: magic `RSNS`, `u8` version, `u32` header length, header JSON,
//! `u32` tensor count, then per tensor `u16` name length, name, `u8` rank,
//! `u32` extents and a little-endian `f32` payload; finally a CRC-32 of all
//! preceding bytes. Integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::LabelSchema;
use crate::neural::{layout, Model, ModelConfig};
use crate::textprep::Preprocessor;
use crate::vectorize::Vocabulary;

use super::{Result, TrainingError};

pub const MAGIC: &[u8; 4] = b"RSNS";
pub const VERSION: u8 = 1;

/// Decoded container: header JSON plus named tensors in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn encode(header: &str, tensors: &[(&str, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let header_len = u32::try_from(header.len()).map_err(|_| corrupt("header too large"))?;
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| corrupt("tensor name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| corrupt("rank too large"))?);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn corrupt(msg: &str) -> TrainingError {
    TrainingError::CorruptContainer(msg.to_string())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < MAGIC.len() + 1 + 4 + 4 + 4 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u8()?;
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(hlen)?).map_err(|_| corrupt("header is not UTF-8"))?.to_string();
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| corrupt("tensor name is not UTF-8"))?.to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| corrupt("extent overflow"))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("extent overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Container { header, tensors })
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Header of a neural checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralHeader {
    pub section: String,
    pub model: ModelConfig,
    pub vocabulary: Vocabulary,
    pub labels: LabelSchema,
    pub preprocessor: Preprocessor,
}

/// Everything needed to run inference with a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralArtifact {
    pub model: Model<f32>,
    pub vocabulary: Vocabulary,
    pub labels: LabelSchema,
    pub preprocessor: Preprocessor,
}

impl NeuralArtifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = NeuralHeader {
            section: "neural".into(),
            model: self.model.config().clone(),
            vocabulary: self.vocabulary.clone(),
            labels: self.labels.clone(),
            preprocessor: self.preprocessor.clone(),
        };
        let json = serde_json::to_string(&header)?;
        let named = self.model.named_tensors();
        let tensors: Vec<(&str, &Tensor<f32>)> = named.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        encode(&json, &tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode(bytes)?;
        let header: NeuralHeader = serde_json::from_str(&c.header).map_err(|e| corrupt(&format!("header: {e}")))?;
        let model = model_from_container(&header.model, c.tensors)?;
        Ok(Self {
            model,
            vocabulary: header.vocabulary,
            labels: header.labels,
            preprocessor: header.preprocessor,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads the tensors of a checkpoint into the architecture described by
    /// `config`, failing unless the tensor sets agree exactly.
    pub fn load_as(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let c = decode(&std::fs::read(path)?)?;
        let header: NeuralHeader = serde_json::from_str(&c.header).map_err(|e| corrupt(&format!("header: {e}")))?;
        let model = model_from_container(config, c.tensors)?;
        Ok(Self {
            model,
            vocabulary: header.vocabulary,
            labels: header.labels,
            preprocessor: header.preprocessor,
        })
    }
}

/// Reads the section tag of a container without interpreting the rest.
pub fn section_of(bytes: &[u8]) -> Result<String> {
    #[derive(Deserialize)]
    struct Tag {
        section: String,
    }
    let c = decode(bytes)?;
    let tag: Tag = serde_json::from_str(&c.header).map_err(|e| corrupt(&format!("header: {e}")))?;
    Ok(tag.section)
}

fn model_from_container(config: &ModelConfig, tensors: Vec<(String, Tensor<f32>)>) -> Result<Model<f32>> {
    let specs = layout(config)?;
    let mut expected: Vec<(String, Vec<usize>)> = specs.into_iter().map(|s| (s.name, s.shape)).collect();
    let mut found: Vec<(String, Vec<usize>)> = tensors.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    expected.sort();
    found.sort();
    if expected != found {
        let missing: Vec<String> = expected.iter().filter(|e| !found.contains(e)).map(|e| e.0.clone()).collect();
        let unexpected: Vec<String> = found.iter().filter(|f| !expected.contains(f)).map(|f| f.0.clone()).collect();
        return Err(TrainingError::ArchitectureMismatch { missing, unexpected });
    }
    Ok(Model::from_tensors(config, tensors.into_iter().collect())?)
}
