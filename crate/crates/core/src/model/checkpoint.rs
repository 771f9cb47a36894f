//! Binary checkpoint: magic, version, JSON header, little-endian payload.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

use super::{Component, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FALNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Resumable position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, decimal.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    dtype: DType,
    rng: RngState,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Parameters, optimizer momentum, step counter and RNG position of a run.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub step: u64,
    /// Momentum buffers per component, parallel to the component's parameters.
    pub momentum: BTreeMap<Component, ParamStore<T>>,
    pub rng: RngState,
    /// Free-form run information (phase, training settings).
    pub metadata: serde_json::Value,
}

fn section_name(section: &str, c: Component, name: &str) -> String {
    format!("{section}/{}/{name}", c.as_str())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        let mut put = |full: String, t: &Tensor<T>| {
            let offset = payload.len() as u64;
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            entries.push(TensorEntry {
                name: full,
                dtype: T::DTYPE,
                shape: t.shape().to_vec(),
                offset,
                len: payload.len() as u64 - offset,
            });
        };
        for c in Component::ALL {
            for (name, t) in self.model.params(c).iter() {
                put(section_name("param", c, name), t);
            }
        }
        for (&c, store) in &self.momentum {
            for (name, t) in store.iter() {
                put(section_name("momentum", c, name), t);
            }
        }
        let header = Header {
            config: self.model.config.clone(),
            step: self.step,
            dtype: T::DTYPE,
            rng: self.rng.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!(
                "checkpoint holds {} tensors, requested {}",
                header.dtype.as_str(),
                T::DTYPE.as_str()
            )));
        }
        let payload = &body[hlen..];
        let mut model = Model::<T>::new(header.config, 0)?;
        let mut momentum: BTreeMap<Component, ParamStore<T>> = BTreeMap::new();
        let width = T::DTYPE.byte_width();
        let expected: usize = Component::ALL.iter().map(|&c| model.params(c).len()).sum();
        let found = header.tensors.iter().filter(|e| e.name.starts_with("param/")).count();
        if found != expected {
            return Err(bad(format!("expected {expected} parameter tensors, found {found}")));
        }
        for e in &header.tensors {
            let numel: usize = e.shape.iter().product();
            let (start, len) = (e.offset as usize, e.len as usize);
            if e.dtype != T::DTYPE || len != numel * width || start.checked_add(len).is_none_or(|end| end > payload.len()) {
                return Err(bad(format!("tensor `{}` has an inconsistent index entry", e.name)));
            }
            let data: Vec<T> = payload[start..start + len].chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::from_vec(&e.shape, data)?;
            let mut parts = e.name.splitn(3, '/');
            let (section, comp, name) = match (parts.next(), parts.next(), parts.next()) {
                (Some(s), Some(c), Some(n)) => (s, c, n),
                _ => return Err(bad(format!("malformed tensor name `{}`", e.name))),
            };
            let c = Component::parse(comp).ok_or_else(|| bad(format!("unknown component `{comp}`")))?;
            match section {
                "param" => model.params_mut(c).set(name, t)?,
                "momentum" => {
                    momentum.entry(c).or_default().push(name, t);
                }
                other => return Err(bad(format!("unknown section `{other}`"))),
            }
        }
        Ok(Checkpoint {
            model,
            step: header.step,
            momentum,
            rng: header.rng,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
