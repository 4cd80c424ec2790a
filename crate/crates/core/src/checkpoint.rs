//! Single-file parameter checkpoints: an 8-byte magic, the little-endian length of a JSON
//! manifest, the manifest, then every tensor as little-endian f32 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, ModelConfig, ParamStore};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::text::Vocab;
use crate::util::{read_file, write_atomic};

const MAGIC: &[u8; 8] = b"ADAPTCKP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

/// Where a checkpoint came from; stage-2 training checks it against its inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: u8,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_spl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderSpec>,
    /// SHA-256 of the prompt base used in training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_base: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: Agent,
    pub provenance: Provenance,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        for (name, m) in self.agent.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [m.rows, m.cols],
                dtype: "f32le".into(),
                offset: blob.len(),
            });
            for &x in &m.data {
                blob.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            model: self.agent.cfg.clone(),
            vocab: self.agent.vocab.tokens().to_vec(),
            tensors,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::format("checkpoint", d);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::format("checkpoint manifest", e))?;
        let blob = &bytes[16 + len..];
        let mut params = ParamStore::new();
        for t in &manifest.tensors {
            if t.dtype != "f32le" {
                return Err(bad(&format!("unsupported dtype {}", t.dtype)));
            }
            let n = t.shape[0] * t.shape[1];
            let raw = blob
                .get(t.offset..t.offset + 4 * n)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", t.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            params.add(t.name.clone(), Mat::from_vec(t.shape[0], t.shape[1], data));
        }
        let vocab = Vocab::new(manifest.vocab);
        Ok(Self {
            agent: Agent::from_parts(manifest.model, vocab, params)?,
            provenance: manifest.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
