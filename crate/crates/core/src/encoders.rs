//! Dual image/text encoders and the agent-side visual projection.
//!
//! [`MockClip`] stands in for a pretrained contrastive model: both towers are linear maps of a
//! shared label geometry, so a phrase naming a label lands near every view that shows it.
//! [`TableEncoder`] serves embeddings computed elsewhere, which is how a real model plugs in.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::text::PERIOD;
use crate::util::{
    decode_f32, dot, encode_f32, gaussian_vector, mix, norm, normalize, read_text, str_seed,
    to_f32, to_f64, write_atomic,
};
use crate::world::{ViewImage, WorldConfig};

const PROJECTION_STREAM: u64 = 0x5052_4f4a;
const TOKEN_STREAM: u64 = 0x0054_4f4b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Mock,
    External,
}

/// Declares which encoder produced a set of embeddings. Stored with prompt bases and
/// checkpoints so mismatched artifacts can be refused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub dim: usize,
    pub seed: u64,
    /// Weight of non-label words in mock text embeddings.
    pub text_noise: f64,
    /// Embedding table for the external kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Mock,
            dim: 64,
            seed: 11,
            text_noise: 0.4,
            table: None,
        }
    }
}

pub trait DualEncoder: Send + Sync {
    fn spec(&self) -> &EncoderSpec;

    fn dim(&self) -> usize {
        self.spec().dim
    }

    /// Unit-norm embedding of one view.
    fn encode_image(&self, view: &ViewImage) -> Result<Vec<f64>>;

    /// Unit-norm embedding of a tokenized phrase.
    fn encode_text(&self, tokens: &[String]) -> Result<Vec<f64>>;
}

pub fn build_encoder(spec: &EncoderSpec, world: &WorldConfig) -> Result<Box<dyn DualEncoder>> {
    match spec.kind {
        EncoderKind::Mock => Ok(Box::new(MockClip::new(spec.clone(), world)?)),
        EncoderKind::External => {
            let path = spec
                .table
                .as_ref()
                .ok_or_else(|| Error::Config("encoder.kind = external needs encoder.table".into()))?;
            Ok(Box::new(TableEncoder::load(spec.clone(), path)?))
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

fn is_punctuation(tok: &str) -> bool {
    tok == PERIOD || tok == ","
}

/// Seeded label-subspace encoder.
#[derive(Debug, Clone)]
pub struct MockClip {
    spec: EncoderSpec,
    world: WorldConfig,
    /// `dim × feature_dim` projection shared by both towers.
    projection: Mat,
}

impl MockClip {
    pub fn new(spec: EncoderSpec, world: &WorldConfig) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::Config("encoder.dim must be positive".into()));
        }
        let d_f = world.feature_dim;
        let mut data = Vec::with_capacity(spec.dim * d_f);
        for r in 0..spec.dim {
            // rows scaled so the projection roughly preserves norms
            let row = gaussian_vector(mix(&[PROJECTION_STREAM, spec.seed, r as u64]), d_f);
            let s = (d_f as f64 / spec.dim as f64).sqrt();
            data.extend(row.into_iter().map(|x| x * s));
        }
        Ok(Self {
            projection: Mat::from_vec(spec.dim, d_f, data),
            spec,
            world: world.clone(),
        })
    }

    fn is_label(&self, tok: &str) -> bool {
        self.world.rooms.iter().any(|r| r == tok) || self.world.objects.iter().any(|o| o == tok)
    }

    fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = (0..self.spec.dim)
            .map(|r| dot(self.projection.row(r), raw))
            .collect();
        normalize(&mut out)?;
        Ok(out)
    }
}

impl DualEncoder for MockClip {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode_image(&self, view: &ViewImage) -> Result<Vec<f64>> {
        if view.feature.len() != self.world.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.world.feature_dim,
                got: view.feature.len(),
            });
        }
        self.project(&to_f64(&view.feature))
    }

    fn encode_text(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let mut raw = vec![0.0; self.world.feature_dim];
        let mut words = 0;
        for tok in tokens.iter().filter(|t| !is_punctuation(t)) {
            words += 1;
            let (dir, w) = if self.is_label(tok) {
                (self.world.label_direction(tok), 1.0)
            } else {
                let seed = mix(&[TOKEN_STREAM, self.spec.seed, str_seed(tok)]);
                (gaussian_vector(seed, self.world.feature_dim), self.spec.text_noise)
            };
            for (x, g) in raw.iter_mut().zip(dir) {
                *x += w * g;
            }
        }
        if words == 0 {
            return Err(Error::EmptyPhrase);
        }
        self.project(&raw)
    }
}

/// Stable key of a view's content, used to look up precomputed image embeddings.
pub fn view_key(view: &ViewImage) -> String {
    let mut h = Sha256::new();
    for x in &view.feature {
        h.update(x.to_le_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    /// `image` or `text`.
    pub modality: String,
    /// [`view_key`] for images, space-joined tokens for text.
    pub key: String,
    /// Base64 of little-endian f32 values.
    pub emb: String,
}

/// Serves precomputed embeddings from a JSON-lines table.
#[derive(Debug, Clone)]
pub struct TableEncoder {
    spec: EncoderSpec,
    images: HashMap<String, Vec<f64>>,
    texts: HashMap<String, Vec<f64>>,
}

impl TableEncoder {
    pub fn load(spec: EncoderSpec, path: &Path) -> Result<Self> {
        let mut enc = Self {
            spec,
            images: HashMap::new(),
            texts: HashMap::new(),
        };
        for (i, line) in read_text(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TableEntry = serde_json::from_str(line)
                .map_err(|err| Error::format(format!("embedding table line {}", i + 1), err))?;
            let v = to_f64(&decode_f32(&e.emb)?);
            if v.len() != enc.spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: enc.spec.dim,
                    got: v.len(),
                });
            }
            match e.modality.as_str() {
                "image" => enc.images.insert(e.key, v),
                "text" => enc.texts.insert(e.key, v),
                other => {
                    return Err(Error::format(
                        "embedding table",
                        format!("unknown modality '{other}'"),
                    ))
                }
            };
        }
        Ok(enc)
    }

    fn lookup(map: &HashMap<String, Vec<f64>>, key: &str, what: &str) -> Result<Vec<f64>> {
        let mut v = map
            .get(key)
            .cloned()
            .ok_or_else(|| Error::format("embedding table", format!("no {what} entry for '{key}'")))?;
        normalize(&mut v)?;
        Ok(v)
    }
}

impl DualEncoder for TableEncoder {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn encode_image(&self, view: &ViewImage) -> Result<Vec<f64>> {
        Self::lookup(&self.images, &view_key(view), "image")
    }

    fn encode_text(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let words: Vec<&str> = tokens
            .iter()
            .map(String::as_str)
            .filter(|t| !is_punctuation(t))
            .collect();
        if words.is_empty() {
            return Err(Error::EmptyPhrase);
        }
        Self::lookup(&self.texts, &words.join(" "), "text")
    }
}

/// Write an embedding table covering `views` and `phrases` with any encoder.
pub fn export_table(
    encoder: &dyn DualEncoder,
    views: &[&ViewImage],
    phrases: &[Vec<String>],
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    let mut push = |modality: &str, key: String, v: Vec<f64>| -> Result<()> {
        let e = TableEntry {
            modality: modality.into(),
            key,
            emb: encode_f32(&to_f32(&v)),
        };
        out.push_str(&serde_json::to_string(&e)?);
        out.push('\n');
        Ok(())
    };
    for v in views {
        push("image", view_key(v), encoder.encode_image(v)?)?;
    }
    for p in phrases {
        let key = p
            .iter()
            .filter(|t| !is_punctuation(t))
            .cloned()
            .collect::<Vec<_>>()
            .join(" ");
        push("text", key, encoder.encode_text(p)?)?;
    }
    write_atomic(path, out.as_bytes())
}

/// Linear projection of raw view features into the model's hidden space.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoder {
    /// `feature_dim × hidden`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl VisualEncoder {
    pub fn new(weight: Mat, bias: Vec<f64>) -> Self {
        assert_eq!(weight.cols, bias.len(), "bias width");
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn project_view(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: raw.len(),
            });
        }
        let mut out = self.bias.clone();
        for (k, &x) in raw.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.weight.row(k)) {
                *o += x * w;
            }
        }
        Ok(out)
    }
}
