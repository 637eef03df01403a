//! Sentence embeddings and their projection into the text-relevant latent.
//!
//! The default [`TemplateEncoder`] recognises the colour, size and shape
//! words of the scene captions and embeds the one-hot attribute slots
//! through a fixed random map with orthonormal columns, so distinct
//! attribute combinations land far apart on the unit sphere. Sentences
//! without attribute words fall back to a hashed bag of words.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use candle_core::Tensor;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{LatentConfig, RepNetConfig, TextConfig, TextEncoderKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, Builder, Mlp};
use crate::rng;
use crate::scenes::{parse_attributes, tokenize, Attributes, COLOR_WORDS, SHAPE_WORDS, SIZE_WORDS};

pub const EMBED_DIM: usize = 512;
/// colour one-hot ⊕ size one-hot ⊕ shape one-hot.
pub const SLOT_DIM: usize = COLOR_WORDS.len() + SIZE_WORDS.len() + SHAPE_WORDS.len();

/// Unit-norm sentence embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding(Vec<f64>);

impl TextEmbedding {
    /// Normalizes `v` to unit length. Fails on a zero or non-finite vector.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        if v.len() != EMBED_DIM {
            return Err(Error::validation(format!(
                "text embeddings are {EMBED_DIM}-dimensional, got {}",
                v.len()
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::validation("cannot normalize a zero or non-finite embedding"));
        }
        Ok(Self(v.into_iter().map(|x| x / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &TextEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Stacks embeddings into an `(N, 512)` tensor.
    pub fn batch_tensor(embs: &[TextEmbedding], dtype: candle_core::DType) -> Result<Tensor> {
        let data: Vec<f64> = embs.iter().flat_map(|e| e.0.iter().copied()).collect();
        Ok(Tensor::from_vec(data, (embs.len(), EMBED_DIM), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
    }
}

/// A frozen text encoder.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, text: &str) -> Result<TextEmbedding>;
    fn name(&self) -> &str;
    fn deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct TemplateEncoder {
    /// `512 x SLOT_DIM`, orthonormal columns.
    slot_map: DMatrix<f64>,
    seed: u64,
}

impl TemplateEncoder {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let gauss = DMatrix::from_vec(EMBED_DIM, SLOT_DIM, rng::normal_vec(&mut r, EMBED_DIM * SLOT_DIM));
        let slot_map = gauss.qr().q();
        Self { slot_map, seed }
    }

    pub fn slot_map(&self) -> &DMatrix<f64> {
        &self.slot_map
    }

    /// Slot vector of a parsed caption: one-hots for the attributes present.
    pub fn slots(attrs: &Attributes) -> [f64; SLOT_DIM] {
        let mut s = [0.0; SLOT_DIM];
        if let Some(c) = attrs.color {
            s[c] = 1.0;
        }
        if let Some(z) = attrs.size {
            s[COLOR_WORDS.len() + z] = 1.0;
        }
        if let Some(h) = attrs.shape {
            s[COLOR_WORDS.len() + SIZE_WORDS.len() + h] = 1.0;
        }
        s
    }

    /// Embeds an arbitrary (possibly soft) slot vector.
    pub fn embed_slots(&self, slots: &[f64; SLOT_DIM]) -> Result<TextEmbedding> {
        let s = nalgebra::DVector::from_column_slice(slots);
        TextEmbedding::normalized((&self.slot_map * s).as_slice().to_vec())
    }

    fn bag_of_words(&self, text: &str) -> Result<TextEmbedding> {
        let mut acc = vec![0.0; EMBED_DIM];
        let mut tokens = tokenize(text);
        if tokens.is_empty() {
            tokens.push(String::new());
        }
        for t in tokens {
            let mut r = rng::stream(self.seed ^ fnv1a(t.as_bytes()), 1);
            for (a, g) in acc.iter_mut().zip(rng::normal_vec(&mut r, EMBED_DIM)) {
                *a += g;
            }
        }
        TextEmbedding::normalized(acc)
    }
}

impl TextEncoder for TemplateEncoder {
    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        let attrs = parse_attributes(text);
        if attrs.is_empty() {
            return self.bag_of_words(text);
        }
        self.embed_slots(&Self::slots(&attrs))
    }

    fn name(&self) -> &str {
        "template"
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Deserialize, Serialize)]
struct AdapterRow {
    text: String,
    embedding: Vec<f64>,
}

/// Looks sentences up in embeddings exported from an external text tower.
///
/// The table is JSONL, one `{"text": ..., "embedding": [512 floats]}` per
/// line. Lookups match on the tokenized sentence.
#[derive(Debug, Clone)]
pub struct ClipAdapter {
    table: HashMap<String, TextEmbedding>,
}

impl ClipAdapter {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::AdapterUnavailable(format!("{}: {e}", path.display())))?;
        let mut table = HashMap::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::AdapterUnavailable(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: AdapterRow =
                serde_json::from_str(&line).map_err(|e| Error::AdapterUnavailable(e.to_string()))?;
            table.insert(tokenize(&row.text).join(" "), TextEmbedding::normalized(row.embedding)?);
        }
        Ok(Self { table })
    }
}

impl TextEncoder for ClipAdapter {
    fn encode(&self, text: &str) -> Result<TextEmbedding> {
        self.table
            .get(&tokenize(text).join(" "))
            .cloned()
            .ok_or_else(|| Error::AdapterUnavailable(format!("no embedding for `{text}`")))
    }

    fn name(&self) -> &str {
        "clip_adapter"
    }
}

/// Builds the configured encoder. An unavailable adapter degrades to the
/// template encoder with a warning.
pub fn build_text_encoder(cfg: &TextConfig) -> Box<dyn TextEncoder> {
    match cfg.text_encoder {
        TextEncoderKind::Template => Box::new(TemplateEncoder::new(cfg.seed)),
        TextEncoderKind::ClipAdapter => match ClipAdapter::load(Path::new(&cfg.clip_model_path)) {
            Ok(a) => Box::new(a),
            Err(e) => {
                log::warn!("{e}; falling back to the template text encoder");
                Box::new(TemplateEncoder::new(cfg.seed))
            }
        },
    }
}

/// Writes `text,e0,...,e511` rows.
pub fn write_embeddings_csv(path: &Path, rows: &[(String, TextEmbedding)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let mut header = vec!["text".to_string()];
    header.extend((0..EMBED_DIM).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| Error::io(path, e.into()))?;
    for (text, emb) in rows {
        let mut rec = vec![text.clone()];
        rec.extend(emb.as_slice().iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Dense chain from a sentence embedding to `z_desc`, the text-derived
/// substitute for the text-relevant latent.
#[derive(Debug, Clone)]
pub struct TextProjector {
    pub mlp: Mlp,
}

impl TextProjector {
    pub fn new(b: &mut Builder, repnet: &RepNetConfig, latent: &LatentConfig) -> Result<Self> {
        let mut widths = vec![EMBED_DIM];
        widths.extend(&repnet.text_proj);
        widths.push(latent.dim_tr);
        Ok(Self {
            mlp: Mlp::new(b, &widths, Activation::LeakyRelu(0.2))?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    /// `(N, 512)` → `(N, dim_tr)`.
    pub fn project(&self, w_desc: &Tensor) -> Result<Tensor> {
        self.mlp.forward(w_desc)
    }

    pub fn detach(&self) -> Self {
        Self { mlp: self.mlp.detach() }
    }
}
