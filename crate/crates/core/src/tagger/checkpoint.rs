//! Self-describing model files.
//!
//! Layout: the magic bytes `CDT1`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then every parameter array as little-endian `f32`
//! in manifest order. Offsets in the manifest are relative to the first
//! byte after the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TaggerConfig;
use super::model::{predict, sentence_logits};
use super::params::TaggerParams;
use crate::data::{Sentence, TagSequence, TagSet, Vocab};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: TaggerConfig,
    pub params: TaggerParams<f32>,
    pub vocab: Vocab,
    pub tagset: TagSet,
    /// Free-form record of how the model was produced.
    pub provenance: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: TaggerConfig,
    tagset: TagSet,
    vocab: Vocab,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    provenance: serde_json::Value,
}

impl ModelBundle {
    pub fn new(config: TaggerConfig, params: TaggerParams<f32>, vocab: Vocab, tagset: TagSet) -> Result<Self> {
        config.validate()?;
        if tagset.len() != config.num_tags {
            return Err(Error::Alignment(format!(
                "tag set has {} labels but the model emits {}",
                tagset.len(),
                config.num_tags
            )));
        }
        if vocab.num_words() != config.word_vocab || vocab.num_chars() != config.char_vocab {
            return Err(Error::Alignment(format!(
                "vocabulary is {}x{} but the model expects {}x{}",
                vocab.num_words(),
                vocab.num_chars(),
                config.word_vocab,
                config.char_vocab
            )));
        }
        Ok(Self {
            config,
            params,
            vocab,
            tagset,
            provenance: serde_json::Value::Null,
        })
    }

    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn predict(&self, sentences: &[Sentence], batch_size: usize) -> Result<Vec<TagSequence>> {
        predict(&self.params, &self.config, &self.vocab, sentences, batch_size)
    }

    pub fn logits(&self, sentences: &[Sentence], batch_size: usize) -> Result<Vec<Vec<f32>>> {
        sentence_logits(&self.params, &self.config, &self.vocab, sentences, batch_size)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut arrays = Vec::new();
        for ((name, shape), t) in self.config.param_shapes().into_iter().zip(self.params.tensors()) {
            let bytes = 4 * t.len() as u64;
            arrays.push(ArrayEntry {
                name: name.to_string(),
                shape,
                offset,
                bytes,
            });
            offset += bytes;
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tagset: self.tagset.clone(),
            vocab: self.vocab.clone(),
            arrays,
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let header_len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
        let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Corruption {
                expected: 8,
                actual: bytes.len() as u64,
            });
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..4]),
                "CDT1"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
        if (bytes.len() as u64) < 8 + header_len {
            return Err(Error::Corruption {
                expected: 8 + header_len,
                actual: bytes.len() as u64,
            });
        }
        let body = 8 + header_len as usize;
        let header: Header =
            serde_json::from_slice(&bytes[8..body]).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} not supported (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let shapes = header.config.param_shapes();
        if shapes.len() != header.arrays.len() {
            return Err(Error::Format("array manifest does not match the config".into()));
        }
        let data_bytes: u64 = header.arrays.iter().map(|a| a.bytes).sum();
        let expected = 8 + header_len + data_bytes;
        if bytes.len() as u64 != expected {
            return Err(Error::Corruption {
                expected,
                actual: bytes.len() as u64,
            });
        }
        let data = &bytes[body..];
        let mut arrays = Vec::with_capacity(shapes.len());
        for ((name, shape), entry) in shapes.iter().zip(&header.arrays) {
            let count: usize = shape.iter().product();
            if entry.name != *name || entry.shape != *shape || entry.bytes != 4 * count as u64 {
                return Err(Error::Format(format!(
                    "array {:?} does not match the config",
                    entry.name
                )));
            }
            let start = entry.offset as usize;
            let end = start + entry.bytes as usize;
            if end > data.len() {
                return Err(Error::Corruption {
                    expected: expected - data.len() as u64 + end as u64,
                    actual: bytes.len() as u64,
                });
            }
            arrays.push(
                data[start..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        let params = TaggerParams::from_arrays(&header.config, arrays)?;
        Ok(Self::new(header.config, params, header.vocab, header.tagset)?.with_provenance(header.provenance))
    }
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}
