//! Config-file schema and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::eval::Variant;
use crate::tagger::{Classifier, TaggerConfig};

/// Tagger topology before vocabulary and label sizes are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub lstm_hidden: usize,
    pub classifier: Classifier,
    /// Double the recurrent width.
    pub teacher_sized: bool,
    /// Pretrained word vectors (text format, one word per line).
    pub embeddings: Option<PathBuf>,
}

impl Default for ModelDims {
    fn default() -> Self {
        let c = TaggerConfig::new(2, 2, 1, Classifier::Crf);
        Self {
            word_dim: c.word_dim,
            char_dim: c.char_dim,
            char_filters: c.char_filters,
            char_window: c.char_window,
            lstm_hidden: c.lstm_hidden,
            classifier: Classifier::Crf,
            teacher_sized: false,
            embeddings: None,
        }
    }
}

impl ModelDims {
    pub fn tagger_config(&self, word_vocab: usize, char_vocab: usize, num_tags: usize, dropout: f64) -> TaggerConfig {
        let mut c = TaggerConfig::new(word_vocab, char_vocab, num_tags, self.classifier);
        c.word_dim = self.word_dim;
        c.char_dim = self.char_dim;
        c.char_filters = self.char_filters;
        c.char_window = self.char_window;
        c.lstm_hidden = self.lstm_hidden;
        c.dropout_rate = dropout;
        if self.teacher_sized {
            c = c.teacher_sized();
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub variants: Vec<String>,
    pub workers: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            variants: Variant::standard().into_iter().map(|v| v.name).collect(),
            workers: 1,
        }
    }
}

/// Everything a run can be configured with. Loaded from TOML, then
/// overridden by command-line flags; the resolved value is written into
/// every report and checkpoint the run produces.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelDims,
    pub train: DistillConfig,
    pub bench: BenchConfig,
    pub grid: GridSettings,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

/// Overwrites `target` when the flag was given.
pub(crate) fn set<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let c: FileConfig = toml::from_str("[model]\nlstm_hidden = 64\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.model.lstm_hidden, 64);
        assert_eq!(c.model.word_dim, 100);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.bench.batch_sizes, vec![1, 32, 64, 128]);
        assert!(toml::from_str::<FileConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn teacher_sized_dims() {
        let d = ModelDims {
            teacher_sized: true,
            ..ModelDims::default()
        };
        assert_eq!(d.tagger_config(10, 10, 3, 0.5).lstm_hidden, 400);
    }
}
