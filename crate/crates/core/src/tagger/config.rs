use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output layer of the tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Softmax,
    Crf,
}

impl std::fmt::Display for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classifier::Softmax => "softmax",
            Classifier::Crf => "crf",
        })
    }
}

/// Topology of the compact tagger. Every array shape follows from these
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
    pub classifier: Classifier,
    pub dropout_rate: f64,
    pub word_vocab: usize,
    pub char_vocab: usize,
    pub num_tags: usize,
}

impl TaggerConfig {
    /// Default student topology for the given vocabulary and label sizes.
    pub fn new(word_vocab: usize, char_vocab: usize, num_tags: usize, classifier: Classifier) -> Self {
        Self {
            word_dim: 100,
            char_dim: 30,
            char_filters: 30,
            char_window: 3,
            lstm_hidden: 200,
            classifier,
            dropout_rate: 0.5,
            word_vocab,
            char_vocab,
            num_tags,
        }
    }

    /// Same body with the recurrent layer widened, used as a stand-in
    /// teacher.
    pub fn teacher_sized(mut self) -> Self {
        self.lstm_hidden *= 2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("char_window", self.char_window),
            ("lstm_hidden", self.lstm_hidden),
            ("word_vocab", self.word_vocab),
            ("char_vocab", self.char_vocab),
            ("num_tags", self.num_tags),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.char_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "char_window must be odd, got {}",
                self.char_window
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.word_vocab < 2 || self.char_vocab < 2 {
            return Err(Error::Config("vocabularies must include PAD and UNK".into()));
        }
        Ok(())
    }

    /// Width of the per-word representation fed to the BiLSTM.
    pub fn word_repr_dim(&self) -> usize {
        self.word_dim + self.char_filters
    }

    /// Named array shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let h4 = 4 * self.lstm_hidden;
        let input = self.word_repr_dim();
        let mut shapes = vec![
            ("word_embeddings", vec![self.word_vocab, self.word_dim]),
            ("char_embeddings", vec![self.char_vocab, self.char_dim]),
            (
                "char_conv_kernel",
                vec![self.char_window * self.char_dim, self.char_filters],
            ),
            ("char_conv_bias", vec![self.char_filters]),
            ("lstm_fwd_input", vec![input, h4]),
            ("lstm_fwd_hidden", vec![self.lstm_hidden, h4]),
            ("lstm_fwd_bias", vec![h4]),
            ("lstm_bwd_input", vec![input, h4]),
            ("lstm_bwd_hidden", vec![self.lstm_hidden, h4]),
            ("lstm_bwd_bias", vec![h4]),
            ("emission_weight", vec![2 * self.lstm_hidden, self.num_tags]),
            ("emission_bias", vec![self.num_tags]),
        ];
        if self.classifier == Classifier::Crf {
            shapes.push(("crf_transitions", vec![self.num_tags + 2, self.num_tags + 2]));
        }
        shapes
    }

    /// Total learnable scalars, from the closed-form shape list.
    pub fn count_params(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
