//! The compact tagger: character CNN and word embeddings feeding a BiLSTM,
//! topped by a softmax or CRF classifier.

mod checkpoint;
mod config;
pub mod crf;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelBundle, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Classifier, TaggerConfig};
pub use crf::{crf_log_partition, crf_nll, crf_nll_loss, crf_nll_with_grad, crf_path_score, viterbi_decode};
pub use model::{
    decode, decode_sentence, emission_graph, forward, predict, sentence_logits, EmissionBatch, EncodedBatch,
    MAX_WORD_CHARS,
};
pub use params::{slot, TaggerParams};
