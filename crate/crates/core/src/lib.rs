//! Compact named-entity taggers trained from scarce labels.
//!
//! The crate trains a character-CNN + BiLSTM tagger with either a softmax or
//! a CRF output layer. Besides plain supervised training it can learn from
//! unlabeled sentences using per-token logits exported by a larger teacher:
//! the student matches the teacher's temperature-softened distribution and
//! fits the teacher's argmax labels where no gold labels exist.
//!
//! Modules:
//! - [`data`]: CoNLL parsing, tag schemes, vocabularies, embeddings, splits.
//! - [`numerics`]: tensors, reverse-mode graph, losses, Adam, gradient checks.
//! - [`tagger`]: the compact model, CRF math and checkpoints.
//! - [`distill`]: teacher logits, the combined objective and training loops.
//! - [`eval`]: span extraction, entity F1 and the experiment grid.
//! - [`bench`]: inference timing and speedup tables.
//! - [`cli`]: the `distill-ner` command line.

// `!(x > 0)` is deliberate: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the recurrences they implement.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod rng;
pub mod tagger;

pub use error::{Error, Result};
