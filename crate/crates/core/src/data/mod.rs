//! Corpus loading, tag schemes, vocabularies, embeddings and splits.

mod conll;
mod embeddings;
mod splits;
pub mod synth;
mod tags;
mod vocab;

pub use conll::{parse_conll, parse_conll_tokens, read_conll, read_conll_tokens, write_conll, Sentence};
pub use embeddings::{load_embeddings, parse_embeddings, random_embeddings, read_embedding_words, EmbeddingTable};
pub use splits::{
    read_split_manifest, sample_splits, write_split_manifest, SplitSpec, DEFAULT_SEEDS_PER_SIZE, DEFAULT_SIZES,
};
pub use synth::SyntheticNer;
pub use tags::{convert_iob1_to_bio2, parse_tag, TagKind, TagSequence, TagSet, OUTSIDE};
pub use vocab::{build_vocab, Vocab, PAD, UNK};
