//! Pretrained word vectors in the `word v1 ... vdim` text format.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::vocab::{Vocab, PAD};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// `[vocab.num_words(), dim]`, row-major.
    pub vectors: Vec<f32>,
    /// Vocabulary rows filled from the file.
    pub hit_count: usize,
    /// File lines ignored because their width was wrong.
    pub skipped_lines: usize,
}

/// Uniform initialisation in `±sqrt(3 / dim)`; the padding row is zero.
pub fn random_embeddings(rows: usize, dim: usize, rng: &mut Rng) -> Vec<f32> {
    let bound = (3.0 / dim as f64).sqrt();
    let mut out = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        for _ in 0..dim {
            out.push(if r == PAD {
                0.0
            } else {
                rng.uniform_range(-bound, bound) as f32
            });
        }
    }
    out
}

/// Reads vectors for `vocab` from `reader`. Words missing from the file
/// fall back to their lowercase form, then to random initialisation.
pub fn parse_embeddings<R: BufRead>(reader: R, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Parameter("embedding dim must be positive".into()));
    }
    let mut needed: HashSet<String> = HashSet::new();
    for w in vocab.words() {
        needed.insert(w.clone());
        needed.insert(w.to_lowercase());
    }
    let mut found: HashMap<String, Vec<f32>> = HashMap::new();
    let mut skipped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<embeddings>", e))?;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(word) = fields.next() else { continue };
        if !needed.contains(word) {
            continue;
        }
        let values: std::result::Result<Vec<f32>, _> = fields.map(str::parse::<f32>).collect();
        match values {
            Ok(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => {
                found.insert(word.to_string(), v);
            }
            _ => {
                log::warn!("embeddings line {}: expected {dim} floats, skipping", i + 1);
                skipped += 1;
            }
        }
    }
    let mut rng = Rng::new(seed);
    let mut vectors = random_embeddings(vocab.num_words(), dim, &mut rng);
    let mut hits = 0usize;
    for (i, w) in vocab.words().iter().enumerate() {
        let row = i + 2;
        let v = found.get(w).or_else(|| found.get(&w.to_lowercase()));
        if let Some(v) = v {
            vectors[row * dim..(row + 1) * dim].copy_from_slice(v);
            hits += 1;
        }
    }
    Ok(EmbeddingTable {
        dim,
        vectors,
        hit_count: hits,
        skipped_lines: skipped,
    })
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file), vocab, dim, seed)
}

/// The set of words listed in an embedding file.
pub fn read_embedding_words(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(w) = line.split(' ').find(|f| !f.is_empty()) {
            out.insert(w.to_string());
        }
    }
    Ok(out)
}
