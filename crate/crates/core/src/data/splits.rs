//! Low-resource labeled/unlabeled splits.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::conll::Sentence;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// Training-set sizes of the standard low-resource protocol.
pub const DEFAULT_SIZES: [usize; 5] = [150, 300, 750, 1500, 3000];
/// Independent samples drawn per size.
pub const DEFAULT_SEEDS_PER_SIZE: usize = 20;

/// One labeled sample of the training corpus; every other sentence is
/// treated as unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub size: usize,
    pub seed_index: usize,
    /// `derive_seed(master_seed, size, seed_index)`.
    pub seed: u64,
    pub labeled_ids: Vec<usize>,
    pub unlabeled_ids: Vec<usize>,
}

impl SplitSpec {
    /// Labeled sentences and tag-stripped unlabeled sentences, in id order.
    pub fn partition(&self, corpus: &[Sentence]) -> Result<(Vec<Sentence>, Vec<Sentence>)> {
        let by_id: std::collections::HashMap<usize, &Sentence> = corpus.iter().map(|s| (s.id, s)).collect();
        let fetch = |id: &usize| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::Lookup(format!("sentence id {id} not in corpus")))
        };
        let labeled = self
            .labeled_ids
            .iter()
            .map(|id| fetch(id).cloned())
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = self
            .unlabeled_ids
            .iter()
            .map(|id| fetch(id).map(Sentence::unlabeled))
            .collect::<Result<Vec<_>>>()?;
        Ok((labeled, unlabeled))
    }
}

/// Draws `seeds_per_size` uniform sentence samples without replacement for
/// every size. Sample `(size, k)` uses the stream seeded by
/// `derive_seed(master_seed, size, k)`, so the output depends only on the
/// corpus ids and `master_seed`.
pub fn sample_splits(
    train: &[Sentence],
    sizes: &[usize],
    seeds_per_size: usize,
    master_seed: u64,
) -> Result<Vec<SplitSpec>> {
    if seeds_per_size == 0 {
        return Err(Error::Parameter("seeds_per_size must be at least 1".into()));
    }
    let ids: Vec<usize> = train.iter().map(|s| s.id).collect();
    let mut out = Vec::with_capacity(sizes.len() * seeds_per_size);
    for &size in sizes {
        if size > ids.len() {
            return Err(Error::Range {
                requested: size,
                available: ids.len(),
            });
        }
        for k in 0..seeds_per_size {
            let seed = derive_seed(master_seed, size as u64, k as u64);
            let mut rng = Rng::new(seed);
            let picked: BTreeSet<usize> = rng
                .sample_indices(ids.len(), size)
                .into_iter()
                .map(|i| ids[i])
                .collect();
            let mut unlabeled: Vec<usize> = ids.iter().copied().filter(|i| !picked.contains(i)).collect();
            unlabeled.sort_unstable();
            out.push(SplitSpec {
                size,
                seed_index: k,
                seed,
                labeled_ids: picked.into_iter().collect(),
                unlabeled_ids: unlabeled,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    size: usize,
    seed_index: usize,
    seed: u64,
    corpus_size: usize,
    labeled_ids: Vec<usize>,
}

/// One JSON record per line. Ids refer to sentence positions in the source
/// file; the unlabeled set is the complement within `0..corpus_size`.
pub fn write_split_manifest(splits: &[SplitSpec]) -> Result<String> {
    let mut out = String::new();
    for s in splits {
        let rec = ManifestRecord {
            size: s.size,
            seed_index: s.seed_index,
            seed: s.seed,
            corpus_size: s.labeled_ids.len() + s.unlabeled_ids.len(),
            labeled_ids: s.labeled_ids.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_split_manifest(text: &str) -> Result<Vec<SplitSpec>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let labeled: BTreeSet<usize> = rec.labeled_ids.iter().copied().collect();
            if labeled.len() != rec.size || labeled.iter().any(|&id| id >= rec.corpus_size) {
                return Err(Error::parse(i + 1, "labeled ids inconsistent with size/corpus_size"));
            }
            Ok(SplitSpec {
                size: rec.size,
                seed_index: rec.seed_index,
                seed: rec.seed,
                labeled_ids: labeled.iter().copied().collect(),
                unlabeled_ids: (0..rec.corpus_size).filter(|i| !labeled.contains(i)).collect(),
            })
        })
        .collect()
}
