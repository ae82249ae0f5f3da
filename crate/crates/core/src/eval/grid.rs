//! The low-resource experiment grid: every split is trained with every
//! recipe, scored on test, and aggregated per training-set size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::spans::evaluate_ids;
use crate::data::{EmbeddingTable, Sentence, SplitSpec, TagSet, Vocab};
use crate::distill::{train_baseline, train_distilled, DistillConfig, TeacherStore, TrainSetup};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tagger::{save_checkpoint, Classifier, TaggerConfig};

/// How a grid cell is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    /// Labeled data only.
    Baseline,
    /// Labeled data plus teacher-labeled unlabeled data.
    Distilled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub recipe: Recipe,
    pub classifier: Classifier,
}

impl Variant {
    pub fn new(recipe: Recipe, classifier: Classifier) -> Self {
        let prefix = match recipe {
            Recipe::Baseline => "baseline",
            Recipe::Distilled => "distilled",
        };
        Self {
            name: format!("{prefix}-{classifier}"),
            recipe,
            classifier,
        }
    }

    /// Both recipes crossed with both classifiers.
    pub fn standard() -> Vec<Self> {
        [Recipe::Baseline, Recipe::Distilled]
            .into_iter()
            .flat_map(|r| [Classifier::Softmax, Classifier::Crf].map(|c| Self::new(r, c)))
            .collect()
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (recipe, cls) = s
            .split_once('-')
            .ok_or_else(|| Error::Parameter(format!("variant {s:?} is not <recipe>-<classifier>")))?;
        let recipe = match recipe {
            "baseline" => Recipe::Baseline,
            "distilled" => Recipe::Distilled,
            _ => return Err(Error::Parameter(format!("unknown recipe {recipe:?}"))),
        };
        let classifier = match cls {
            "softmax" => Classifier::Softmax,
            "crf" => Classifier::Crf,
            _ => return Err(Error::Parameter(format!("unknown classifier {cls:?}"))),
        };
        Ok(Self::new(recipe, classifier))
    }
}

/// Outcome of one (split, variant) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub size: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub variant: String,
    pub dev_f1: Option<f64>,
    pub test_f1: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub error: Option<String>,
}

/// Test F1 statistics of one variant at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub variant: String,
    pub cells: usize,
    pub completed: usize,
    pub mean: f64,
    /// Sample standard deviation (0 for fewer than two cells).
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub summary: Vec<SizeSummary>,
    /// True when any cell failed.
    pub partial: bool,
}

impl GridReport {
    pub fn from_cells(cells: Vec<GridCell>) -> Self {
        let mut groups: BTreeMap<(usize, String), Vec<&GridCell>> = BTreeMap::new();
        for c in &cells {
            groups.entry((c.size, c.variant.clone())).or_default().push(c);
        }
        let summary = groups
            .into_iter()
            .map(|((size, variant), group)| {
                let f1s: Vec<f64> = group.iter().filter_map(|c| c.test_f1).collect();
                let n = f1s.len();
                let mean = if n == 0 {
                    f64::NAN
                } else {
                    f1s.iter().sum::<f64>() / n as f64
                };
                let std = if n < 2 {
                    0.0
                } else {
                    (f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                };
                SizeSummary {
                    size,
                    variant,
                    cells: group.len(),
                    completed: n,
                    mean,
                    std,
                    min: f1s.iter().copied().fold(f64::INFINITY, f64::min),
                    max: f1s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect();
        let partial = cells.iter().any(|c| c.error.is_some());
        Self {
            cells,
            summary,
            partial,
        }
    }

    /// One JSON record per cell.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.cells {
            out.push_str(&serde_json::to_string(c).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Fixed-width table of mean ± std test F1, one row per size.
    pub fn render_table(&self) -> String {
        let mut variants: Vec<&str> = Vec::new();
        for s in &self.summary {
            if !variants.contains(&s.variant.as_str()) {
                variants.push(&s.variant);
            }
        }
        let mut out = format!("{:>6}", "size");
        for v in &variants {
            let _ = write!(out, " {v:>20}");
        }
        out.push('\n');
        let mut sizes: Vec<usize> = self.summary.iter().map(|s| s.size).collect();
        sizes.dedup();
        for size in sizes {
            let _ = write!(out, "{size:>6}");
            for v in &variants {
                let cell = self
                    .summary
                    .iter()
                    .find(|s| s.size == size && s.variant == *v)
                    .filter(|s| s.completed > 0)
                    .map(|s| format!("{:.2} ± {:.2}", s.mean, s.std))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " {cell:>20}");
            }
            out.push('\n');
        }
        if self.partial {
            let failed = self.cells.iter().filter(|c| c.error.is_some()).count();
            let _ = writeln!(out, "partial: {failed} cell(s) failed");
        }
        out
    }
}

/// Everything a grid run needs.
#[derive(Debug, Clone)]
pub struct GridJob<'a> {
    /// Training corpus; split ids refer to its sentence ids.
    pub corpus: &'a [Sentence],
    pub dev: &'a [Sentence],
    pub test: &'a [Sentence],
    pub splits: &'a [SplitSpec],
    pub variants: &'a [Variant],
    pub teacher: Option<&'a TeacherStore>,
    /// Classifier is overridden per variant.
    pub tagger: &'a TaggerConfig,
    pub vocab: &'a Vocab,
    pub tagset: &'a TagSet,
    pub embeddings: Option<&'a EmbeddingTable>,
    /// Seed is re-derived per cell from this seed and the split seed.
    pub train: &'a DistillConfig,
    pub workers: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

fn run_cell(job: &GridJob<'_>, split: &SplitSpec, variant: &Variant) -> Result<(f64, f64, Option<PathBuf>)> {
    let (labeled, unlabeled) = split.partition(job.corpus)?;
    let tagger = TaggerConfig {
        classifier: variant.classifier,
        ..job.tagger.clone()
    };
    let setup = TrainSetup {
        tagger: &tagger,
        vocab: job.vocab,
        tagset: job.tagset,
        embeddings: job.embeddings,
    };
    let config = DistillConfig {
        seed: derive_seed(job.train.seed, split.seed, 0),
        ..job.train.clone()
    };
    let outcome = match variant.recipe {
        Recipe::Baseline => train_baseline(&setup, &labeled, job.dev, &config, None)?,
        Recipe::Distilled => train_distilled(&setup, &labeled, &unlabeled, job.teacher, job.dev, &config, None)?,
    };
    let pred = outcome.model.predict(job.test, config.eval_batch_size)?;
    let gold: Vec<Vec<usize>> = job
        .test
        .iter()
        .map(|s| s.gold_tags.clone().unwrap_or_default())
        .collect();
    let test_f1 = evaluate_ids(job.tagset, &gold, &pred)?.f1();
    let checkpoint = match &job.checkpoint_dir {
        Some(dir) => {
            let path = dir.join(format!("{}-{}-{}.cdt", split.size, split.seed_index, variant.name));
            save_checkpoint(&outcome.model, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok((outcome.report.best_dev_f1, test_f1, checkpoint))
}

/// Trains and scores every (split, variant) cell on a bounded worker
/// pool. A failing cell is recorded and the grid carries on. `on_cell` is
/// called as cells finish.
pub fn run_experiment_grid(job: &GridJob<'_>, on_cell: Option<&(dyn Fn(&GridCell) + Sync)>) -> Result<GridReport> {
    if job.splits.is_empty() || job.variants.is_empty() {
        return Err(Error::Config(
            "the grid needs at least one split and one variant".into(),
        ));
    }
    if job.test.is_empty() || job.test.iter().any(|s| s.gold_tags.is_none()) {
        return Err(Error::Config("the test set must be non-empty and tagged".into()));
    }
    if job.variants.iter().any(|v| v.recipe == Recipe::Distilled) {
        let teacher = job
            .teacher
            .ok_or_else(|| Error::Config("distilled variants need teacher logits".into()))?;
        teacher.check_tagset(job.tagset)?;
        teacher.check_coverage(job.corpus)?;
    }
    if let Some(dir) = &job.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tasks: Vec<(&SplitSpec, &Variant)> = job
        .splits
        .iter()
        .flat_map(|s| job.variants.iter().map(move |v| (s, v)))
        .collect();
    let work = |&(split, variant): &(&SplitSpec, &Variant)| {
        let result = run_cell(job, split, variant);
        let mut cell = GridCell {
            size: split.size,
            seed_index: split.seed_index,
            seed: split.seed,
            variant: variant.name.clone(),
            dev_f1: None,
            test_f1: None,
            checkpoint: None,
            error: None,
        };
        match result {
            Ok((dev, test, ckpt)) => {
                cell.dev_f1 = Some(dev);
                cell.test_f1 = Some(test);
                cell.checkpoint = ckpt;
            }
            Err(e) => {
                log::warn!(
                    "cell size={} seed={} {} failed: {e}",
                    split.size,
                    split.seed_index,
                    variant.name
                );
                cell.error = Some(format!("{}: {e}", e.category()));
            }
        }
        if let Some(cb) = on_cell {
            cb(&cell);
        }
        cell
    };
    let cells: Vec<GridCell> = if job.workers <= 1 {
        tasks.iter().map(work).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(job.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(work).collect())
    };
    Ok(GridReport::from_cells(cells))
}
