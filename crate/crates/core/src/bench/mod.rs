//! Inference timing over a dataset and speedup tables between models.

use std::fmt::Write as _;
use std::io::BufRead;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Sentence, UNK};
use crate::error::{Error, Result};
use crate::tagger::ModelBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ThreadMode {
    #[default]
    Single,
    /// Batches are spread over a fixed pool of workers sharing the model.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub warmup_passes: usize,
    pub measured_passes: usize,
    pub thread_mode: ThreadMode,
    /// Worker count in pooled mode; 0 means one per available core.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 32, 64, 128],
            warmup_passes: 1,
            measured_passes: 3,
            thread_mode: ThreadMode::Single,
            workers: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() {
            return Err(Error::Config("at least one batch size is required".into()));
        }
        if self.batch_sizes.contains(&0) {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.measured_passes == 0 {
            return Err(Error::Config("measured_passes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Median time of one full pass for one model at one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub batch_size: usize,
    pub sentences: usize,
    pub seconds: f64,
    pub sentences_per_second: f64,
    /// Every measured pass, in run order.
    #[serde(default)]
    pub passes: Vec<f64>,
}

impl BenchRow {
    fn new(model: String, batch_size: usize, sentences: usize, passes: Vec<f64>) -> Self {
        let seconds = median(&passes);
        Self {
            model,
            batch_size,
            sentences,
            seconds,
            sentences_per_second: sentences as f64 / seconds,
            passes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, model: &str, batch_size: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.batch_size == batch_size)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Seconds per pass and throughput, one row per batch size.
    pub fn render_table(&self) -> String {
        let models = model_order(&self.rows);
        let mut out = format!("{:>10}", "batch");
        for m in &models {
            let _ = write!(out, " {:>24}", format!("{m} s (sent/s)"));
        }
        out.push('\n');
        for bs in batch_order(&self.rows) {
            let _ = write!(out, "{bs:>10}");
            for m in &models {
                let cell = self
                    .row(m, bs)
                    .map(|r| format!("{:.3} ({:.0})", r.seconds, r.sentences_per_second))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " {cell:>24}");
            }
            out.push('\n');
        }
        out
    }
}

fn model_order(rows: &[BenchRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.model) {
            out.push(r.model.clone());
        }
    }
    out
}

fn batch_order(rows: &[BenchRow]) -> Vec<usize> {
    let mut out: Vec<usize> = rows.iter().map(|r| r.batch_size).collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn check_data(model: &ModelBundle, data: &[Sentence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("benchmark dataset is empty".into()));
    }
    let known = data
        .iter()
        .flat_map(|s| &s.tokens)
        .any(|t| model.vocab.word_id(t) != UNK);
    if !known {
        return Err(Error::Alignment(
            "no dataset token is in the model vocabulary; data and checkpoint do not match".into(),
        ));
    }
    Ok(())
}

fn one_pass(
    model: &ModelBundle,
    data: &[Sentence],
    batch_size: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<f64> {
    let start = Instant::now();
    match pool {
        None => {
            for chunk in data.chunks(batch_size) {
                std::hint::black_box(model.predict(chunk, batch_size)?);
            }
        }
        Some(pool) => {
            use rayon::prelude::*;
            pool.install(|| {
                data.par_chunks(batch_size)
                    .try_for_each(|chunk| model.predict(chunk, batch_size).map(|p| drop(std::hint::black_box(p))))
            })?;
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Times every model at every batch size. Passes are interleaved across
/// models and batch sizes; warmup passes are discarded and the median of
/// the rest kept.
pub fn bench_models(models: &[(&str, &ModelBundle)], data: &[Sentence], config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no models to benchmark".into()));
    }
    for (_, m) in models {
        check_data(m, data)?;
    }
    let pool = match config.thread_mode {
        ThreadMode::Single => None,
        ThreadMode::Pooled => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?,
        ),
    };
    let mut times = vec![vec![Vec::new(); config.batch_sizes.len()]; models.len()];
    for pass in 0..config.warmup_passes + config.measured_passes {
        for (bi, &bs) in config.batch_sizes.iter().enumerate() {
            // Alternate the model order between passes so a drifting host
            // does not favour whichever model runs first.
            let order: Vec<usize> = if pass % 2 == 0 {
                (0..models.len()).collect()
            } else {
                (0..models.len()).rev().collect()
            };
            for mi in order {
                let t = one_pass(models[mi].1, data, bs, pool.as_ref())?;
                if pass >= config.warmup_passes {
                    times[mi][bi].push(t);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (mi, (label, _)) in models.iter().enumerate() {
        for (bi, &bs) in config.batch_sizes.iter().enumerate() {
            rows.push(BenchRow::new(
                label.to_string(),
                bs,
                data.len(),
                std::mem::take(&mut times[mi][bi]),
            ));
        }
    }
    Ok(BenchReport {
        config: config.clone(),
        rows,
    })
}

/// Times one model.
pub fn bench_model(label: &str, model: &ModelBundle, data: &[Sentence], config: &BenchConfig) -> Result<Vec<BenchRow>> {
    Ok(bench_models(&[(label, model)], data, config)?.rows)
}

/// A timing measured outside this tool, e.g. for a transformer teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalTiming {
    pub model: String,
    pub batch_size: usize,
    pub seconds: f64,
}

/// Reads external timings, one JSON object per line.
pub fn parse_external_timings<R: BufRead>(reader: R) -> Result<Vec<ExternalTiming>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: ExternalTiming = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if !(t.seconds > 0.0 && t.seconds.is_finite()) || t.batch_size == 0 {
            return Err(Error::parse(i + 1, "seconds and batch_size must be positive"));
        }
        out.push(t);
    }
    Ok(out)
}

impl ExternalTiming {
    pub fn into_row(self, sentences: usize) -> BenchRow {
        BenchRow::new(self.model, self.batch_size, sentences, vec![self.seconds])
    }
}

/// Speedup of every model relative to `baseline` (`time(baseline) /
/// time(model)`), one row per batch size, rendered as `N.N×`.
pub fn speedup_table(rows: &[BenchRow], baseline: &str) -> Result<String> {
    if !rows.iter().any(|r| r.model == baseline) {
        return Err(Error::Lookup(format!("baseline model {baseline:?} has no timings")));
    }
    let models = model_order(rows);
    let find = |m: &str, bs: usize| rows.iter().find(|r| r.model == m && r.batch_size == bs);
    let mut out = format!("{:>10}", "batch");
    for m in &models {
        let _ = write!(out, " {:>20}", format!("{m} vs {baseline}"));
    }
    out.push('\n');
    for bs in batch_order(rows) {
        let _ = write!(out, "{bs:>10}");
        for m in &models {
            let cell = match (find(baseline, bs), find(m, bs)) {
                (Some(b), Some(r)) => format_speedup(b.seconds / r.seconds),
                _ => "-".into(),
            };
            let _ = write!(out, " {cell:>20}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn format_speedup(ratio: f64) -> String {
    format!("{ratio:.1}×")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, bs: usize, seconds: f64) -> BenchRow {
        BenchRow::new(model.into(), bs, 100, vec![seconds])
    }

    #[test]
    fn median_of_passes() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let empty = BenchConfig {
            batch_sizes: vec![],
            ..BenchConfig::default()
        };
        assert!(matches!(empty.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn ratios() {
        let rows = vec![
            row("teacher", 1, 4.0),
            row("student", 1, 2.0),
            row("teacher", 32, 1.0),
            row("student", 32, 1.0),
        ];
        let t = speedup_table(&rows, "teacher").unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[1].contains("1.0×") && lines[1].contains("2.0×"), "{t}");
        assert!(matches!(speedup_table(&rows, "bert"), Err(Error::Lookup(_))));
    }

    #[test]
    fn external_timings() {
        let text = "{\"model\":\"bert-base\",\"batch_size\":1,\"seconds\":33.0}\n\n";
        let t = parse_external_timings(text.as_bytes()).unwrap();
        assert_eq!(t[0].batch_size, 1);
        let bad = "{\"model\":\"x\",\"batch_size\":1,\"seconds\":0}";
        assert!(parse_external_timings(bad.as_bytes()).is_err());
    }
}
