//! Mini-batch training with dev-set model selection.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{DistillConfig, MixStrategy};
use super::loss::{combined_loss, Example, LossBreakdown};
use super::teacher::TeacherStore;
use crate::data::{EmbeddingTable, Sentence, TagSet, Vocab};
use crate::error::{Error, Result};
use crate::eval::evaluate_ids;
use crate::numerics::{AdamState, Graph};
use crate::rng::Rng;
use crate::tagger::{emission_graph, predict, slot, Classifier, EncodedBatch, ModelBundle, TaggerConfig, TaggerParams};

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Model shape and lookup tables shared by every run on one corpus.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup<'a> {
    pub tagger: &'a TaggerConfig,
    pub vocab: &'a Vocab,
    pub tagset: &'a TagSet,
    pub embeddings: Option<&'a EmbeddingTable>,
}

/// Mean losses over one epoch's batches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub task: f64,
    pub distill: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: DistillConfig,
    pub tagger: TaggerConfig,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Entity F1 on the dev set after each epoch.
    pub dev_f1: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub checkpoint: Option<PathBuf>,
    pub losses: Vec<EpochLoss>,
}

/// The kept model and its training record.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: ModelBundle,
}

/// Passed to the observer after every optimiser step.
#[derive(Debug, Clone, Copy)]
pub struct BatchLog<'a> {
    pub epoch: usize,
    pub step: usize,
    pub sentence_ids: &'a [usize],
    pub breakdown: LossBreakdown,
}

pub type Observer<'o> = &'o mut dyn FnMut(&BatchLog<'_>);

#[derive(Clone, Copy)]
struct Item {
    labeled: bool,
    index: usize,
}

fn plan_epoch(labeled: usize, unlabeled: usize, config: &DistillConfig, rng: &mut Rng) -> Vec<Vec<Item>> {
    let bs = config.batch_size;
    let item = |labeled, index| Item { labeled, index };
    match config.mix {
        MixStrategy::Pool => {
            let mut pool: Vec<Item> = (0..labeled)
                .map(|i| item(true, i))
                .chain((0..unlabeled).map(|i| item(false, i)))
                .collect();
            rng.shuffle(&mut pool);
            pool.chunks(bs).map(<[Item]>::to_vec).collect()
        }
        MixStrategy::FixedRatio => {
            let mut l: Vec<usize> = (0..labeled).collect();
            let mut u: Vec<usize> = (0..unlabeled).collect();
            rng.shuffle(&mut l);
            rng.shuffle(&mut u);
            let batches = (labeled + unlabeled).div_ceil(bs);
            let per_l = if unlabeled == 0 {
                bs
            } else {
                ((bs as f64 * config.labeled_fraction).round() as usize).clamp(usize::from(labeled > 0), bs)
            };
            let (mut li, mut ui) = (0, 0);
            (0..batches)
                .map(|_| {
                    let mut b = Vec::with_capacity(bs);
                    for _ in 0..per_l.min(bs) {
                        b.push(item(true, l[li % labeled]));
                        li += 1;
                    }
                    if unlabeled > 0 {
                        for _ in per_l..bs {
                            b.push(item(false, u[ui % unlabeled]));
                            ui += 1;
                        }
                    }
                    b
                })
                .collect()
        }
    }
}

fn dev_f1(
    params: &TaggerParams<f32>,
    setup: &TrainSetup<'_>,
    config: &TaggerConfig,
    dev: &[Sentence],
    bs: usize,
) -> Result<f64> {
    let pred = predict(params, config, setup.vocab, dev, bs)?;
    let gold: Vec<Vec<usize>> = dev.iter().map(|s| s.gold_tags.clone().unwrap_or_default()).collect();
    Ok(evaluate_ids(setup.tagset, &gold, &pred)?.f1())
}

/// Trains a student on labeled sentences plus teacher-labeled unlabeled
/// sentences. Deterministic for a given seed.
pub fn train_distilled(
    setup: &TrainSetup<'_>,
    labeled: &[Sentence],
    unlabeled: &[Sentence],
    teacher: Option<&TeacherStore>,
    dev: &[Sentence],
    config: &DistillConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut tagger = setup.tagger.clone();
    tagger.dropout_rate = config.dropout;
    tagger.validate()?;
    if tagger.num_tags != setup.tagset.len() {
        return Err(Error::Alignment(format!(
            "model emits {} tags but the tag set has {}",
            tagger.num_tags,
            setup.tagset.len()
        )));
    }
    if labeled.is_empty() {
        return Err(Error::Config("the labeled set is empty".into()));
    }
    if let Some(s) = labeled.iter().find(|s| s.gold_tags.is_none()) {
        return Err(Error::Config(format!("labeled sentence {} has no tags", s.id)));
    }
    if dev.is_empty() || dev.iter().any(|s| s.gold_tags.is_none()) {
        return Err(Error::Config("the dev set must be non-empty and tagged".into()));
    }
    let needs_teacher = config.distill_weight > 0.0 || !unlabeled.is_empty();
    if needs_teacher {
        let store =
            teacher.ok_or_else(|| Error::Config("distillation or unlabeled data requires teacher logits".into()))?;
        store.check_tagset(setup.tagset)?;
        store.check_coverage(unlabeled)?;
        if config.distill_weight > 0.0 {
            store.check_coverage(labeled)?;
        }
    }

    let mut params = TaggerParams::<f32>::init(&tagger, &mut Rng::stream(config.seed, STREAM_INIT), setup.embeddings)?;
    let mut adam = AdamState::new(params.tensors(), config.adam());
    let mut order_rng = Rng::stream(config.seed, STREAM_ORDER);
    let mut dropout_rng = Rng::stream(config.seed, STREAM_DROPOUT);
    let crf = tagger.classifier == Classifier::Crf;

    let mut report = TrainReport {
        config: config.clone(),
        tagger: tagger.clone(),
        labeled: labeled.len(),
        unlabeled: unlabeled.len(),
        dev_f1: Vec::with_capacity(config.epochs),
        best_epoch: 0,
        best_dev_f1: f64::NEG_INFINITY,
        checkpoint: None,
        losses: Vec::with_capacity(config.epochs),
    };
    let mut best = params.clone();
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let batches = plan_epoch(labeled.len(), unlabeled.len(), config, &mut order_rng);
        let mut sums = EpochLoss::default();
        for items in &batches {
            let sentences: Vec<&Sentence> = items
                .iter()
                .map(|it| {
                    if it.labeled {
                        &labeled[it.index]
                    } else {
                        &unlabeled[it.index]
                    }
                })
                .collect();
            let examples: Vec<Example<'_, f32>> = items
                .iter()
                .zip(&sentences)
                .map(|(it, s)| Example {
                    sentence_id: s.id,
                    gold: if it.labeled { s.gold_tags.as_deref() } else { None },
                    teacher: teacher.and_then(|t| t.get(s.id)).map(|t| t.rows.as_slice()),
                })
                .collect();
            let encoded = EncodedBatch::encode(&sentences, setup.vocab, tagger.char_window)?;
            let (grads, breakdown) = {
                let mut g = Graph::new(params.tensors());
                let logits = emission_graph(&mut g, &tagger, &encoded, &mut dropout_rng, true)?;
                let trans = if crf { Some(g.param(slot::TRANSITIONS)?) } else { None };
                let (loss, breakdown) = combined_loss(
                    &mut g,
                    logits,
                    &encoded.lengths,
                    &examples,
                    tagger.classifier,
                    trans,
                    config,
                )?;
                (g.backward(loss)?, breakdown)
            };
            params.zero_grad();
            grads.accumulate_into(params.tensors_mut())?;
            adam.step(params.tensors_mut())?;
            step += 1;
            sums.task += breakdown.task;
            sums.distill += breakdown.distill;
            sums.total += breakdown.total;
            if let Some(obs) = observer.as_mut() {
                let ids: Vec<usize> = sentences.iter().map(|s| s.id).collect();
                obs(&BatchLog {
                    epoch,
                    step,
                    sentence_ids: &ids,
                    breakdown,
                });
            }
        }
        let n = batches.len().max(1) as f64;
        report.losses.push(EpochLoss {
            task: sums.task / n,
            distill: sums.distill / n,
            total: sums.total / n,
        });
        let f1 = dev_f1(&params, setup, &tagger, dev, config.eval_batch_size)?;
        log::info!(
            "epoch {epoch}: loss {:.4} (task {:.4}, distill {:.4}), dev F1 {f1:.2}",
            sums.total / n,
            sums.task / n,
            sums.distill / n
        );
        report.dev_f1.push(f1);
        if f1 > report.best_dev_f1 {
            report.best_dev_f1 = f1;
            report.best_epoch = epoch;
            best = params.clone();
        }
    }

    best.zero_grad();
    let provenance = serde_json::json!({
        "training": config,
        "labeled": labeled.len(),
        "unlabeled": unlabeled.len(),
        "best_epoch": report.best_epoch,
        "best_dev_f1": report.best_dev_f1,
    });
    let model = ModelBundle::new(tagger, best, setup.vocab.clone(), setup.tagset.clone())?.with_provenance(provenance);
    Ok(TrainOutcome { report, model })
}

/// Supervised training on labeled data only.
pub fn train_baseline(
    setup: &TrainSetup<'_>,
    labeled: &[Sentence],
    dev: &[Sentence],
    config: &DistillConfig,
    observer: Option<Observer<'_>>,
) -> Result<TrainOutcome> {
    let config = DistillConfig {
        distill_weight: 0.0,
        task_weight: if config.task_weight > 0.0 {
            config.task_weight
        } else {
            1.0
        },
        ..config.clone()
    };
    train_distilled(setup, labeled, &[], None, dev, &config, observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_plan_covers_everything_once() {
        let cfg = DistillConfig {
            batch_size: 4,
            ..DistillConfig::default()
        };
        let plan = plan_epoch(5, 6, &cfg, &mut Rng::new(1));
        assert_eq!(plan.len(), 3);
        let mut seen: Vec<(bool, usize)> = plan.iter().flatten().map(|i| (i.labeled, i.index)).collect();
        seen.sort_unstable();
        let mut expected: Vec<(bool, usize)> = (0..5).map(|i| (true, i)).chain((0..6).map(|i| (false, i))).collect();
        expected.sort_unstable();
        assert_eq!(seen, expected);
    }

    #[test]
    fn fixed_ratio_plan() {
        let cfg = DistillConfig {
            batch_size: 4,
            mix: MixStrategy::FixedRatio,
            labeled_fraction: 0.25,
            ..DistillConfig::default()
        };
        let plan = plan_epoch(2, 10, &cfg, &mut Rng::new(1));
        assert_eq!(plan.len(), 3);
        for b in &plan {
            assert_eq!(b.iter().filter(|i| i.labeled).count(), 1);
            assert_eq!(b.len(), 4);
        }
    }
}
