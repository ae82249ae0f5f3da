//! The combined objective: a supervised or pseudo-labeled task term plus a
//! temperature-softened divergence to the teacher.
//!
//! Logits are time-major `[steps * batch, K]` graph nodes, where `batch`
//! is `lengths.len()` and `steps` the longest length.

use serde::{Deserialize, Serialize};

use super::config::DistillConfig;
use crate::data::TagSequence;
use crate::error::{Error, Result};
use crate::numerics::{argmax, Graph, KlDirection, Real, Var};
use crate::tagger::{crf_nll_loss, Classifier, EmissionBatch};

/// Teacher argmax per token.
pub fn pseudo_labels<F: PartialOrd + Copy>(rows: &[F], num_tags: usize) -> TagSequence {
    rows.chunks(num_tags).map(argmax).collect()
}

/// Supervision available for one batch sentence.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, F> {
    pub sentence_id: usize,
    pub gold: Option<&'a [usize]>,
    pub teacher: Option<&'a [F]>,
}

/// Per-batch decomposition of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub distill: f64,
    pub total: f64,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
    /// Tokens whose task target came from gold tags.
    pub gold_tokens: usize,
    /// Tokens whose task target came from teacher argmax.
    pub pseudo_tokens: usize,
}

fn layout(lengths: &[usize]) -> Result<(usize, usize)> {
    let steps = lengths.iter().copied().max().ok_or(Error::EmptySequence)?;
    if lengths.contains(&0) {
        return Err(Error::EmptySequence);
    }
    Ok((lengths.len(), steps))
}

/// Task loss against gold tags or pseudo-labels. Exactly one of
/// `gold[b]`, `pseudo[b]` must be given per sentence. Softmax heads use
/// token cross-entropy averaged over tokens; CRF heads use the sequence
/// NLL averaged over sentences.
pub fn task_loss<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    lengths: &[usize],
    gold: &[Option<&[usize]>],
    pseudo: &[Option<&[usize]>],
    classifier: Classifier,
    transitions: Option<Var>,
) -> Result<Var> {
    let (batch, steps) = layout(lengths)?;
    if gold.len() != batch || pseudo.len() != batch {
        return Err(Error::dims("task_loss", &[batch], &[gold.len(), pseudo.len()]));
    }
    let mut targets: Vec<&[usize]> = Vec::with_capacity(batch);
    for b in 0..batch {
        let t = match (gold[b], pseudo[b]) {
            (Some(t), None) | (None, Some(t)) => t,
            (Some(_), Some(_)) => {
                return Err(Error::Contract(format!(
                    "sentence {b} has both gold and pseudo targets"
                )))
            }
            (None, None) => return Err(Error::Contract(format!("sentence {b} has no task target"))),
        };
        if t.len() != lengths[b] {
            return Err(Error::dims("task_loss targets", &[lengths[b]], &[t.len()]));
        }
        targets.push(t);
    }
    match classifier {
        Classifier::Softmax => {
            let mut rows = vec![None; batch * steps];
            for (b, t) in targets.iter().enumerate() {
                for (step, &y) in t.iter().enumerate() {
                    rows[step * batch + b] = Some(y);
                }
            }
            g.cross_entropy(logits, &rows)
        }
        Classifier::Crf => {
            let trans = transitions.ok_or_else(|| Error::Contract("CRF task loss needs transitions".into()))?;
            crf_nll_loss(g, logits, trans, batch, lengths, &targets)
        }
    }
}

/// Mean per-token `KL` between temperature-softened student and teacher
/// distributions, times `scale`. `teacher[b]` holds sentence `b`'s
/// `[len, K]` rows.
pub fn distillation_loss<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    lengths: &[usize],
    teacher: &[&[F]],
    temperature: f64,
    direction: KlDirection,
    scale: f64,
) -> Result<Var> {
    let (batch, steps) = layout(lengths)?;
    let k = g.shape(logits).1;
    if teacher.len() != batch {
        return Err(Error::dims("distillation_loss", &[batch], &[teacher.len()]));
    }
    let mut block = vec![F::zero(); batch * steps * k];
    let mut mask = vec![false; batch * steps];
    for (b, rows) in teacher.iter().enumerate() {
        if rows.len() != lengths[b] * k {
            return Err(Error::Alignment(format!(
                "teacher rows for batch sentence {b} have {} values, expected {} x {k}",
                rows.len(),
                lengths[b]
            )));
        }
        for t in 0..lengths[b] {
            let r = t * batch + b;
            block[r * k..(r + 1) * k].copy_from_slice(&rows[t * k..(t + 1) * k]);
            mask[r] = true;
        }
    }
    g.kl_distill(logits, &block, &mask, F::of(temperature), direction, F::of(scale))
}

/// Builds the weighted objective for one batch. Labeled sentences train
/// on gold tags, unlabeled ones on the teacher's argmax; the divergence
/// covers every sentence.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss<F: Real>(
    g: &mut Graph<'_, F>,
    logits: Var,
    lengths: &[usize],
    examples: &[Example<'_, F>],
    classifier: Classifier,
    transitions: Option<Var>,
    config: &DistillConfig,
) -> Result<(Var, LossBreakdown)> {
    config.validate()?;
    if examples.len() != lengths.len() {
        return Err(Error::dims("combined_loss", &[lengths.len()], &[examples.len()]));
    }
    let need_teacher = config.distill_weight > 0.0;
    let missing: Vec<usize> = examples
        .iter()
        .filter(|e| e.teacher.is_none() && (need_teacher || e.gold.is_none()))
        .map(|e| e.sentence_id)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    let k = g.shape(logits).1;
    let pseudo: Vec<Option<TagSequence>> = examples
        .iter()
        .map(|e| match e.gold {
            Some(_) => None,
            None => e.teacher.map(|t| pseudo_labels(t, k)),
        })
        .collect();
    let gold: Vec<Option<&[usize]>> = examples.iter().map(|e| e.gold).collect();
    let pseudo_refs: Vec<Option<&[usize]>> = pseudo.iter().map(|p| p.as_deref()).collect();
    let task = task_loss(g, logits, lengths, &gold, &pseudo_refs, classifier, transitions)?;
    let mut terms = vec![(task, F::of(config.task_weight))];
    let mut distill_value = 0.0;
    if need_teacher {
        let rows: Vec<&[F]> = examples.iter().map(|e| e.teacher.unwrap()).collect();
        let d = distillation_loss(
            g,
            logits,
            lengths,
            &rows,
            config.temperature,
            config.kl_direction,
            config.distill_scale(),
        )?;
        distill_value = g.scalar(d).as_f64();
        terms.push((d, F::of(config.distill_weight)));
    }
    let total = g.weighted_sum(&terms)?;
    let mut breakdown = LossBreakdown {
        task: g.scalar(task).as_f64(),
        distill: distill_value,
        total: g.scalar(total).as_f64(),
        ..LossBreakdown::default()
    };
    for (e, len) in examples.iter().zip(lengths) {
        if e.gold.is_some() {
            breakdown.labeled_count += 1;
            breakdown.gold_tokens += len;
        } else {
            breakdown.unlabeled_count += 1;
            breakdown.pseudo_tokens += len;
        }
    }
    Ok((total, breakdown))
}

/// Registers an emission batch as a constant time-major graph input.
pub fn emission_input<F: Real>(g: &mut Graph<'_, F>, em: &EmissionBatch<F>) -> Result<(Var, Vec<usize>)> {
    let (bsz, steps, k) = (em.batch, em.steps, em.num_tags);
    let mut block = vec![F::zero(); bsz * steps * k];
    for b in 0..bsz {
        for t in 0..steps {
            let src = (b * steps + t) * k;
            let dst = (t * bsz + b) * k;
            block[dst..dst + k].copy_from_slice(&em.logits[src..src + k]);
        }
    }
    let lengths = (0..bsz).map(|b| em.length(b)).collect();
    Ok((g.input(bsz * steps, k, block)?, lengths))
}

/// [`task_loss`] evaluated on fixed emissions.
pub fn task_loss_value<F: Real>(
    em: &EmissionBatch<F>,
    gold: &[Option<&[usize]>],
    pseudo: &[Option<&[usize]>],
    classifier: Classifier,
    transitions: Option<&[F]>,
) -> Result<F> {
    let mut g = Graph::new(&[]);
    let (logits, lengths) = emission_input(&mut g, em)?;
    let trans = match transitions {
        Some(t) => Some(g.input(em.num_tags + 2, em.num_tags + 2, t.to_vec())?),
        None => None,
    };
    let v = task_loss(&mut g, logits, &lengths, gold, pseudo, classifier, trans)?;
    Ok(g.scalar(v))
}

/// [`distillation_loss`] evaluated on fixed emissions.
pub fn distillation_loss_value<F: Real>(
    em: &EmissionBatch<F>,
    teacher: &[&[F]],
    temperature: f64,
    direction: KlDirection,
    scale: f64,
) -> Result<F> {
    let mut g = Graph::new(&[]);
    let (logits, lengths) = emission_input(&mut g, em)?;
    let v = distillation_loss(&mut g, logits, &lengths, teacher, temperature, direction, scale)?;
    Ok(g.scalar(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: Vec<Vec<f64>>, k: usize) -> EmissionBatch<f64> {
        let steps = rows.iter().map(|r| r.len() / k).max().unwrap();
        let mut logits = vec![0.0; rows.len() * steps * k];
        let mut mask = vec![false; rows.len() * steps];
        for (b, r) in rows.iter().enumerate() {
            logits[b * steps * k..b * steps * k + r.len()].copy_from_slice(r);
            for t in 0..r.len() / k {
                mask[b * steps + t] = true;
            }
        }
        EmissionBatch {
            batch: rows.len(),
            steps,
            num_tags: k,
            logits,
            mask,
        }
    }

    #[test]
    fn pseudo_label_ties() {
        assert_eq!(pseudo_labels(&[2.0, -1.0, 0.5], 3), vec![0]);
        assert_eq!(pseudo_labels(&[1.0, 1.0], 2), vec![0]);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let em = batch(vec![vec![0.0; 18]], 9);
        let gold = [1usize, 4];
        let v = task_loss_value(&em, &[Some(&gold)], &[None], Classifier::Softmax, None).unwrap();
        assert!((v - 9f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn target_contract() {
        let em = batch(vec![vec![0.0; 3]], 3);
        let t = [0usize];
        let both = task_loss_value(&em, &[Some(&t)], &[Some(&t)], Classifier::Softmax, None);
        assert!(matches!(both, Err(Error::Contract(_))));
        let neither = task_loss_value(&em, &[None], &[None], Classifier::Softmax, None);
        assert!(matches!(neither, Err(Error::Contract(_))));
    }

    #[test]
    fn kl_hand_value() {
        let ln3 = 3f64.ln();
        let em = batch(vec![vec![0.0, ln3]], 2);
        let teacher = [ln3, 0.0];
        let v = distillation_loss_value(&em, &[&teacher], 1.0, KlDirection::StudentTeacher, 1.0).unwrap();
        let oracle = 0.25 * (0.25f64 / 0.75).ln() + 0.75 * (0.75f64 / 0.25).ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.5493).abs() < 1e-3);
    }

    #[test]
    fn missing_teacher_is_coverage_error() {
        let mut g = Graph::<f64>::new(&[]);
        let logits = g.input(2, 3, vec![0.0; 6]).unwrap();
        let ex = [
            Example {
                sentence_id: 11,
                gold: None,
                teacher: None,
            },
            Example {
                sentence_id: 12,
                gold: Some(&[0][..]),
                teacher: None,
            },
        ];
        let r = combined_loss(
            &mut g,
            logits,
            &[1, 1],
            &ex,
            Classifier::Softmax,
            None,
            &DistillConfig::default(),
        );
        match r {
            Err(Error::Coverage(ids)) => assert_eq!(ids, vec![11, 12]),
            other => panic!("{other:?}"),
        }
    }
}
