//! Entity spans and exact-match entity F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{parse_tag, TagKind, TagSequence, TagSet, OUTSIDE};
use crate::error::{Error, Result};

/// One entity: `start..=end` token positions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }
}

/// Spans of one sentence plus the number of ill-formed `I-X` tags that
/// had to be treated as span starts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSet {
    pub spans: BTreeSet<Span>,
    pub repairs: usize,
}

impl SpanSet {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

impl FromIterator<Span> for SpanSet {
    fn from_iter<I: IntoIterator<Item = Span>>(iter: I) -> Self {
        Self {
            spans: iter.into_iter().collect(),
            repairs: 0,
        }
    }
}

/// Groups BIO2 tags into spans. An `I-X` that does not continue an `X`
/// span opens a new one and is counted as a repair. Unparseable tags are
/// read as `O`.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> SpanSet {
    let mut set = SpanSet::default();
    let mut open: Option<(String, usize)> = None;
    let close = |open: &mut Option<(String, usize)>, set: &mut SpanSet, end: usize| {
        if let Some((label, start)) = open.take() {
            set.spans.insert(Span { label, start, end });
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        match parse_tag(tag.as_ref()) {
            Some(TagKind::Begin(ty)) => {
                close(&mut open, &mut set, i.wrapping_sub(1));
                open = Some((ty.to_string(), i));
            }
            Some(TagKind::Inside(ty)) => {
                if open.as_ref().is_some_and(|(l, _)| l == ty) {
                    continue;
                }
                close(&mut open, &mut set, i.wrapping_sub(1));
                log::trace!("repairing {} at position {i}", tag.as_ref());
                set.repairs += 1;
                open = Some((ty.to_string(), i));
            }
            _ => close(&mut open, &mut set, i.wrapping_sub(1)),
        }
    }
    close(&mut open, &mut set, tags.len().wrapping_sub(1));
    set
}

/// Renders spans back into BIO2 tags over `len` tokens.
pub fn spans_to_tags(spans: &SpanSet, len: usize) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); len];
    let mut taken = vec![false; len];
    for s in &spans.spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::Index {
                what: "span end",
                index: s.end,
                limit: len,
            });
        }
        for i in s.start..=s.end {
            if taken[i] {
                return Err(Error::Contract(format!("overlapping spans at token {i}")));
            }
            taken[i] = true;
            tags[i] = format!("{}-{}", if i == s.start { "B" } else { "I" }, s.label);
        }
    }
    Ok(tags)
}

/// Precision, recall and F1 (all percentages) with raw counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Score {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = pct(correct, predicted);
        let recall = pct(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: Score,
    pub per_type: BTreeMap<String, Score>,
    /// Ill-formed predicted tags repaired during span extraction.
    pub repairs: usize,
}

impl EvalReport {
    pub fn f1(&self) -> f64 {
        self.overall.f1
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "type", "precision", "recall", "f1", "gold", "pred", "correct"
        );
        let row = |name: &str, s: &Score| {
            format!(
                "{:<10} {:>9.2} {:>9.2} {:>9.2} {:>7} {:>7} {:>7}\n",
                name, s.precision, s.recall, s.f1, s.gold, s.predicted, s.correct
            )
        };
        for (name, s) in &self.per_type {
            out.push_str(&row(name, s));
        }
        out.push_str(&row("overall", &self.overall));
        out
    }
}

/// Micro-averaged exact-match scores over sentence-aligned span sets.
pub fn span_f1(gold: &[SpanSet], predicted: &[SpanSet]) -> Result<EvalReport> {
    if gold.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let mut repairs = 0;
    for (g, p) in gold.iter().zip(predicted) {
        repairs += p.repairs;
        for s in &g.spans {
            counts.entry(s.label.clone()).or_default()[0] += 1;
        }
        for s in &p.spans {
            let c = counts.entry(s.label.clone()).or_default();
            c[1] += 1;
            if g.spans.contains(s) {
                c[2] += 1;
            }
        }
    }
    let total = counts
        .values()
        .fold([0; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
    Ok(EvalReport {
        overall: Score::from_counts(total[0], total[1], total[2]),
        per_type: counts
            .into_iter()
            .map(|(k, c)| (k, Score::from_counts(c[0], c[1], c[2])))
            .collect(),
        repairs,
    })
}

/// Scores tag-id sequences decoded through `tagset`.
pub fn evaluate_ids(tagset: &TagSet, gold: &[TagSequence], predicted: &[TagSequence]) -> Result<EvalReport> {
    let to_spans = |seqs: &[TagSequence]| -> Result<Vec<SpanSet>> {
        seqs.iter().map(|s| Ok(extract_spans(&tagset.decode(s)?))).collect()
    };
    for (g, p) in gold.iter().zip(predicted) {
        if g.len() != p.len() {
            return Err(Error::dims("evaluate", &[g.len()], &[p.len()]));
        }
    }
    span_f1(&to_spans(gold)?, &to_spans(predicted)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_example() {
        let s = extract_spans(&["B-PER", "I-PER", "O", "B-LOC"]);
        let expected: SpanSet = [Span::new("PER", 0, 1), Span::new("LOC", 3, 3)].into_iter().collect();
        assert_eq!(s, expected);
        assert!(extract_spans(&["O", "O"]).is_empty());
    }

    #[test]
    fn repair_rule() {
        let s = extract_spans(&["I-PER"]);
        assert_eq!(s.spans.iter().next(), Some(&Span::new("PER", 0, 0)));
        assert_eq!(s.repairs, 1);
        let s = extract_spans(&["B-PER", "I-LOC", "I-LOC"]);
        assert_eq!(s.len(), 2);
        assert_eq!(s.repairs, 1);
    }

    #[test]
    fn adjacent_begins_split() {
        let s = extract_spans(&["B-PER", "B-PER", "I-PER"]);
        let expected: SpanSet = [Span::new("PER", 0, 0), Span::new("PER", 1, 2)].into_iter().collect();
        assert_eq!(s, expected);
    }

    #[test]
    fn half_right() {
        let g: SpanSet = [Span::new("PER", 0, 1), Span::new("LOC", 3, 3)].into_iter().collect();
        let p: SpanSet = [Span::new("PER", 0, 1), Span::new("ORG", 3, 3)].into_iter().collect();
        let r = span_f1(&[g], &[p]).unwrap();
        assert_eq!(
            (r.overall.precision, r.overall.recall, r.overall.f1),
            (50.0, 50.0, 50.0)
        );
        assert_eq!(r.per_type["ORG"].predicted, 1);
        assert_eq!(r.per_type["LOC"].correct, 0);
    }

    #[test]
    fn empty_prediction() {
        let g: SpanSet = [Span::new("PER", 0, 1)].into_iter().collect();
        let r = span_f1(&[g], &[SpanSet::default()]).unwrap();
        assert_eq!(r.overall, Score::from_counts(1, 0, 0));
        assert_eq!(r.f1(), 0.0);
        assert!(span_f1(&[], &[SpanSet::default()]).is_err());
    }

    #[test]
    fn round_trip_tags() {
        let tags = ["B-ORG", "I-ORG", "O", "B-PER", "B-PER", "I-PER", "O"];
        let s = extract_spans(&tags);
        assert_eq!(spans_to_tags(&s, tags.len()).unwrap(), tags);
    }
}
