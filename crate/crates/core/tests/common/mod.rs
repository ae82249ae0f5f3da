//! Helpers shared by the integration tests.
#![allow(dead_code)]

use distill_ner::data::{build_vocab, Sentence, SyntheticNer, TagSet, Vocab};
use distill_ner::distill::{combined_loss, DistillConfig, Example};
use distill_ner::eval::{extract_spans, SpanSet};
use distill_ner::numerics::{bilstm, grad_check, lstm_cell, Graph, KlDirection, LstmVars, Tensor, Var};
use distill_ner::rng::Rng;
use distill_ner::tagger::{crf_nll_loss, emission_graph, slot, Classifier, EncodedBatch, TaggerConfig, TaggerParams};
use distill_ner::Result;

pub const EPS: f64 = 1e-6;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Gold and predicted span sets of the hand-scored 20-sentence file.
pub fn golden() -> (Vec<SpanSet>, Vec<SpanSet>) {
    let text = std::fs::read_to_string(fixture("golden_scoring.txt")).unwrap();
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for block in text.split("\n\n") {
        let rows: Vec<Vec<&str>> = block
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| l.split_whitespace().collect())
            .collect();
        if rows.is_empty() {
            continue;
        }
        gold.push(extract_spans(&rows.iter().map(|r| r[1]).collect::<Vec<_>>()));
        pred.push(extract_spans(&rows.iter().map(|r| r[2]).collect::<Vec<_>>()));
    }
    (gold, pred)
}

pub fn synthetic(n: usize, seed: u64) -> (Vec<Sentence>, TagSet) {
    (SyntheticNer::new(200, 7).sentences(n, seed), SyntheticNer::tagset())
}

pub fn tiny_config(vocab: &Vocab, num_tags: usize, classifier: Classifier) -> TaggerConfig {
    let mut c = TaggerConfig::new(vocab.num_words(), vocab.num_chars(), num_tags, classifier);
    c.word_dim = 4;
    c.char_dim = 3;
    c.char_filters = 3;
    c.lstm_hidden = 3;
    c.dropout_rate = 0.0;
    c
}

fn random(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn param(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::param(vec![rows, cols], random(rng, rows * cols)).unwrap()
}

/// Random linear functional `r · X · c`, so every entry of `X` reaches
/// the scalar with a distinct weight.
fn reduce(g: &mut Graph<'_, f64>, x: Var, rng: &mut Rng) -> Result<Var> {
    let (rows, cols) = g.shape(x);
    let r = g.input(1, rows, random(rng, rows))?;
    let c = g.input(cols, 1, random(rng, cols))?;
    let left = g.matmul(r, x)?;
    g.matmul(left, c)
}

type Build = dyn Fn(&mut Graph<'_, f64>, &[Var], &mut Rng) -> Result<Var>;
type Case = (&'static str, Vec<(usize, usize)>, Box<Build>);

fn check(shapes: &[(usize, usize)], seed: u64, build: &Build) -> f64 {
    let mut rng = Rng::new(seed);
    let mut params: Vec<Tensor<f64>> = shapes.iter().map(|&(r, c)| param(&mut rng, r, c)).collect();
    grad_check(
        |p| {
            let mut g = Graph::new(p);
            let vars = (0..p.len()).map(|i| g.param(i)).collect::<Result<Vec<_>>>()?;
            let mut rng = Rng::new(seed ^ 0xfeed);
            let y = build(&mut g, &vars, &mut rng)?;
            let out = if g.shape(y) == (1, 1) {
                y
            } else {
                reduce(&mut g, y, &mut rng)?
            };
            let grads = g.backward(out)?;
            Ok((g.scalar(out), grads))
        },
        &mut params,
        EPS,
    )
    .unwrap()
}

/// Worst relative gradient error of every primitive op, in f64.
pub fn primitive_checks() -> Vec<(&'static str, f64)> {
    let lstm = |v: &[Var], o: usize| LstmVars {
        w_x: v[o],
        w_h: v[o + 1],
        bias: v[o + 2],
    };
    let cases: Vec<Case> = vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|g, v, _| g.matmul(v[0], v[1]))),
        (
            "linear",
            vec![(3, 4), (4, 2), (1, 2)],
            Box::new(|g, v, _| g.linear(v[0], v[1], v[2])),
        ),
        ("add", vec![(2, 3), (2, 3)], Box::new(|g, v, _| g.add(v[0], v[1]))),
        ("mul", vec![(2, 3), (2, 3)], Box::new(|g, v, _| g.mul(v[0], v[1]))),
        ("scale", vec![(2, 3)], Box::new(|g, v, _| g.scale(v[0], -1.7))),
        ("tanh", vec![(2, 3)], Box::new(|g, v, _| g.tanh(v[0]))),
        ("sigmoid", vec![(2, 3)], Box::new(|g, v, _| g.sigmoid(v[0]))),
        (
            "concat",
            vec![(2, 3), (2, 2)],
            Box::new(|g, v, _| g.concat(&[v[0], v[1]])),
        ),
        ("slice_cols", vec![(2, 5)], Box::new(|g, v, _| g.slice_cols(v[0], 1, 3))),
        ("slice_rows", vec![(4, 2)], Box::new(|g, v, _| g.slice_rows(v[0], 1, 2))),
        (
            "stack_rows",
            vec![(1, 3), (2, 3)],
            Box::new(|g, v, _| g.stack_rows(&[v[0], v[1]])),
        ),
        (
            "embedding_gather",
            vec![(5, 3)],
            Box::new(|g, v, _| g.embedding_gather(v[0], &[4, 0, 4, 2])),
        ),
        (
            "conv1d_over_time",
            vec![(8, 2), (6, 3), (1, 3)],
            Box::new(|g, v, _| g.conv1d_over_time(v[0], 2, 4, 3, v[1], v[2])),
        ),
        (
            "max_pool_over_time",
            vec![(8, 3)],
            Box::new(|g, v, _| g.max_pool_over_time(v[0], 4, &[4, 2])),
        ),
        (
            "dropout",
            vec![(3, 4)],
            Box::new(|g, v, r| g.dropout(v[0], 0.3, r, true)),
        ),
        (
            "blend",
            vec![(3, 2), (3, 2)],
            Box::new(|g, v, _| g.blend(v[0], v[1], &[true, false, true])),
        ),
        (
            "lstm_cell",
            vec![(2, 3), (2, 2), (2, 2), (3, 8), (2, 8), (1, 8)],
            Box::new(move |g, v, _| {
                let (h, c) = lstm_cell(g, v[0], v[1], v[2], &lstm(v, 3))?;
                g.concat(&[h, c])
            }),
        ),
        (
            "bilstm",
            vec![(6, 3), (3, 8), (2, 8), (1, 8), (3, 8), (2, 8), (1, 8)],
            Box::new(move |g, v, _| bilstm(g, v[0], 2, &[3, 2], &lstm(v, 1), &lstm(v, 4))),
        ),
        (
            "cross_entropy",
            vec![(3, 4)],
            Box::new(|g, v, _| g.cross_entropy(v[0], &[Some(1), None, Some(3)])),
        ),
        (
            "kl_distill(student||teacher)",
            vec![(3, 4)],
            Box::new(|g, v, r| {
                let t = random(r, 12);
                g.kl_distill(v[0], &t, &[true, true, false], 2.0, KlDirection::StudentTeacher, 4.0)
            }),
        ),
        (
            "kl_distill(teacher||student)",
            vec![(3, 4)],
            Box::new(|g, v, r| {
                let t = random(r, 12);
                g.kl_distill(v[0], &t, &[true, false, true], 1.5, KlDirection::TeacherStudent, 1.0)
            }),
        ),
        (
            "weighted_sum",
            vec![(2, 2), (3, 1)],
            Box::new(|g, v, r| {
                let a = reduce(g, v[0], r)?;
                let b = reduce(g, v[1], r)?;
                g.weighted_sum(&[(a, 0.3), (b, -2.0)])
            }),
        ),
        (
            "crf_nll",
            vec![(6, 3), (5, 5)],
            Box::new(|g, v, _| {
                let (a, b): (&[usize], &[usize]) = (&[0, 2, 1], &[1, 1]);
                crf_nll_loss(g, v[0], v[1], 2, &[3, 2], &[a, b])
            }),
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, build))| (name, check(&shapes, 100 + i as u64, build.as_ref())))
        .collect()
}

/// Full tagger plus `combined_loss` on a labeled and an unlabeled 3-token
/// sentence, in f64. Returns the worst relative error.
pub fn model_check(classifier: Classifier) -> f64 {
    let sentences = vec![
        Sentence::new(0, vec!["Ada".into(), "met".into(), "Bo".into()], Some(vec![1, 0, 2])).unwrap(),
        Sentence::new(1, vec!["in".into(), "Rome".into(), "today".into()], None).unwrap(),
    ];
    let vocab = build_vocab(&sentences, None);
    let config = tiny_config(&vocab, 4, classifier);
    let mut params = TaggerParams::<f32>::init(&config, &mut Rng::new(11), None)
        .unwrap()
        .cast::<f64>();
    let mut rng = Rng::new(12);
    for t in params.tensors_mut() {
        // Move off the zero-initialised biases so every path is exercised.
        for v in t.values_mut() {
            *v += rng.uniform_range(-0.3, 0.3);
        }
    }
    let refs: Vec<&Sentence> = sentences.iter().collect();
    let batch = EncodedBatch::encode(&refs, &vocab, config.char_window).unwrap();
    let teacher = random(&mut rng, 3 * 4);
    let gold = [1usize, 0, 2];
    let examples = [
        Example {
            sentence_id: 0,
            gold: Some(&gold[..]),
            teacher: None,
        },
        Example {
            sentence_id: 1,
            gold: None,
            teacher: Some(&teacher[..]),
        },
    ];
    let train = DistillConfig {
        temperature: 2.0,
        distill_weight: 0.7,
        ..DistillConfig::default()
    };
    // Labeled rows need teacher logits too once the distill term is on.
    let labeled_teacher = random(&mut rng, 3 * 4);
    let examples = [
        Example {
            teacher: Some(&labeled_teacher[..]),
            ..examples[0]
        },
        examples[1],
    ];
    grad_check(
        |p| {
            let mut g = Graph::new(p);
            let logits = emission_graph(&mut g, &config, &batch, &mut Rng::new(0), false)?;
            let trans = match classifier {
                Classifier::Crf => Some(g.param(slot::TRANSITIONS)?),
                Classifier::Softmax => None,
            };
            let (loss, _) = combined_loss(&mut g, logits, &batch.lengths, &examples, classifier, trans, &train)?;
            let grads = g.backward(loss)?;
            Ok((g.scalar(loss), grads))
        },
        params.tensors_mut(),
        EPS,
    )
    .unwrap()
}
