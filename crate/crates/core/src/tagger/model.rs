//! Batch encoding, the emission forward pass and decoding.

use super::config::{Classifier, TaggerConfig};
use super::crf::viterbi_decode;
use super::params::{slot, TaggerParams};
use crate::data::{Sentence, TagSequence, Vocab, PAD};
use crate::error::{Error, Result};
use crate::numerics::{argmax, bilstm, Graph, LstmVars, Real, Var};
use crate::rng::Rng;

/// Characters kept per token; longer tokens are truncated.
pub const MAX_WORD_CHARS: usize = 40;

/// A padded batch of id-encoded sentences, time-major: the word at step
/// `t` of sentence `b` lives in row `t * batch + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub word_ids: Vec<usize>,
    /// `char_span` character ids per word row, padded on both sides.
    pub char_ids: Vec<usize>,
    /// Number of real characters per word row (at least 1).
    pub char_lengths: Vec<usize>,
    pub char_span: usize,
}

impl EncodedBatch {
    /// Encodes sentences against `vocab`.
    pub fn encode(sentences: &[&Sentence], vocab: &Vocab, char_window: usize) -> Result<Self> {
        let words: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| vocab.word_id(t)).collect())
            .collect();
        let chars: Vec<Vec<Vec<usize>>> = sentences
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| t.chars().take(MAX_WORD_CHARS).map(|c| vocab.char_id(c)).collect())
                    .collect()
            })
            .collect();
        Self::from_ids(&words, &chars, char_window)
    }

    /// Builds a batch from raw ids: `words[b][t]` and `chars[b][t][i]`.
    pub fn from_ids(words: &[Vec<usize>], chars: &[Vec<Vec<usize>>], char_window: usize) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptySequence);
        }
        if chars.len() != words.len() {
            return Err(Error::dims("encode batch", &[words.len()], &[chars.len()]));
        }
        if char_window.is_multiple_of(2) {
            return Err(Error::Config(format!("char_window must be odd, got {char_window}")));
        }
        let batch = words.len();
        let lengths: Vec<usize> = words.iter().map(Vec::len).collect();
        if lengths.contains(&0) {
            return Err(Error::EmptySequence);
        }
        for (w, c) in words.iter().zip(chars) {
            if w.len() != c.len() {
                return Err(Error::dims("encode batch", &[w.len()], &[c.len()]));
            }
        }
        let steps = *lengths.iter().max().unwrap();
        let max_chars = chars.iter().flatten().map(Vec::len).max().unwrap_or(1).max(1);
        let left = (char_window - 1) / 2;
        let char_span = max_chars + char_window - 1;
        let rows = steps * batch;
        let mut word_ids = vec![PAD; rows];
        let mut char_ids = vec![PAD; rows * char_span];
        let mut char_lengths = vec![1; rows];
        for b in 0..batch {
            for t in 0..lengths[b] {
                let r = t * batch + b;
                word_ids[r] = words[b][t];
                let cs = &chars[b][t];
                char_lengths[r] = cs.len().max(1);
                let base = r * char_span + left;
                char_ids[base..base + cs.len()].copy_from_slice(cs);
            }
        }
        Ok(Self {
            batch,
            steps,
            lengths,
            word_ids,
            char_ids,
            char_lengths,
            char_span,
        })
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    /// Row-validity flags in time-major order.
    pub fn row_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rows()];
        for (b, &len) in self.lengths.iter().enumerate() {
            for t in 0..len {
                mask[t * self.batch + b] = true;
            }
        }
        mask
    }

    /// Reorders per-sentence `[len, k]` rows into a time-major
    /// `[steps * batch, k]` block, zero-filling padding rows.
    pub fn to_time_major<F: Copy + Default>(&self, per_sentence: &[&[F]], k: usize) -> Result<Vec<F>> {
        if per_sentence.len() != self.batch {
            return Err(Error::dims("time-major block", &[self.batch], &[per_sentence.len()]));
        }
        let mut out = vec![F::default(); self.rows() * k];
        for (b, rows) in per_sentence.iter().enumerate() {
            if rows.len() != self.lengths[b] * k {
                return Err(Error::dims("time-major block", &[self.lengths[b], k], &[rows.len()]));
            }
            for t in 0..self.lengths[b] {
                let r = t * self.batch + b;
                out[r * k..(r + 1) * k].copy_from_slice(&rows[t * k..(t + 1) * k]);
            }
        }
        Ok(out)
    }

    fn check_ids(&self, config: &TaggerConfig) -> Result<()> {
        if let Some(&bad) = self.word_ids.iter().find(|&&i| i >= config.word_vocab) {
            return Err(Error::Index {
                what: "word id",
                index: bad,
                limit: config.word_vocab,
            });
        }
        if let Some(&bad) = self.char_ids.iter().find(|&&i| i >= config.char_vocab) {
            return Err(Error::Index {
                what: "char id",
                index: bad,
                limit: config.char_vocab,
            });
        }
        Ok(())
    }
}

/// Records the tagger's forward pass on `g` (whose parameter slice must be
/// the tagger's tensors) and returns time-major emission logits
/// `[steps * batch, K]`.
pub fn emission_graph<F: Real>(
    g: &mut Graph<'_, F>,
    config: &TaggerConfig,
    batch: &EncodedBatch,
    rng: &mut Rng,
    train: bool,
) -> Result<Var> {
    batch.check_ids(config)?;
    let words = batch.rows();
    let char_table = g.param(slot::CHAR_EMB)?;
    let kernel = g.param(slot::CONV_KERNEL)?;
    let conv_bias = g.param(slot::CONV_BIAS)?;
    let chars = g.embedding_gather(char_table, &batch.char_ids)?;
    let conv = g.conv1d_over_time(chars, words, batch.char_span, config.char_window, kernel, conv_bias)?;
    let out_steps = batch.char_span + 1 - config.char_window;
    let char_feats = g.max_pool_over_time(conv, out_steps, &batch.char_lengths)?;
    let word_table = g.param(slot::WORD_EMB)?;
    let word_feats = g.embedding_gather(word_table, &batch.word_ids)?;
    let x = g.concat(&[word_feats, char_feats])?;
    let x = g.dropout(x, config.dropout_rate, rng, train)?;
    let fwd = LstmVars {
        w_x: g.param(slot::FWD_INPUT)?,
        w_h: g.param(slot::FWD_HIDDEN)?,
        bias: g.param(slot::FWD_BIAS)?,
    };
    let bwd = LstmVars {
        w_x: g.param(slot::BWD_INPUT)?,
        w_h: g.param(slot::BWD_HIDDEN)?,
        bias: g.param(slot::BWD_BIAS)?,
    };
    let h = bilstm(g, x, batch.batch, &batch.lengths, &fwd, &bwd)?;
    let h = g.dropout(h, config.dropout_rate, rng, train)?;
    let w = g.param(slot::EMIT_W)?;
    let b = g.param(slot::EMIT_B)?;
    g.linear(h, w, b)
}

/// Emission logits for a batch, laid out `[B, L_max, K]` with a `[B, L_max]`
/// validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionBatch<F = f32> {
    pub batch: usize,
    pub steps: usize,
    pub num_tags: usize,
    pub logits: Vec<F>,
    pub mask: Vec<bool>,
}

impl<F: Real> EmissionBatch<F> {
    /// Converts a time-major block into batch-major layout.
    pub fn from_time_major(block: &[F], encoded: &EncodedBatch, num_tags: usize) -> Result<Self> {
        let (bsz, steps, k) = (encoded.batch, encoded.steps, num_tags);
        if block.len() != bsz * steps * k {
            return Err(Error::dims("emission batch", &[bsz * steps, k], &[block.len()]));
        }
        let mut logits = vec![F::zero(); block.len()];
        let mut mask = vec![false; bsz * steps];
        for b in 0..bsz {
            for t in 0..steps {
                let src = (t * bsz + b) * k;
                let dst = (b * steps + t) * k;
                logits[dst..dst + k].copy_from_slice(&block[src..src + k]);
                mask[b * steps + t] = t < encoded.lengths[b];
            }
        }
        Ok(Self {
            batch: bsz,
            steps,
            num_tags,
            logits,
            mask,
        })
    }

    pub fn length(&self, b: usize) -> usize {
        self.mask[b * self.steps..(b + 1) * self.steps]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    /// The valid `[len, K]` rows of sentence `b`.
    pub fn sentence(&self, b: usize) -> &[F] {
        let start = b * self.steps * self.num_tags;
        &self.logits[start..start + self.length(b) * self.num_tags]
    }
}

/// Runs the tagger on an encoded batch.
pub fn forward<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    batch: &EncodedBatch,
    train: bool,
    rng: &mut Rng,
) -> Result<EmissionBatch<F>> {
    let mut g = Graph::new(params.tensors());
    let logits = emission_graph(&mut g, config, batch, rng, train)?;
    EmissionBatch::from_time_major(g.value(logits), batch, config.num_tags)
}

/// Decodes one sentence's `[len, K]` emissions with the configured head.
pub fn decode_sentence<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    emissions: &[F],
) -> Result<TagSequence> {
    let k = config.num_tags;
    match config.classifier {
        Classifier::Softmax => Ok(emissions.chunks(k).map(argmax).collect()),
        Classifier::Crf => viterbi_decode(emissions, k, params.tensors()[slot::TRANSITIONS].values()),
    }
}

/// Decodes every sentence of an emission batch.
pub fn decode<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    emissions: &EmissionBatch<F>,
) -> Result<Vec<TagSequence>> {
    (0..emissions.batch)
        .map(|b| decode_sentence(params, config, emissions.sentence(b)))
        .collect()
}

/// Tags sentences in batches of `batch_size` (dropout off).
pub fn predict<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    vocab: &Vocab,
    sentences: &[Sentence],
    batch_size: usize,
) -> Result<Vec<TagSequence>> {
    let mut out = Vec::with_capacity(sentences.len());
    for_each_batch(params, config, vocab, sentences, batch_size, |em| {
        out.extend(decode(params, config, em)?);
        Ok(())
    })?;
    Ok(out)
}

/// Per-sentence `[len, K]` emission logits (dropout off).
pub fn sentence_logits<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    vocab: &Vocab,
    sentences: &[Sentence],
    batch_size: usize,
) -> Result<Vec<Vec<F>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for_each_batch(params, config, vocab, sentences, batch_size, |em| {
        out.extend((0..em.batch).map(|b| em.sentence(b).to_vec()));
        Ok(())
    })?;
    Ok(out)
}

fn for_each_batch<F: Real>(
    params: &TaggerParams<F>,
    config: &TaggerConfig,
    vocab: &Vocab,
    sentences: &[Sentence],
    batch_size: usize,
    mut sink: impl FnMut(&EmissionBatch<F>) -> Result<()>,
) -> Result<()> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    // Inference never draws from the generator.
    let mut rng = Rng::new(0);
    for chunk in sentences.chunks(batch_size) {
        let refs: Vec<&Sentence> = chunk.iter().collect();
        let encoded = EncodedBatch::encode(&refs, vocab, config.char_window)?;
        let em = forward(params, config, &encoded, false, &mut rng)?;
        sink(&em)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocab;

    fn toy() -> (Vec<Sentence>, Vocab) {
        let s = vec![
            Sentence::new(0, vec!["John".into(), "lives".into(), "here".into()], None).unwrap(),
            Sentence::new(
                1,
                ["Mary", "went", "to", "Paris", "today"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                None,
            )
            .unwrap(),
        ];
        let v = build_vocab(&s, None);
        (s, v)
    }

    fn small_config(v: &Vocab, classifier: Classifier) -> TaggerConfig {
        let mut c = TaggerConfig::new(v.num_words(), v.num_chars(), 9, classifier);
        c.word_dim = 8;
        c.char_dim = 4;
        c.char_filters = 5;
        c.lstm_hidden = 6;
        c
    }

    #[test]
    fn shape_contract() {
        let (s, v) = toy();
        let c = small_config(&v, Classifier::Softmax);
        let p = TaggerParams::<f32>::init(&c, &mut Rng::new(1), None).unwrap();
        let enc = EncodedBatch::encode(&[&s[0], &s[1]], &v, 3).unwrap();
        let em = forward(&p, &c, &enc, false, &mut Rng::new(0)).unwrap();
        assert_eq!((em.batch, em.steps, em.num_tags), (2, 5, 9));
        assert_eq!(em.logits.len(), 2 * 5 * 9);
        assert_eq!(em.length(0), 3);
        assert_eq!(em.length(1), 5);
        let again = forward(&p, &c, &enc, false, &mut Rng::new(99)).unwrap();
        assert_eq!(em, again);
    }

    #[test]
    fn padding_does_not_leak() {
        // A sentence's logits must not depend on what it is batched with.
        let (s, v) = toy();
        let c = small_config(&v, Classifier::Crf);
        let p = TaggerParams::<f32>::init(&c, &mut Rng::new(2), None).unwrap();
        let alone = forward(
            &p,
            &c,
            &EncodedBatch::encode(&[&s[0]], &v, 3).unwrap(),
            false,
            &mut Rng::new(0),
        )
        .unwrap();
        let both = forward(
            &p,
            &c,
            &EncodedBatch::encode(&[&s[0], &s[1]], &v, 3).unwrap(),
            false,
            &mut Rng::new(0),
        )
        .unwrap();
        for (a, b) in alone.sentence(0).iter().zip(both.sentence(0)) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn out_of_range_ids() {
        let (_, v) = toy();
        let c = small_config(&v, Classifier::Softmax);
        let p = TaggerParams::<f32>::init(&c, &mut Rng::new(1), None).unwrap();
        let enc = EncodedBatch::from_ids(&[vec![v.num_words() + 3]], &[vec![vec![2]]], 3).unwrap();
        assert!(matches!(
            forward(&p, &c, &enc, false, &mut Rng::new(0)),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn char_layout() {
        let enc = EncodedBatch::from_ids(&[vec![2, 3]], &[vec![vec![5, 6, 7], vec![8]]], 3).unwrap();
        assert_eq!(enc.char_span, 5);
        assert_eq!(&enc.char_ids[..5], &[PAD, 5, 6, 7, PAD]);
        assert_eq!(&enc.char_ids[5..], &[PAD, 8, PAD, PAD, PAD]);
        assert_eq!(enc.char_lengths, vec![3, 1]);
    }

    #[test]
    fn predict_lengths() {
        let (s, v) = toy();
        for cls in [Classifier::Softmax, Classifier::Crf] {
            let c = small_config(&v, cls);
            let p = TaggerParams::<f32>::init(&c, &mut Rng::new(3), None).unwrap();
            let tags = predict(&p, &c, &v, &s, 1).unwrap();
            assert_eq!(tags.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 5]);
            assert_eq!(tags, predict(&p, &c, &v, &s, 8).unwrap());
        }
    }

    #[test]
    fn softmax_decode_is_argmax() {
        let (_, v) = toy();
        let mut c = small_config(&v, Classifier::Softmax);
        c.num_tags = 3;
        let p = TaggerParams::<f32>::init(&c, &mut Rng::new(3), None).unwrap();
        assert_eq!(decode_sentence(&p, &c, &[2.0, -1.0, 0.5]).unwrap(), vec![0]);
        assert_eq!(decode_sentence(&p, &c, &[7.0, 4.0, 5.5]).unwrap(), vec![0]);
    }
}
