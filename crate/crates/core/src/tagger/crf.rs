//! Linear-chain CRF scoring, partition function and Viterbi decoding.
//!
//! Transitions are a `(K + 2) x (K + 2)` matrix where row/column `K` is a
//! virtual start state and `K + 1` a virtual stop state, so a path
//! `y_1 .. y_L` scores
//! `trans[START][y_1] + Σ e_t(y_t) + Σ trans[y_t][y_{t+1}] + trans[y_L][STOP]`.
//! Emissions are `L x K` row-major.

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Graph, Real, Var};

#[derive(Clone, Copy)]
struct Chain<'a, F> {
    k: usize,
    trans: &'a [F],
}

impl<'a, F: Real> Chain<'a, F> {
    fn new(emissions: &[F], k: usize, trans: &'a [F]) -> Result<(Self, usize)> {
        if k == 0 {
            return Err(Error::Parameter("CRF needs at least one tag".into()));
        }
        if trans.len() != (k + 2) * (k + 2) {
            return Err(Error::dims("crf transitions", &[k + 2, k + 2], &[trans.len()]));
        }
        if !emissions.len().is_multiple_of(k) {
            return Err(Error::dims("crf emissions", &[k], &[emissions.len()]));
        }
        let len = emissions.len() / k;
        if len == 0 {
            return Err(Error::EmptySequence);
        }
        Ok((Self { k, trans }, len))
    }

    fn pair(&self, i: usize, j: usize) -> F {
        self.trans[i * (self.k + 2) + j]
    }

    fn start(&self, j: usize) -> F {
        self.pair(self.k, j)
    }

    fn stop(&self, i: usize) -> F {
        self.pair(i, self.k + 1)
    }

    /// Log forward messages, `len x k`.
    fn alphas(&self, e: &[F], len: usize) -> Vec<F> {
        let k = self.k;
        let mut alpha = vec![F::zero(); len * k];
        for j in 0..k {
            alpha[j] = self.start(j) + e[j];
        }
        let mut buf = vec![F::zero(); k];
        for t in 1..len {
            for j in 0..k {
                for i in 0..k {
                    buf[i] = alpha[(t - 1) * k + i] + self.pair(i, j);
                }
                alpha[t * k + j] = log_sum_exp(&buf) + e[t * k + j];
            }
        }
        alpha
    }

    /// Log backward messages, `len x k`, including the stop transition.
    fn betas(&self, e: &[F], len: usize) -> Vec<F> {
        let k = self.k;
        let mut beta = vec![F::zero(); len * k];
        for i in 0..k {
            beta[(len - 1) * k + i] = self.stop(i);
        }
        let mut buf = vec![F::zero(); k];
        for t in (0..len - 1).rev() {
            for i in 0..k {
                for j in 0..k {
                    buf[j] = self.pair(i, j) + e[(t + 1) * k + j] + beta[(t + 1) * k + j];
                }
                beta[t * k + i] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_z(&self, alpha: &[F], len: usize) -> F {
        let k = self.k;
        let last: Vec<F> = (0..k).map(|j| alpha[(len - 1) * k + j] + self.stop(j)).collect();
        log_sum_exp(&last)
    }

    fn score(&self, e: &[F], tags: &[usize]) -> F {
        let k = self.k;
        let mut s = self.start(tags[0]);
        for (t, &y) in tags.iter().enumerate() {
            s = s + e[t * k + y];
            if t > 0 {
                s = s + self.pair(tags[t - 1], y);
            }
        }
        s + self.stop(tags[tags.len() - 1])
    }
}

fn check_tags(tags: &[usize], len: usize, k: usize) -> Result<()> {
    if tags.len() != len {
        return Err(Error::dims("crf tags", &[len], &[tags.len()]));
    }
    if let Some(&bad) = tags.iter().find(|&&t| t >= k) {
        return Err(Error::Index {
            what: "crf tag",
            index: bad,
            limit: k,
        });
    }
    Ok(())
}

/// `log Σ_paths exp(score(path))` via the forward recursion.
pub fn crf_log_partition<F: Real>(emissions: &[F], num_tags: usize, transitions: &[F]) -> Result<F> {
    let (chain, len) = Chain::new(emissions, num_tags, transitions)?;
    let alpha = chain.alphas(emissions, len);
    Ok(chain.log_z(&alpha, len))
}

/// Score of one tag path, including start and stop transitions.
pub fn crf_path_score<F: Real>(emissions: &[F], num_tags: usize, transitions: &[F], tags: &[usize]) -> Result<F> {
    let (chain, len) = Chain::new(emissions, num_tags, transitions)?;
    check_tags(tags, len, num_tags)?;
    Ok(chain.score(emissions, tags))
}

/// Negative log-likelihood `logZ - score(tags)`.
pub fn crf_nll<F: Real>(emissions: &[F], num_tags: usize, transitions: &[F], tags: &[usize]) -> Result<F> {
    let (chain, len) = Chain::new(emissions, num_tags, transitions)?;
    check_tags(tags, len, num_tags)?;
    let alpha = chain.alphas(emissions, len);
    Ok(chain.log_z(&alpha, len) - chain.score(emissions, tags))
}

/// NLL together with its gradient with respect to emissions and
/// transitions (expected minus observed feature counts).
pub fn crf_nll_with_grad<F: Real>(
    emissions: &[F],
    num_tags: usize,
    transitions: &[F],
    tags: &[usize],
) -> Result<(F, Vec<F>, Vec<F>)> {
    let (chain, len) = Chain::new(emissions, num_tags, transitions)?;
    check_tags(tags, len, num_tags)?;
    let k = num_tags;
    let w = k + 2;
    let alpha = chain.alphas(emissions, len);
    let beta = chain.betas(emissions, len);
    let log_z = chain.log_z(&alpha, len);
    let mut d_e = vec![F::zero(); len * k];
    let mut d_t = vec![F::zero(); w * w];
    for t in 0..len {
        for j in 0..k {
            let p = (alpha[t * k + j] + beta[t * k + j] - log_z).exp();
            d_e[t * k + j] = p;
            if t == 0 {
                d_t[k * w + j] = d_t[k * w + j] + p;
            }
            if t == len - 1 {
                d_t[j * w + k + 1] = d_t[j * w + k + 1] + p;
            }
        }
        if t + 1 < len {
            for i in 0..k {
                for j in 0..k {
                    let xi = (alpha[t * k + i] + chain.pair(i, j) + emissions[(t + 1) * k + j] + beta[(t + 1) * k + j]
                        - log_z)
                        .exp();
                    d_t[i * w + j] = d_t[i * w + j] + xi;
                }
            }
        }
    }
    for (t, &y) in tags.iter().enumerate() {
        d_e[t * k + y] = d_e[t * k + y] - F::one();
        if t > 0 {
            let prev = tags[t - 1];
            d_t[prev * w + y] = d_t[prev * w + y] - F::one();
        }
    }
    d_t[k * w + tags[0]] = d_t[k * w + tags[0]] - F::one();
    d_t[tags[len - 1] * w + k + 1] = d_t[tags[len - 1] * w + k + 1] - F::one();
    Ok((log_z - chain.score(emissions, tags), d_e, d_t))
}

/// Highest-scoring path. Ties go to the lower tag index, both at each
/// back-pointer and at the final step.
pub fn viterbi_decode<F: Real>(emissions: &[F], num_tags: usize, transitions: &[F]) -> Result<Vec<usize>> {
    let (chain, len) = Chain::new(emissions, num_tags, transitions)?;
    let k = num_tags;
    let mut score: Vec<F> = (0..k).map(|j| chain.start(j) + emissions[j]).collect();
    let mut back = vec![0usize; len * k];
    let mut next = vec![F::zero(); k];
    for t in 1..len {
        for j in 0..k {
            let mut best = 0;
            let mut best_score = score[0] + chain.pair(0, j);
            for i in 1..k {
                let s = score[i] + chain.pair(i, j);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            back[t * k + j] = best;
            next[j] = best_score + emissions[t * k + j];
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    let mut last_score = score[0] + chain.stop(0);
    for j in 1..k {
        let s = score[j] + chain.stop(j);
        if s > last_score {
            last = j;
            last_score = s;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok(path)
}

/// Copies sentence `b`'s emission rows out of a time-major `[steps * batch, k]`
/// block.
pub(crate) fn sentence_rows<F: Copy>(block: &[F], batch: usize, k: usize, b: usize, len: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(len * k);
    for t in 0..len {
        let r = t * batch + b;
        out.extend_from_slice(&block[r * k..(r + 1) * k]);
    }
    out
}

/// Mean CRF NLL over the sentences of a time-major emission block.
pub fn crf_nll_loss<F: Real>(
    g: &mut Graph<'_, F>,
    emissions: Var,
    transitions: Var,
    batch: usize,
    lengths: &[usize],
    tags: &[&[usize]],
) -> Result<Var> {
    let (rows, k) = g.shape(emissions);
    if lengths.len() != batch || tags.len() != batch || batch == 0 || rows % batch != 0 {
        return Err(Error::dims("crf_nll", &[rows, k], &[batch, lengths.len(), tags.len()]));
    }
    let trans = g.value(transitions).to_vec();
    let block = g.value(emissions);
    let mut d_block = vec![F::zero(); rows * k];
    let mut d_trans = vec![F::zero(); trans.len()];
    let mut total = 0.0f64;
    let inv = F::of(1.0 / batch as f64);
    for b in 0..batch {
        let e = sentence_rows(block, batch, k, b, lengths[b]);
        let (nll, d_e, d_t) = crf_nll_with_grad(&e, k, &trans, tags[b])?;
        total += nll.as_f64();
        for t in 0..lengths[b] {
            let r = t * batch + b;
            for j in 0..k {
                d_block[r * k + j] = d_e[t * k + j] * inv;
            }
        }
        for (acc, d) in d_trans.iter_mut().zip(&d_t) {
            *acc = *acc + *d * inv;
        }
    }
    g.custom_loss(
        F::of(total / batch as f64),
        vec![(emissions, d_block), (transitions, d_trans)],
    )
}
