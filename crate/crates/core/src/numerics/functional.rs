//! Forward-only reference forms of the softmax, KL and cross-entropy
//! computations. Graph ops reuse these for their forward values.

use super::Real;
use crate::error::{Error, Result};

/// `ln Σ exp(x_i)` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let sum: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Temperature-scaled softmax of one logit row.
pub fn softmax_t<F: Real>(logits: &[F], temperature: F) -> Result<Vec<F>> {
    if !(temperature > F::zero()) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = vec![F::zero(); logits.len()];
    softmax_into(logits, temperature, &mut out);
    Ok(out)
}

pub(crate) fn softmax_into<F: Real>(logits: &[F], temperature: F, out: &mut [F]) {
    let max = logits.iter().map(|&z| z / temperature).fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z / temperature - max).exp();
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
}

pub(crate) fn log_softmax_into<F: Real>(logits: &[F], temperature: F, out: &mut [F]) {
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = z / temperature;
    }
    let lse = log_sum_exp(out);
    out.iter_mut().for_each(|o| *o = *o - lse);
}

fn check_rows(op: &'static str, len: usize, width: usize, mask: &[bool]) -> Result<usize> {
    if width == 0 || !len.is_multiple_of(width) {
        return Err(Error::dims(op, &[len], &[width]));
    }
    let rows = len / width;
    if mask.len() != rows {
        return Err(Error::dims(op, &[rows], &[mask.len()]));
    }
    Ok(rows)
}

/// Mean over unmasked rows of `Σ_i p_i ln(p_i / q_i)`. `p` and `q` hold
/// probability rows of `width` entries each. Returns zero when every row is
/// masked out.
pub fn kl_divergence<F: Real>(p: &[F], q: &[F], width: usize, mask: &[bool]) -> Result<F> {
    if p.len() != q.len() {
        return Err(Error::dims("kl_divergence", &[p.len()], &[q.len()]));
    }
    let rows = check_rows("kl_divergence", p.len(), width, mask)?;
    let mut total = F::zero();
    let mut count = 0usize;
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let pr = &p[r * width..(r + 1) * width];
        let qr = &q[r * width..(r + 1) * width];
        if pr.iter().chain(qr).any(|&x| !(x > F::zero())) {
            return Err(Error::Domain(format!(
                "kl_divergence requires strictly positive probabilities (row {r})"
            )));
        }
        let kl: F = pr.iter().zip(qr).map(|(&a, &b)| a * (a / b).ln()).sum();
        total = total + kl;
        count += 1;
    }
    if count == 0 {
        return Ok(F::zero());
    }
    Ok(total / F::of(count as f64))
}

/// Mean over unmasked rows of `-ln softmax(logits_row)[target]`.
pub fn cross_entropy<F: Real>(logits: &[F], width: usize, targets: &[usize], mask: &[bool]) -> Result<F> {
    let rows = check_rows("cross_entropy", logits.len(), width, mask)?;
    if targets.len() != rows {
        return Err(Error::dims("cross_entropy", &[rows], &[targets.len()]));
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let t = targets[r];
        if t >= width {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: t,
                limit: width,
            });
        }
        let row = &logits[r * width..(r + 1) * width];
        total = total + log_sum_exp(row) - row[t];
        count += 1;
    }
    if count == 0 {
        return Ok(F::zero());
    }
    Ok(total / F::of(count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_two_class() {
        let p = softmax_t(&[1.0f64, 1.0, 1.0], 3.7).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        // 1 / (1 + e^-1) with z/T = [1, 0]
        let p = softmax_t(&[2.0f64, 0.0], 2.0).unwrap();
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
        let p = softmax_t(&[5.0f64, -5.0], 1e9).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        assert!(matches!(softmax_t(&[1.0f32], 0.0), Err(Error::Parameter(_))));
        assert!(softmax_t(&[1.0f32], -1.0).is_err());
    }

    #[test]
    fn kl_reference_value() {
        let kl = kl_divergence(&[0.5f64, 0.5], &[0.25, 0.75], 2, &[true]).unwrap();
        // 0.5 ln 2 + 0.5 ln(2/3)
        assert!((kl - 0.143_841_036).abs() < 1e-6);
        let same = kl_divergence(&[0.3f64, 0.7], &[0.3, 0.7], 2, &[true]).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn kl_domain_and_shape_errors() {
        assert!(matches!(
            kl_divergence(&[1.0f64, 0.0], &[0.5, 0.5], 2, &[true]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            kl_divergence(&[1.0f64, 0.0], &[0.5], 2, &[true]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&[1e9f64, 0.0, 0.0], 3, &[0], &[true]).unwrap();
        assert!(ce.abs() < 1e-9);
        let ce = cross_entropy(&[0.3f64; 4], 4, &[2], &[true]).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-6);
        let ce = cross_entropy(&[2.0f64, 0.0, 0.0, 2.0], 2, &[1, 0], &[true, true]).unwrap();
        let expected = -(1.0 / (1.0 + 2f64.exp())).ln();
        assert!((ce - expected).abs() < 1e-12);
        assert!((ce - 2.1269).abs() < 1e-3);
        assert!(matches!(
            cross_entropy(&[0.0f64, 0.0], 2, &[2], &[true]),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn masked_rows_ignored() {
        let ce = cross_entropy(&[0.0f64, 0.0, 100.0, -100.0], 2, &[0, 1], &[true, false]).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-12);
    }
}
