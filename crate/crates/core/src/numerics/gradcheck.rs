use super::{Gradients, Real, Tensor};
use crate::error::{Error, Result};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `loss_fn` with central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε` for every entry of every trainable
/// tensor, and returns the largest [`relative_error`].
///
/// `loss_fn` must be deterministic (dropout off). Parameters are restored
/// bit-exactly before returning.
pub fn grad_check<F, L>(mut loss_fn: L, params: &mut [Tensor<F>], epsilon: f64) -> Result<f64>
where
    F: Real,
    L: FnMut(&[Tensor<F>]) -> Result<(F, Gradients<F>)>,
{
    let (base, grads) = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Contract("grad_check: non-finite loss".into()));
    }
    let eps = F::of(epsilon);
    let mut worst = 0.0f64;
    for idx in 0..params.len() {
        if !params[idx].requires_grad() {
            continue;
        }
        let analytic: Vec<F> = match grads.get(idx) {
            Some(g) => g.to_vec(),
            None => vec![F::zero(); params[idx].len()],
        };
        for j in 0..params[idx].len() {
            let original = params[idx].values()[j];
            params[idx].values_mut()[j] = original + eps;
            let plus = loss_fn(params).map(|r| r.0);
            params[idx].values_mut()[j] = original - eps;
            let minus = loss_fn(params).map(|r| r.0);
            params[idx].values_mut()[j] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Contract("grad_check: non-finite loss".into()));
            }
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[j].as_f64(), numeric));
        }
    }
    Ok(worst)
}
