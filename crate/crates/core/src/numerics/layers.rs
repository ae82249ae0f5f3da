//! Recurrent layers assembled from graph primitives.

use super::{Graph, Real, Var};
use crate::error::{Error, Result};

/// Graph handles for one LSTM direction. Gates are laid out (i, f, g, o)
/// along the `4H` axis of `w_x: [in, 4H]`, `w_h: [H, 4H]` and `bias: [4H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
}

impl LstmVars {
    pub fn hidden<F: Real>(&self, g: &Graph<'_, F>) -> usize {
        g.shape(self.w_h).0
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell<F: Real>(
    g: &mut Graph<'_, F>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmVars,
) -> Result<(Var, Var)> {
    let zx = g.linear(x_t, w.w_x, w.bias)?;
    let zh = g.matmul(h_prev, w.w_h)?;
    let z = g.add(zx, zh)?;
    let c = g.lstm_cell_state(z, c_prev)?;
    let h = g.lstm_hidden(z, c)?;
    Ok((h, c))
}

fn run_direction<F: Real>(
    g: &mut Graph<'_, F>,
    inputs: Var,
    batch: usize,
    lengths: &[usize],
    w: &LstmVars,
    reverse: bool,
) -> Result<Vec<Var>> {
    let steps = g.shape(inputs).0 / batch;
    let hidden = w.hidden(g);
    let proj = g.linear(inputs, w.w_x, w.bias)?;
    let mut h = g.zeros(batch, hidden);
    let mut c = g.zeros(batch, hidden);
    let mut outputs = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for (i, &t) in order.iter().enumerate() {
        let zx = g.slice_rows(proj, t * batch, batch)?;
        let z = if i == 0 {
            zx
        } else {
            let zh = g.matmul(h, w.w_h)?;
            g.add(zx, zh)?
        };
        let c_new = g.lstm_cell_state(z, c)?;
        let h_new = g.lstm_hidden(z, c_new)?;
        let valid: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
        if valid.iter().all(|&v| v) {
            h = h_new;
            c = c_new;
        } else {
            h = g.blend(h_new, h, &valid)?;
            c = g.blend(c_new, c, &valid)?;
        }
        outputs[t] = h;
    }
    Ok(outputs)
}

/// Bidirectional LSTM over time-major `inputs: [steps * batch, in]`, where
/// row `t * batch + b` is step `t` of sequence `b`. Sequence `b` occupies
/// its first `lengths[b]` steps; the right-to-left pass starts at each
/// sequence's own last step. Output is `[steps * batch, 2H]`.
pub fn bilstm<F: Real>(
    g: &mut Graph<'_, F>,
    inputs: Var,
    batch: usize,
    lengths: &[usize],
    forward: &LstmVars,
    backward: &LstmVars,
) -> Result<Var> {
    let rows = g.shape(inputs).0;
    if batch == 0 || !rows.is_multiple_of(batch) || lengths.len() != batch {
        return Err(Error::dims("bilstm", &[rows], &[batch, lengths.len()]));
    }
    if forward.hidden(g) != backward.hidden(g) {
        return Err(Error::dims("bilstm", &[forward.hidden(g)], &[backward.hidden(g)]));
    }
    let fw = run_direction(g, inputs, batch, lengths, forward, false)?;
    let bw = run_direction(g, inputs, batch, lengths, backward, true)?;
    let fw = g.stack_rows(&fw)?;
    let bw = g.stack_rows(&bw)?;
    g.concat(&[fw, bw])
}
