//! Reverse-mode differentiation over 2-D values.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Values are stored as row-major `rows x cols` matrices; scalars are
//! `1 x 1`. Parameters are borrowed from the caller's tensor slice rather
//! than copied, and their gradients are collected into a [`Gradients`]
//! buffer by [`Graph::backward`].

use super::functional::{log_softmax_into, log_sum_exp, softmax_into};
use super::{gemm, sigmoid, Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which way round the distillation divergence is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(student || teacher)`.
    #[default]
    StudentTeacher,
    /// `KL(teacher || student)`.
    TeacherStudent,
}

enum Value<F> {
    Owned(Vec<F>),
    Param(usize),
}

enum Op<F> {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    StackRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Unfold {
        input: Var,
        groups: usize,
        steps: usize,
        window: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Dropout(Var, Vec<F>),
    Blend(Var, Var, Vec<bool>),
    LstmCell(Var, Var),
    LstmHidden(Var, Var),
    /// Scalar whose local gradient with respect to each input was computed
    /// during the forward pass.
    Loss(Vec<(Var, Vec<F>)>),
    WeightedSum(Vec<(Var, F)>),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(_) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::StackRows(_) => "stack_rows",
            Op::Gather(..) => "embedding_gather",
            Op::Unfold { .. } => "conv1d_unfold",
            Op::MaxPool { .. } => "max_pool_over_time",
            Op::Dropout(..) => "dropout",
            Op::Blend(..) => "blend",
            Op::LstmCell(..) => "lstm_cell",
            Op::LstmHidden(..) => "lstm_hidden",
            Op::Loss(_) => "loss",
            Op::WeightedSum(_) => "weighted_sum",
        }
    }
}

struct Node<F> {
    rows: usize,
    cols: usize,
    value: Value<F>,
    op: Op<F>,
}

/// Per-parameter gradient buffers produced by [`Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    per_param: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn new(num_params: usize) -> Self {
        Self {
            per_param: vec![None; num_params],
        }
    }

    /// Gradient for parameter `idx`, or `None` if it did not influence the
    /// differentiated output.
    pub fn get(&self, idx: usize) -> Option<&[F]> {
        self.per_param.get(idx).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.per_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_param.is_empty()
    }

    /// Adds these gradients into the parameters' gradient slots.
    pub fn accumulate_into(&self, params: &mut [Tensor<F>]) -> Result<()> {
        if params.len() != self.per_param.len() {
            return Err(Error::dims(
                "accumulate_gradients",
                &[params.len()],
                &[self.per_param.len()],
            ));
        }
        for (p, g) in params.iter_mut().zip(&self.per_param) {
            if let Some(g) = g {
                p.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    fn slot(&mut self, idx: usize, len: usize) -> &mut [F] {
        self.per_param[idx].get_or_insert_with(|| vec![F::zero(); len])
    }
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p, F: Real> {
    params: &'p [Tensor<F>],
    nodes: Vec<Node<F>>,
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d = *d + *s);
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new(params: &'p [Tensor<F>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[F] {
        match &self.nodes[v.0].value {
            Value::Owned(x) => x,
            Value::Param(i) => self.params[*i].values(),
        }
    }

    /// The single entry of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<F>, op: Op<F>) -> Result<Var> {
        debug_assert_eq!(values.len(), rows * cols, "{}", op.name());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(values),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, idx: usize) -> Result<Var> {
        let t = self.params.get(idx).ok_or(Error::Index {
            what: "parameter",
            index: idx,
            limit: self.params.len(),
        })?;
        let (rows, cols) = (t.rows(), t.cols());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Param(idx),
            op: Op::Param(idx),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant (non-differentiated) input.
    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<F>) -> Result<Var> {
        if values.len() != rows * cols {
            return Err(Error::dims("input", &[rows, cols], &[values.len()]));
        }
        self.push(rows, cols, values, Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![F::zero(); rows * cols], Op::Input)
            .expect("zeros are finite")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::dims("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// Affine map `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(x);
        let (k2, n) = self.shape(w);
        if k != k2 {
            return Err(Error::dims("linear", &[m, k], &[k2, n]));
        }
        let (br, bc) = self.shape(b);
        if br * bc != n {
            return Err(Error::dims("linear bias", &[k2, n], &[br, bc]));
        }
        let bias = self.value(b);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        gemm(m, k, n, self.value(x), false, self.value(w), false, &mut out, true);
        self.push(m, n, out, Op::Linear(x, w, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(Error::dims(op, &[sa.0, sa.1], &[sb.0, sb.1]));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push(r, c, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(r, c, out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(r, c, out, Op::Sigmoid(a))
    }

    /// Column-wise concatenation of nodes with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::dims("concat", &[rows], &[r]));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        self.push(rows, cols, out, Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(Error::dims("slice_cols", &[rows, cols], &[start, len]));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        self.push(rows, len, out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start + len > rows {
            return Err(Error::dims("slice_rows", &[rows, cols], &[start, len]));
        }
        let out = self.value(a)[start * cols..(start + len) * cols].to_vec();
        self.push(len, cols, out, Op::SliceRows(a, start))
    }

    /// Row-wise concatenation of nodes with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p).1).unwrap_or(0);
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::dims("stack_rows", &[cols], &[c]));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(rows, cols, out, Op::StackRows(parts.to_vec()))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::Index {
                what: "embedding_gather",
                index: bad,
                limit: vocab,
            });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        self.push(ids.len(), dim, out, Op::Gather(table, ids.to_vec()))
    }

    /// Sliding-window unfold: `input` holds `groups` blocks of `steps` rows;
    /// each output row concatenates `window` consecutive input rows of one
    /// block, giving `groups * (steps - window + 1)` rows.
    pub fn unfold(&mut self, input: Var, groups: usize, steps: usize, window: usize) -> Result<Var> {
        let (rows, c) = self.shape(input);
        if rows != groups * steps || window == 0 || window > steps {
            return Err(Error::dims("conv1d_over_time", &[rows, c], &[groups, steps, window]));
        }
        let out_steps = steps - window + 1;
        let src = self.value(input);
        let mut out = Vec::with_capacity(groups * out_steps * window * c);
        for g in 0..groups {
            for p in 0..out_steps {
                let start = (g * steps + p) * c;
                out.extend_from_slice(&src[start..start + window * c]);
            }
        }
        self.push(
            groups * out_steps,
            window * c,
            out,
            Op::Unfold {
                input,
                groups,
                steps,
                window,
            },
        )
    }

    /// 1-D convolution over time: `kernel` is `[window * c_in, filters]`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d_over_time(
        &mut self,
        input: Var,
        groups: usize,
        steps: usize,
        window: usize,
        kernel: Var,
        bias: Var,
    ) -> Result<Var> {
        let cols = self.unfold(input, groups, steps, window)?;
        self.linear(cols, kernel, bias)
    }

    /// Column-wise max over each group of `span` rows, considering only the
    /// first `lengths[g]` rows of group `g`.
    pub fn max_pool_over_time(&mut self, input: Var, span: usize, lengths: &[usize]) -> Result<Var> {
        let (rows, c) = self.shape(input);
        let groups = lengths.len();
        if rows != groups * span || lengths.iter().any(|&l| l == 0 || l > span) {
            return Err(Error::dims("max_pool_over_time", &[rows, c], &[groups, span]));
        }
        let src = self.value(input);
        let mut out = Vec::with_capacity(groups * c);
        let mut argmax = Vec::with_capacity(groups * c);
        for (g, &len) in lengths.iter().enumerate() {
            for j in 0..c {
                let mut best = g * span;
                for r in g * span + 1..g * span + len {
                    if src[r * c + j] > src[best * c + j] {
                        best = r;
                    }
                }
                out.push(src[best * c + j]);
                argmax.push(best);
            }
        }
        self.push(groups, c, out, Op::MaxPool { input, argmax })
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = F::of(1.0 / (1.0 - rate));
        let (r, c) = self.shape(x);
        let mask: Vec<F> = (0..r * c)
            .map(|_| if rng.uniform() < rate { F::zero() } else { keep })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(r, c, out, Op::Dropout(x, mask))
    }

    /// Row-wise select: rows flagged in `keep_new` come from `new`, the
    /// rest from `prev`.
    pub fn blend(&mut self, new: Var, prev: Var, keep_new: &[bool]) -> Result<Var> {
        let (r, c) = self.same_shape("blend", new, prev)?;
        if keep_new.len() != r {
            return Err(Error::dims("blend", &[r], &[keep_new.len()]));
        }
        let (a, b) = (self.value(new), self.value(prev));
        let mut out = Vec::with_capacity(r * c);
        for (row, &k) in keep_new.iter().enumerate() {
            let src = if k { a } else { b };
            out.extend_from_slice(&src[row * c..(row + 1) * c]);
        }
        self.push(r, c, out, Op::Blend(new, prev, keep_new.to_vec()))
    }

    /// Cell update `c = σ(z_f) ⊙ c_prev + σ(z_i) ⊙ tanh(z_g)` where `z` holds
    /// the pre-activations of gates (i, f, g, o) side by side.
    pub fn lstm_cell_state(&mut self, z: Var, c_prev: Var) -> Result<Var> {
        let (b, four_h) = self.shape(z);
        let h = four_h / 4;
        if four_h != 4 * h || self.shape(c_prev) != (b, h) {
            let (pr, pc) = self.shape(c_prev);
            return Err(Error::dims("lstm_cell", &[b, four_h], &[pr, pc]));
        }
        let (zv, cv) = (self.value(z), self.value(c_prev));
        let mut out = Vec::with_capacity(b * h);
        for r in 0..b {
            let zr = &zv[r * four_h..(r + 1) * four_h];
            for j in 0..h {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[h + j]);
                let g = zr[2 * h + j].tanh();
                out.push(f * cv[r * h + j] + i * g);
            }
        }
        self.push(b, h, out, Op::LstmCell(z, c_prev))
    }

    /// Hidden output `h = σ(z_o) ⊙ tanh(c)`.
    pub fn lstm_hidden(&mut self, z: Var, c: Var) -> Result<Var> {
        let (b, four_h) = self.shape(z);
        let h = four_h / 4;
        if four_h != 4 * h || self.shape(c) != (b, h) {
            let (pr, pc) = self.shape(c);
            return Err(Error::dims("lstm_hidden", &[b, four_h], &[pr, pc]));
        }
        let (zv, cv) = (self.value(z), self.value(c));
        let mut out = Vec::with_capacity(b * h);
        for r in 0..b {
            for j in 0..h {
                let o = sigmoid(zv[r * four_h + 3 * h + j]);
                out.push(o * cv[r * h + j].tanh());
            }
        }
        self.push(b, h, out, Op::LstmHidden(z, c))
    }

    /// Registers a scalar loss whose gradient with respect to each listed
    /// input has already been computed by the caller.
    pub fn custom_loss(&mut self, value: F, local_grads: Vec<(Var, Vec<F>)>) -> Result<Var> {
        for (v, g) in &local_grads {
            let (r, c) = self.shape(*v);
            if g.len() != r * c {
                return Err(Error::dims("custom_loss", &[r, c], &[g.len()]));
            }
        }
        self.push(1, 1, vec![value], Op::Loss(local_grads))
    }

    /// Mean token cross-entropy of `logits` rows against `targets`; rows
    /// whose target is `None` are masked out.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, k) = self.shape(logits);
        if targets.len() != rows {
            return Err(Error::dims("cross_entropy", &[rows, k], &[targets.len()]));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        let z = self.value(logits);
        let mut grad = vec![F::zero(); rows * k];
        let mut total = 0.0f64;
        if count > 0 {
            let inv = F::of(1.0 / count as f64);
            for (r, t) in targets.iter().enumerate() {
                let Some(t) = *t else { continue };
                if t >= k {
                    return Err(Error::Index {
                        what: "cross_entropy target",
                        index: t,
                        limit: k,
                    });
                }
                let row = &z[r * k..(r + 1) * k];
                total += (log_sum_exp(row) - row[t]).as_f64();
                let g = &mut grad[r * k..(r + 1) * k];
                softmax_into(row, F::one(), g);
                g[t] = g[t] - F::one();
                g.iter_mut().for_each(|x| *x = *x * inv);
            }
            total /= count as f64;
        }
        self.custom_loss(F::of(total), vec![(logits, grad)])
    }

    /// Temperature-softened KL divergence between the softmax of `logits`
    /// and the softmax of the constant `teacher` rows, averaged over rows
    /// flagged in `mask` and multiplied by `scale`. Gradient flows into
    /// `logits` only.
    pub fn kl_distill(
        &mut self,
        logits: Var,
        teacher: &[F],
        mask: &[bool],
        temperature: F,
        direction: KlDirection,
        scale: F,
    ) -> Result<Var> {
        if !(temperature > F::zero()) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let (rows, k) = self.shape(logits);
        if teacher.len() != rows * k || mask.len() != rows {
            return Err(Error::dims("kl_divergence", &[rows, k], &[teacher.len(), mask.len()]));
        }
        let count = mask.iter().filter(|&&m| m).count();
        let z = self.value(logits);
        let mut grad = vec![F::zero(); rows * k];
        let mut total = 0.0f64;
        if count > 0 {
            let mut lp = vec![F::zero(); k];
            let mut lq = vec![F::zero(); k];
            let coef = scale / (F::of(count as f64) * temperature);
            for r in (0..rows).filter(|&r| mask[r]) {
                log_softmax_into(&z[r * k..(r + 1) * k], temperature, &mut lp);
                log_softmax_into(&teacher[r * k..(r + 1) * k], temperature, &mut lq);
                let g = &mut grad[r * k..(r + 1) * k];
                match direction {
                    KlDirection::StudentTeacher => {
                        let kl: F = lp.iter().zip(&lq).map(|(&a, &b)| a.exp() * (a - b)).sum();
                        total += kl.as_f64();
                        for i in 0..k {
                            g[i] = coef * lp[i].exp() * (lp[i] - lq[i] - kl);
                        }
                    }
                    KlDirection::TeacherStudent => {
                        let kl: F = lp.iter().zip(&lq).map(|(&a, &b)| b.exp() * (b - a)).sum();
                        total += kl.as_f64();
                        for i in 0..k {
                            g[i] = coef * (lp[i].exp() - lq[i].exp());
                        }
                    }
                }
            }
            total = total / count as f64 * scale.as_f64();
        }
        self.custom_loss(F::of(total), vec![(logits, grad)])
    }

    /// `Σ w_i · x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Result<Var> {
        let mut total = 0.0f64;
        for &(v, w) in terms {
            if self.shape(v) != (1, 1) {
                let (r, c) = self.shape(v);
                return Err(Error::dims("weighted_sum", &[1, 1], &[r, c]));
            }
            total += w.as_f64() * self.scalar(v).as_f64();
        }
        self.push(1, 1, vec![F::of(total)], Op::WeightedSum(terms.to_vec()))
    }

    /// Back-propagates from the scalar `output` and returns the gradient of
    /// every parameter that influenced it.
    pub fn backward(&self, output: Var) -> Result<Gradients<F>> {
        if self.shape(output) != (1, 1) {
            let (r, c) = self.shape(output);
            return Err(Error::dims("backward", &[1, 1], &[r, c]));
        }
        let mut bp = Backprop {
            graph: self,
            node_grads: (0..=output.0).map(|_| None).collect(),
            params: Gradients::new(self.params.len()),
        };
        bp.node_grads[output.0] = Some(vec![F::one()]);
        for i in (0..=output.0).rev() {
            let Some(g) = bp.node_grads[i].take() else {
                continue;
            };
            bp.step(i, &g);
        }
        Ok(bp.params)
    }
}

struct Backprop<'g, 'p, F: Real> {
    graph: &'g Graph<'p, F>,
    node_grads: Vec<Option<Vec<F>>>,
    params: Gradients<F>,
}

impl<F: Real> Backprop<'_, '_, F> {
    /// Gradient accumulator for `v`; parameters accumulate straight into
    /// the output buffers. Returns `None` for constant inputs.
    fn slot(&mut self, v: Var) -> Option<&mut [F]> {
        let node = &self.graph.nodes[v.0];
        match node.op {
            Op::Input => None,
            Op::Param(idx) => {
                let len = self.graph.params[idx].len();
                if self.graph.params[idx].requires_grad() {
                    Some(self.params.slot(idx, len))
                } else {
                    None
                }
            }
            _ => {
                let len = node.rows * node.cols;
                Some(self.node_grads[v.0].get_or_insert_with(|| vec![F::zero(); len]))
            }
        }
    }

    fn step(&mut self, i: usize, g: &[F]) {
        let graph = self.graph;
        let node = &graph.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => self.matmul_back(*a, *b, g, rows, cols),
            Op::Linear(x, w, b) => {
                self.matmul_back(*x, *w, g, rows, cols);
                if let Some(db) = self.slot(*b) {
                    for r in 0..rows {
                        add_into(db, &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(*a) {
                    add_into(da, g);
                }
                if let Some(db) = self.slot(*b) {
                    add_into(db, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (graph.value(*a), graph.value(*b));
                if let Some(da) = self.slot(*a) {
                    for ((d, &gg), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d = *d + gg * y;
                    }
                }
                if let Some(db) = self.slot(*b) {
                    for ((d, &gg), &x) in db.iter_mut().zip(g).zip(av) {
                        *d = *d + gg * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(da) = self.slot(*a) {
                    da.iter_mut().zip(g).for_each(|(d, &gg)| *d = *d + gg * s);
                }
            }
            Op::Tanh(a) => {
                let y = graph.value(Var(i));
                if let Some(da) = self.slot(*a) {
                    for ((d, &gg), &yy) in da.iter_mut().zip(g).zip(y) {
                        *d = *d + gg * (F::one() - yy * yy);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = graph.value(Var(i));
                if let Some(da) = self.slot(*a) {
                    for ((d, &gg), &yy) in da.iter_mut().zip(g).zip(y) {
                        *d = *d + gg * yy * (F::one() - yy);
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = graph.shape(p).1;
                    if let Some(dp) = self.slot(p) {
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * pc..(r + 1) * pc],
                                &g[r * cols + offset..r * cols + offset + pc],
                            );
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let src_cols = graph.shape(*a).1;
                let start = *start;
                if let Some(da) = self.slot(*a) {
                    for r in 0..rows {
                        add_into(
                            &mut da[r * src_cols + start..r * src_cols + start + cols],
                            &g[r * cols..(r + 1) * cols],
                        );
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let start = *start;
                if let Some(da) = self.slot(*a) {
                    add_into(&mut da[start * cols..(start + rows) * cols], g);
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = graph.shape(p).0 * cols;
                    if let Some(dp) = self.slot(p) {
                        add_into(dp, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Gather(table, ids) => {
                if let Some(dt) = self.slot(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::Unfold {
                input,
                groups,
                steps,
                window,
            } => {
                let c = cols / window;
                let out_steps = steps - window + 1;
                if let Some(di) = self.slot(*input) {
                    for gi in 0..*groups {
                        for p in 0..out_steps {
                            let src = &g[(gi * out_steps + p) * cols..(gi * out_steps + p + 1) * cols];
                            let start = (gi * steps + p) * c;
                            add_into(&mut di[start..start + window * c], src);
                        }
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if let Some(di) = self.slot(*input) {
                    for (o, &src_row) in argmax.iter().enumerate() {
                        let j = o % cols;
                        di[src_row * cols + j] = di[src_row * cols + j] + g[o];
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(dx) = self.slot(*x) {
                    for ((d, &gg), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d = *d + gg * m;
                    }
                }
            }
            Op::Blend(new, prev, keep) => {
                if let Some(dn) = self.slot(*new) {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            add_into(&mut dn[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                if let Some(dp) = self.slot(*prev) {
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            add_into(&mut dp[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
            }
            Op::LstmCell(z, c_prev) => {
                let h = cols;
                let four_h = 4 * h;
                let (zv, cv) = (graph.value(*z), graph.value(*c_prev));
                let mut dz = vec![F::zero(); rows * four_h];
                let mut dc = vec![F::zero(); rows * h];
                for r in 0..rows {
                    let zr = &zv[r * four_h..(r + 1) * four_h];
                    for j in 0..h {
                        let gc = g[r * h + j];
                        let i = sigmoid(zr[j]);
                        let f = sigmoid(zr[h + j]);
                        let gg = zr[2 * h + j].tanh();
                        let cp = cv[r * h + j];
                        dz[r * four_h + j] = gc * gg * i * (F::one() - i);
                        dz[r * four_h + h + j] = gc * cp * f * (F::one() - f);
                        dz[r * four_h + 2 * h + j] = gc * i * (F::one() - gg * gg);
                        dc[r * h + j] = gc * f;
                    }
                }
                if let Some(d) = self.slot(*z) {
                    add_into(d, &dz);
                }
                if let Some(d) = self.slot(*c_prev) {
                    add_into(d, &dc);
                }
            }
            Op::LstmHidden(z, c) => {
                let h = cols;
                let four_h = 4 * h;
                let (zv, cv) = (graph.value(*z), graph.value(*c));
                let mut dz = vec![F::zero(); rows * four_h];
                let mut dc = vec![F::zero(); rows * h];
                for r in 0..rows {
                    for j in 0..h {
                        let gh = g[r * h + j];
                        let o = sigmoid(zv[r * four_h + 3 * h + j]);
                        let t = cv[r * h + j].tanh();
                        dz[r * four_h + 3 * h + j] = gh * t * o * (F::one() - o);
                        dc[r * h + j] = gh * o * (F::one() - t * t);
                    }
                }
                if let Some(d) = self.slot(*z) {
                    add_into(d, &dz);
                }
                if let Some(d) = self.slot(*c) {
                    add_into(d, &dc);
                }
            }
            Op::Loss(locals) => {
                let up = g[0];
                for (v, local) in locals {
                    if let Some(d) = self.slot(*v) {
                        for (d, &l) in d.iter_mut().zip(local) {
                            *d = *d + up * l;
                        }
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if let Some(d) = self.slot(v) {
                        d[0] = d[0] + w * g[0];
                    }
                }
            }
        }
    }

    fn matmul_back(&mut self, a: Var, b: Var, g: &[F], m: usize, n: usize) {
        let graph = self.graph;
        let k = graph.shape(a).1;
        let (av, bv) = (graph.value(a), graph.value(b));
        if let Some(da) = self.slot(a) {
            gemm(m, n, k, g, false, bv, true, da, true);
        }
        if let Some(db) = self.slot(b) {
            gemm(k, m, n, av, true, g, false, db, true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(shapes: &[(usize, usize)], seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = Rng::new(seed);
        shapes
            .iter()
            .map(|&(r, c)| {
                let v = (0..r * c).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                Tensor::param(vec![r, c], v).unwrap()
            })
            .collect()
    }

    #[test]
    fn matmul_identity() {
        let p = params(&[(3, 4)], 1);
        let mut g = Graph::new(&p);
        let a = g.param(0).unwrap();
        let eye = g
            .input(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let out = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(out), p[0].values());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let p = params(&[(3, 4), (3, 4)], 1);
        let mut g = Graph::new(&p);
        let a = g.param(0).unwrap();
        let b = g.param(1).unwrap();
        match g.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, vec![3, 4]);
                assert_eq!(right, vec![3, 4]);
            }
            other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn max_pool_column_max() {
        let p: Vec<Tensor<f64>> = Vec::new();
        let mut g = Graph::new(&p);
        let x = g.input(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let y = g.max_pool_over_time(x, 2, &[2]).unwrap();
        assert_eq!(g.value(y), &[3.0, 5.0]);
        // Only the first row is valid.
        let y = g.max_pool_over_time(x, 2, &[1]).unwrap();
        assert_eq!(g.value(y), &[1.0, 5.0]);
    }

    #[test]
    fn dropout_degenerate_cases() {
        let p: Vec<Tensor<f64>> = Vec::new();
        let mut g = Graph::new(&p);
        let mut rng = Rng::new(3);
        let x = g.input(1, 4, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let y = g.dropout(x, 0.0, &mut rng, true).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let y = g.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(g.value(y), g.value(x));
        assert!(g.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn non_finite_values_are_errors() {
        let p: Vec<Tensor<f64>> = Vec::new();
        let mut g = Graph::new(&p);
        let x = g.input(1, 1, vec![1e308]).unwrap();
        assert!(matches!(g.scale(x, 1e10), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gather_out_of_range() {
        let p = params(&[(4, 2)], 1);
        let mut g = Graph::new(&p);
        let t = g.param(0).unwrap();
        assert!(matches!(
            g.embedding_gather(t, &[0, 4]),
            Err(Error::Index { index: 4, limit: 4, .. })
        ));
    }

    #[test]
    fn backward_of_linear_sum() {
        // loss = CE(x W + b) with a single row; compare against hand gradient.
        let p = params(&[(2, 3), (1, 3)], 9);
        let mut g = Graph::new(&p);
        let x = g.input(1, 2, vec![0.5, -1.0]).unwrap();
        let w = g.param(0).unwrap();
        let b = g.param(1).unwrap();
        let z = g.linear(x, w, b).unwrap();
        let loss = g.cross_entropy(z, &[Some(1)]).unwrap();
        let grads = g.backward(loss).unwrap();
        let probs = super::super::softmax_t(g.value(z), 1.0).unwrap();
        let mut dz = probs.clone();
        dz[1] -= 1.0;
        let db = grads.get(1).unwrap();
        for j in 0..3 {
            assert!((db[j] - dz[j]).abs() < 1e-12);
        }
        let dw = grads.get(0).unwrap();
        assert!((dw[0] - 0.5 * dz[0]).abs() < 1e-12);
        assert!((dw[3 + 2] + dz[2]).abs() < 1e-12);
    }
}
