//! Reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] borrows a parameter slice, records every operation applied to
//! its variables, and on [`Tape::backward`] propagates gradients from a
//! scalar loss back to the parameters. A tape belongs to one worker; the
//! borrowed parameters may be shared read-only between tapes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, gelu, gelu_grad, NormStats, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        stats: NormStats,
        shift: Var,
    },
    MeanPool(Var, Vec<bool>),
    NormalizeRows(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    RowDot(Var, Var),
    SumAll(Var),
    Diag(Var),
    LogSumExp(Var, Vec<bool>),
}

#[derive(Debug)]
struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Per-parameter gradients returned by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of parameter `i`, or `None` if it did not reach the loss.
    pub fn get(&self, i: usize) -> Option<&Tensor> {
        self.grads.get(i).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Dense gradients, zero-filled for parameters that did not participate.
    pub fn into_dense(self, params: &[Tensor]) -> Vec<Tensor> {
        self.grads
            .into_iter()
            .zip(params)
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    }
}

pub struct Tape<'p> {
    params: &'p [Tensor],
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params[*i],
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input; gradients are not reported for it.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Input, "input")
    }

    /// Variable for parameter `i` (recorded once, then reused).
    pub fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.param_vars[i] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(i),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[i] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `a[m×k] × b[n×k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul_bt")?;
        let (n, k2) = tb.dims2("matmul_bt")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul_bt",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        tensor::matmul_bt_into(ta.data(), tb.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(out, Op::MatMulBt(a, b), "matmul_bt")
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        tensor::same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds the vector `b[n]` to every row of `a[…×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.last_dim();
        if tb.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::AddRow(a, b), "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c)?;
        self.push(out, Op::Scale(a, c), "scale")
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let ta = self.value(a);
        tensor::same_shape("mul_const", ta, &c)?;
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::MulConst(a, c), "mul_const")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| gelu(*x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::Gelu(a), "gelu")
    }

    /// Row softmax restricted to entries where `mask` is true.
    pub fn softmax_masked(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let out = tensor::softmax_rows_masked(self.value(a), &mask)?;
        self.push(out, Op::Softmax(a), "softmax_rows")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        let (out, stats) =
            tensor::layer_norm_with_stats(self.value(x), self.value(gain), self.value(shift), eps)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                stats,
                shift,
            },
            "layer_norm",
        )
    }

    pub fn mean_pool(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let out = tensor::mean_pool(self.value(x), &mask)?;
        self.push(out, Op::MeanPool(x, mask), "mean_pool")
    }

    /// Unit-normalizes every row (a rank-1 tensor is a single row).
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut data = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.rows());
        for row in data.chunks_mut(d) {
            let n = libm::sqrt(tensor::dot(row, row));
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        self.push(out, Op::NormalizeRows(x, norms), "normalize_rows")
    }

    /// Rows `ids` of `table[V×d]`, stacked into `[len(ids)×d]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = t.dims2("gather")?;
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in &ids {
            if id >= v {
                return Err(Error::invalid(alloc::format!("row {id} out of range for {v} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        self.push(out, Op::Gather(table, ids), "gather")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = t.dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::invalid("column slice out of range"));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        self.push(out, Op::SliceCols(x, start), "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols parts"))?;
        let (r, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in &parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![r],
                    right: vec![pr],
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in &parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        self.push(out, Op::ConcatCols(parts), "concat_cols")
    }

    /// Stacks rank-1 tensors of equal length into a matrix.
    pub fn stack_rows(&mut self, rows: Vec<Var>) -> Result<Var> {
        let first = *rows.first().ok_or(Error::Empty("stack_rows rows"))?;
        let d = self.value(first).numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            let t = self.value(r);
            if t.shape() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: vec![d],
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows.len(), d], data)?;
        self.push(out, Op::StackRows(rows), "stack_rows")
    }

    /// Per-row dot products of two equal-shape tensors.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        tensor::same_shape("row_dot", ta, tb)?;
        let d = ta.last_dim();
        let data = ta
            .data()
            .chunks(d)
            .zip(tb.data().chunks(d))
            .map(|(x, y)| tensor::dot(x, y))
            .collect();
        let out = Tensor::new(vec![ta.rows()], data)?;
        self.push(out, Op::RowDot(a, b), "row_dot")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Diagonal of a square matrix.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("diag")?;
        if r != c {
            return Err(Error::ShapeMismatch {
                op: "diag",
                left: vec![r],
                right: vec![c],
            });
        }
        let data = (0..r).map(|i| t.data()[i * c + i]).collect();
        let out = Tensor::new(vec![r], data)?;
        self.push(out, Op::Diag(a), "diag")
    }

    /// Row-wise `log Σ exp` over the entries where `mask` is true.
    pub fn logsumexp_masked(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "logsumexp",
                left: t.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.rows());
        for (row, live) in t.data().chunks(n).zip(mask.chunks(n)) {
            let max = row
                .iter()
                .zip(live)
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked);
            }
            let sum: f64 = row
                .iter()
                .zip(live)
                .filter(|(_, &m)| m)
                .map(|(v, _)| libm::exp(v - max))
                .sum();
            data.push(max + libm::log(sum));
        }
        let out = Tensor::new(vec![t.rows()], data)?;
        self.push(out, Op::LogSumExp(a, mask), "logsumexp")
    }

    /// Propagates gradients from the scalar `loss` to every parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidShape {
                shape: self.value(loss).shape().to_vec(),
                reason: "backward needs a scalar loss",
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
            self.backprop(i, &g, &mut grads)?;
            if let Op::Param(p) = self.nodes[i].op {
                out.grads[p] = Some(g);
            }
        }
        Ok(out)
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = self.nodes[i].value.as_ref();
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2("matmul")?;
                let n = tb.last_dim();
                // dA = G × Bᵀ, dB = Aᵀ × G
                tensor::matmul_bt_into(gd, tb.data(), acc(grads, self, *a), m, n, k);
                tensor::matmul_at_into(ta.data(), gd, acc(grads, self, *b), m, k, n);
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2("matmul_bt")?;
                let n = tb.rows();
                // dA = G × B, dB = Gᵀ × A
                tensor::matmul_into(gd, tb.data(), acc(grads, self, *a), m, n, k);
                tensor::matmul_at_into(gd, ta.data(), acc(grads, self, *b), m, n, k);
            }
            Op::Add(a, b) => {
                add_into(acc(grads, self, *a), gd, 1.0);
                add_into(acc(grads, self, *b), gd, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, self, *a), gd, 1.0);
                add_into(acc(grads, self, *b), gd, -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for ((o, gv), y) in acc(grads, self, *a).iter_mut().zip(gd).zip(vb) {
                    *o += gv * y;
                }
                for ((o, gv), x) in acc(grads, self, *b).iter_mut().zip(gd).zip(va) {
                    *o += gv * x;
                }
            }
            Op::AddRow(a, b) => {
                add_into(acc(grads, self, *a), gd, 1.0);
                let n = self.value(*b).numel();
                let gb = acc(grads, self, *b);
                for row in gd.chunks(n) {
                    add_into(gb, row, 1.0);
                }
            }
            Op::Scale(a, c) => add_into(acc(grads, self, *a), gd, *c),
            Op::MulConst(a, c) => {
                for ((o, gv), m) in acc(grads, self, *a).iter_mut().zip(gd).zip(c.data()) {
                    *o += gv * m;
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                for ((o, gv), xv) in acc(grads, self, *a).iter_mut().zip(gd).zip(x) {
                    *o += gv * gelu_grad(*xv);
                }
            }
            Op::Softmax(a) => {
                let y = out.expect("softmax value").data();
                let n = self.value(*a).last_dim();
                let ga = acc(grads, self, *a);
                for ((grow, yrow), orow) in gd.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let s = tensor::dot(grow, yrow);
                    for j in 0..n {
                        orow[j] += yrow[j] * (grow[j] - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                stats,
                shift,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gain).data().to_vec();
                let d = xv.last_dim();
                let rows = xv.rows();
                let mut dgain = vec![0.0; d];
                let mut dshift = vec![0.0; d];
                let mut dx = vec![0.0; xv.numel()];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let (mean, inv_std) = (stats.mean[r], stats.inv_std[r]);
                    let xrow = &xv.data()[r * d..(r + 1) * d];
                    let grow = &gd[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (xrow[j] - mean) * inv_std;
                        dxhat[j] = grow[j] * gv[j];
                        dgain[j] += grow[j] * xhat[j];
                        dshift[j] += grow[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = tensor::dot(&dxhat, &xhat) / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = inv_std * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                add_into(acc(grads, self, *x), &dx, 1.0);
                add_into(acc(grads, self, *gain), &dgain, 1.0);
                add_into(acc(grads, self, *shift), &dshift, 1.0);
            }
            Op::MeanPool(x, mask) => {
                let d = self.value(*x).last_dim();
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let gx = acc(grads, self, *x);
                for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                    for j in 0..d {
                        gx[r * d + j] += gd[j] / count;
                    }
                }
            }
            Op::NormalizeRows(x, norms) => {
                let y = out.expect("normalize value").data();
                let d = self.value(*x).last_dim();
                let gx = acc(grads, self, *x);
                for (r, n) in norms.iter().enumerate() {
                    let yrow = &y[r * d..(r + 1) * d];
                    let grow = &gd[r * d..(r + 1) * d];
                    let s = tensor::dot(yrow, grow);
                    for j in 0..d {
                        gx[r * d + j] += (grow[j] - yrow[j] * s) / n;
                    }
                }
            }
            Op::Gather(table, ids) => {
                let d = self.value(*table).last_dim();
                let gt = acc(grads, self, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &gd[r * d..(r + 1) * d], 1.0);
                }
            }
            Op::SliceCols(x, start) => {
                let c = self.value(*x).last_dim();
                let len = g.last_dim();
                let gx = acc(grads, self, *x);
                for (r, grow) in gd.chunks(len).enumerate() {
                    add_into(&mut gx[r * c + start..r * c + start + len], grow, 1.0);
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    let gp = acc(grads, self, p);
                    for (r, grow) in gd.chunks(total).enumerate() {
                        add_into(&mut gp[r * w..(r + 1) * w], &grow[offset..offset + w], 1.0);
                    }
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let d = g.last_dim();
                for (r, &v) in rows.iter().enumerate() {
                    add_into(acc(grads, self, v), &gd[r * d..(r + 1) * d], 1.0);
                }
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                let d = self.value(*a).last_dim();
                let ga = acc(grads, self, *a);
                for (r, gv) in gd.iter().enumerate() {
                    add_into(&mut ga[r * d..(r + 1) * d], &vb[r * d..(r + 1) * d], *gv);
                }
                let gb = acc(grads, self, *b);
                for (r, gv) in gd.iter().enumerate() {
                    add_into(&mut gb[r * d..(r + 1) * d], &va[r * d..(r + 1) * d], *gv);
                }
            }
            Op::SumAll(a) => {
                let s = gd[0];
                acc(grads, self, *a).iter_mut().for_each(|o| *o += s);
            }
            Op::Diag(a) => {
                let n = gd.len();
                let ga = acc(grads, self, *a);
                for (j, gv) in gd.iter().enumerate() {
                    ga[j * n + j] += gv;
                }
            }
            Op::LogSumExp(a, mask) => {
                let x = self.value(*a);
                let n = x.last_dim();
                let p = tensor::softmax_rows_masked(x, mask)?;
                let ga = acc(grads, self, *a);
                for (r, gv) in gd.iter().enumerate() {
                    add_into(&mut ga[r * n..(r + 1) * n], p.row(r), *gv);
                }
            }
        }
        Ok(())
    }
}

/// Mutable gradient buffer for `v`, zero-initialized on first touch.
fn acc<'g>(grads: &'g mut [Option<Tensor>], tape: &Tape<'_>, v: Var) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(tape.value(v).shape()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        let params = [Tensor::vector(alloc::vec![1.0, 2.0]).unwrap()];
        let mut tape = Tape::new(&params);
        let p = tape.param(0);
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let params = [Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut tape = Tape::new(&params);
        let p = tape.param(0);
        let loss = tape.scale(p, 3.0).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(0).unwrap().data(), &[3.0]);
        assert!(g.get(1).is_none());
        let dense = g.into_dense(&params);
        assert_eq!(dense[1].data(), &[0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let params = [Tensor::vector(alloc::vec![1.0, 2.0]).unwrap()];
        let mut tape = Tape::new(&params);
        let p = tape.param(0);
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn non_finite_forward_is_rejected() {
        let params = [Tensor::vector(alloc::vec![1e200, 1e200]).unwrap()];
        let mut tape = Tape::new(&params);
        let p = tape.param(0);
        assert_eq!(tape.mul(p, p), Err(Error::NonFinite { op: "mul" }));
    }
}
