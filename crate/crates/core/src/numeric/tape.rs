//! Reverse-mode gradient tape.
//!
//! Every primitive pushes a node holding its output value and whatever it
//! needs to map an output gradient back to its inputs. [`Tape::backward`]
//! walks the nodes in exact reverse order of recording.

use super::tensor::{check_matrix, matmul_nn, matmul_nt, matmul_tn, softmax_in_place, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    ScaleRows(Var, Vec<T>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        picks: Vec<(usize, usize)>,
        probs: Vec<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Grads<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<usize>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Non-leaf node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_matrix("matmul", self.value(a))?;
        let (k2, n) = check_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: [{m},{k}] x [{k2},{n}]"),
            ));
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_matrix("matmul_nt", self.value(a))?;
        let (n, k2) = check_matrix("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(shape_err(
                "matmul_nt",
                format!("inner dimensions differ: [{m},{k}] x [{n},{k2}]ᵀ"),
            ));
        }
        let out = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul_nt", Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_operand(&self, op: &'static str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (m, n) = self.value(x).dims2();
        if self.value(r).numel() != n {
            return Err(shape_err(
                op,
                format!(
                    "row operand has {} values, expected {n}",
                    self.value(r).numel()
                ),
            ));
        }
        Ok((m, n))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("add", out, Op::Add(a, b))
    }

    /// `x[m,n] + row[n]`, broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_operand("add_row", x, row)?;
        let (vx, vr) = (self.value(x), self.value(row).data());
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + vr[i % n])
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("add_row", out, Op::AddRow(x, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `x[m,n] * row[n]`, broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, n) = self.row_operand("mul_row", x, row)?;
        let (vx, vr) = (self.value(x), self.value(row).data());
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * vr[i % n])
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("mul_row", out, Op::MulRow(x, row))
    }

    /// Elementwise product with a constant (untracked) tensor, e.g. a dropout mask.
    pub fn mul_const(&mut self, x: Var, factor: &Tensor<T>) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != factor.shape() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs {:?}", vx.shape(), factor.shape()),
            ));
        }
        let data = vx.data().iter().zip(factor.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("mul_const", out, Op::MulConst(x, factor.data().to_vec()))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, Op::Scale(x, s))
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[T]) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.dims2();
        if factors.len() != m {
            return Err(shape_err(
                "scale_rows",
                format!("{} factors for {m} rows", factors.len()),
            ));
        }
        let data = vx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * factors[i / n])
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("scale_rows", out, Op::ScaleRows(x, factors.to_vec()))
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// the per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.row_operand("layer_norm", x, gain)?;
        self.row_operand("layer_norm", x, bias)?;
        let eps = T::of(LN_EPS);
        let nf = T::of(n as f64);
        let vx = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &vx[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.push(
            "layer_norm",
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let (c, a) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        let out = self
            .value(x)
            .map(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        self.push("gelu", out, Op::Gelu(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Row softmax where columns with `keep[j] == false` receive exactly zero
    /// weight and the remaining entries are renormalized.
    pub fn masked_softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.dims2();
        if let Some(k) = keep {
            if k.len() != n {
                return Err(shape_err(
                    "softmax",
                    format!("mask has {} entries for {n} columns", k.len()),
                ));
            }
            if !k.iter().any(|&b| b) {
                return Err(shape_err("softmax", "mask removes every column".into()));
            }
        }
        let mut data = vx.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut data[i * n..(i + 1) * n], keep);
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push("softmax", out, Op::Softmax(x))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, d) = check_matrix("gather", vt)?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(shape_err(
                    "gather",
                    format!("id {id} out of range for table of {v} rows"),
                ));
            }
            data.extend_from_slice(vt.row(id));
        }
        if ids.is_empty() {
            return Err(shape_err("gather", "no ids".into()));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        self.push(
            "gather",
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = check_matrix("slice_cols", self.value(x))?;
        if len == 0 || start + len > n {
            return Err(shape_err(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let vx = self.value(x);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&vx.row(i)[start..start + len]);
        }
        let out = Tensor::from_parts(vec![m, len], data);
        self.push("slice_cols", out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let m = check_matrix("concat_cols", self.value(first))?.0;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = check_matrix("concat_cols", self.value(p))?;
            if pm != m {
                return Err(shape_err("concat_cols", format!("{pm} rows vs {m}")));
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::from_parts(vec![m, total], data);
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean over the selected rows of `‖pred_row − target_row‖² / d`.
    pub fn mse_rows(&mut self, pred: Var, target: Var, rows: &[usize]) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (m, d) = self.value(pred).dims2();
        if rows.is_empty() || rows.iter().any(|&r| r >= m) {
            return Err(shape_err("mse", format!("invalid row selection for {m} rows")));
        }
        let (p, t) = (self.value(pred), self.value(target));
        let mut acc = T::zero();
        for &r in rows {
            for (a, b) in p.row(r).iter().zip(t.row(r)) {
                acc += (*a - *b) * (*a - *b);
            }
        }
        let loss = acc / T::of((rows.len() * d) as f64);
        self.push(
            "mse",
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target,
                rows: rows.to_vec(),
            },
        )
    }

    /// Mean cross-entropy of row softmax against the class in each
    /// `(row, class)` pick.
    pub fn cross_entropy_rows(&mut self, logits: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let (m, v) = check_matrix("cross_entropy", self.value(logits))?;
        if picks.is_empty() || picks.iter().any(|&(r, c)| r >= m || c >= v) {
            return Err(shape_err(
                "cross_entropy",
                format!("invalid picks for logits [{m},{v}]"),
            ));
        }
        let z = self.value(logits);
        let mut probs = Vec::with_capacity(picks.len() * v);
        let mut acc = T::zero();
        for &(r, c) in picks {
            let row = z.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum = row.iter().map(|&x| (x - max).exp()).sum::<T>();
            let lse = max + sum.ln();
            acc += lse - row[c];
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let loss = acc / T::of(picks.len() as f64);
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                picks: picks.to_vec(),
                probs,
            },
        )
    }

    /// Computes gradients of the scalar `loss` with respect to every
    /// recorded value.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err(
                "backward",
                format!(
                    "loss must be a scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut visited = Vec::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !matches!(node.op, Op::Leaf) {
                visited.push(idx);
            }
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(Grads { grads, visited })
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2();
                let n = vb.cols();
                accumulate(grads, *a, va.shape(), matmul_nt(gd, vb.data(), m, n, k));
                accumulate(grads, *b, vb.shape(), matmul_tn(va.data(), gd, k, m, n));
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2();
                let n = vb.rows();
                accumulate(grads, *a, va.shape(), matmul_nn(gd, vb.data(), m, n, k));
                accumulate(grads, *b, vb.shape(), matmul_tn(gd, va.data(), n, m, k));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::AddRow(x, r) => {
                let n = self.value(*x).cols();
                let mut gr = vec![T::zero(); n];
                for (i, &v) in gd.iter().enumerate() {
                    gr[i % n] += v;
                }
                accumulate(grads, *x, g.shape(), gd.to_vec());
                accumulate(grads, *r, self.value(*r).shape(), gr);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let gb = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                accumulate(grads, *a, g.shape(), ga);
                accumulate(grads, *b, g.shape(), gb);
            }
            Op::MulRow(x, r) => {
                let (vx, vr) = (self.value(*x).data(), self.value(*r).data());
                let n = vr.len();
                let mut gr = vec![T::zero(); n];
                let mut gx = Vec::with_capacity(gd.len());
                for (i, &gv) in gd.iter().enumerate() {
                    gx.push(gv * vr[i % n]);
                    gr[i % n] += gv * vx[i];
                }
                accumulate(grads, *x, g.shape(), gx);
                accumulate(grads, *r, self.value(*r).shape(), gr);
            }
            Op::MulConst(x, factor) => {
                let gx = gd.iter().zip(factor).map(|(&a, &b)| a * b).collect();
                accumulate(grads, *x, g.shape(), gx);
            }
            Op::Scale(x, s) => {
                accumulate(grads, *x, g.shape(), gd.iter().map(|&v| v * *s).collect());
            }
            Op::ScaleRows(x, factors) => {
                let n = self.value(*x).cols();
                let gx = gd
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * factors[i / n])
                    .collect();
                accumulate(grads, *x, g.shape(), gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gain_v = self.value(*gain).data();
                let (m, n) = self.value(*x).dims2();
                let nf = T::of(n as f64);
                let mut gx = vec![T::zero(); m * n];
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                let mut dxhat = vec![T::zero(); n];
                for i in 0..m {
                    let (mut mean_d, mut mean_dx) = (T::zero(), T::zero());
                    for j in 0..n {
                        let gy = gd[i * n + j];
                        let h = xhat[i * n + j];
                        gg[j] += gy * h;
                        gb[j] += gy;
                        dxhat[j] = gy * gain_v[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * h;
                    }
                    mean_d = mean_d / nf;
                    mean_dx = mean_dx / nf;
                    for j in 0..n {
                        gx[i * n + j] = rstd[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
                    }
                }
                accumulate(grads, *x, g.shape(), gx);
                accumulate(grads, *gain, self.value(*gain).shape(), gg);
                accumulate(grads, *bias, self.value(*bias).shape(), gb);
            }
            Op::Gelu(x) => {
                let (c, a) = (T::of(GELU_C), T::of(GELU_A));
                let half = T::of(0.5);
                let three = T::of(3.0);
                let gx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&v, &gv)| {
                        let th = (c * (v + a * v * v * v)).tanh();
                        let dudx = c * (T::one() + three * a * v * v);
                        gv * (half * (T::one() + th) + half * v * (T::one() - th * th) * dudx)
                    })
                    .collect();
                accumulate(grads, *x, g.shape(), gx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let (m, n) = node.value.dims2();
                let mut gx = vec![T::zero(); m * n];
                for i in 0..m {
                    let (yr, gr) = (&y[i * n..(i + 1) * n], &gd[i * n..(i + 1) * n]);
                    let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        gx[i * n + j] = yr[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, *x, g.shape(), gx);
            }
            Op::Gather { table, ids } => {
                let vt = self.value(*table);
                let d = vt.cols();
                let mut gt = vec![T::zero(); vt.numel()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += gd[i * d + j];
                    }
                }
                accumulate(grads, *table, vt.shape(), gt);
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).dims2();
                let len = g.cols();
                let mut gx = vec![T::zero(); m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                accumulate(grads, *x, self.value(*x).shape(), gx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let pn = self.value(p).cols();
                    let mut gp = Vec::with_capacity(m * pn);
                    for i in 0..m {
                        gp.extend_from_slice(&gd[i * total + offset..i * total + offset + pn]);
                    }
                    accumulate(grads, p, self.value(p).shape(), gp);
                    offset += pn;
                }
            }
            Op::Sum(x) => {
                let vx = self.value(*x);
                accumulate(grads, *x, vx.shape(), vec![gd[0]; vx.numel()]);
            }
            Op::Mse { pred, target, rows } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let d = p.cols();
                let coef = T::of(2.0) * gd[0] / T::of((rows.len() * d) as f64);
                let mut gp = vec![T::zero(); p.numel()];
                for &r in rows {
                    for j in 0..d {
                        gp[r * d + j] = coef * (p.row(r)[j] - t.row(r)[j]);
                    }
                }
                let gt = gp.iter().map(|&v| -v).collect();
                accumulate(grads, *pred, p.shape(), gp);
                accumulate(grads, *target, t.shape(), gt);
            }
            Op::CrossEntropy {
                logits,
                picks,
                probs,
            } => {
                let z = self.value(*logits);
                let v = z.cols();
                let coef = gd[0] / T::of(picks.len() as f64);
                let mut gz = vec![T::zero(); z.numel()];
                for (k, &(r, c)) in picks.iter().enumerate() {
                    for j in 0..v {
                        let onehot = if j == c { T::one() } else { T::zero() };
                        gz[r * v + j] += coef * (probs[k * v + j] - onehot);
                    }
                }
                accumulate(grads, *logits, z.shape(), gz);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, shape: &[usize], g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(Tensor::from_parts(shape.to_vec(), g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let a = tape.gelu(x).unwrap();
        let b = tape.scale(a, 2.0).unwrap();
        let c = tape.mul(b, x).unwrap();
        let s = tape.sum(c).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.visit_order(), &[s.index(), c.index(), b.index(), a.index()]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn masked_columns_get_zero_weight() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![5.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]]).unwrap());
        let y = tape.masked_softmax_rows(x, Some(&[false, true, true])).unwrap();
        let v = tape.value(y);
        for i in 0..2 {
            assert_eq!(v.row(i)[0], 0.0);
            let s: f32 = v.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nonfinite_values_are_a_hard_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[1, 2], f32::MAX));
        let err = tape.scale(x, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "scale" }));
    }

    #[test]
    fn gather_rejects_out_of_range_ids() {
        let mut tape = Tape::<f32>::new();
        let t = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(tape.gather(t, &[0, 3]).is_err());
    }
}
