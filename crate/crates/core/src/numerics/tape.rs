//! Reverse-mode gradient accumulation over a flat operation tape.
//!
//! A [`Tape`] is an append-only arena of tensor-valued nodes. Forward code
//! builds values through [`Val`] handles; [`Tape::backward`] walks the
//! recorded operations in reverse and adds `d loss / d parameter` into each
//! [`super::params::Parameter`]'s gradient buffer. Inference uses the same
//! path and simply never calls `backward`.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::mask::Mask;
use super::ops;
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;

enum Op {
    Leaf { param: Option<ParamId> },
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    /// `[m x n] + [1 x n]` with the row broadcast over every row.
    AddRow(usize, usize),
    /// `[m x n] * [1 x n]` elementwise with the row broadcast.
    MulRow(usize, usize),
    /// Elementwise `x * mul + add`; only the multiplier matters backward.
    Affine(usize, f64),
    /// `[m x n] * s` where `s` is a `1x1` node.
    MulScalar(usize, usize),
    /// `[1 x n]` stacked into `[m x n]`.
    RepeatRows(usize),
    ConcatCols(usize, usize),
    SumAll(usize),
    /// Row lookup: output row `r` is `src` row `ids[r]`.
    Gather { src: usize, ids: Rc<Vec<usize>> },
    SoftmaxRows { src: usize, mask: Rc<Mask> },
    NormalizeRows { src: usize, mask: Rc<Mask> },
    LayerNormRows { src: usize, eps: f64 },
    Gelu(usize),
    Sigmoid(usize),
    /// Mean token cross-entropy; `None` targets are ignored (padding).
    CrossEntropyMean {
        logits: usize,
        targets: Rc<Vec<Option<usize>>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor on a tape. Copyable; all arithmetic goes through
/// methods so each operation is recorded exactly once.
#[derive(Clone, Copy)]
pub struct Val<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&self, value: Tensor, op: Op) -> usize {
        debug_assert!(value.is_finite(), "tape produced a non-finite tensor");
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        nodes.len() - 1
    }

    /// Record a constant input.
    pub fn leaf(&self, value: Tensor) -> Val<'_> {
        let id = self.push(value, Op::Leaf { param: None });
        Val { tape: self, id }
    }

    /// Record a parameter's current value; `backward` will route gradients
    /// back into the parameter through this node.
    pub fn param<'t>(&'t self, params: &ParamSet, id: ParamId) -> Val<'t> {
        let node = self.push(params.value(id).clone(), Op::Leaf { param: Some(id) });
        Val {
            tape: self,
            id: node,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> (usize, usize) {
        self.nodes.borrow()[id].value.shape()
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into `params`;
    /// call [`ParamSet::zero_grads`] between steps to reset them.
    pub fn backward(&self, loss: Val<'_>, params: &mut ParamSet) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::DisconnectedGraph);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.shape() != (1, 1) {
            return Err(Error::InvalidParameter(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        params.accumulate_grad(*pid, &g);
                    }
                }
                Op::Matmul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    accumulate(&mut grads, *a, g.matmul(&bv.transpose()).expect("shape"));
                    accumulate(&mut grads, *b, av.transpose().matmul(&g).expect("shape"));
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, b) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db.data_mut()[c] += g.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulRow(x, w) => {
                    let xv = &nodes[*x].value;
                    let wv = &nodes[*w].value;
                    let mut dx = Tensor::zeros(g.rows(), g.cols());
                    let mut dw = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx.set(r, c, g.get(r, c) * wv.get(0, c));
                            dw.data_mut()[c] += g.get(r, c) * xv.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                }
                Op::Affine(a, mul) => {
                    accumulate(&mut grads, *a, g.scale(*mul));
                }
                Op::MulScalar(x, s) => {
                    let xv = &nodes[*x].value;
                    let sv = nodes[*s].value.item();
                    let mut ds = 0.0;
                    for (gv, xv) in g.data().iter().zip(xv.data()) {
                        ds += gv * xv;
                    }
                    accumulate(&mut grads, *x, g.scale(sv));
                    accumulate(&mut grads, *s, Tensor::scalar(ds));
                }
                Op::RepeatRows(x) => {
                    let mut dx = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx.data_mut()[c] += g.get(r, c);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ac = nodes[*a].value.cols();
                    let bc = nodes[*b].value.cols();
                    let mut da = Tensor::zeros(g.rows(), ac);
                    let mut db = Tensor::zeros(g.rows(), bc);
                    for r in 0..g.rows() {
                        for c in 0..ac {
                            da.set(r, c, g.get(r, c));
                        }
                        for c in 0..bc {
                            db.set(r, c, g.get(r, ac + c));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SumAll(x) => {
                    let (r, c) = nodes[*x].value.shape();
                    let gv = g.item();
                    accumulate(&mut grads, *x, Tensor::new(r, c, vec![gv; r * c]));
                }
                Op::Gather { src, ids } => {
                    let (r, c) = nodes[*src].value.shape();
                    let mut dsrc = Tensor::zeros(r, c);
                    for (row, &tok) in ids.iter().enumerate() {
                        for col in 0..c {
                            let cur = dsrc.get(tok, col);
                            dsrc.set(tok, col, cur + g.get(row, col));
                        }
                    }
                    accumulate(&mut grads, *src, dsrc);
                }
                Op::SoftmaxRows { src, mask } => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let keep = mask.row(r);
                        let mut dot = 0.0;
                        for c in 0..y.cols() {
                            if keep[c] {
                                dot += g.get(r, c) * y.get(r, c);
                            }
                        }
                        for c in 0..y.cols() {
                            if keep[c] {
                                dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    accumulate(&mut grads, *src, dx);
                }
                Op::NormalizeRows { src, mask } => {
                    let xv = &nodes[*src].value;
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let keep = mask.row(r);
                        let total: f64 = (0..xv.cols())
                            .filter(|&c| keep[c])
                            .map(|c| xv.get(r, c))
                            .sum();
                        let mut dot = 0.0;
                        for c in 0..y.cols() {
                            if keep[c] {
                                dot += g.get(r, c) * y.get(r, c);
                            }
                        }
                        for c in 0..y.cols() {
                            if keep[c] {
                                dx.set(r, c, (g.get(r, c) - dot) / total);
                            }
                        }
                    }
                    accumulate(&mut grads, *src, dx);
                }
                Op::LayerNormRows { src, eps } => {
                    let xv = &nodes[*src].value;
                    let n = xv.cols() as f64;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let row = xv.row_slice(r);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let grow = g.row_slice(r);
                        let gmean = grow.iter().sum::<f64>() / n;
                        let gxhat =
                            grow.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..xv.cols() {
                            dx.set(r, c, inv * (grow[c] - gmean - xhat[c] * gxhat));
                        }
                    }
                    accumulate(&mut grads, *src, dx);
                }
                Op::Gelu(x) => {
                    let xv = &nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (i, (gv, v)) in g.data().iter().zip(xv.data()).enumerate() {
                        dx.data_mut()[i] = gv * ops::gelu_deriv(*v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for (i, (gv, yv)) in g.data().iter().zip(y.data()).enumerate() {
                        dx.data_mut()[i] = gv * yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropyMean { logits, targets } => {
                    let lv = &nodes[*logits].value;
                    let count = targets.iter().flatten().count() as f64;
                    let gv = g.item();
                    let mut dl = Tensor::zeros(lv.rows(), lv.cols());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = target else { continue };
                        let row = lv.row_slice(r);
                        let mask = vec![true; row.len()];
                        let mut probs = vec![0.0; row.len()];
                        ops::softmax_into(row, &mask, &mut probs);
                        for c in 0..row.len() {
                            let indicator = if c == *t { 1.0 } else { 0.0 };
                            dl.set(r, c, (probs[c] - indicator) * gv / count);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl<'t> Val<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape_of(self.id)
    }

    pub fn matmul(self, other: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let b = self.tape.value_of(other.id);
        let v = a.matmul(&b).unwrap_or_else(|e| panic!("{e}"));
        let id = self.tape.push(v, Op::Matmul(self.id, other.id));
        Val { tape: self.tape, id }
    }

    pub fn t(self) -> Val<'t> {
        let v = self.tape.value_of(self.id).transpose();
        let id = self.tape.push(v, Op::Transpose(self.id));
        Val { tape: self.tape, id }
    }

    pub fn add(self, other: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let b = self.tape.value_of(other.id);
        let v = a.add(&b).unwrap_or_else(|e| panic!("{e}"));
        let id = self.tape.push(v, Op::Add(self.id, other.id));
        Val { tape: self.tape, id }
    }

    /// Add a `1xn` row to every row of an `mxn` tensor.
    pub fn add_row(self, row: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let b = self.tape.value_of(row.id);
        assert_eq!(b.rows(), 1);
        assert_eq!(a.cols(), b.cols(), "add_row width mismatch");
        let mut v = a.clone();
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                v.set(r, c, a.get(r, c) + b.get(0, c));
            }
        }
        let id = self.tape.push(v, Op::AddRow(self.id, row.id));
        Val { tape: self.tape, id }
    }

    /// Multiply every row of an `mxn` tensor by a `1xn` row, elementwise.
    pub fn mul_row(self, row: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let b = self.tape.value_of(row.id);
        assert_eq!(b.rows(), 1);
        assert_eq!(a.cols(), b.cols(), "mul_row width mismatch");
        let mut v = a.clone();
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                v.set(r, c, a.get(r, c) * b.get(0, c));
            }
        }
        let id = self.tape.push(v, Op::MulRow(self.id, row.id));
        Val { tape: self.tape, id }
    }

    pub fn scale(self, c: f64) -> Val<'t> {
        self.affine(c, 0.0)
    }

    /// Elementwise `x * mul + add`.
    pub fn affine(self, mul: f64, add: f64) -> Val<'t> {
        let v = self.tape.value_of(self.id).map(|x| x * mul + add);
        let id = self.tape.push(v, Op::Affine(self.id, mul));
        Val { tape: self.tape, id }
    }

    /// Multiply by a `1x1` scalar node (the blend weights take this path so
    /// gradients reach the weight predictor).
    pub fn mul_scalar(self, s: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let sv = self.tape.value_of(s.id);
        assert_eq!(sv.shape(), (1, 1), "mul_scalar needs a 1x1 operand");
        let v = a.scale(sv.item());
        let id = self.tape.push(v, Op::MulScalar(self.id, s.id));
        Val { tape: self.tape, id }
    }

    /// Stack a `1xn` row `m` times into an `mxn` tensor.
    pub fn repeat_rows(self, m: usize) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        assert_eq!(a.rows(), 1, "repeat_rows needs a row vector");
        let mut data = Vec::with_capacity(m * a.cols());
        for _ in 0..m {
            data.extend_from_slice(a.data());
        }
        let v = Tensor::new(m, a.cols(), data);
        let id = self.tape.push(v, Op::RepeatRows(self.id));
        Val { tape: self.tape, id }
    }

    pub fn concat_cols(self, other: Val<'t>) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let b = self.tape.value_of(other.id);
        assert_eq!(a.rows(), b.rows(), "concat_cols row mismatch");
        let mut v = Tensor::zeros(a.rows(), a.cols() + b.cols());
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                v.set(r, c, a.get(r, c));
            }
            for c in 0..b.cols() {
                v.set(r, a.cols() + c, b.get(r, c));
            }
        }
        let id = self.tape.push(v, Op::ConcatCols(self.id, other.id));
        Val { tape: self.tape, id }
    }

    pub fn sum_all(self) -> Val<'t> {
        let v = Tensor::scalar(self.tape.value_of(self.id).sum());
        let id = self.tape.push(v, Op::SumAll(self.id));
        Val { tape: self.tape, id }
    }

    /// Row lookup into an embedding-style matrix.
    pub fn gather(self, ids: &[usize]) -> Val<'t> {
        let src = self.tape.value_of(self.id);
        let mut v = Tensor::zeros(ids.len(), src.cols());
        for (r, &tok) in ids.iter().enumerate() {
            assert!(tok < src.rows(), "gather index {tok} out of range");
            for c in 0..src.cols() {
                v.set(r, c, src.get(tok, c));
            }
        }
        let id = self.tape.push(
            v,
            Op::Gather {
                src: self.id,
                ids: Rc::new(ids.to_vec()),
            },
        );
        Val { tape: self.tape, id }
    }

    /// Masked softmax over each row. Every row must keep at least one
    /// position; masked entries come out exactly zero.
    pub fn softmax_rows(self, mask: &Mask) -> Result<Val<'t>> {
        let a = self.tape.value_of(self.id);
        if a.shape() != (mask.rows(), mask.cols()) {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                lhs: a.shape(),
                rhs: (mask.rows(), mask.cols()),
            });
        }
        if !mask.rows_nondegenerate() {
            return Err(Error::DegenerateMask);
        }
        let mut v = Tensor::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let mut out = vec![0.0; a.cols()];
            ops::softmax_into(a.row_slice(r), mask.row(r), &mut out);
            for (c, val) in out.into_iter().enumerate() {
                v.set(r, c, val);
            }
        }
        let id = self.tape.push(
            v,
            Op::SoftmaxRows {
                src: self.id,
                mask: Rc::new(mask.clone()),
            },
        );
        Ok(Val { tape: self.tape, id })
    }

    /// Renormalize each row to sum to one over unmasked positions.
    pub fn normalize_rows(self, mask: &Mask) -> Result<Val<'t>> {
        let a = self.tape.value_of(self.id);
        if a.shape() != (mask.rows(), mask.cols()) {
            return Err(Error::ShapeMismatch {
                op: "normalize_rows",
                lhs: a.shape(),
                rhs: (mask.rows(), mask.cols()),
            });
        }
        if !mask.rows_nondegenerate() {
            return Err(Error::DegenerateMask);
        }
        let mut v = Tensor::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let mut out = vec![0.0; a.cols()];
            ops::normalize_row_into(a.row_slice(r), mask.row(r), &mut out);
            for (c, val) in out.into_iter().enumerate() {
                v.set(r, c, val);
            }
        }
        let id = self.tape.push(
            v,
            Op::NormalizeRows {
                src: self.id,
                mask: Rc::new(mask.clone()),
            },
        );
        Ok(Val { tape: self.tape, id })
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`; the affine
    /// gain and bias live outside as `mul_row`/`add_row` parameters.
    pub fn layer_norm_rows(self, eps: f64) -> Val<'t> {
        let a = self.tape.value_of(self.id);
        let n = a.cols() as f64;
        let mut v = Tensor::zeros(a.rows(), a.cols());
        for r in 0..a.rows() {
            let row = a.row_slice(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..a.cols() {
                v.set(r, c, (row[c] - mean) * inv);
            }
        }
        let id = self
            .tape
            .push(v, Op::LayerNormRows { src: self.id, eps });
        Val { tape: self.tape, id }
    }

    pub fn gelu(self) -> Val<'t> {
        let v = self.tape.value_of(self.id).map(ops::gelu);
        let id = self.tape.push(v, Op::Gelu(self.id));
        Val { tape: self.tape, id }
    }

    pub fn sigmoid(self) -> Val<'t> {
        let v = self.tape.value_of(self.id).map(ops::sigmoid);
        let id = self.tape.push(v, Op::Sigmoid(self.id));
        Val { tape: self.tape, id }
    }

    /// Mean cross-entropy of `[m x vocab]` logits against per-row targets;
    /// `None` rows are excluded from the mean.
    pub fn cross_entropy_mean(self, targets: &[Option<usize>]) -> Result<Val<'t>> {
        let logits = self.tape.value_of(self.id);
        if logits.rows() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_mean",
                lhs: logits.shape(),
                rhs: (targets.len(), logits.cols()),
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::InvalidParameter(
                "cross_entropy_mean: no unignored target".into(),
            ));
        }
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = target else { continue };
            if *t >= logits.cols() {
                return Err(Error::InvalidParameter(format!(
                    "target {t} out of range for vocab {}",
                    logits.cols()
                )));
            }
            let row = logits.row_slice(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[*t];
        }
        let v = Tensor::scalar(total / count as f64);
        let id = self.tape.push(
            v,
            Op::CrossEntropyMean {
                logits: self.id,
                targets: Rc::new(targets.to_vec()),
            },
        );
        Ok(Val { tape: self.tape, id })
    }
}
