//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are pushed, and [`Graph::backward`] walks the tape in reverse. Parameters
//! enter as borrowed leaves, so a forward pass never copies model weights.
//! Constants (masks, positional tables, rewards) carry no gradient.
//!
//! A graph built with [`Graph::no_grad`] keeps values only; it is used for
//! decoding and for scoring with a frozen evaluator.

use std::borrow::Cow;
use std::collections::HashMap;

use super::params::ParamId;
use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Tensor,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<bool>,
        mask: Vec<bool>,
    },
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Borrowed trainable leaf. Repeated calls with the same id return the
    /// same node, so shared weights accumulate a single gradient.
    pub fn param(&mut self, id: ParamId, tensor: &'p Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Cow::Borrowed(tensor), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Owned trainable leaf that is not part of a parameter set.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, true)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), Op::MatMul(a, b), rg))
    }

    /// `a @ bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_bt(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), Op::MatMulBt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(Cow::Owned(value), Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), Op::Add(a, b), rg))
    }

    /// Adds a bias vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Cow::Owned(value), Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(value), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Scale(a, c), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Cow::Owned(value), Op::Sum(a), rg)
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, size: v });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Tensor::matrix(ids.len(), d, data)?;
        let rg = self.rg(table);
        Ok(self.push(
            Cow::Owned(value),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != n || b.len() != n {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; m * n];
        let mut out = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let value = Tensor::new(shape.clone(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat: if rg { Tensor::new(shape, xhat)? } else { Tensor::zeros(&[0]) },
            rstd,
        };
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(Cow::Owned(value), Op::Gelu(x), rg)
    }

    /// Row-wise softmax; `mask[i*cols + j] == false` forces probability 0.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let value = self.value(x).softmax_rows(mask)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(value), Op::Softmax(x), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: xv.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let value = Tensor::matrix(m, len, data)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(value), Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let m = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != m || self.value(p).shape().len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(m, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Cow::Owned(value), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows with `mask == false` contribute nothing. Returns the
    /// scalar node and the per-row NLL (0 for masked rows).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<(Var, Vec<f64>)> {
        let lv = self.value(logits);
        let (t, v) = (lv.rows(), lv.cols());
        if targets.len() != t || mask.len() != t {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id: bad, size: v });
        }
        let probs = lv.softmax_rows(None)?;
        let mut per_step = vec![0.0; t];
        let mut total = 0.0;
        for i in 0..t {
            if !mask[i] {
                continue;
            }
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let nll = (lse - row[targets[i]]).max(0.0);
            per_step[i] = nll;
            total += nll;
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            mask: mask.to_vec(),
            probs,
        };
        Ok((self.push(Cow::Owned(Tensor::scalar(total)), op, rg), per_step))
    }

    /// Summed binary cross-entropy of sigmoid(`logits`) against `labels` over
    /// positions where `mask` is true. `logits` holds one value per position.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[bool], mask: &[bool]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.len() != labels.len() || labels.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len(), mask.len()],
            });
        }
        let mut total = 0.0;
        for (i, &z) in lv.data().iter().enumerate() {
            if mask[i] {
                total += bce_logit(z, labels[i]);
            }
        }
        let rg = self.rg(logits);
        let op = Op::BceWithLogits {
            logits,
            labels: labels.to_vec(),
            mask: mask.to_vec(),
        };
        Ok(self.push(Cow::Owned(Tensor::scalar(total)), op, rg))
    }

    /// Inverted dropout with a precomputed keep pattern (`true` = keep).
    pub fn dropout(&mut self, x: Var, keep: &[bool], rate: f64) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                lhs: xv.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let s = 1.0 / (1.0 - rate);
        let factors: Vec<f64> = keep.iter().map(|&k| if k { s } else { 0.0 }).collect();
        let data = xv.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(value), Op::Dropout { x, keep: factors }, rg))
    }

    /// Gradients of the scalar `loss` scaled by `seed` with respect to every
    /// node that requires them.
    pub fn backward(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Graph(
                "backward called before a forward pass recorded the loss".into(),
            ));
        }
        if !self.grad_enabled {
            return Err(Error::Graph("backward on a no-grad graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), seed));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dout, &mut grads)?;
            grads[idx] = Some(dout);
        }

        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { by_node: grads, params })
    }

    fn backprop_node(&self, node: &Node<'p>, dout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let send = |v: Var, g: Tensor, grads: &mut [Option<Tensor>]| -> Result<()> {
            if !self.rg(v) {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, dout.matmul_bt(self.value(*b))?, grads)?;
                }
                if self.rg(*b) {
                    send(*b, self.value(*a).matmul_at(dout)?, grads)?;
                }
            }
            Op::MatMulBt(a, b) => {
                if self.rg(*a) {
                    send(*a, dout.matmul(self.value(*b))?, grads)?;
                }
                if self.rg(*b) {
                    send(*b, dout.matmul_at(self.value(*a))?, grads)?;
                }
            }
            Op::Transpose(a) => send(*a, dout.transpose()?, grads)?,
            Op::Add(a, b) => {
                send(*a, dout.clone(), grads)?;
                send(*b, dout.clone(), grads)?;
            }
            Op::AddRow(a, b) => {
                send(*a, dout.clone(), grads)?;
                if self.rg(*b) {
                    let n = dout.cols();
                    let mut db = vec![0.0; n];
                    for i in 0..dout.rows() {
                        for (acc, g) in db.iter_mut().zip(dout.row(i)) {
                            *acc += g;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    send(*b, Tensor::new(shape, db)?, grads)?;
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, dout.mul(self.value(*b))?, grads)?;
                }
                if self.rg(*b) {
                    send(*b, dout.mul(self.value(*a))?, grads)?;
                }
            }
            Op::Scale(a, c) => send(*a, dout.scale(*c), grads)?,
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                send(*a, Tensor::full(shape, dout.data()[0]), grads)?;
            }
            Op::Gather { table, ids } => {
                let shape = self.value(*table).shape().to_vec();
                let mut g = Tensor::zeros(&shape);
                for (i, &id) in ids.iter().enumerate() {
                    for (acc, d) in g.row_mut(id).iter_mut().zip(dout.row(i)) {
                        *acc += d;
                    }
                }
                send(*table, g, grads)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = (dout.rows(), dout.cols());
                let g = self.value(*gain).data();
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let dy = dout.row(i);
                        let xh = xhat.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = dy[j] * g[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= n as f64;
                        mean_dx /= n as f64;
                        for j in 0..n {
                            let d = dy[j] * g[j];
                            dx[i * n + j] = rstd[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                    send(*x, Tensor::new(dout.shape().to_vec(), dx)?, grads)?;
                }
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        let dy = dout.row(i);
                        let xh = xhat.row(i);
                        for j in 0..n {
                            dg[j] += dy[j] * xh[j];
                            db[j] += dy[j];
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    send(*gain, Tensor::new(gshape, dg)?, grads)?;
                    send(*bias, Tensor::new(bshape, db)?, grads)?;
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dout.data())
                    .map(|(&v, &d)| d * gelu_grad(v))
                    .collect();
                send(*x, Tensor::new(xv.shape().to_vec(), data)?, grads)?;
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let yr = y.row(i);
                    let dr = dout.row(i);
                    let s = dot(yr, dr);
                    for j in 0..n {
                        dx[i * n + j] = yr[j] * (dr[j] - s);
                    }
                }
                send(*x, Tensor::new(y.shape().to_vec(), dx)?, grads)?;
            }
            Op::SliceCols { x, start } => {
                let shape = self.value(*x).shape().to_vec();
                let mut g = Tensor::zeros(&shape);
                let w = dout.cols();
                for i in 0..dout.rows() {
                    g.row_mut(i)[*start..*start + w].copy_from_slice(dout.row(i));
                }
                send(*x, g, grads)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(dout.rows() * w);
                        for i in 0..dout.rows() {
                            data.extend_from_slice(&dout.row(i)[offset..offset + w]);
                        }
                        send(p, Tensor::matrix(dout.rows(), w, data)?, grads)?;
                    }
                    offset += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
            } => {
                let scale = dout.data()[0];
                let mut g = Tensor::zeros(probs.shape());
                for (i, &tgt) in targets.iter().enumerate() {
                    if !mask[i] {
                        continue;
                    }
                    let row = g.row_mut(i);
                    row.copy_from_slice(probs.row(i));
                    row[tgt] -= 1.0;
                    for x in row.iter_mut() {
                        *x *= scale;
                    }
                }
                send(*logits, g, grads)?;
            }
            Op::BceWithLogits {
                logits,
                labels,
                mask,
            } => {
                let scale = dout.data()[0];
                let lv = self.value(*logits);
                let data = lv
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &z)| {
                        if mask[i] {
                            scale * (sigmoid(z) - if labels[i] { 1.0 } else { 0.0 })
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*logits, Tensor::new(lv.shape().to_vec(), data)?, grads)?;
            }
            Op::Dropout { x, keep } => {
                let data = dout.data().iter().zip(keep).map(|(d, k)| d * k).collect();
                send(*x, Tensor::new(dout.shape().to_vec(), data)?, grads)?;
            }
        }
        Ok(())
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient for a non-parameter node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients; parameters that received none are absent.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    /// Adds `scale` × these parameter gradients into `buf`, in ascending
    /// parameter order.
    pub fn accumulate_into(&self, buf: &mut super::params::GradBuffer, scale: f64) -> Result<()> {
        let mut ordered: Vec<&(ParamId, Tensor)> = self.params.iter().collect();
        ordered.sort_by_key(|(id, _)| *id);
        for (id, g) in ordered {
            buf.add_scaled(*id, g, scale)?;
        }
        Ok(())
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// −[y ln σ(z) + (1−y) ln(1−σ(z))], computed without overflow.
pub fn bce_logit(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}
