use std::sync::Arc;

use super::params::{Gradients, ParamStore};
use super::{matmul_at_into, matmul_bt_into, matmul_into, Scalar, Tensor};
use crate::error::{structure_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse linear map between row sets: `out[o] = sum_k w_k * in[i_k]`.
///
/// Gathers, scatter-sums, cluster means and broadcast copies are all
/// instances of this one operator.
#[derive(Clone, Debug, PartialEq)]
pub struct RowMap {
    n_in: usize,
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl RowMap {
    pub fn new(n_in: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        offsets.push(0);
        for row in rows {
            for &(i, w) in row {
                if i >= n_in {
                    return structure_err(format!("row map index {i} out of range {n_in}"));
                }
                index.push(i);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        Ok(Self {
            n_in,
            offsets,
            index,
            weight,
        })
    }

    /// `out[o] = in[idx[o]]`.
    pub fn gather(n_in: usize, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_in) {
            return structure_err(format!("dangling index {bad}, only {n_in} rows"));
        }
        Ok(Self {
            n_in,
            offsets: (0..=idx.len()).collect(),
            index: idx.to_vec(),
            weight: vec![1.0; idx.len()],
        })
    }

    /// `out[j] = sum_{i : target[i] == j} in[i]`; rows with no contributor are zero.
    pub fn scatter_sum(n_out: usize, target: &[usize]) -> Result<Self> {
        let mut rows = vec![Vec::new(); n_out];
        for (i, &t) in target.iter().enumerate() {
            if t >= n_out {
                return structure_err(format!("dangling target {t}, only {n_out} rows"));
            }
            rows[t].push((i, 1.0));
        }
        Self::new(target.len(), &rows)
    }

    /// `out[g] = mean of in[groups[g]]`.
    pub fn group_mean(n_in: usize, groups: &[Vec<usize>]) -> Result<Self> {
        let rows: Vec<Vec<(usize, f64)>> = groups
            .iter()
            .map(|g| {
                let w = 1.0 / g.len().max(1) as f64;
                g.iter().map(|&i| (i, w)).collect()
            })
            .collect();
        Self::new(n_in, &rows)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn apply<T: Scalar>(&self, input: &[T], cols: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_out() * cols];
        for o in 0..self.n_out() {
            let dst = &mut out[o * cols..(o + 1) * cols];
            for k in self.offsets[o]..self.offsets[o + 1] {
                let src = &input[self.index[k] * cols..(self.index[k] + 1) * cols];
                let w = self.weight[k];
                if w == 1.0 {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                } else {
                    let w = T::from_f64(w);
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
                }
            }
        }
        out
    }

    fn apply_transpose_acc<T: Scalar>(&self, grad_out: &[T], cols: usize, grad_in: &mut [T]) {
        for o in 0..self.n_out() {
            let src = &grad_out[o * cols..(o + 1) * cols];
            for k in self.offsets[o]..self.offsets[o + 1] {
                let dst = &mut grad_in[self.index[k] * cols..(self.index[k] + 1) * cols];
                let w = self.weight[k];
                if w == 1.0 {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                } else {
                    let w = T::from_f64(w);
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += w * s);
                }
            }
        }
    }
}

enum Op<T> {
    Constant,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    RowMix {
        x: Var,
        map: Arc<RowMap>,
    },
    MaskedSse {
        pred: Var,
        target: Vec<T>,
        mask: Vec<bool>,
        scale: f64,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation on 2-D row-major values and replays it
/// backwards to obtain exact gradients.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to parameter `id` of `store`; its gradient is reported by
    /// [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, id: usize) -> Var {
        self.push(store.tensor(id).clone(), Op::Param(id))
    }

    /// `x * w + b` with `x: n x i`, `w: i x o`, `b: o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (n, i) = (xv.rows(), xv.cols());
        if wv.shape().len() != 2 || wv.shape()[0] != i || bv.len() != wv.shape()[1] {
            return structure_err(format!(
                "linear: input width {i}, weight {:?}, bias {:?}",
                wv.shape(),
                bv.shape()
            ));
        }
        let o = wv.shape()[1];
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bv.data());
        }
        matmul_into(xv.data(), wv.data(), &mut out, n, i, o, true);
        Ok(self.push(
            Tensor {
                shape: vec![n, o],
                data: out,
            },
            Op::Linear { x, w, b },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return structure_err(format!("add: shapes {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = av.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    /// `s * x`.
    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let k = T::from_f64(s);
        let data = xv.data().iter().map(|&v| k * v).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Relu(x))
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return structure_err(format!("concat: row counts {rows} vs {}", v.rows()));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![rows, total],
                data,
            },
            Op::Concat(parts.to_vec()),
        ))
    }

    /// Per-row normalization over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c {
            return structure_err(format!("layer_norm: width {c}, gamma {}", g.len()));
        }
        let mut xhat = vec![T::zero(); n * c];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * c];
        let inv_c = T::from_f64(1.0 / c as f64);
        for r in 0..n {
            let row = xv.row(r);
            let mut mean = T::zero();
            row.iter().for_each(|&v| mean += v);
            mean *= inv_c;
            let mut var = T::zero();
            row.iter().for_each(|&v| var += (v - mean) * (v - mean));
            var *= inv_c;
            let rs = T::one() / (var + T::from_f64(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data: out,
            },
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn row_mix(&mut self, x: Var, map: &Arc<RowMap>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != map.n_in() {
            return structure_err(format!(
                "row map expects {} input rows, got {}",
                map.n_in(),
                xv.rows()
            ));
        }
        let cols = xv.cols();
        let data = map.apply(xv.data(), cols);
        Ok(self.push(
            Tensor {
                shape: vec![map.n_out(), cols],
                data,
            },
            Op::RowMix {
                x,
                map: Arc::clone(map),
            },
        ))
    }

    /// `scale * sum over rows with mask[r] of ||pred[r] - target[r]||^2`.
    pub fn masked_sse(
        &mut self,
        pred: Var,
        target: &Tensor<T>,
        mask: &[bool],
        scale: f64,
    ) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() || mask.len() != pv.rows() {
            return structure_err(format!(
                "masked_sse: prediction {:?}, target {:?}, mask {}",
                pv.shape(),
                target.shape(),
                mask.len()
            ));
        }
        let mut acc = 0.0f64;
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                for (&p, &t) in pv.row(r).iter().zip(target.row(r)) {
                    let d = (p - t).to_f64();
                    acc += d * d;
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::from_f64(acc * scale)],
            },
            Op::MaskedSse {
                pred,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                scale,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = 0.0f64;
        self.value(x).data().iter().for_each(|v| acc += v.to_f64());
        self.push(
            Tensor {
                shape: vec![1],
                data: vec![T::from_f64(acc)],
            },
            Op::Sum(x),
        )
    }

    /// Reverse sweep from a scalar root; returns gradients of every
    /// parameter leaf reached.
    pub fn backward(&self, root: Var, num_params: usize) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return structure_err("backward root must be a scalar");
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(num_params);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &self.nodes[idx].value, g),
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, i, o) = (xv.rows(), xv.cols(), wv.shape()[1]);
                    let gx = acc_slot(&mut grads, *x, n * i);
                    matmul_bt_into(&g, wv.data(), gx, n, o, i, true);
                    let gw = acc_slot(&mut grads, *w, i * o);
                    matmul_at_into(xv.data(), &g, gw, n, i, o, true);
                    let gb = acc_slot(&mut grads, *b, o);
                    for r in 0..n {
                        gb.iter_mut()
                            .zip(&g[r * o..(r + 1) * o])
                            .for_each(|(d, &s)| *d += s);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc_slot(&mut grads, *a, g.len()), &g);
                    add_into(acc_slot(&mut grads, *b, g.len()), &g);
                }
                Op::Scale(x, s) => {
                    let k = T::from_f64(*s);
                    let gx = acc_slot(&mut grads, *x, g.len());
                    gx.iter_mut().zip(&g).for_each(|(d, &v)| *d += k * v);
                }
                Op::Relu(x) => {
                    let outv = node.value.data();
                    let gx = acc_slot(&mut grads, *x, g.len());
                    for ((d, &s), &y) in gx.iter_mut().zip(&g).zip(outv) {
                        if y > T::zero() {
                            *d += s;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let gp = acc_slot(&mut grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            add_into(&mut gp[r * w..(r + 1) * w], src);
                        }
                        offset += w;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let c = node.value.cols();
                    let n = node.value.rows();
                    let gam = self.value(*gamma).data().to_vec();
                    {
                        let gg = acc_slot(&mut grads, *gamma, c);
                        for r in 0..n {
                            for j in 0..c {
                                gg[j] += g[r * c + j] * xhat[r * c + j];
                            }
                        }
                    }
                    {
                        let gb = acc_slot(&mut grads, *beta, c);
                        for r in 0..n {
                            add_into(gb, &g[r * c..(r + 1) * c]);
                        }
                    }
                    let gx = acc_slot(&mut grads, *x, n * c);
                    let inv_c = T::from_f64(1.0 / c as f64);
                    for r in 0..n {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            let dh = g[r * c + j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * c + j];
                        }
                        for j in 0..c {
                            let dh = g[r * c + j] * gam[j];
                            let h = xhat[r * c + j];
                            gx[r * c + j] += rstd[r] * (dh - inv_c * sum_dh - h * inv_c * sum_dh_h);
                        }
                    }
                }
                Op::RowMix { x, map } => {
                    let cols = node.value.cols();
                    let gx = acc_slot(&mut grads, *x, map.n_in() * cols);
                    map.apply_transpose_acc(&g, cols, gx);
                }
                Op::MaskedSse {
                    pred,
                    target,
                    mask,
                    scale,
                } => {
                    let pv = self.value(*pred);
                    let cols = pv.cols();
                    let k = T::from_f64(2.0 * scale) * g[0];
                    let gp = acc_slot(&mut grads, *pred, pv.len());
                    for (r, &keep) in mask.iter().enumerate() {
                        if keep {
                            for j in 0..cols {
                                let i = r * cols + j;
                                gp[i] += k * (pv.data()[i] - target[i]);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    let gx = acc_slot(&mut grads, *x, n);
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
        Ok(out)
    }
}

fn acc_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
