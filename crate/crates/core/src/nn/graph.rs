use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<S> {
    Input,
    Param(usize),
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<S>, rstd: Vec<S> },
    Silu(Var),
    Add(Var, Var),
    AddChannels(Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Embedding { table: Var, idx: Vec<usize> },
    GlobalAvgPool(Var),
    Flatten(Var),
    L2Normalize { x: Var, norms: Vec<S> },
    MatMulT(Var, Var),
    Scale(Var, S),
    Mse { pred: Var, target: Tensor<S> },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<S> },
}

struct Node<S> {
    op: Op<S>,
    /// Empty for parameter nodes, which read from the borrowed parameter list.
    value: Tensor<S>,
    label: String,
}

/// Define-by-run computation graph over a borrowed parameter list, with
/// reverse-mode differentiation.
pub struct Graph<'p, S> {
    params: &'p [Tensor<S>],
    nodes: Vec<Node<S>>,
    scope: String,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p [Tensor<S>]) -> Self {
        Self { params, nodes: Vec::new(), scope: String::new() }
    }

    /// Label attached to nodes created from now on (used in error reports).
    pub fn scope(&mut self, label: &str) {
        self.scope = label.to_string();
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params[i],
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Var {
        self.nodes.push(Node { op, value, label: self.scope.clone() });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter index out of range");
        self.push(Op::Param(index), Tensor::zeros(&[0]))
    }

    /// Label of the first node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().find(|n| !matches!(n.op, Op::Param(_)) && !n.value.is_finite()).map(|n| n.label.clone())
    }

    /// Same-padded stride-1 convolution with a 1×1 or 3×3 kernel. `w` is
    /// `[co, ci, k, k]`, `b` is `[co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW");
        assert_eq!(ws[1], xs[1], "conv2d channel mismatch in {}", self.scope);
        assert!(ws[2] == ws[3] && (ws[2] == 1 || ws[2] == 3), "only 1×1 and 3×3 kernels are supported");
        let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, k) = (ws[0], ws[2]);
        let hw = h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = Tensor::zeros(&[n, co, h, wd]);
        out.data_mut().par_chunks_mut(co * hw).enumerate().for_each(|(i, o)| {
            let xi = &xv[i * ci * hw..(i + 1) * ci * hw];
            if k == 1 {
                S::gemm(co, ci, hw, wv, ci, 1, xi, hw, 1, S::zero(), o, hw);
            } else {
                conv3x3(xi, wv, o, ci, co, h, wd);
            }
        });
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (j, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
                let bias = bv[j % co];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        self.push(Op::Conv2d { x, w, b, k }, out)
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let (n, c) = (xs[0], xs[1]);
        let hw: usize = xs[2..].iter().product();
        assert!(c % groups == 0, "group count must divide channels in {}", self.scope);
        let per = c / groups * hw;
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![S::zero(); n * groups];
        let mut rstd = vec![S::zero(); n * groups];
        let mut out = Tensor::zeros(&xs);
        let od = out.data_mut();
        for blk in 0..n * groups {
            let seg = &xv[blk * per..(blk + 1) * per];
            let m = seg.iter().map(|v| v.f64()).sum::<f64>() / per as f64;
            let var = seg.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / per as f64;
            let r = 1.0 / (var + 1e-5).sqrt();
            mean[blk] = S::lit(m);
            rstd[blk] = S::lit(r);
            let c0 = (blk % groups) * (c / groups);
            let out_seg = &mut od[blk * per..(blk + 1) * per];
            for (j, (o_plane, x_plane)) in out_seg.chunks_mut(hw).zip(seg.chunks(hw)).enumerate() {
                let scale = rstd[blk] * gv[c0 + j];
                let shift = bv[c0 + j] - mean[blk] * scale;
                for (o, &v) in o_plane.iter_mut().zip(x_plane) {
                    *o = v * scale + shift;
                }
            }
        }
        self.push(Op::GroupNorm { x, gamma, beta, groups, mean, rstd }, out)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(Op::Silu(x), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    /// Adds `v: [n, c]` to every spatial position of `x: [n, c, h, w]`.
    pub fn add_channels(&mut self, x: Var, v: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        assert_eq!(self.value(v).shape(), &xs[..2], "add_channels shape mismatch in {}", self.scope);
        let hw: usize = xs[2..].iter().product();
        let vv = self.value(v).data().to_vec();
        let mut out = self.value(x).clone();
        for (j, chunk) in out.data_mut().chunks_mut(hw).enumerate() {
            chunk.iter_mut().for_each(|o| *o += vv[j]);
        }
        self.push(Op::AddChannels(x, v), out)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let (h, w) = (xs[2], xs[3]);
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let quarter = S::lit(0.25);
        let mut out = Tensor::zeros(&[xs[0], xs[1], oh, ow]);
        for (p, o) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let s = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] + src[(2 * y + 1) * w + 2 * xx] + src[(2 * y + 1) * w + 2 * xx + 1];
                    o[y * ow + xx] = s * quarter;
                }
            }
        }
        self.push(Op::AvgPool2(x), out)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let (h, w) = (xs[2], xs[3]);
        let xv = self.value(x).data();
        let mut out = Tensor::zeros(&[xs[0], xs[1], 2 * h, 2 * w]);
        for (p, o) in out.data_mut().chunks_mut(4 * h * w).enumerate() {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    o[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Op::Upsample2(x), out)
    }

    /// Channel concatenation of two NCHW tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (as_, bs) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        assert!(as_[0] == bs[0] && as_[2..] == bs[2..], "concat shape mismatch in {}", self.scope);
        let hw: usize = as_[2..].iter().product();
        let (pa, pb) = (as_[1] * hw, bs[1] * hw);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..as_[0] {
            data.extend_from_slice(&av[i * pa..(i + 1) * pa]);
            data.extend_from_slice(&bv[i * pb..(i + 1) * pb]);
        }
        let out = Tensor::from_vec(&[as_[0], as_[1] + bs[1], as_[2], as_[3]], data).expect("consistent concat");
        self.push(Op::Concat(a, b), out)
    }

    /// `x: [n, din]`, `w: [dout, din]`, `b: [dout]` → `[n, dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (n, din) = (self.value(x).dim(0), self.value(x).dim(1));
        let dout = self.value(w).dim(0);
        assert_eq!(self.value(w).dim(1), din, "linear shape mismatch in {}", self.scope);
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Tensor::zeros(&[n, dout]);
        for (r, o) in out.data_mut().chunks_mut(dout).enumerate() {
            let xr = &xv[r * din..(r + 1) * din];
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = dot(xr, &wv[j * din..(j + 1) * din]) + bv[j];
            }
        }
        self.push(Op::Linear { x, w, b }, out)
    }

    /// Rows of `table: [q, d]` selected by `idx`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Var {
        let (q, d) = (self.value(table).dim(0), self.value(table).dim(1));
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            assert!(i < q, "embedding index {i} out of range {q}");
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(&[idx.len(), d], data).expect("consistent embedding");
        self.push(Op::Embedding { table, idx: idx.to_vec() }, out)
    }

    /// `[n, c, h, w]` → `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.value(x).shape().to_vec();
        let hw: usize = xs[2..].iter().product();
        let inv = S::lit(1.0 / hw as f64);
        let data = self.value(x).data().chunks(hw).map(|c| c.iter().copied().sum::<S>() * inv).collect();
        let out = Tensor::from_vec(&xs[..2], data).expect("consistent pool");
        self.push(Op::GlobalAvgPool(x), out)
    }

    /// `[n, ...]` → `[n, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.dim(0);
        let out = Tensor::from_vec(&[n, xv.len() / n.max(1)], xv.data().to_vec()).expect("consistent flatten");
        self.push(Op::Flatten(x), out)
    }

    /// Row-wise L2 normalization of a `[n, d]` tensor.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let d = self.value(x).dim(1);
        let mut out = self.value(x).clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(d) {
            let nrm = dot(row, row).sqrt().max(S::lit(1e-12));
            norms.push(nrm);
            row.iter_mut().for_each(|v| *v /= nrm);
        }
        self.push(Op::L2Normalize { x, norms }, out)
    }

    /// `a: [n, d]` times `b: [k, d]` transposed → `[n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (n, d) = (self.value(a).dim(0), self.value(a).dim(1));
        let k = self.value(b).dim(0);
        assert_eq!(self.value(b).dim(1), d, "matmul_t shape mismatch in {}", self.scope);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Tensor::zeros(&[n, k]);
        for (r, o) in out.data_mut().chunks_mut(k).enumerate() {
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = dot(&av[r * d..(r + 1) * d], &bv[j * d..(j + 1) * d]);
            }
        }
        self.push(Op::MatMulT(a, b), out)
    }

    pub fn scale(&mut self, x: Var, s: S) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, s), out)
    }

    /// Mean squared error against a constant target; a scalar `[1]` node.
    pub fn mse(&mut self, pred: Var, target: Tensor<S>) -> Var {
        assert_eq!(self.value(pred).shape(), target.shape(), "mse shape mismatch");
        let n = target.len() as f64;
        let s: f64 = self.value(pred).data().iter().zip(target.data()).map(|(p, t)| (*p - *t).f64().powi(2)).sum();
        let out = Tensor::from_vec(&[1], vec![S::lit(s / n)]).expect("scalar");
        self.push(Op::Mse { pred, target }, out)
    }

    /// Mean softmax cross-entropy of `[n, k]` logits; a scalar `[1]` node.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Var {
        let (n, k) = (self.value(logits).dim(0), self.value(logits).dim(1));
        assert_eq!(labels.len(), n, "one label per row");
        let lv = self.value(logits).data();
        let mut probs = vec![S::zero(); n * k];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &lv[r * k..(r + 1) * k];
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let z: f64 = row.iter().map(|v| (v.f64() - mx).exp()).sum();
            for j in 0..k {
                probs[r * k + j] = S::lit((row[j].f64() - mx).exp() / z);
            }
            assert!(labels[r] < k, "label out of range");
            loss += z.ln() + mx - row[labels[r]].f64();
        }
        let out = Tensor::from_vec(&[1], vec![S::lit(loss / n as f64)]).expect("scalar");
        self.push(Op::SoftmaxCe { logits, labels: labels.to_vec(), probs }, out)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// (zeros for parameters that do not influence it).
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor<S>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss node"));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(&[1], vec![S::one()])?);
        let mut pgrads: Vec<Tensor<S>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(p) => pgrads[*p].add_assign(&g),
                Op::Conv2d { x, w, b, k } => {
                    let (dx, dw, db) = self.conv_backward(*x, *w, *k, &g);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    if let Some(b) = b {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                    let (dx, dg, dbeta) = self.gn_backward(*x, *gamma, *groups, mean, rstd, &g);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::Silu(x) => {
                    let xv = self.value(*x).data();
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv) {
                        let s = sigmoid(v);
                        *d *= s * (S::one() + v * (S::one() - s));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddChannels(x, v) => {
                    let xs = self.value(*x).shape();
                    let hw: usize = xs[2..].iter().product();
                    let dv = g.data().chunks(hw).map(|c| c.iter().copied().sum::<S>()).collect();
                    acc(&mut grads, *v, Tensor::from_vec(&xs[..2], dv)?);
                    acc(&mut grads, *x, g);
                }
                Op::AvgPool2(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let (h, w) = (xs[2], xs[3]);
                    let (oh, ow) = (h / 2, w / 2);
                    let quarter = S::lit(0.25);
                    let mut dx = Tensor::zeros(&xs);
                    for (p, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
                        let gp = &g.data()[p * oh * ow..(p + 1) * oh * ow];
                        for y in 0..h {
                            for xx in 0..w {
                                d[y * w + xx] = gp[(y / 2) * ow + xx / 2] * quarter;
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Upsample2(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let (h, w) = (xs[2], xs[3]);
                    let mut dx = Tensor::zeros(&xs);
                    for (p, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
                        let gp = &g.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
                        for y in 0..h {
                            for xx in 0..w {
                                let (y2, x2) = (2 * y, 2 * xx);
                                d[y * w + xx] = gp[y2 * 2 * w + x2] + gp[y2 * 2 * w + x2 + 1] + gp[(y2 + 1) * 2 * w + x2] + gp[(y2 + 1) * 2 * w + x2 + 1];
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let (as_, bs) = (self.value(*a).shape().to_vec(), self.value(*b).shape().to_vec());
                    let hw: usize = as_[2..].iter().product();
                    let (pa, pb) = (as_[1] * hw, bs[1] * hw);
                    let mut da = Vec::with_capacity(as_[0] * pa);
                    let mut dbv = Vec::with_capacity(as_[0] * pb);
                    for chunk in g.data().chunks(pa + pb) {
                        da.extend_from_slice(&chunk[..pa]);
                        dbv.extend_from_slice(&chunk[pa..]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec(&as_, da)?);
                    acc(&mut grads, *b, Tensor::from_vec(&bs, dbv)?);
                }
                Op::Linear { x, w, b } => {
                    let (n, din) = (self.value(*x).dim(0), self.value(*x).dim(1));
                    let dout = self.value(*w).dim(0);
                    let (xv, wv, gv) = (self.value(*x).data(), self.value(*w).data(), g.data());
                    let mut dx = Tensor::zeros(&[n, din]);
                    let mut dw = Tensor::zeros(&[dout, din]);
                    let mut db = Tensor::zeros(&[dout]);
                    for r in 0..n {
                        let gr = &gv[r * dout..(r + 1) * dout];
                        let dxr = &mut dx.data_mut()[r * din..(r + 1) * din];
                        for (j, &gj) in gr.iter().enumerate() {
                            for (d, &wv) in dxr.iter_mut().zip(&wv[j * din..(j + 1) * din]) {
                                *d += gj * wv;
                            }
                        }
                        let xr = &xv[r * din..(r + 1) * din];
                        for (j, &gj) in gr.iter().enumerate() {
                            for (d, &xval) in dw.data_mut()[j * din..(j + 1) * din].iter_mut().zip(xr) {
                                *d += gj * xval;
                            }
                            db.data_mut()[j] += gj;
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Embedding { table, idx } => {
                    let ts = self.value(*table).shape().to_vec();
                    let d = ts[1];
                    let mut dt = Tensor::zeros(&ts);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &v) in dt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::GlobalAvgPool(x) => {
                    let xs = self.value(*x).shape().to_vec();
                    let hw: usize = xs[2..].iter().product();
                    let inv = S::lit(1.0 / hw as f64);
                    let mut dx = Tensor::zeros(&xs);
                    for (j, chunk) in dx.data_mut().chunks_mut(hw).enumerate() {
                        let v = g.data()[j] * inv;
                        chunk.iter_mut().for_each(|o| *o = v);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Flatten(x) => {
                    let dx = Tensor::from_vec(self.value(*x).shape(), g.data().to_vec())?;
                    acc(&mut grads, *x, dx);
                }
                Op::L2Normalize { x, norms } => {
                    let d = self.value(*x).dim(1);
                    let y = &self.nodes[i].value;
                    let mut dx = g.clone();
                    for (r, row) in dx.data_mut().chunks_mut(d).enumerate() {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let proj = dot(row, yr);
                        for (o, &yv) in row.iter_mut().zip(yr) {
                            *o = (*o - proj * yv) / norms[r];
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::MatMulT(a, b) => {
                    let (n, d) = (self.value(*a).dim(0), self.value(*a).dim(1));
                    let k = self.value(*b).dim(0);
                    let (av, bv, gv) = (self.value(*a).data(), self.value(*b).data(), g.data());
                    let mut da = Tensor::zeros(&[n, d]);
                    let mut dbm = Tensor::zeros(&[k, d]);
                    for r in 0..n {
                        for j in 0..k {
                            let gj = gv[r * k + j];
                            for t in 0..d {
                                da.data_mut()[r * d + t] += gj * bv[j * d + t];
                                dbm.data_mut()[j * d + t] += gj * av[r * d + t];
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, dbm);
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    acc(&mut grads, *x, g.map(|v| v * s));
                }
                Op::Mse { pred, target } => {
                    let f = g.data()[0] * S::lit(2.0 / target.len() as f64);
                    let pv = self.value(*pred);
                    let mut dp = Tensor::zeros(pv.shape());
                    for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                        *d = (p - t) * f;
                    }
                    acc(&mut grads, *pred, dp);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let (n, k) = (self.value(*logits).dim(0), self.value(*logits).dim(1));
                    let f = g.data()[0] * S::lit(1.0 / n as f64);
                    let mut dl = Tensor::from_vec(&[n, k], probs.clone())?;
                    for (r, &lab) in labels.iter().enumerate() {
                        dl.data_mut()[r * k + lab] -= S::one();
                    }
                    dl.data_mut().iter_mut().for_each(|v| *v *= f);
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        Ok(pgrads)
    }

    fn conv_backward(&self, x: Var, w: Var, k: usize, g: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let xs = self.value(x).shape().to_vec();
        let (ci, h, wd) = (xs[1], xs[2], xs[3]);
        let co = self.value(w).dim(0);
        let hw = h * wd;
        let kk = ci * k * k;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let gv = g.data();
        let mut dx = Tensor::zeros(&xs);
        let partial: Vec<Vec<S>> = dx
            .data_mut()
            .par_chunks_mut(ci * hw)
            .enumerate()
            .map(|(i, dxi)| {
                let xi = &xv[i * ci * hw..(i + 1) * ci * hw];
                let gi = &gv[i * co * hw..(i + 1) * co * hw];
                let mut dw = vec![S::zero(); co * kk];
                if k == 1 {
                    S::gemm(co, hw, ci, gi, hw, 1, xi, 1, hw, S::zero(), &mut dw, ci);
                    S::gemm(ci, co, hw, wv, 1, ci, gi, hw, 1, S::zero(), dxi, hw);
                } else {
                    conv3x3_grads(xi, wv, gi, dxi, &mut dw, ci, co, h, wd);
                }
                dw
            })
            .collect();
        let mut dw = Tensor::zeros(self.value(w).shape());
        for p in &partial {
            for (d, &v) in dw.data_mut().iter_mut().zip(p) {
                *d += v;
            }
        }
        let mut db = Tensor::zeros(&[co]);
        for (j, chunk) in gv.chunks(hw).enumerate() {
            db.data_mut()[j % co] += chunk.iter().copied().sum::<S>();
        }
        (dx, dw, db)
    }

    fn gn_backward(&self, x: Var, gamma: Var, groups: usize, mean: &[S], rstd: &[S], g: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
        let xs = self.value(x).shape().to_vec();
        let c = xs[1];
        let hw: usize = xs[2..].iter().product();
        let cg = c / groups;
        let per = cg * hw;
        let xv = self.value(x).data();
        let gam = self.value(gamma).data();
        let gv = g.data();
        let mut dx = Tensor::zeros(&xs);
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        let inv = S::lit(1.0 / per as f64);
        for blk in 0..mean.len() {
            let c0 = (blk % groups) * cg;
            let (m, r) = (mean[blk], rstd[blk]);
            let xs_blk = &xv[blk * per..(blk + 1) * per];
            let gs_blk = &gv[blk * per..(blk + 1) * per];
            let (mut sum_dxh, mut sum_dxh_xh) = (S::zero(), S::zero());
            for (j, (x_plane, g_plane)) in xs_blk.chunks(hw).zip(gs_blk.chunks(hw)).enumerate() {
                let ch = c0 + j;
                let (mut sg, mut sgx) = (S::zero(), S::zero());
                for (&v, &gy) in x_plane.iter().zip(g_plane) {
                    sg += gy;
                    sgx += gy * (v - m);
                }
                let sgxh = sgx * r;
                dgamma.data_mut()[ch] += sgxh;
                dbeta.data_mut()[ch] += sg;
                sum_dxh += sg * gam[ch];
                sum_dxh_xh += sgxh * gam[ch];
            }
            let dx_blk = &mut dx.data_mut()[blk * per..(blk + 1) * per];
            for (j, ((d_plane, x_plane), g_plane)) in dx_blk.chunks_mut(hw).zip(xs_blk.chunks(hw)).zip(gs_blk.chunks(hw)).enumerate() {
                let gmul = r * gam[c0 + j];
                let a = r * sum_dxh * inv;
                let b = r * r * sum_dxh_xh * inv;
                for ((d, &v), &gy) in d_plane.iter_mut().zip(x_plane).zip(g_plane) {
                    *d = gmul * gy - a - (v - m) * b;
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |s, (&x, &y)| s + x * y)
}

/// Copy of `x: [c, h, w]` with a one-pixel zero border.
fn pad_planes<S: Scalar>(x: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![S::zero(); c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            out[(ch * ph + y + 1) * pw + 1..][..w].copy_from_slice(&x[(ch * h + y) * w..][..w]);
        }
    }
    out
}

/// 3×3 same-padded correlation of one sample: `x: [ci, h, w]`, weights
/// `[co, ci, 3, 3]`, result written into `out: [co, h, w]`.
fn conv3x3<S: Scalar>(x: &[S], wt: &[S], out: &mut [S], ci: usize, co: usize, h: usize, w: usize) {
    let xp = pad_planes(x, ci, h, w);
    macro_rules! run {
        ($l:literal) => {
            if co % 4 == 0 {
                conv3x3_block::<S, $l, 4>(&xp, wt, out, ci, co, h, w)
            } else {
                conv3x3_block::<S, $l, 1>(&xp, wt, out, ci, co, h, w)
            }
        };
    }
    if w % 16 == 0 {
        run!(16)
    } else if w % 8 == 0 {
        run!(8)
    } else if w % 4 == 0 {
        run!(4)
    } else {
        run!(1)
    }
}

fn conv3x3_block<S: Scalar, const L: usize, const B: usize>(xp: &[S], wt: &[S], out: &mut [S], ci: usize, co: usize, h: usize, w: usize) {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let wstride = ci * 9;
    for o0 in (0..co).step_by(B) {
        for y in 0..h {
            for x0 in (0..w).step_by(L) {
                let mut acc = [[S::zero(); L]; B];
                for c in 0..ci {
                    for ky in 0..3 {
                        let row = &xp[c * plane + (y + ky) * pw + x0..][..L + 2];
                        for kx in 0..3 {
                            let src: &[S; L] = row[kx..kx + L].try_into().expect("lane width");
                            let base = c * 9 + ky * 3 + kx;
                            let mut ws = [S::zero(); B];
                            for (b, wv) in ws.iter_mut().enumerate() {
                                *wv = wt[(o0 + b) * wstride + base];
                            }
                            for b in 0..B {
                                for j in 0..L {
                                    acc[b][j] += ws[b] * src[j];
                                }
                            }
                        }
                    }
                }
                for (b, a) in acc.iter().enumerate() {
                    out[((o0 + b) * h + y) * w + x0..][..L].copy_from_slice(a);
                }
            }
        }
    }
}

/// Input and weight gradients of [`conv3x3`] for one sample; `dx` is
/// overwritten, `dw` accumulated.
#[allow(clippy::too_many_arguments)]
fn conv3x3_grads<S: Scalar>(x: &[S], wt: &[S], g: &[S], dx: &mut [S], dw: &mut [S], ci: usize, co: usize, h: usize, w: usize) {
    // Data gradient: correlation of g with the flipped, transposed kernel.
    let mut wflip = vec![S::zero(); wt.len()];
    for o in 0..co {
        for c in 0..ci {
            for t in 0..9 {
                wflip[(c * co + o) * 9 + (8 - t)] = wt[(o * ci + c) * 9 + t];
            }
        }
    }
    conv3x3(g, &wflip, dx, co, ci, h, w);

    let xp = pad_planes(x, ci, h, w);
    if w % 16 == 0 {
        weight_grad::<S, 16>(&xp, g, dw, ci, co, h, w)
    } else if w % 8 == 0 {
        weight_grad::<S, 8>(&xp, g, dw, ci, co, h, w)
    } else if w % 4 == 0 {
        weight_grad::<S, 4>(&xp, g, dw, ci, co, h, w)
    } else {
        weight_grad::<S, 1>(&xp, g, dw, ci, co, h, w)
    }
}

fn weight_grad<S: Scalar, const L: usize>(xp: &[S], g: &[S], dw: &mut [S], ci: usize, co: usize, h: usize, w: usize) {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    for o in 0..co {
        let gp = &g[o * h * w..(o + 1) * h * w];
        for c in 0..ci {
            let mut acc = [[S::zero(); L]; 9];
            for y in 0..h {
                for x0 in (0..w).step_by(L) {
                    let gr: &[S; L] = gp[y * w + x0..][..L].try_into().expect("lane width");
                    for ky in 0..3 {
                        let row = &xp[c * plane + (y + ky) * pw + x0..][..L + 2];
                        for kx in 0..3 {
                            let src: &[S; L] = row[kx..kx + L].try_into().expect("lane width");
                            let a = &mut acc[ky * 3 + kx];
                            for j in 0..L {
                                a[j] += gr[j] * src[j];
                            }
                        }
                    }
                }
            }
            for (t, a) in acc.iter().enumerate() {
                dw[(o * ci + c) * 9 + t] += a.iter().copied().fold(S::zero(), |s, v| s + v);
            }
        }
    }
}
