//! Elementwise, reduction, linear-algebra and layout operations.

use super::{numel, Tensor};
use crate::error::{Error, Result};

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `rhs` may equal `lhs` in shape or be a trailing suffix of it (broadcast
/// over leading axes).
fn check_suffix(lhs: &[usize], rhs: &[usize], op: &str) -> Result<()> {
    let ok = rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs;
    if !ok {
        return Err(Error::shape(format!(
            "{op}: cannot broadcast {rhs:?} onto {lhs:?}"
        )));
    }
    Ok(())
}

fn reduce_to_suffix(grad: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for chunk in grad.chunks(n) {
        out.iter_mut().zip(chunk).for_each(|(o, g)| *o += g);
    }
    out
}

impl Tensor {
    fn unary<F, D>(&self, name: &'static str, f: F, df: D) -> Tensor
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        let data: Vec<f64> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(name, self.shape().to_vec(), data, vec![self.clone()], move |ctx| {
            let x = ctx.inputs[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x)
                .zip(ctx.out)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        check_suffix(self.shape(), rhs.shape(), "add")?;
        let n = rhs.numel();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(rhs.data()).map(|(a, b)| a + b))
            .collect();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            move |ctx| {
                let ga = ctx.needs(0).then(|| ctx.grad.to_vec());
                let gb = ctx.needs(1).then(|| reduce_to_suffix(ctx.grad, n));
                vec![ga, gb]
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.add(&rhs.scale(-1.0))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        check_suffix(self.shape(), rhs.shape(), "mul")?;
        let n = rhs.numel();
        let data = self
            .data()
            .chunks(n)
            .flat_map(|c| c.iter().zip(rhs.data()).map(|(a, b)| a * b))
            .collect();
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            move |ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs(0).then(|| {
                    ctx.grad
                        .chunks(n)
                        .flat_map(|g| g.iter().zip(b).map(|(g, b)| g * b))
                        .collect()
                });
                let gb = ctx.needs(1).then(|| {
                    let mut out = vec![0.0; n];
                    for (g, a) in ctx.grad.chunks(n).zip(a.chunks(n)) {
                        for i in 0..n {
                            out[i] += g[i] * a[i];
                        }
                    }
                    out
                });
                vec![ga, gb]
            },
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.unary("scale", |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.unary("add_scalar", |v| v + s, |_, _| 1.0)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&self) -> Tensor {
        self.unary("silu", |v| v * sigmoid(v), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    /// `tanh(x) = 2·σ(2x) − 1`, composed from the closed op set.
    pub fn tanh(&self) -> Tensor {
        self.scale(2.0).sigmoid().scale(2.0).add_scalar(-1.0)
    }

    /// Mean of all elements as a 0-d tensor. Accumulates left to right.
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let sum: f64 = self.data().iter().sum();
        Tensor::from_op("mean", vec![], vec![sum / n as f64], vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0] / n as f64; n])]
        })
    }

    /// Mean smooth-L1 (δ = 1) between `self` and `target`.
    pub fn smooth_l1(&self, target: &Tensor) -> Result<Tensor> {
        if self.shape() != target.shape() {
            return Err(Error::shape(format!(
                "smooth_l1: {:?} vs {:?}",
                self.shape(),
                target.shape()
            )));
        }
        let n = self.numel();
        let total: f64 = self
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let d = p - t;
                if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            })
            .sum();
        Ok(Tensor::from_op(
            "smooth_l1",
            vec![],
            vec![total / n as f64],
            vec![self.clone(), target.clone()],
            move |ctx| {
                let scale = ctx.grad[0] / n as f64;
                let dp: Vec<f64> = ctx.inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.inputs[1].data())
                    .map(|(p, t)| {
                        let d = p - t;
                        scale * if d.abs() < 1.0 { d } else { d.signum() }
                    })
                    .collect();
                let dt = ctx.needs(1).then(|| dp.iter().map(|v| -v).collect());
                vec![ctx.needs(0).then_some(dp), dt]
            },
        ))
    }

    /// Batched matrix product over the last two axes.
    ///
    /// `self: [..., M, K]`, `rhs: [K, N]` (shared across the batch) or
    /// `rhs: [..., K, N]` with identical leading axes.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.ndim() < 2 || rhs.ndim() < 2 {
            return Err(Error::shape("matmul needs at least 2-d operands"));
        }
        let (ls, rs) = (self.shape(), rhs.shape());
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        let lead = &ls[..ls.len() - 2];
        let shared = rs.len() == 2;
        if k != k2 || (!shared && rs[..rs.len() - 2] != *lead) {
            return Err(Error::shape(format!("matmul: {ls:?} x {rs:?}")));
        }
        let batch = numel(lead);
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            let a = &self.data()[b * m * k..(b + 1) * m * k];
            let w = if shared { rhs.data() } else { &rhs.data()[b * k * n..(b + 1) * k * n] };
            gemm(a, w, &mut out[b * m * n..(b + 1) * m * n], m, k, n);
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), rhs.clone()],
            move |ctx| {
                let (a, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs(0).then(|| {
                    let mut ga = vec![0.0; batch * m * k];
                    for b in 0..batch {
                        let g = &ctx.grad[b * m * n..(b + 1) * m * n];
                        let wb = if shared { w } else { &w[b * k * n..(b + 1) * k * n] };
                        // ga = g · wᵀ
                        let gab = &mut ga[b * m * k..(b + 1) * m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let row = &wb[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                gab[i * k + p] = grow.iter().zip(row).map(|(x, y)| x * y).sum();
                            }
                        }
                    }
                    ga
                });
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; if shared { k * n } else { batch * k * n }];
                    for b in 0..batch {
                        let g = &ctx.grad[b * m * n..(b + 1) * m * n];
                        let ab = &a[b * m * k..(b + 1) * m * k];
                        let off = if shared { 0 } else { b * k * n };
                        // gw += aᵀ · g
                        for i in 0..m {
                            for p in 0..k {
                                let av = ab[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let dst = &mut gw[off + p * n..off + (p + 1) * n];
                                dst.iter_mut()
                                    .zip(&g[i * n..(i + 1) * n])
                                    .for_each(|(d, gv)| *d += av * gv);
                            }
                        }
                    }
                    gw
                });
                vec![ga, gw]
            },
        ))
    }

    /// `x · W + b` over the last axis, `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..nd).collect::<Vec<_>>() {
            return Err(Error::shape(format!("permute {perm:?} on {nd}-d tensor")));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src = gather_index(&in_shape, perm);
        let data = src.iter().map(|&i| self.data()[i]).collect();
        Ok(Tensor::from_op("permute", out_shape, data, vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; ctx.grad.len()];
            for (o, &i) in src.iter().enumerate() {
                g[i] = ctx.grad[o];
            }
            vec![Some(g)]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of nothing"))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::shape(format!("concat axis {axis} on {nd}-d tensor")));
        }
        for p in parts {
            let same = p.ndim() == nd
                && (0..nd).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !same {
                return Err(Error::shape(format!(
                    "concat: {:?} vs {:?} along axis {axis}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let outer = numel(&first.shape()[..axis]);
        let inner = numel(&first.shape()[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total / inner;
        let inputs: Vec<Tensor> = parts.iter().map(|&t| t.clone()).collect();
        Ok(Tensor::from_op("concat", shape, data, inputs, move |ctx| {
            let mut offset = 0;
            widths
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let start = offset;
                    offset += w;
                    ctx.needs(i).then(|| {
                        let mut g = Vec::with_capacity(outer * w);
                        for o in 0..outer {
                            let base = o * total + start;
                            g.extend_from_slice(&ctx.grad[base..base + w]);
                        }
                        g
                    })
                })
                .collect()
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.ndim() || start + len > self.shape()[axis] || len == 0 {
            return Err(Error::shape(format!(
                "narrow axis {axis} [{start}, {}) of {:?}",
                start + len,
                self.shape()
            )));
        }
        let outer = numel(&self.shape()[..axis]);
        let inner = numel(&self.shape()[axis + 1..]);
        let full = self.shape()[axis] * inner;
        let (lo, w) = (start * inner, len * inner);
        let mut data = Vec::with_capacity(outer * w);
        for o in 0..outer {
            data.extend_from_slice(&self.data()[o * full + lo..o * full + lo + w]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op("narrow", shape, data, vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; outer * full];
            for o in 0..outer {
                g[o * full + lo..o * full + lo + w].copy_from_slice(&ctx.grad[o * w..(o + 1) * w]);
            }
            vec![Some(g)]
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax on 0-d tensor"))?;
        let mut data = self.to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), data, vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; ctx.grad.len()];
            for ((gi, go), y) in g.chunks_mut(d).zip(ctx.grad.chunks(d)).zip(ctx.out.chunks(d)) {
                let dot: f64 = go.iter().zip(y).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    gi[j] = y[j] * (go[j] - dot);
                }
            }
            vec![Some(g)]
        }))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm on 0-d tensor"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(format!(
                "layer_norm: affine params {:?}/{:?} for width {d}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let x = &self.data()[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                xhat[r * d + j] = (x[j] - mean) * is;
            }
        }
        let (gm, bt) = (gamma.data(), beta.data());
        let data = xhat
            .chunks(d)
            .flat_map(|row| (0..d).map(move |j| row[j] * gm[j] + bt[j]))
            .collect();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |ctx| {
                let gm = ctx.inputs[1].data();
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; rows * d];
                    for r in 0..rows {
                        let go = &ctx.grad[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let gxh: Vec<f64> = (0..d).map(|j| go[j] * gm[j]).collect();
                        let m1 = gxh.iter().sum::<f64>() / d as f64;
                        let m2 = gxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gxh[j] - m1 - xh[j] * m2);
                        }
                    }
                    gx
                });
                let gg = ctx.needs(1).then(|| {
                    let mut gg = vec![0.0; d];
                    for (go, xh) in ctx.grad.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += go[j] * xh[j];
                        }
                    }
                    gg
                });
                let gb = ctx.needs(2).then(|| reduce_to_suffix(ctx.grad, d));
                vec![gx, gg, gb]
            },
        ))
    }
}

/// `out[m×n] = a[m×k] · w[k×n]`, accumulating in i-p-j order.
pub(crate) fn gemm(a: &[f64], w: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            orow.iter_mut()
                .zip(&w[p * n..(p + 1) * n])
                .for_each(|(o, wv)| *o += av * wv);
        }
    }
}

/// For each output position of a permuted tensor, the flat source index.
fn gather_index(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let nd = in_shape.len();
    let mut in_strides = vec![1; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(in_shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; nd];
    for _ in 0..total {
        idx.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for ax in (0..nd).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    idx
}
