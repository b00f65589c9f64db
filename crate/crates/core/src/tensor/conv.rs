//! Spatial operations: 2-D convolution, bilinear upsampling, spatial
//! broadcast, and depthwise causal 1-D convolution over token sequences.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Output positions `o` whose tap `k` lands inside `[0, n_in)`:
/// `0 <= o*stride + k - pad < n_in`, clipped to `[0, n_out)`.
fn valid_range(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let (k, pad, stride) = (k as isize, pad as isize, stride as isize);
    let lo = (pad - k).max(0);
    let lo = (lo + stride - 1) / stride;
    let hi = n_in as isize - 1 + pad - k;
    if hi < 0 {
        return (0, 0);
    }
    let hi = (hi / stride + 1).min(n_out as isize);
    (lo as usize, hi.max(lo) as usize)
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Visits every (input offset, output offset) pair touched by tap (ky, kx).
    #[inline]
    fn for_each_tap(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let (ylo, yhi) = valid_range(ky, self.pad, self.stride, self.h, self.ho);
        let (xlo, xhi) = valid_range(kx, self.pad, self.stride, self.w, self.wo);
        for oy in ylo..yhi {
            let iy = oy * self.stride + ky - self.pad;
            for ox in xlo..xhi {
                let ix = ox * self.stride + kx - self.pad;
                f(iy * self.w + ix, oy * self.wo + ox);
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation, `input: [B, Cin, H, W]`, `weight: [Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        self.expect_ndim(4, "conv2d input")?;
        weight.expect_ndim(4, "conv2d weight")?;
        if stride == 0 {
            return Err(Error::arg("conv2d stride must be positive"));
        }
        let [batch, cin, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let [cout, wcin, kh, kw] = [weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3)];
        if wcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape(format!("conv2d bias {:?} for {cout} outputs", b.shape())));
            }
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}"
            )));
        }
        let (ho, wo) = conv2d_raw_output_dims(h, w, kh, kw, stride, padding);
        let g = ConvGeom {
            batch,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            stride,
            pad: padding,
        };
        let plane_in = h * w;
        let plane_out = ho * wo;
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![0.0; batch * cout * plane_out];
        out.par_chunks_mut(plane_out).enumerate().for_each(|(bc, dst)| {
            let (b, co) = (bc / cout, bc % cout);
            if let Some(bias) = bias {
                dst.fill(bias.data()[co]);
            }
            for ci in 0..cin {
                let src = &x[(b * cin + ci) * plane_in..(b * cin + ci + 1) * plane_in];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wt[((co * cin + ci) * kh + ky) * kw + kx];
                        g.for_each_tap(ky, kx, |i, o| dst[o] += wv * src[i]);
                    }
                }
            }
        });

        let mut inputs = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            "conv2d",
            vec![batch, cout, ho, wo],
            out,
            inputs,
            move |ctx| {
                let x = ctx.inputs[0].data();
                let wt = ctx.inputs[1].data();
                let gout = ctx.grad;
                let gx = ctx.needs(0).then(|| {
                    let mut gx = vec![0.0; g.batch * g.cin * plane_in];
                    gx.par_chunks_mut(plane_in).enumerate().for_each(|(bc, dst)| {
                        let (b, ci) = (bc / g.cin, bc % g.cin);
                        for co in 0..g.cout {
                            let go = &gout[(b * g.cout + co) * plane_out..(b * g.cout + co + 1) * plane_out];
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let wv = wt[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                                    g.for_each_tap(ky, kx, |i, o| dst[i] += wv * go[o]);
                                }
                            }
                        }
                    });
                    gx
                });
                let ksz = g.cin * g.kh * g.kw;
                let gw = ctx.needs(1).then(|| {
                    let mut gw = vec![0.0; g.cout * ksz];
                    gw.par_chunks_mut(ksz).enumerate().for_each(|(co, dst)| {
                        for b in 0..g.batch {
                            let go = &gout[(b * g.cout + co) * plane_out..(b * g.cout + co + 1) * plane_out];
                            for ci in 0..g.cin {
                                let src = &x[(b * g.cin + ci) * plane_in..(b * g.cin + ci + 1) * plane_in];
                                for ky in 0..g.kh {
                                    for kx in 0..g.kw {
                                        let mut acc = 0.0;
                                        g.for_each_tap(ky, kx, |i, o| acc += src[i] * go[o]);
                                        dst[(ci * g.kh + ky) * g.kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    });
                    gw
                });
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    grads.push(ctx.needs(2).then(|| {
                        (0..g.cout)
                            .map(|co| {
                                (0..g.batch)
                                    .map(|b| {
                                        gout[(b * g.cout + co) * plane_out..(b * g.cout + co + 1) * plane_out]
                                            .iter()
                                            .sum::<f64>()
                                    })
                                    .sum()
                            })
                            .collect()
                    }));
                }
                grads
            },
        ))
    }

    /// Bilinear upsampling by an integer factor with half-pixel centers:
    /// output pixel `o` samples the input at `(o + 0.5)/scale − 0.5`, clamped
    /// to the border.
    pub fn upsample_bilinear(&self, scale: usize) -> Result<Tensor> {
        self.expect_ndim(4, "upsample input")?;
        if scale < 1 {
            return Err(Error::arg("upsample scale must be >= 1"));
        }
        let [b, c, h, w] = [self.dim(0), self.dim(1), self.dim(2), self.dim(3)];
        let (ho, wo) = (h * scale, w * scale);
        let rows = upsample_weights(h, scale);
        let cols = upsample_weights(w, scale);
        let planes = b * c;
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            let src = &self.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                    dst[oy * wo + ox] = (1.0 - ly) * ((1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1])
                        + ly * ((1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]);
                }
            }
        }
        Ok(Tensor::from_op("upsample", vec![b, c, ho, wo], out, vec![self.clone()], move |ctx| {
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                let go = &ctx.grad[p * ho * wo..(p + 1) * ho * wo];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, ly)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in cols.iter().enumerate() {
                        let gv = go[oy * wo + ox];
                        dst[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * gv;
                        dst[y0 * w + x1] += (1.0 - ly) * lx * gv;
                        dst[y1 * w + x0] += ly * (1.0 - lx) * gv;
                        dst[y1 * w + x1] += ly * lx * gv;
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Broadcast `[B, C]` to every spatial location of a `[B, C, H, W]` map.
    pub fn expand_spatial(&self, h: usize, w: usize) -> Result<Tensor> {
        self.expect_ndim(2, "expand_spatial input")?;
        let (b, c) = (self.dim(0), self.dim(1));
        let hw = h * w;
        let data = self
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, hw))
            .collect();
        Ok(Tensor::from_op("expand_spatial", vec![b, c, h, w], data, vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.chunks(hw).map(|p| p.iter().sum()).collect())]
        }))
    }

    /// Depthwise causal convolution over the sequence axis of `[B, L, D]`
    /// tokens with `weight: [D, K]`. Tap `K−1` multiplies the current token;
    /// positions before the start are zero.
    pub fn causal_conv1d(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        self.expect_ndim(3, "causal_conv1d input")?;
        weight.expect_ndim(2, "causal_conv1d weight")?;
        let (b, l, d) = (self.dim(0), self.dim(1), self.dim(2));
        let k = weight.dim(1);
        if weight.dim(0) != d || bias.shape() != [d] {
            return Err(Error::shape(format!(
                "causal_conv1d: weight {:?}, bias {:?} for width {d}",
                weight.shape(),
                bias.shape()
            )));
        }
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![0.0; b * l * d];
        for bi in 0..b {
            for t in 0..l {
                for c in 0..d {
                    let mut acc = bias.data()[c];
                    for j in 0..k {
                        if let Some(s) = (t + j + 1).checked_sub(k) {
                            acc += wt[c * k + j] * x[(bi * l + s) * d + c];
                        }
                    }
                    out[(bi * l + t) * d + c] = acc;
                }
            }
        }
        Ok(Tensor::from_op(
            "causal_conv1d",
            vec![b, l, d],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |ctx| {
                let x = ctx.inputs[0].data();
                let wt = ctx.inputs[1].data();
                let mut gx = vec![0.0; b * l * d];
                let mut gw = vec![0.0; d * k];
                let mut gb = vec![0.0; d];
                for bi in 0..b {
                    for t in 0..l {
                        for c in 0..d {
                            let g = ctx.grad[(bi * l + t) * d + c];
                            gb[c] += g;
                            for j in 0..k {
                                if let Some(s) = (t + j + 1).checked_sub(k) {
                                    gx[(bi * l + s) * d + c] += wt[c * k + j] * g;
                                    gw[c * k + j] += x[(bi * l + s) * d + c] * g;
                                }
                            }
                        }
                    }
                }
                vec![ctx.needs(0).then_some(gx), ctx.needs(1).then_some(gw), ctx.needs(2).then_some(gb)]
            },
        ))
    }
}

pub fn conv2d_raw_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    (
        (h + 2 * padding - kh) / stride + 1,
        (w + 2 * padding - kw) / stride + 1,
    )
}

/// Per output index: (lower source index, upper source index, upper weight).
pub fn upsample_weights(n: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..n * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
