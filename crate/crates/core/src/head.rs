//! Dense grasp prediction head, training-target rasterization, and top-k
//! decoding back to oriented rectangles.
//!
//! The head predicts four maps at input resolution: grasp quality in [0, 1],
//! `cos 2θ` and `sin 2θ` in [−1, 1], and opening width as a fraction of
//! `w_max`. Doubling the angle makes the encoding invariant to θ → θ + π.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, Scope};
use crate::tensor::Tensor;

/// Oriented grasp rectangle in pixel coordinates. `w` runs along the
/// direction `(cos θ, sin θ)` (the gripper opening), `h` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

/// Maps an angle to its representative in (−π/2, π/2].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta - PI * (theta / PI).round();
    if t <= -FRAC_PI_2 {
        t += PI;
    }
    if t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

impl GraspRect {
    /// Rectangle with `theta` normalized; sides must be positive.
    pub fn new(x: f64, y: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::arg(format!("grasp sides must be positive, got w={w}, h={h}")));
        }
        Ok(GraspRect {
            x,
            y,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    /// Whether point `(px, py)` lies in the sub-rectangle spanning the middle
    /// `fraction` of the width.
    pub fn contains_scaled(&self, px: f64, py: f64, fraction: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= 0.5 * self.w * fraction && across.abs() <= 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Rectangle plus the score it was decoded with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedGrasp {
    #[serde(flatten)]
    pub rect: GraspRect,
    pub quality: f64,
}

/// The four dense output maps, each `[H, W]` or `[B, H, W]`.
#[derive(Debug, Clone)]
pub struct GraspMaps {
    pub quality: Tensor,
    pub cos2t: Tensor,
    pub sin2t: Tensor,
    pub width: Tensor,
}

impl GraspMaps {
    pub fn maps(&self) -> [&Tensor; 4] {
        [&self.quality, &self.cos2t, &self.sin2t, &self.width]
    }

    /// `(H, W)` of the maps.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.quality.shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    /// Extracts sample `b` of a batched set as `[H, W]` maps.
    pub fn sample(&self, b: usize) -> Result<GraspMaps> {
        let (h, w) = self.dims();
        let take = |t: &Tensor| -> Result<Tensor> {
            t.expect_ndim(3, "batched grasp map")?;
            t.narrow(0, b, 1)?.reshape(&[h, w])
        };
        Ok(GraspMaps {
            quality: take(&self.quality)?,
            cos2t: take(&self.cos2t)?,
            sin2t: take(&self.sin2t)?,
            width: take(&self.width)?,
        })
    }

    /// Stacks `[H, W]` maps of several samples into `[B, H, W]` maps.
    pub fn stack(items: &[GraspMaps]) -> Result<GraspMaps> {
        let first = items.first().ok_or_else(|| Error::arg("no maps to stack"))?;
        let (h, w) = first.dims();
        let gather = |f: fn(&GraspMaps) -> &Tensor| -> Result<Tensor> {
            let mut data = Vec::with_capacity(items.len() * h * w);
            for m in items {
                let t = f(m);
                if t.shape() != [h, w] {
                    return Err(Error::shape(format!("map {:?}, expected [{h}, {w}]", t.shape())));
                }
                data.extend_from_slice(t.data());
            }
            Tensor::new(&[items.len(), h, w], data)
        };
        Ok(GraspMaps {
            quality: gather(|m| &m.quality)?,
            cos2t: gather(|m| &m.cos2t)?,
            sin2t: gather(|m| &m.sin2t)?,
            width: gather(|m| &m.width)?,
        })
    }
}

/// Initial probability of the quality and width outputs; most target pixels
/// are zero.
pub const OUTPUT_PRIOR: f64 = 0.01;
/// The output layer starts small so no activation begins saturated.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

pub fn init(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) {
    b.conv("fc1", cfg.fused_channels, cfg.head_hidden, 1);
    let logit = (OUTPUT_PRIOR / (1.0 - OUTPUT_PRIOR)).ln();
    let mut out = b.sub("fc2");
    out.uniform("weight", &[4, cfg.head_hidden, 1, 1], OUTPUT_INIT_SCALE / (cfg.head_hidden as f64).sqrt());
    out.tensor("bias", &[4], vec![logit, 0.0, 0.0, logit]);
}

/// Per-position two-layer MLP on F_1 followed by bilinear upsampling to
/// `image_size`.
pub fn predict_maps(f1: &Tensor, p: &Scope<'_>, image_size: (usize, usize)) -> Result<GraspMaps> {
    f1.expect_ndim(4, "fused feature")?;
    let (b, h, w) = (f1.dim(0), f1.dim(2), f1.dim(3));
    let (ih, iw) = image_size;
    if ih % h != 0 || iw % w != 0 || ih / h != iw / w {
        return Err(Error::shape(format!(
            "cannot upsample {h}x{w} features to a {ih}x{iw} image"
        )));
    }
    let out = p.conv("fc2", &p.conv("fc1", f1, 1, 0)?.silu(), 1, 0)?;
    let quality = out.narrow(1, 0, 1)?.sigmoid();
    let cos2t = out.narrow(1, 1, 1)?.tanh();
    let sin2t = out.narrow(1, 2, 1)?.tanh();
    let width = out.narrow(1, 3, 1)?.sigmoid();
    let scale = ih / h;
    let up = |t: Tensor| -> Result<Tensor> { t.upsample_bilinear(scale)?.reshape(&[b, ih, iw]) };
    Ok(GraspMaps {
        quality: up(quality)?,
        cos2t: up(cos2t)?,
        sin2t: up(sin2t)?,
        width: up(width)?,
    })
}

/// Fraction of the rectangle width painted as positive quality.
pub const QUALITY_SUPPORT: f64 = 1.0 / 3.0;

/// Rasterizes ground-truth grasps into `[H, W]` target maps. Pixel `(col,
/// row)` is sampled at point `(col, row)`; later grasps overwrite earlier ones.
pub fn encode_targets(grasps: &[GraspRect], height: usize, width: usize, w_max: f64) -> Result<GraspMaps> {
    let n = height * width;
    let (mut q, mut c, mut s, mut wd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for g in grasps {
        let reach = 0.5 * (g.w * QUALITY_SUPPORT).hypot(g.h) + 1.0;
        let (c0, c1) = ((g.x - reach).floor().max(0.0) as usize, (g.x + reach).ceil().max(0.0) as usize);
        let (r0, r1) = ((g.y - reach).floor().max(0.0) as usize, (g.y + reach).ceil().max(0.0) as usize);
        let (cos2, sin2) = ((2.0 * g.theta).cos(), (2.0 * g.theta).sin());
        let wn = g.w.min(w_max) / w_max;
        for row in r0..=r1.min(height.saturating_sub(1)) {
            for col in c0..=c1.min(width.saturating_sub(1)) {
                if g.contains_scaled(col as f64, row as f64, QUALITY_SUPPORT) {
                    let i = row * width + col;
                    q[i] = 1.0;
                    c[i] = cos2;
                    s[i] = sin2;
                    wd[i] = wn;
                }
            }
        }
    }
    let t = |d: Vec<f64>| Tensor::new(&[height, width], d);
    Ok(GraspMaps {
        quality: t(q)?,
        cos2t: t(c)?,
        sin2t: t(s)?,
        width: t(wd)?,
    })
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(data: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for r in 0..height {
        for col in 0..width {
            tmp[r * width + col] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * data[r * width + clamp(col as isize + k as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for r in 0..height {
        for col in 0..width {
            out[r * width + col] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as isize + k as isize - radius, height) * width + col])
                .sum();
        }
    }
    out
}

/// Decoding knobs, normally taken from [`ModelConfig`].
#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    pub w_max: f64,
    pub threshold: f64,
    pub blur_sigma: f64,
    /// Half-width of the local-maximum window.
    pub peak_radius: usize,
}

impl DecodeParams {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        DecodeParams {
            w_max: cfg.w_max,
            threshold: cfg.quality_threshold,
            blur_sigma: cfg.quality_blur_sigma,
            peak_radius: 2,
        }
    }
}

/// Top-`k` local maxima of the blurred quality map among pixels whose raw
/// quality reaches the threshold, sorted by descending blurred quality then
/// row-major position.
pub fn decode_grasps(maps: &GraspMaps, k: usize, params: &DecodeParams) -> Result<Vec<DecodedGrasp>> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    for m in maps.maps() {
        m.expect_ndim(2, "grasp map")?;
        if m.shape() != maps.quality.shape() {
            return Err(Error::shape("grasp maps disagree in shape"));
        }
    }
    let (h, w) = maps.dims();
    let raw = maps.quality.data();
    let q = gaussian_blur(raw, h, w, params.blur_sigma);
    let r = params.peak_radius as isize;
    let mut peaks = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let v = q[i];
            if raw[i] < params.threshold {
                continue;
            }
            let mut is_peak = true;
            'window: for dr in -r..=r {
                for dc in -r..=r {
                    let (rr, cc) = (row as isize + dr, col as isize + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                        continue;
                    }
                    let j = rr as usize * w + cc as usize;
                    // Plateaus keep only their first pixel in row-major order.
                    if q[j] > v || (q[j] == v && j < i) {
                        is_peak = false;
                        break 'window;
                    }
                }
            }
            if is_peak {
                peaks.push((v, i));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    peaks.truncate(k);

    let (cos, sin, wd) = (maps.cos2t.data(), maps.sin2t.data(), maps.width.data());
    peaks
        .into_iter()
        .map(|(quality, i)| {
            let theta = 0.5 * sin[i].atan2(cos[i]);
            let gw = wd[i].clamp(1e-3, 1.0) * params.w_max;
            Ok(DecodedGrasp {
                rect: GraspRect::new((i % w) as f64, (i / w) as f64, gw, gw / 2.0, theta)?,
                quality,
            })
        })
        .collect()
}
