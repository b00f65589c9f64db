//! Hierarchical vision-language fusion.
//!
//! Per level, image features and the spatially broadcast text embedding each
//! pass through a 1×1 convolution, are concatenated on channels, and mixed by
//! a 3×3 convolution:
//!
//! ```text
//! Z_l = concat(conv1x1_img(X_l), conv1x1_txt(expand(T)))
//! Φ_l = conv3x3(Z_l)
//! ```
//!
//! Levels are then combined top-down:
//!
//! ```text
//! F_L = Φ_L
//! F_l = Φ_l + U_{l+1}(F_{l+1}),   U(F) = upsample2x(conv3x3(F))
//! ```
//!
//! With fusion disabled the text branch is dropped and the image 1×1
//! convolution widens to fill both halves of `Z_l`, keeping the 3×3 mixer
//! and upscaling path identical.

use crate::backbone::FeaturePyramid;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, Scope};
use crate::tensor::Tensor;

/// Fused maps for every level (`fused[0]` is F_1) and the per-level Φ_l
/// they were built from.
#[derive(Debug, Clone)]
pub struct FusedFeature {
    pub fused: Vec<Tensor>,
    pub phi: Vec<Tensor>,
}

impl FusedFeature {
    /// F_1, `[B, C_f, H/4, W/4]` for a full pyramid.
    pub fn finest(&self) -> &Tensor {
        &self.fused[0]
    }
}

fn level_name(l: usize) -> String {
    format!("level{}", l + 1)
}

/// `widths` are the pyramid channel counts, finest first.
pub fn init(b: &mut ParamBuilder<'_>, cfg: &ModelConfig, widths: &[usize]) {
    let cf = cfg.fused_channels;
    for (l, &cl) in widths.iter().enumerate() {
        let mut s = b.sub(&level_name(l));
        if cfg.fusion {
            s.conv("img", cl, cf, 1);
            s.conv("txt", cfg.text_dim, cf, 1);
        } else {
            s.conv("img", cl, 2 * cf, 1);
        }
        s.conv("mix", 2 * cf, cf, 3);
        if l > 0 {
            s.conv("up", cf, cf, 3);
        }
    }
}

/// Φ_l for one level. `text: [B, C_T]`.
pub fn fuse_level(x: &Tensor, text: &Tensor, p: &Scope<'_>) -> Result<Tensor> {
    x.expect_ndim(4, "fusion level input")?;
    text.expect_ndim(2, "text batch")?;
    if text.dim(0) != x.dim(0) {
        return Err(Error::shape(format!(
            "{} text embeddings for a batch of {}",
            text.dim(0),
            x.dim(0)
        )));
    }
    let img = p.conv("img", x, 1, 0)?;
    let t_exp = text.expand_spatial(x.dim(2), x.dim(3))?;
    let txt = p.conv("txt", &t_exp, 1, 0)?;
    let z = Tensor::concat(&[&img, &txt], 1)?;
    p.conv("mix", &z, 1, 1)
}

/// Image-only counterpart of [`fuse_level`] used when fusion is disabled.
pub fn image_level(x: &Tensor, p: &Scope<'_>) -> Result<Tensor> {
    let z = p.conv("img", x, 1, 0)?;
    p.conv("mix", &z, 1, 1)
}

/// U(F) = upsample2x(conv3x3(F)).
pub fn upscale(f: &Tensor, p: &Scope<'_>) -> Result<Tensor> {
    p.conv("up", f, 1, 1)?.upsample_bilinear(2)
}

/// Top-down recursion over the pyramid. `text` is ignored when `fusion` is
/// false.
pub fn fuse_hierarchy(
    pyramid: &FeaturePyramid,
    text: &Tensor,
    p: &Scope<'_>,
    fusion: bool,
) -> Result<FusedFeature> {
    let depth = pyramid.depth();
    let phi: Vec<Tensor> = pyramid
        .levels
        .iter()
        .enumerate()
        .map(|(l, x)| {
            let s = p.sub(&level_name(l));
            if fusion {
                fuse_level(x, text, &s)
            } else {
                image_level(x, &s)
            }
        })
        .collect::<Result<_>>()?;

    let mut fused = vec![phi[depth - 1].clone()];
    for l in (0..depth - 1).rev() {
        let up = upscale(&fused[0], &p.sub(&level_name(l + 1)))?;
        if up.shape() != phi[l].shape() {
            return Err(Error::shape(format!(
                "upscaled level {} is {:?}, level {} is {:?}",
                l + 2,
                up.shape(),
                l + 1,
                phi[l].shape()
            )));
        }
        fused.insert(0, phi[l].add(&up)?);
    }
    Ok(FusedFeature { fused, phi })
}
