//! Four-stage hierarchical image encoder.
//!
//! Stages 1–2 are convolutional (a stride-4 stem, then a stride-2
//! downsample), stages 3–4 downsample once more and run token mixers over the
//! row-major flattened map: MambaVision-style blocks first, multi-head
//! self-attention blocks after. Output is a [`FeaturePyramid`] at
//! H/4 … H/32 with widths C, 2C, 4C, 8C.

use rand::Rng;

use crate::config::{ModelConfig, SsmMode};
use crate::error::{Error, Result};
use crate::params::{ParamBuilder, Scope};
use crate::ssm::{self, SsmParams};
use crate::tensor::Tensor;

/// Per-stage feature maps `[B, C_l, H_l, W_l]`, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

impl FeaturePyramid {
    /// Checks that every level is 4-d, shares the batch size, and halves the
    /// spatial extent of the previous one.
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::shape("feature pyramid needs at least one level"));
        }
        for l in &levels {
            l.expect_ndim(4, "pyramid level")?;
        }
        for pair in levels.windows(2) {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if b[0] != a[0] || a[2] != 2 * b[2] || a[3] != 2 * b[3] {
                return Err(Error::shape(format!("non-dyadic pyramid: {a:?} then {b:?}")));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `(H_l, W_l, C_l)` per level.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.levels
            .iter()
            .map(|t| (t.dim(2), t.dim(3), t.dim(1)))
            .collect()
    }
}

/// Which token mixer a stage-3/4 block uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Mamba,
    Attention,
}

/// First half (rounded up) of a token stage is MambaVision, the rest attention.
pub fn stage_blocks(depth: usize) -> Vec<BlockKind> {
    let mamba = depth.div_ceil(2);
    (0..depth)
        .map(|i| if i < mamba { BlockKind::Mamba } else { BlockKind::Attention })
        .collect()
}

pub fn stage_widths(c: usize) -> [usize; 4] {
    [c, 2 * c, 4 * c, 8 * c]
}

pub fn init(b: &mut ParamBuilder<'_>, cfg: &ModelConfig) {
    let w = stage_widths(cfg.channels);
    b.conv("stem0", 3, w[0], 3);
    b.conv("stem1", w[0], w[0], 3);
    for stage in 0..4 {
        let mut s = b.sub(&format!("stage{}", stage + 1));
        if stage > 0 {
            s.conv("down", w[stage - 1], w[stage], 3);
        }
        if stage < 2 {
            for i in 0..cfg.depths[stage] {
                let mut blk = s.sub(&format!("block{i}"));
                blk.conv("conv1", w[stage], w[stage], 3);
                blk.conv("conv2", w[stage], w[stage], 3);
            }
        } else {
            for (i, kind) in stage_blocks(cfg.depths[stage]).into_iter().enumerate() {
                let mut blk = s.sub(&format!("block{i}"));
                match kind {
                    BlockKind::Mamba => init_mamba_block(&mut blk, w[stage], cfg),
                    BlockKind::Attention => init_attention_block(&mut blk, w[stage], cfg),
                }
            }
        }
    }
}

fn init_mlp(b: &mut ParamBuilder<'_>, d: usize, ratio: usize) {
    b.layer_norm("norm2", d);
    b.linear("fc1", d, ratio * d);
    b.linear("fc2", ratio * d, d);
}

pub fn init_mamba_block(b: &mut ParamBuilder<'_>, d: usize, cfg: &ModelConfig) {
    let half = d / 2;
    let (n, k) = (cfg.state_dim, cfg.mixer_conv_width);
    b.layer_norm("norm1", d);
    b.linear("in_proj", d, d);
    for name in ["conv_x", "conv_z"] {
        let mut c = b.sub(name);
        c.uniform("weight", &[half, k], (3.0 / k as f64).sqrt());
        c.constant("bias", &[half], 0.0);
    }
    let mut s = b.sub("ssm");
    let a: Vec<f64> = (0..half).flat_map(|_| (1..=n).map(|i| -(i as f64))).collect();
    s.tensor("a_diag", &[half, n], a);
    s.constant("b", &[half, n], 1.0);
    s.uniform("c", &[half, n], (3.0 / n as f64).sqrt());
    let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
    let ld: Vec<f64> = (0..half).map(|_| s.rng().gen_range(lo..=hi)).collect();
    s.tensor("log_delta", &[half], ld);
    b.linear("out_proj", d, d);
    init_mlp(b, d, cfg.mlp_ratio);
}

pub fn init_attention_block(b: &mut ParamBuilder<'_>, d: usize, cfg: &ModelConfig) {
    b.layer_norm("norm1", d);
    b.linear("qkv", d, 3 * d);
    b.linear("proj", d, d);
    init_mlp(b, d, cfg.mlp_ratio);
}

/// `[B, C, H, W]` → `[B, H·W, C]`, row-major over (H, W).
pub fn map_to_tokens(x: &Tensor) -> Result<Tensor> {
    x.expect_ndim(4, "feature map")?;
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    x.reshape(&[b, c, h * w])?.permute(&[0, 2, 1])
}

/// Inverse of [`map_to_tokens`].
pub fn tokens_to_map(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    t.expect_ndim(3, "tokens")?;
    let (b, l, c) = (t.dim(0), t.dim(1), t.dim(2));
    if l != h * w {
        return Err(Error::shape(format!("{l} tokens cannot fill a {h}x{w} map")));
    }
    t.permute(&[0, 2, 1])?.reshape(&[b, c, h, w])
}

fn mlp_residual(x: &Tensor, p: &Scope<'_>) -> Result<Tensor> {
    let u = p.layer_norm("norm2", x)?;
    let u = p.linear("fc2", &p.linear("fc1", &u)?.silu())?;
    x.add(&u)
}

fn check_tokens(tokens: &Tensor) -> Result<usize> {
    tokens.expect_ndim(3, "tokens")?;
    Ok(tokens.dim(2))
}

/// Intermediate values of one MambaVision token mixer.
#[derive(Debug, Clone)]
pub struct MixerTrace {
    /// Input to the SSM scan, after projection, causal conv and SiLU.
    pub ssm_input: Tensor,
    pub ssm_output: Tensor,
    /// The symmetric branch (same path without the SSM).
    pub symmetric_output: Tensor,
    /// Block output including both residuals.
    pub output: Tensor,
}

pub fn ssm_params(p: &Scope<'_>) -> Result<SsmParams> {
    let s = p.sub("ssm");
    SsmParams::new(
        s.get("a_diag")?.clone(),
        s.get("b")?.clone(),
        s.get("c")?.clone(),
        s.get("log_delta")?.clone(),
    )
}

/// MambaVision block with both branches exposed.
pub fn mambavision_block_traced(tokens: &Tensor, p: &Scope<'_>, mode: SsmMode) -> Result<MixerTrace> {
    let d = check_tokens(tokens)?;
    if d % 2 != 0 {
        return Err(Error::shape(format!("MambaVision block needs an even width, got {d}")));
    }
    let half = d / 2;
    let u = p.layer_norm("norm1", tokens)?;
    let proj = p.linear("in_proj", &u)?;
    let branch = |start: usize, conv: &str| -> Result<Tensor> {
        let c = p.sub(conv);
        Ok(proj
            .narrow(2, start, half)?
            .causal_conv1d(c.get("weight")?, c.get("bias")?)?
            .silu())
    };
    let ssm_input = branch(0, "conv_x")?;
    let symmetric_output = branch(half, "conv_z")?;

    let params = ssm_params(p)?;
    let disc = ssm::discretize(&params)?;
    let ssm_output = match mode {
        SsmMode::Scan => ssm::scan(&disc, &params.c, &ssm_input, None)?,
        SsmMode::Convolution => {
            let k = ssm::ssm_kernel(&disc, &params.c, ssm_input.dim(1))?;
            ssm::conv_apply(&ssm_input, &k)?
        }
    };
    let mixed = p.linear("out_proj", &Tensor::concat(&[&ssm_output, &symmetric_output], 2)?)?;
    let output = mlp_residual(&tokens.add(&mixed)?, p)?;
    Ok(MixerTrace {
        ssm_input,
        ssm_output,
        symmetric_output,
        output,
    })
}

pub fn mambavision_block(tokens: &Tensor, p: &Scope<'_>, mode: SsmMode) -> Result<Tensor> {
    Ok(mambavision_block_traced(tokens, p, mode)?.output)
}

fn split_heads(t: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, l, d) = (t.dim(0), t.dim(1), t.dim(2));
    t.reshape(&[b, l, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// Attention probabilities `[B, heads, L, L]` and the pre-projection
/// context `[B, L, D]` of a block's first sublayer.
fn attention(tokens: &Tensor, p: &Scope<'_>, heads: usize) -> Result<(Tensor, Tensor)> {
    let d = check_tokens(tokens)?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(format!("width {d} not divisible by {heads} heads")));
    }
    let (b, l) = (tokens.dim(0), tokens.dim(1));
    let u = p.layer_norm("norm1", tokens)?;
    let qkv = p.linear("qkv", &u)?;
    let q = split_heads(&qkv.narrow(2, 0, d)?, heads)?;
    let k = split_heads(&qkv.narrow(2, d, d)?, heads)?;
    let v = split_heads(&qkv.narrow(2, 2 * d, d)?, heads)?;
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let probs = q.matmul(&k.permute(&[0, 1, 3, 2])?)?.scale(scale).softmax()?;
    let ctx = probs
        .matmul(&v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, l, d])?;
    Ok((probs, ctx))
}

pub fn attention_weights(tokens: &Tensor, p: &Scope<'_>, heads: usize) -> Result<Tensor> {
    Ok(attention(tokens, p, heads)?.0)
}

/// Pre-norm multi-head self-attention block with MLP.
pub fn mhsa_block(tokens: &Tensor, p: &Scope<'_>, heads: usize) -> Result<Tensor> {
    let (_, ctx) = attention(tokens, p, heads)?;
    let x = tokens.add(&p.linear("proj", &ctx)?)?;
    mlp_residual(&x, p)
}

/// Runs the four stages on `image: [B, 3, H, W]`.
pub fn extract_pyramid(image: &Tensor, p: &Scope<'_>, cfg: &ModelConfig) -> Result<FeaturePyramid> {
    image.expect_ndim(4, "image batch")?;
    let (h, w) = (image.dim(2), image.dim(3));
    if image.dim(1) != 3 {
        return Err(Error::shape(format!("expected 3 image channels, got {}", image.dim(1))));
    }
    if h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::shape(format!(
            "image {h}x{w}: both sides must be positive multiples of 32"
        )));
    }
    let mut x = p.conv("stem0", image, 2, 1)?.silu();
    x = p.conv("stem1", &x, 2, 1)?.silu();
    let mut levels = Vec::with_capacity(4);
    for stage in 0..4 {
        let s = p.sub(&format!("stage{}", stage + 1));
        if stage > 0 {
            x = s.conv("down", &x, 2, 1)?.silu();
        }
        if stage < 2 {
            for i in 0..cfg.depths[stage] {
                let blk = s.sub(&format!("block{i}"));
                let r = blk.conv("conv2", &blk.conv("conv1", &x, 1, 1)?.silu(), 1, 1)?;
                x = x.add(&r)?;
            }
        } else {
            let (hh, ww) = (x.dim(2), x.dim(3));
            let mut t = map_to_tokens(&x)?;
            for (i, kind) in stage_blocks(cfg.depths[stage]).into_iter().enumerate() {
                let blk = s.sub(&format!("block{i}"));
                t = match kind {
                    BlockKind::Mamba => mambavision_block(&t, &blk, cfg.ssm_mode)?,
                    BlockKind::Attention => mhsa_block(&t, &blk, cfg.heads)?,
                };
            }
            x = tokens_to_map(&t, hh, ww)?;
        }
        levels.push(x.clone());
    }
    FeaturePyramid::new(levels)
}
