//! Central finite-difference checks of reverse-mode gradients.
//!
//! Every case turns its op into a scalar `Σ w ⊙ f(inputs)` with fixed random
//! weights `w` and compares each checked input entry against
//! `(L(x + ε) − L(x − ε)) / 2ε`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graspmamba::backbone::{self, FeaturePyramid};
use graspmamba::config::{ModelConfig, SsmMode};
use graspmamba::data::{generate_scene, DataConfig};
use graspmamba::fusion;
use graspmamba::head::{self, encode_targets, GraspMaps};
use graspmamba::params::{ParamBuilder, ParamStore};
use graspmamba::ssm::{self, DiscreteSsm, SsmParams};
use graspmamba::train::loss_fn;
use graspmamba::{GraspMamba, Result, Tensor};

use super::{rand_tensor, rand_vec};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale; central
/// differences carry about 1e-10 of rounding noise at `EPS`.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst error over at most `budget` entries of each input.
pub fn grad_check<F>(inputs: &[Tensor], f: F, seed: u64, budget: usize) -> f64
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0fd0_fd0f);
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()).unwrap())
        .collect();
    let out = f(&leaves).unwrap();
    let w = rand_tensor(&mut rng, out.shape(), -1.0, 1.0);
    let objective = out.mul(&w).unwrap().mean().scale(out.numel() as f64);
    let grads = objective.backward().unwrap();
    let eval = |xs: &[Tensor]| -> f64 {
        f(xs).unwrap().data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let constants: Vec<Tensor> = inputs.iter().map(|t| t.detach()).collect();
    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(leaf).map_or_else(|| vec![0.0; leaf.numel()], <[f64]>::to_vec);
        let mut idx: Vec<usize> = (0..leaf.numel()).collect();
        if idx.len() > budget {
            idx.shuffle(&mut rng);
            idx.truncate(budget);
        }
        for j in idx {
            let probe = |delta: f64| {
                let mut xs = constants.clone();
                let mut d = xs[i].to_vec();
                d[j] += delta;
                xs[i] = Tensor::new(xs[i].shape(), d).unwrap();
                eval(&xs)
            };
            let numeric = (probe(EPS) - probe(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random trailing-suffix shape for the broadcasting binary ops.
fn binary_inputs(seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    let a = rand_tensor(&mut r, &[2, 3, 4], -2.0, 2.0);
    let rhs: &[usize] = match seed % 3 {
        0 => &[2, 3, 4],
        1 => &[3, 4],
        _ => &[4],
    };
    let b = rand_tensor(&mut r, rhs, -2.0, 2.0);
    vec![a, b]
}

pub fn add(seed: u64) -> f64 {
    grad_check(&binary_inputs(seed), |x| x[0].add(&x[1]), seed, 64)
}

pub fn sub(seed: u64) -> f64 {
    grad_check(&binary_inputs(seed), |x| x[0].sub(&x[1]), seed, 64)
}

pub fn mul(seed: u64) -> f64 {
    grad_check(&binary_inputs(seed), |x| x[0].mul(&x[1]), seed, 64)
}

pub fn scale_shift(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (s, c) = (r.gen_range(-3.0..3.0), r.gen_range(-1.0..1.0));
    let x = rand_tensor(&mut r, &[3, 5], -2.0, 2.0);
    grad_check(&[x], |x| Ok(x[0].scale(s).add_scalar(c)), seed, 64)
}

fn unary(seed: u64, f: fn(&Tensor) -> Tensor) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[4, 6], -4.0, 4.0);
    grad_check(&[x], |x| Ok(f(&x[0])), seed, 64)
}

pub fn sigmoid(seed: u64) -> f64 {
    unary(seed, Tensor::sigmoid)
}

pub fn silu(seed: u64) -> f64 {
    unary(seed, Tensor::silu)
}

pub fn tanh(seed: u64) -> f64 {
    unary(seed, Tensor::tanh)
}

pub fn mean(seed: u64) -> f64 {
    unary(seed, Tensor::mean)
}

/// Residuals stay clear of the |d| = 1 kink.
pub fn smooth_l1(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 20;
    let target = rand_vec(&mut r, n, -1.0, 1.0);
    let pred: Vec<f64> = target
        .iter()
        .map(|t| {
            let mut d: f64 = r.gen_range(-2.5..2.5);
            while (d.abs() - 1.0).abs() < 0.05 {
                d = r.gen_range(-2.5..2.5);
            }
            t + d
        })
        .collect();
    let p = Tensor::new(&[4, 5], pred).unwrap();
    let t = Tensor::new(&[4, 5], target).unwrap();
    grad_check(&[p, t], |x| x[0].smooth_l1(&x[1]), seed, 64)
}

pub fn matmul(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = if seed % 2 == 0 {
        rand_tensor(&mut r, &[4, 5], -1.0, 1.0)
    } else {
        rand_tensor(&mut r, &[2, 4, 2], -1.0, 1.0)
    };
    grad_check(&[a, b], |x| x[0].matmul(&x[1]), seed, 64)
}

pub fn linear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut r, &[4, 6], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[6], -1.0, 1.0);
    grad_check(&[x, w, b], |x| x[0].linear(&x[1], Some(&x[2])), seed, 64)
}

pub fn layout(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let mut perm = vec![0, 1, 2];
    perm.shuffle(&mut r);
    grad_check(
        &[x],
        |x| x[0].permute(&perm)?.reshape(&[4, 6])?.narrow(1, 1, 4),
        seed,
        64,
    )
}

pub fn concat(seed: u64) -> f64 {
    let mut r = rng(seed);
    let axis = (seed % 3) as usize;
    let mut shape_b = vec![2, 3, 4];
    shape_b[axis] = 2;
    let a = rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut r, &shape_b, -1.0, 1.0);
    grad_check(&[a, b], |x| Tensor::concat(&[&x[0], &x[1]], axis), seed, 64)
}

pub fn softmax(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[3, 5], -3.0, 3.0);
    grad_check(&[x], |x| x[0].softmax(), seed, 64)
}

pub fn layer_norm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[2, 3, 6], -2.0, 2.0);
    let g = rand_tensor(&mut r, &[6], 0.5, 1.5);
    let b = rand_tensor(&mut r, &[6], -0.5, 0.5);
    grad_check(&[x, g, b], |x| x[0].layer_norm(&x[1], &x[2], 1e-5), seed, 64)
}

pub fn conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = if seed % 2 == 0 { 3 } else { 1 };
    let stride = 1 + (seed / 2 % 2) as usize;
    let pad = if k == 3 { (seed / 4 % 2) as usize } else { 0 };
    let x = rand_tensor(&mut r, &[2, 2, 5, 6], -1.0, 1.0);
    let w = rand_tensor(&mut r, &[3, 2, k, k], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3], -1.0, 1.0);
    grad_check(&[x, w, b], |x| x[0].conv2d(&x[1], Some(&x[2]), stride, pad), seed, 48)
}

pub fn upsample(seed: u64) -> f64 {
    let mut r = rng(seed);
    let scale = if seed % 2 == 0 { 2 } else { 4 };
    let x = rand_tensor(&mut r, &[1, 2, 3, 4], -1.0, 1.0);
    grad_check(&[x], |x| x[0].upsample_bilinear(scale), seed, 64)
}

pub fn expand_spatial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[2, 3], -1.0, 1.0);
    grad_check(&[x], |x| x[0].expand_spatial(3, 2), seed, 64)
}

pub fn causal_conv1d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let k = 1 + (seed % 4) as usize;
    let x = rand_tensor(&mut r, &[2, 5, 3], -1.0, 1.0);
    let w = rand_tensor(&mut r, &[3, k], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3], -1.0, 1.0);
    grad_check(&[x, w, b], |x| x[0].causal_conv1d(&x[1], &x[2]), seed, 64)
}

/// `[a_diag, b, log_delta]`; odd seeds put some `Δa` on the series branch.
fn continuous_ssm(seed: u64, d: usize, n: usize) -> Vec<Tensor> {
    let mut r = rng(seed);
    let mut a = rand_vec(&mut r, d * n, -3.0, -0.1);
    if seed % 2 == 1 {
        for v in a.iter_mut().step_by(2) {
            *v = -r.gen_range(1e-11..5e-9);
        }
    }
    vec![
        Tensor::new(&[d, n], a).unwrap(),
        rand_tensor(&mut r, &[d, n], -1.0, 1.0),
        rand_tensor(&mut r, &[d], -3.0, 0.0),
    ]
}

pub fn discretize(seed: u64) -> f64 {
    let (d, n) = (3, 4);
    grad_check(
        &continuous_ssm(seed, d, n),
        |x| {
            let p = SsmParams::new(x[0].clone(), x[1].clone(), Tensor::zeros(&[d, n]), x[2].clone())?;
            let disc = ssm::discretize(&p)?;
            Tensor::concat(&[&disc.a_bar, &disc.b_bar], 0)
        },
        seed,
        64,
    )
}

fn discrete(x: &[Tensor]) -> DiscreteSsm {
    DiscreteSsm {
        a_bar: x[0].clone(),
        b_bar: x[1].clone(),
    }
}

/// `[a_bar, b_bar, c, x]` with `x: [2, L, D]`.
fn discrete_inputs(seed: u64, d: usize, n: usize, len: usize) -> Vec<Tensor> {
    let mut r = rng(seed);
    vec![
        rand_tensor(&mut r, &[d, n], 0.3, 0.98),
        rand_tensor(&mut r, &[d, n], -1.0, 1.0),
        rand_tensor(&mut r, &[d, n], -1.0, 1.0),
        rand_tensor(&mut r, &[2, len, d], -1.0, 1.0),
    ]
}

pub fn scan(seed: u64) -> f64 {
    let (d, n) = (3, 4);
    let mut inputs = discrete_inputs(seed, d, n, 6);
    let with_h0 = seed % 2 == 1;
    inputs.push(rand_tensor(&mut rng(seed + 99), &[d, n], -1.0, 1.0));
    grad_check(
        &inputs,
        |x| ssm::scan(&discrete(x), &x[2], &x[3], with_h0.then_some(&x[4])),
        seed,
        64,
    )
}

pub fn ssm_kernel(seed: u64) -> f64 {
    let inputs = discrete_inputs(seed, 3, 4, 7);
    grad_check(&inputs[..3], |x| ssm::ssm_kernel(&discrete(x), &x[2], 7), seed, 64)
}

pub fn conv_apply(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = rand_tensor(&mut r, &[2, 6, 3], -1.0, 1.0);
    let k = rand_tensor(&mut r, &[3, 6], -1.0, 1.0);
    grad_check(&[x, k], |x| ssm::conv_apply(&x[0], &x[1]), seed, 64)
}

/// Parameters from `init`, jittered so no tensor sits at its constant init.
pub fn random_store(seed: u64, init: impl FnOnce(&mut ParamBuilder<'_>)) -> ParamStore {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    init(&mut ParamBuilder::new(&mut store, &mut r));
    let mut jitter = rng(seed ^ 0x51);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let mut d = store.get(&name).unwrap().to_vec();
        d.iter_mut().for_each(|v| *v += jitter.gen_range(-0.1..0.1));
        store.set_data(&name, d).unwrap();
    }
    store
}

/// Runs `f` on a store rebuilt from `x[skip..]` under `names`.
fn with_store<T>(names: &[String], x: &[Tensor], f: impl FnOnce(&ParamStore) -> T) -> T {
    let mut store = ParamStore::new();
    for (n, t) in names.iter().zip(x) {
        store.insert(n.clone(), t.clone());
    }
    f(&store)
}

fn store_inputs(store: &ParamStore) -> (Vec<String>, Vec<Tensor>) {
    store
        .iter()
        .map(|(n, t)| (n.to_string(), t.detach()))
        .unzip()
}

fn block_check(seed: u64, init: impl FnOnce(&mut ParamBuilder<'_>), d: usize, f: impl Fn(&Tensor, &ParamStore) -> Result<Tensor>) -> f64 {
    let store = random_store(seed, init);
    let (names, mut inputs) = store_inputs(&store);
    inputs.insert(0, rand_tensor(&mut rng(seed + 7), &[2, 5, d], -1.0, 1.0));
    grad_check(
        &inputs,
        |x| with_store(&names, &x[1..], |s| f(&x[0], s)),
        seed,
        6,
    )
}

fn block_config() -> ModelConfig {
    ModelConfig::tiny()
}

pub fn mambavision_block(seed: u64) -> f64 {
    let cfg = block_config();
    let mode = if seed % 2 == 0 { SsmMode::Scan } else { SsmMode::Convolution };
    block_check(seed, |b| backbone::init_mamba_block(b, 8, &cfg), 8, |t, s| {
        backbone::mambavision_block(t, &s.scope(""), mode)
    })
}

pub fn mhsa_block(seed: u64) -> f64 {
    let cfg = block_config();
    block_check(seed, |b| backbone::init_attention_block(b, 8, &cfg), 8, |t, s| {
        backbone::mhsa_block(t, &s.scope(""), cfg.heads)
    })
}

pub fn fuse_level(seed: u64) -> f64 {
    let cfg = block_config();
    let store = random_store(seed, |b| fusion::init(b, &cfg, &[4]));
    let (names, mut inputs) = store_inputs(&store);
    let mut r = rng(seed + 3);
    inputs.insert(0, rand_tensor(&mut r, &[2, cfg.text_dim], -1.0, 1.0));
    inputs.insert(0, rand_tensor(&mut r, &[2, 4, 4, 4], -1.0, 1.0));
    grad_check(
        &inputs,
        |x| with_store(&names, &x[2..], |s| fusion::fuse_level(&x[0], &x[1], &s.scope("level1"))),
        seed,
        6,
    )
}

pub fn fuse_hierarchy(seed: u64) -> f64 {
    let fusion_on = seed % 2 == 0;
    let cfg = ModelConfig {
        fusion: fusion_on,
        ..block_config()
    };
    let widths = [2, 3, 4, 5];
    let store = random_store(seed, |b| fusion::init(b, &cfg, &widths));
    let (names, params) = store_inputs(&store);
    let mut r = rng(seed + 5);
    let mut inputs: Vec<Tensor> = widths
        .iter()
        .enumerate()
        .map(|(l, &c)| rand_tensor(&mut r, &[1, c, 8 >> l, 8 >> l], -1.0, 1.0))
        .collect();
    inputs.push(rand_tensor(&mut r, &[1, cfg.text_dim], -1.0, 1.0));
    inputs.extend(params);
    grad_check(
        &inputs,
        |x| {
            let pyr = FeaturePyramid::new(x[..4].to_vec())?;
            with_store(&names, &x[5..], |s| {
                Ok(fusion::fuse_hierarchy(&pyr, &x[4], &s.scope(""), fusion_on)?.finest().clone())
            })
        },
        seed,
        6,
    )
}

pub fn grasp_head(seed: u64) -> f64 {
    let cfg = block_config();
    let store = random_store(seed, |b| head::init(b, &cfg));
    let (names, mut inputs) = store_inputs(&store);
    inputs.insert(0, rand_tensor(&mut rng(seed + 11), &[1, cfg.fused_channels, 3, 3], -2.0, 2.0));
    grad_check(
        &inputs,
        |x| {
            with_store(&names, &x[1..], |s| {
                let m = head::predict_maps(&x[0], &s.scope(""), (12, 12))?;
                Tensor::concat(&[&m.quality, &m.cos2t, &m.sin2t, &m.width], 0)
            })
        },
        seed,
        6,
    )
}

pub fn loss(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs: Vec<Tensor> = (0..8).map(|_| rand_tensor(&mut r, &[1, 4, 4], 0.0, 1.0)).collect();
    let maps = |x: &[Tensor]| GraspMaps {
        quality: x[0].clone(),
        cos2t: x[1].clone(),
        sin2t: x[2].clone(),
        width: x[3].clone(),
    };
    grad_check(&inputs, |x| loss_fn(&maps(&x[..4]), &maps(&x[4..])), seed, 64)
}

/// Tiny model on a 32×32 synthetic scene; `budget` entries per parameter
/// tensor.
pub fn end_to_end(seed: u64, budget: usize) -> f64 {
    let cfg = ModelConfig {
        init_seed: seed,
        ..ModelConfig::tiny()
    };
    let model = GraspMamba::new(cfg).unwrap();
    let data_cfg = DataConfig {
        image_size: 32,
        ..DataConfig::default()
    };
    let sample = generate_scene(seed, &data_cfg).unwrap();
    let target = encode_targets(&sample.grasps, 32, 32, model.config.w_max).unwrap();
    let target = GraspMaps {
        quality: target.quality.reshape(&[1, 32, 32]).unwrap(),
        cos2t: target.cos2t.reshape(&[1, 32, 32]).unwrap(),
        sin2t: target.sin2t.reshape(&[1, 32, 32]).unwrap(),
        width: target.width.reshape(&[1, 32, 32]).unwrap(),
    };
    let image = sample.image.reshape(&[1, 3, 32, 32]).unwrap();
    let text = graspmamba::text::stack(&[&model.embed(&sample.prompt).unwrap()]).unwrap();
    let (names, inputs) = store_inputs(&model.params);
    grad_check(
        &inputs,
        |x| {
            with_store(&names, x, |s| {
                let maps = model.forward_with(s, &image, &text)?;
                loss_fn(&maps, &target)
            })
        },
        seed,
        budget,
    )
}

pub type Case = (&'static str, fn(u64) -> f64);

/// Every op-level and module-level case.
pub const CASES: &[Case] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("scale_shift", scale_shift),
    ("sigmoid", sigmoid),
    ("silu", silu),
    ("tanh", tanh),
    ("mean", mean),
    ("smooth_l1", smooth_l1),
    ("matmul", matmul),
    ("linear", linear),
    ("layout", layout),
    ("concat", concat),
    ("softmax", softmax),
    ("layer_norm", layer_norm),
    ("conv2d", conv2d),
    ("upsample", upsample),
    ("expand_spatial", expand_spatial),
    ("causal_conv1d", causal_conv1d),
    ("discretize", discretize),
    ("scan", scan),
    ("ssm_kernel", ssm_kernel),
    ("conv_apply", conv_apply),
    ("mambavision_block", mambavision_block),
    ("mhsa_block", mhsa_block),
    ("fuse_level", fuse_level),
    ("fuse_hierarchy", fuse_hierarchy),
    ("grasp_head", grasp_head),
    ("loss", loss),
];

pub const INSTANCES: u64 = 10;

/// Worst error of `case` over its random instances.
pub fn worst(case: fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(case).fold(0.0, f64::max)
}
