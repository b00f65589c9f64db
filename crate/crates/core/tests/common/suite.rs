//! Randomized checks shared by the oracle tests and the acceptance target.
//! Each returns the worst discrepancy it saw.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graspmamba::head::GraspRect;
use graspmamba::metrics::rotated_iou;
use graspmamba::ssm::{self, SsmParams};
use graspmamba::Tensor;

use super::oracle::{raster_iou, zoh_dense};
use super::{rand_tensor, rand_vec};

/// Scan against kernel-then-convolve on `cases` random stable systems with
/// `N ≤ 8`, `D ≤ 4`, `L ≤ 64`.
pub fn duality_worst(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (d, n, len, batch) = (
            r.gen_range(1..=4),
            r.gen_range(1..=8),
            r.gen_range(1..=64),
            r.gen_range(1..=2),
        );
        let p = SsmParams::new(
            rand_tensor(&mut r, &[d, n], -5.0, -0.01),
            rand_tensor(&mut r, &[d, n], -1.0, 1.0),
            rand_tensor(&mut r, &[d, n], -1.0, 1.0),
            rand_tensor(&mut r, &[d], (1e-3f64).ln(), 0.0),
        )
        .unwrap();
        let disc = ssm::discretize(&p).unwrap();
        let x = rand_tensor(&mut r, &[batch, len, d], -1.0, 1.0);
        let y_scan = ssm::scan(&disc, &p.c, &x, None).unwrap();
        let k = ssm::ssm_kernel(&disc, &p.c, len).unwrap();
        let y_conv = ssm::conv_apply(&x, &k).unwrap();
        for (a, b) in y_scan.data().iter().zip(y_conv.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Diagonal ZOH against the dense block exponential. Every third case puts
/// half of its entries on the small-`|Δa|` series branch (including `a = 0`).
pub fn discretize_worst(cases: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (d, n) = (r.gen_range(1..=4), r.gen_range(1..=8));
        let mut a = rand_vec(&mut r, d * n, -10.0, -1e-3);
        if seed % 3 == 0 {
            for (i, v) in a.iter_mut().enumerate().filter(|(i, _)| i % 2 == 0) {
                *v = if i % 4 == 0 { 0.0 } else { -r.gen_range(0.0..5e-9) };
            }
        }
        let b: Vec<f64> = (0..d * n)
            .map(|_| r.gen_range(0.1..2.0) * if r.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let log_delta = rand_vec(&mut r, d, (1e-3f64).ln(), 0.0);
        let p = SsmParams::new(
            Tensor::new(&[d, n], a.clone()).unwrap(),
            Tensor::new(&[d, n], b.clone()).unwrap(),
            Tensor::zeros(&[d, n]),
            Tensor::new(&[d], log_delta.clone()).unwrap(),
        )
        .unwrap();
        let disc = ssm::discretize(&p).unwrap();
        for ch in 0..d {
            let rows = ch * n..(ch + 1) * n;
            let (a_ref, b_ref) = zoh_dense(&a[rows.clone()], &b[rows.clone()], log_delta[ch].exp());
            for (i, s) in rows.enumerate() {
                let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
                worst = worst.max(rel(disc.a_bar.data()[s], a_ref[i]));
                worst = worst.max(rel(disc.b_bar.data()[s], b_ref[i]));
            }
        }
    }
    worst
}

pub fn random_rect(r: &mut ChaCha8Rng) -> GraspRect {
    GraspRect::new(
        r.gen_range(-3.0..3.0),
        r.gen_range(-3.0..3.0),
        r.gen_range(0.5..8.0),
        r.gen_range(0.5..8.0),
        r.gen_range(-PI..PI),
    )
    .unwrap()
}

/// Clipping IoU against a `512 × 512` raster on `pairs` random pairs, all
/// within a few units of each other so most of them overlap.
pub fn iou_worst(pairs: u64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for seed in 0..pairs {
        let mut r = ChaCha8Rng::seed_from_u64(5000 + seed);
        let (a, b) = (random_rect(&mut r), random_rect(&mut r));
        let exact = rotated_iou(&a, &b);
        overlapping += usize::from(exact > 0.0);
        worst = worst.max((exact - raster_iou(&a, &b, 512)).abs());
    }
    (worst, overlapping)
}

/// The fixed pair with centers one unit apart: analytic error and raster
/// error.
pub fn iou_fixed_example() -> (f64, f64) {
    let a = GraspRect::new(2.0, 1.0, 4.0, 2.0, 0.0).unwrap();
    let b = GraspRect::new(3.0, 1.0, 4.0, 2.0, 0.0).unwrap();
    let iou = rotated_iou(&a, &b);
    ((iou - 0.6).abs(), (iou - raster_iou(&a, &b, 512)).abs())
}

/// Worst center (px), angle (degrees) and relative width errors of
/// `decode(encode(g))` over `n` random single grasps on a 64×64 canvas.
pub fn grasp_roundtrip_worst(n: u64) -> (f64, f64, f64) {
    use graspmamba::head::{decode_grasps, encode_targets, DecodeParams};
    use graspmamba::metrics::angle_offset_deg;
    let params = DecodeParams {
        w_max: 24.0,
        threshold: 0.3,
        blur_sigma: 2.0,
        peak_radius: 2,
    };
    let (mut dc, mut da, mut dw) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..n {
        let mut r = ChaCha8Rng::seed_from_u64(9000 + seed);
        let w = r.gen_range(6.0..22.0);
        let g = GraspRect::new(
            r.gen_range(20.0..44.0),
            r.gen_range(20.0..44.0),
            w,
            w / 2.0,
            r.gen_range(-PI..PI),
        )
        .unwrap();
        let maps = encode_targets(&[g], 64, 64, params.w_max).unwrap();
        let out = decode_grasps(&maps, 1, &params).unwrap();
        let p = out.first().expect("one grasp decoded").rect;
        dc = dc.max((p.x - g.x).hypot(p.y - g.y));
        da = da.max(angle_offset_deg(p.theta, g.theta));
        dw = dw.max((p.w - g.w).abs() / g.w);
    }
    (dc, da, dw)
}
