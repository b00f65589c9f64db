//! Runs one diagonal SSM both as a recurrence and as a causal convolution
//! with its impulse-response kernel, and shows the two agree.
//!
//! cargo run --release --example ssm_duality -- [length]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graspmamba::ssm::{conv_apply, discretize, scan, ssm_kernel, SsmParams};
use graspmamba::Tensor;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn main() -> graspmamba::Result<()> {
    let len: usize = std::env::args().nth(1).map_or(64, |a| a.parse().expect("length"));
    let (d, n) = (4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = SsmParams::new(
        uniform(&mut rng, &[d, n], -3.0, -0.05),
        uniform(&mut rng, &[d, n], -1.0, 1.0),
        uniform(&mut rng, &[d, n], -1.0, 1.0),
        uniform(&mut rng, &[d], (1e-3f64).ln(), (0.5f64).ln()),
    )?;
    let disc = discretize(&params)?;
    println!("A_bar[0] = {:.6?}", &disc.a_bar.data()[..n]);

    let x = uniform(&mut rng, &[1, len, d], -1.0, 1.0);
    let y_scan = scan(&disc, &params.c, &x, None)?;
    let kernel = ssm_kernel(&disc, &params.c, len)?;
    let y_conv = conv_apply(&x, &kernel)?;

    let diff = y_scan
        .data()
        .iter()
        .zip(y_conv.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("kernel[0][..4] = {:.6?}", &kernel.data()[..4.min(len)]);
    println!("L = {len}: max |scan - conv| = {diff:.3e}");
    Ok(())
}
