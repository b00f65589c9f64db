#![allow(dead_code)]

pub mod grad;
pub mod oracle;
pub mod suite;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use graspmamba::Tensor;

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vec(rng, n, lo, hi)).unwrap()
}
