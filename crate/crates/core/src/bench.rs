//! Wall-clock scaling of the three sequence mixers.
//!
//! `scan` runs the SSM recurrence, `conv` materializes the length-`L` kernel
//! and applies it as a causal convolution, and `attention` is single-head
//! softmax attention evaluated one query at a time with an online softmax, so
//! its memory stays linear in `L` while time grows quadratically. All modes
//! run single-threaded on the raw slice kernels.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::raw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Scan,
    Conv,
    Attention,
}

impl FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scan" => Ok(BenchMode::Scan),
            "conv" => Ok(BenchMode::Conv),
            "attention" => Ok(BenchMode::Attention),
            other => Err(Error::arg(format!("unknown bench mode {other:?}"))),
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchMode::Scan => "scan",
            BenchMode::Conv => "conv",
            BenchMode::Attention => "attention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Channels of the SSM modes.
    pub ssm_channels: usize,
    pub state_dim: usize,
    /// Head width of the attention mode.
    pub attention_dim: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            ssm_channels: 256,
            state_dim: 16,
            attention_dim: 32,
            warmup: 1,
            repeats: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub mode: BenchMode,
    pub length: usize,
    /// Median wall time in seconds.
    pub seconds: f64,
    pub runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub options: BenchOptions,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn seconds(&self, mode: BenchMode, length: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.length == length)
            .map(|c| c.seconds)
    }

    /// `t(long) / t(short)` for one mode.
    pub fn ratio(&self, mode: BenchMode, short: usize, long: usize) -> Option<f64> {
        Some(self.seconds(mode, long)? / self.seconds(mode, short)?)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>14}", "mode", "L", "median (ms)")?;
        for c in &self.cells {
            writeln!(f, "{:<10} {:>8} {:>14.3}", c.mode.to_string(), c.length, 1e3 * c.seconds)?;
        }
        Ok(())
    }
}

struct SsmInputs {
    x: Vec<f64>,
    a_bar: Vec<f64>,
    b_bar: Vec<f64>,
    c: Vec<f64>,
}

fn ssm_inputs(rng: &mut ChaCha8Rng, len: usize, d: usize, n: usize) -> SsmInputs {
    let mut u = |count: usize, lo: f64, hi: f64| -> Vec<f64> { (0..count).map(|_| rng.gen_range(lo..hi)).collect() };
    SsmInputs {
        x: u(len * d, -1.0, 1.0),
        a_bar: u(d * n, 0.5, 0.99),
        b_bar: u(d * n, 0.0, 0.1),
        c: u(d * n, -1.0, 1.0),
    }
}

/// Full softmax attention with one query at a time and a running max/sum.
pub fn streaming_attention(q: &[f64], k: &[f64], v: &[f64], len: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; len * d];
    let mut acc = vec![0.0; d];
    for i in 0..len {
        let qi = &q[i * d..(i + 1) * d];
        let (mut m, mut z) = (f64::NEG_INFINITY, 0.0);
        acc.fill(0.0);
        for j in 0..len {
            let kj = &k[j * d..(j + 1) * d];
            let s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            if s > m {
                let r = (m - s).exp();
                z *= r;
                acc.iter_mut().for_each(|a| *a *= r);
                m = s;
            }
            let p = (s - m).exp();
            z += p;
            acc.iter_mut().zip(&v[j * d..(j + 1) * d]).for_each(|(a, b)| *a += p * b);
        }
        out[i * d..(i + 1) * d]
            .iter_mut()
            .zip(&acc)
            .for_each(|(o, a)| *o = a / z);
    }
    out
}

fn run_once(mode: BenchMode, len: usize, opts: &BenchOptions, rng: &mut ChaCha8Rng) -> f64 {
    let (d, n) = (opts.ssm_channels, opts.state_dim);
    match mode {
        BenchMode::Scan | BenchMode::Conv => {
            let s = ssm_inputs(rng, len, d, n);
            let start = Instant::now();
            let y = if mode == BenchMode::Scan {
                raw::scan(&s.x, 1, len, d, n, &s.a_bar, &s.b_bar, &s.c, None, None)
            } else {
                let k = raw::kernel(d, n, len, &s.a_bar, &s.b_bar, &s.c);
                raw::causal_conv(&s.x, 1, len, d, &k)
            };
            let t = start.elapsed().as_secs_f64();
            std::hint::black_box(y);
            t
        }
        BenchMode::Attention => {
            let d = opts.attention_dim;
            let mut u = || -> Vec<f64> { (0..len * d).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let (q, k, v) = (u(), u(), u());
            let start = Instant::now();
            let y = streaming_attention(&q, &k, &v, len, d);
            let t = start.elapsed().as_secs_f64();
            std::hint::black_box(y);
            t
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median-of-`repeats` timings for every `(mode, length)` pair, after
/// `warmup` discarded runs per cell.
pub fn benchmark_scan(lengths: &[usize], modes: &[BenchMode], opts: &BenchOptions) -> Result<BenchReport> {
    if lengths.is_empty() || modes.is_empty() {
        return Err(Error::arg("need at least one length and one mode"));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths[0] == 0 {
        return Err(Error::arg(format!("lengths must be positive and ascending: {lengths:?}")));
    }
    if opts.repeats == 0 {
        return Err(Error::arg("repeats must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut cells = Vec::new();
    for &mode in modes {
        for &len in lengths {
            for _ in 0..opts.warmup {
                run_once(mode, len, opts, &mut rng);
            }
            let runs: Vec<f64> = (0..opts.repeats).map(|_| run_once(mode, len, opts, &mut rng)).collect();
            log::info!("{mode} L={len}: {:.3} ms", 1e3 * median(runs.clone()));
            cells.push(BenchCell {
                mode,
                length: len,
                seconds: median(runs.clone()),
                runs,
            });
        }
    }
    Ok(BenchReport {
        options: *opts,
        cells,
    })
}
