//! Times the selective scan, its convolution form and dense attention over
//! growing sequence lengths.
//!
//! cargo run --release --example scaling_bench -- [lengths, e.g. 256,1024,4096]

use graspmamba::bench::{benchmark_scan, BenchMode, BenchOptions};

fn main() -> graspmamba::Result<()> {
    let lengths: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "256,1024,4096".into())
        .split(',')
        .map(|s| s.trim().parse().expect("length"))
        .collect();
    let report = benchmark_scan(
        &lengths,
        &[BenchMode::Scan, BenchMode::Conv, BenchMode::Attention],
        &BenchOptions::default(),
    )?;
    print!("{report}");
    if let (Some(&short), Some(&long)) = (lengths.first(), lengths.last()) {
        for mode in [BenchMode::Scan, BenchMode::Attention] {
            if let Some(r) = report.ratio(mode, short, long) {
                println!("{mode}: t({long}) / t({short}) = {r:.1}");
            }
        }
    }
    Ok(())
}
