//! Trains the tiny model with and without vision-language fusion on the same
//! synthetic data and compares seen/unseen top-1 success.
//!
//! cargo run --release --example fusion_ablation -- [scenes] [epochs] [seeds]

use std::time::Instant;

use graspmamba::config::{ModelConfig, Optimizer, TrainConfig};
use graspmamba::data::{generate_dataset, DataConfig};
use graspmamba::metrics::{evaluate, harmonic_mean, EvalReport};
use graspmamba::train::train;
use graspmamba::GraspMamba;

fn arg(i: usize, default: usize) -> usize {
    std::env::args()
        .nth(i)
        .map(|a| a.parse().expect("integer argument"))
        .unwrap_or(default)
}

fn run(fusion: bool, seed: u64, scenes: usize, epochs: usize) -> graspmamba::Result<EvalReport> {
    let data = DataConfig {
        image_size: 64,
        ..DataConfig::default()
    };
    let samples = generate_dataset(scenes, 100 + seed, &data)?;
    let mut model = GraspMamba::new(ModelConfig {
        fusion,
        init_seed: seed,
        ..ModelConfig::tiny()
    })?;
    let cfg = TrainConfig {
        epochs,
        optimizer: Optimizer::Adam,
        learning_rate: 3e-3,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &samples, &cfg, |_| {})?;
    evaluate(&model, &samples)
}

fn main() -> graspmamba::Result<()> {
    let (scenes, epochs, seeds) = (arg(1, 200), arg(2, 200), arg(3, 3) as u64);
    let start = Instant::now();
    for fusion in [true, false] {
        let (mut seen, mut unseen) = (0.0, 0.0);
        for seed in 0..seeds {
            let r = run(fusion, seed, scenes, epochs)?;
            println!(
                "fusion={fusion:<5} seed {seed}  seen {:.3}  unseen {:.3}  ({:.0}s)",
                r.seen_rate,
                r.unseen_rate,
                start.elapsed().as_secs_f64()
            );
            seen += r.seen_rate;
            unseen += r.unseen_rate;
        }
        let (seen, unseen) = (seen / seeds as f64, unseen / seeds as f64);
        println!(
            "fusion={fusion:<5} mean  seen {seen:.3}  unseen {unseen:.3}  H {:.3}",
            harmonic_mean(seen, unseen)?
        );
    }
    Ok(())
}
