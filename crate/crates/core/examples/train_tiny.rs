//! Overfits the tiny model on a small synthetic dataset and reports the loss
//! curve and top-1 success on the training split.
//!
//! cargo run --release --example train_tiny -- [scenes] [epochs] [image_size]

use std::time::Instant;

use graspmamba::config::{ModelConfig, Optimizer, TrainConfig};
use graspmamba::data::{generate_dataset, DataConfig, Split};
use graspmamba::metrics::split_success_rate;
use graspmamba::train::train;
use graspmamba::GraspMamba;

fn arg(i: usize, default: usize) -> usize {
    std::env::args()
        .nth(i)
        .map(|a| a.parse().expect("integer argument"))
        .unwrap_or(default)
}

fn main() -> graspmamba::Result<()> {
    let (scenes, epochs, image_size) = (arg(1, 64), arg(2, 200), arg(3, 64));
    let data = DataConfig {
        image_size,
        ..DataConfig::default()
    };
    let samples = generate_dataset(scenes, 7, &data)?;
    let mut model = GraspMamba::new(ModelConfig::tiny())?;
    println!("{} parameters", model.params.num_scalars());

    let cfg = TrainConfig {
        epochs,
        optimizer: Optimizer::Adam,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&mut model, &samples, &cfg, |e| {
        if e.epoch == 1 || e.epoch % 20 == 0 {
            println!("epoch {:>4}  loss {:.5}  {:.1}s", e.epoch, e.loss, start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "loss {:.5} -> {:.5} over {} training samples",
        report.initial_loss, report.final_loss, report.n_train
    );
    let (rate, n) = split_success_rate(&model, &samples, Split::Seen)?;
    println!("top-1 success on the training split: {rate:.3} ({n} samples)");
    Ok(())
}
