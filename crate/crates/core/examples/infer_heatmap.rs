//! Trains the tiny model briefly on a few scenes, then renders the quality
//! heatmap and top grasps for one of them.
//!
//! cargo run --release --example infer_heatmap -- [out_dir]

use std::path::PathBuf;

use graspmamba::config::{ModelConfig, Optimizer, TrainConfig};
use graspmamba::data::{generate_dataset, save_png, DataConfig};
use graspmamba::infer::{infer, save_grasps_json, save_heatmap};
use graspmamba::train::train;
use graspmamba::GraspMamba;

fn main() -> graspmamba::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "heatmap-demo".into()));
    std::fs::create_dir_all(&out).map_err(|source| graspmamba::Error::Io {
        path: out.clone(),
        source,
    })?;
    let data = DataConfig {
        image_size: 64,
        ..DataConfig::default()
    };
    let samples = generate_dataset(8, 3, &data)?;
    let mut model = GraspMamba::new(ModelConfig::tiny())?;
    let cfg = TrainConfig {
        epochs: 80,
        batch_size: 4,
        optimizer: Optimizer::Adam,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut model, &samples, &cfg, |_| {})?;

    let scene = &samples[0];
    let result = infer(&model, &scene.image, &scene.prompt, 3)?;
    save_png(&scene.image, &out.join("scene.png"))?;
    save_heatmap(&result.maps.quality, &out.join("quality.png"))?;
    save_grasps_json(&result.grasps, &out.join("grasps.json"))?;
    println!("prompt: {}", scene.prompt);
    for g in &result.grasps {
        let r = g.rect;
        println!(
            "q={:.2}  x={:.1} y={:.1} w={:.1} theta={:.1}°",
            g.quality,
            r.x,
            r.y,
            r.w,
            r.theta.to_degrees()
        );
    }
    if result.grasps.is_empty() {
        println!("no grasp above threshold");
    }
    println!("wrote scene.png, quality.png and grasps.json to {}", out.display());
    Ok(())
}
