//! Generates a small synthetic dataset, writes it to disk, reloads it and
//! prints a summary of categories and splits.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [scenes]

use std::collections::BTreeMap;
use std::path::PathBuf;

use graspmamba::data::{generate_dataset, load_dataset, save_dataset, DataConfig, Split};

fn main() -> graspmamba::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth-data".into()));
    let scenes: usize = args.next().map_or(40, |a| a.parse().expect("scene count"));
    let cfg = DataConfig {
        image_size: 128,
        ..DataConfig::default()
    };
    let samples = generate_dataset(scenes, 1, &cfg)?;
    save_dataset(&samples, &out)?;
    let loaded = load_dataset(&out)?;
    assert_eq!(loaded, samples);

    let mut counts: BTreeMap<&str, (usize, Split)> = BTreeMap::new();
    for s in &samples {
        counts.entry(&s.category).or_insert((0, s.split)).0 += 1;
    }
    for (cat, (n, split)) in &counts {
        println!("{cat:<16} {split:<7} {n}");
    }
    let first = &samples[0];
    println!("\n{}: \"{}\", {} grasps", first.id, first.prompt, first.grasps.len());
    println!("wrote {} scenes to {}", samples.len(), out.display());
    Ok(())
}
