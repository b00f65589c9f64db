use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graspmamba::bench::{benchmark_scan, BenchMode, BenchOptions};
use graspmamba::checkpoint::{load_checkpoint, save_checkpoint};
use graspmamba::config::RunConfig;
use graspmamba::data::{generate_dataset, load_dataset, save_dataset, DataConfig};
use graspmamba::infer::{infer_file, save_grasps_json, save_heatmap};
use graspmamba::metrics::evaluate;
use graspmamba::train::train;
use graspmamba::{Error, GraspMamba, Result};

#[derive(Parser)]
#[command(name = "graspmamba", version, about = "Language-driven grasp detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 224)]
        image_size: usize,
        #[arg(long, default_value_t = 0.7)]
        split_ratio: f64,
    },
    /// Train on the seen split of a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML file with optional [model] and [train] tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        no_fusion: bool,
    },
    /// Report seen/unseen success rates and their harmonic mean.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Detect grasps in one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long)]
        grasps: Option<PathBuf>,
    },
    /// Time scan, convolution, and attention sequence mixers.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "scan,conv,attention")]
        modes: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(value: &T, path: &PathBuf) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            scenes,
            seed,
            image_size,
            split_ratio,
        } => {
            let cfg = DataConfig {
                image_size,
                split_ratio,
                split_seed: seed,
                ..DataConfig::default()
            };
            let samples = generate_dataset(scenes, seed, &cfg)?;
            save_dataset(&samples, &out)?;
            let seen = samples.iter().filter(|s| s.split == graspmamba::data::Split::Seen).count();
            println!(
                "wrote {} scenes ({seen} seen, {} unseen) to {}",
                samples.len(),
                samples.len() - seen,
                out.display()
            );
        }
        Command::Train {
            data,
            out,
            epochs,
            seed,
            config,
            no_fusion,
        } => {
            let mut run = match &config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            if let Some(s) = seed {
                run.train.seed = s;
            }
            if no_fusion {
                run.model.fusion = false;
            }
            let samples = load_dataset(&data)?;
            let mut model = GraspMamba::new(run.model)?;
            let report = train(&mut model, &samples, &run.train, |_| {})?;
            save_checkpoint(&model, &out)?;
            println!(
                "trained on {} samples: loss {:.6} -> {:.6}; wrote {}",
                report.n_train,
                report.initial_loss,
                report.final_loss,
                out.display()
            );
        }
        Command::Eval { data, ckpt, report } => {
            let model = load_checkpoint(&ckpt)?;
            let samples = load_dataset(&data)?;
            let r = evaluate(&model, &samples)?;
            println!(
                "seen {:.4} ({}), unseen {:.4} ({}), H {:.4}",
                r.seen_rate, r.n_seen, r.unseen_rate, r.n_unseen, r.h
            );
            if let Some(path) = report {
                write_json(&r, &path)?;
            }
        }
        Command::Infer {
            ckpt,
            image,
            prompt,
            topk,
            heatmap,
            grasps,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let out = infer_file(&model, &image, &prompt, topk)?;
            for g in &out.grasps {
                println!(
                    "x {:.1} y {:.1} w {:.1} h {:.1} theta {:.3} quality {:.3}",
                    g.rect.x, g.rect.y, g.rect.w, g.rect.h, g.rect.theta, g.quality
                );
            }
            if let Some(path) = heatmap {
                save_heatmap(&out.maps.quality, &path)?;
            }
            if let Some(path) = grasps {
                save_grasps_json(&out.grasps, &path)?;
            }
        }
        Command::Bench { lengths, modes, report } => {
            let modes: Vec<BenchMode> = modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
            let r = benchmark_scan(&lengths, &modes, &BenchOptions::default())?;
            print!("{r}");
            if let Some(path) = report {
                write_json(&r, &path)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
