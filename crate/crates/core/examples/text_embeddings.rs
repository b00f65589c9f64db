//! Embeds a handful of prompts with the built-in hashed encoder and prints
//! their pairwise cosine similarity.
//!
//! cargo run --release --example text_embeddings -- "prompt one" "prompt two" ...

use graspmamba::config::ModelConfig;
use graspmamba::text::{tokenize, ToyTextEncoder};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

fn main() -> graspmamba::Result<()> {
    let mut prompts: Vec<String> = std::env::args().skip(1).collect();
    if prompts.is_empty() {
        prompts = ["grasp the red bar", "pick up the red bar", "grasp the blue ring", "hold the yellow T-shape"]
            .map(String::from)
            .to_vec();
    }
    let encoder = ToyTextEncoder::from_config(&ModelConfig::default());
    let vectors = prompts
        .iter()
        .map(|p| encoder.encode(p).map(|e| e.vector.data().to_vec()))
        .collect::<graspmamba::Result<Vec<_>>>()?;
    for (i, p) in prompts.iter().enumerate() {
        println!("[{i}] {p:?} -> {:?}", tokenize(p));
    }
    println!();
    for (i, a) in vectors.iter().enumerate() {
        let row: Vec<String> = vectors.iter().map(|b| format!("{:6.3}", cosine(a, b))).collect();
        println!("[{i}] {}", row.join(" "));
    }
    Ok(())
}
