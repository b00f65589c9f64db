//! Prompt embeddings.
//!
//! The built-in encoder lowercases the prompt, splits it on every
//! non-alphanumeric character, hashes each token with 64-bit FNV-1a
//! (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`, over the UTF-8
//! bytes) into `V` buckets, and averages the matching rows of a frozen,
//! seeded `V × C_T` table. The table is regenerated from its seed, so it is
//! never trained and never stored.
//!
//! Precomputed embeddings can be supplied instead through a text file:
//!
//! ```text
//! GMEMB 1 <C_T>
//! <prompt>\t<base64 of C_T little-endian f32 values>
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens of `prompt`.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Toy,
    External,
}

#[derive(Debug, Clone)]
pub struct TextEmbedding {
    /// `[C_T]`
    pub vector: Tensor,
    pub source: EmbeddingSource,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.numel()
    }
}

/// Stacks embeddings into a `[B, C_T]` batch.
pub fn stack(embeddings: &[&TextEmbedding]) -> Result<Tensor> {
    let dim = embeddings
        .first()
        .ok_or_else(|| Error::arg("empty embedding batch"))?
        .dim();
    let mut data = Vec::with_capacity(dim * embeddings.len());
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::shape(format!("embedding widths {dim} and {}", e.dim())));
        }
        data.extend_from_slice(e.vector.data());
    }
    Tensor::new(&[embeddings.len(), dim], data)
}

#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    buckets: usize,
    dim: usize,
    table: Vec<f64>,
}

impl ToyTextEncoder {
    pub fn new(buckets: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 3f64.sqrt();
        let table = (0..buckets * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        ToyTextEncoder {
            buckets,
            dim,
            table,
        }
    }

    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self::new(cfg.vocab_buckets, cfg.text_dim, cfg.text_seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.buckets as u64) as usize
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn encode(&self, prompt: &str) -> Result<TextEmbedding> {
        let tokens = tokenize(prompt);
        if tokens.is_empty() {
            return Err(Error::arg(format!("prompt {prompt:?} has no alphanumeric tokens")));
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v.iter_mut()
                .zip(self.row(self.bucket(t)))
                .for_each(|(a, b)| *a += b);
        }
        let n = tokens.len() as f64;
        v.iter_mut().for_each(|a| *a /= n);
        Ok(TextEmbedding {
            vector: Tensor::new(&[self.dim], v)?,
            source: EmbeddingSource::Toy,
        })
    }
}

/// Exact-match prompt → vector table read from an embedding file.
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        ExternalEmbeddings {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, prompt: &str, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(format!(
                "embedding for {prompt:?} has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if prompt.contains(['\t', '\n', '\r']) {
            return Err(Error::arg("prompts in embedding files cannot contain tabs or newlines"));
        }
        self.entries
            .insert(prompt.to_string(), vector.iter().map(|&v| v as f64).collect());
        Ok(())
    }

    pub fn parse(text: &str, path: &Path, expected_dim: usize) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let dim = match fields.as_slice() {
            ["GMEMB", "1", d] => d.parse::<usize>().map_err(|e| err(1, format!("bad width: {e}")))?,
            _ => return Err(err(1, format!("bad header {header:?}"))),
        };
        if dim != expected_dim {
            return Err(Error::Shape(format!(
                "{}: embedding width {dim}, model expects {expected_dim}",
                path.display()
            )));
        }
        let mut out = ExternalEmbeddings::new(dim);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (prompt, payload) = line
                .split_once('\t')
                .ok_or_else(|| err(i + 1, "missing tab separator".into()))?;
            let bytes = B64
                .decode(payload.trim_end())
                .map_err(|e| err(i + 1, format!("base64: {e}")))?;
            if bytes.len() != 4 * dim {
                return Err(err(i + 1, format!("{} bytes, expected {}", bytes.len(), 4 * dim)));
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(i + 1, "non-finite value".into()));
            }
            out.insert(prompt, &values)?;
        }
        Ok(out)
    }

    pub fn load(path: &Path, expected_dim: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, expected_dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut prompts: Vec<&String> = self.entries.keys().collect();
        prompts.sort();
        let write = || -> std::io::Result<()> {
            writeln!(f, "GMEMB 1 {}", self.dim)?;
            for p in prompts {
                let bytes: Vec<u8> = self.entries[p]
                    .iter()
                    .flat_map(|&v| (v as f32).to_le_bytes())
                    .collect();
                writeln!(f, "{p}\t{}", B64.encode(bytes))?;
            }
            f.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn lookup(&self, prompt: &str) -> Result<TextEmbedding> {
        let v = self
            .entries
            .get(prompt)
            .ok_or_else(|| Error::Lookup(prompt.to_string()))?;
        Ok(TextEmbedding {
            vector: Tensor::new(&[self.dim], v.clone())?,
            source: EmbeddingSource::External,
        })
    }
}

#[derive(Debug, Clone)]
pub enum TextEncoder {
    Toy(ToyTextEncoder),
    External(ExternalEmbeddings),
}

impl TextEncoder {
    pub fn encode(&self, prompt: &str) -> Result<TextEmbedding> {
        match self {
            TextEncoder::Toy(t) => t.encode(prompt),
            TextEncoder::External(e) => e.lookup(prompt),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TextEncoder::Toy(t) => t.dim(),
            TextEncoder::External(e) => e.dim(),
        }
    }
}
