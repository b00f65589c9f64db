//! Named parameter storage and the small layer helpers built on it.
//!
//! Parameters live in an insertion-ordered map from dotted names
//! (`backbone.stage3.block0.ssm.a_diag`) to leaf tensors. Forward passes look
//! them up through a [`Scope`]; the optimizer swaps leaves in place.

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::arg(format!("no parameter named {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    /// Replaces the values of an existing parameter, keeping its tracking flag.
    pub fn set_data(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let old = self.get(name)?;
        let t = Tensor::new(old.shape(), data)?.into_leaf(old.requires_grad());
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Copy with every leaf marked trainable or frozen.
    pub fn with_grad(&self, requires_grad: bool) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.detach().into_leaf(requires_grad)))
                .collect(),
        }
    }

    /// Rounds every value to the nearest `f32` so checkpoints are lossless.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            let data = t.data().iter().map(|&v| v as f32 as f64).collect();
            *t = Tensor::new(t.shape(), data)
                .expect("same shape")
                .into_leaf(t.requires_grad());
        }
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope {
            params: self,
            prefix: prefix.to_string(),
        }
    }
}

/// Read-only view of the parameters under a name prefix.
#[derive(Clone)]
pub struct Scope<'a> {
    params: &'a ParamStore,
    prefix: String,
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<&'a Tensor> {
        self.params.get(&join(&self.prefix, name))
    }

    pub fn sub(&self, name: &str) -> Scope<'a> {
        Scope {
            params: self.params,
            prefix: join(&self.prefix, name),
        }
    }

    pub fn conv(&self, name: &str, x: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let s = self.sub(name);
        x.conv2d(s.get("weight")?, Some(s.get("bias")?), stride, padding)
    }

    pub fn linear(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let s = self.sub(name);
        x.linear(s.get("weight")?, Some(s.get("bias")?))
    }

    pub fn layer_norm(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let s = self.sub(name);
        x.layer_norm(s.get("gamma")?, s.get("beta")?, 1e-5)
    }
}

/// Seeded parameter initializer writing into a [`ParamStore`].
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        ParamBuilder {
            prefix: join(&self.prefix, name),
            store: self.store,
            rng: self.rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        let t = Tensor::param(shape, data).expect("initializer produced matching length");
        self.store.insert(join(&self.prefix, name), t);
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        self.tensor(name, shape, data);
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) {
        let n = shape.iter().product();
        self.tensor(name, shape, vec![value; n]);
    }

    /// He-uniform init for a `cout×cin×k×k` convolution.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        let mut s = self.sub(name);
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        s.uniform("weight", &[cout, cin, k, k], bound);
        s.constant("bias", &[cout], 0.0);
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) {
        let mut s = self.sub(name);
        let bound = (3.0 / din as f64).sqrt();
        s.uniform("weight", &[din, dout], bound);
        s.constant("bias", &[dout], 0.0);
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) {
        let mut s = self.sub(name);
        s.constant("gamma", &[d], 1.0);
        s.constant("beta", &[d], 0.0);
    }
}
