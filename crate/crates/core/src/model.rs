//! The full detector: backbone, text encoder, fusion, and grasp head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, stage_widths};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::fusion;
use crate::head::{self, decode_grasps, DecodeParams, DecodedGrasp, GraspMaps, GraspRect};
use crate::metrics::GraspPredictor;
use crate::data::Sample;
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Tensor;
use crate::text::{self, TextEmbedding, TextEncoder, ToyTextEncoder};

/// Fixed affine normalization applied to `[0, 1]` images.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct GraspMamba {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Seed of the training run that produced the parameters, if any.
    pub train_seed: Option<u64>,
    text: TextEncoder,
}

/// Freshly initialized parameters for `config`, rounded to f32.
pub fn init_params(config: &ModelConfig) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    {
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        backbone::init(&mut b.sub("backbone"), config);
        fusion::init(&mut b.sub("fusion"), config, &stage_widths(config.channels));
        head::init(&mut b.sub("head"), config);
    }
    store.round_to_f32();
    Ok(store)
}

impl GraspMamba {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(GraspMamba {
            text: TextEncoder::Toy(ToyTextEncoder::from_config(&config)),
            config,
            params,
            train_seed: None,
        })
    }

    /// Wraps existing parameters after checking them against a fresh
    /// initialization of `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = GraspMamba::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Format(format!(
                "{} parameter tensors, model has {}",
                params.len(),
                model.params.len()
            )));
        }
        for (name, t) in params.iter() {
            let expected = model.params.get(name).map_err(|_| {
                Error::Format(format!("unexpected parameter tensor {name:?}"))
            })?;
            if expected.shape() != t.shape() {
                return Err(Error::ParamShape {
                    name: name.to_string(),
                    expected: expected.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn text_encoder(&self) -> &TextEncoder {
        &self.text
    }

    /// Swaps in another text encoder of the same width.
    pub fn set_text_encoder(&mut self, encoder: TextEncoder) -> Result<()> {
        if encoder.dim() != self.config.text_dim {
            return Err(Error::shape(format!(
                "text encoder width {}, model expects {}",
                encoder.dim(),
                self.config.text_dim
            )));
        }
        self.text = encoder;
        Ok(())
    }

    pub fn embed(&self, prompt: &str) -> Result<TextEmbedding> {
        self.text.encode(prompt)
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams::from_config(&self.config)
    }

    /// Forward pass against an explicit parameter set. `image: [B, 3, H, W]`,
    /// `text: [B, C_T]`; maps come back as `[B, H, W]`.
    pub fn forward_with(&self, params: &ParamStore, image: &Tensor, text: &Tensor) -> Result<GraspMaps> {
        let x = image.add_scalar(-INPUT_MEAN).scale(1.0 / INPUT_STD);
        let pyramid = backbone::extract_pyramid(&x, &params.scope("backbone"), &self.config)?;
        let fused = fusion::fuse_hierarchy(&pyramid, text, &params.scope("fusion"), self.config.fusion)?;
        head::predict_maps(fused.finest(), &params.scope("head"), (image.dim(2), image.dim(3)))
    }

    pub fn forward(&self, image: &Tensor, text: &Tensor) -> Result<GraspMaps> {
        self.forward_with(&self.params, image, text)
    }

    /// Maps for a single `[3, H, W]` image, as `[H, W]`.
    pub fn predict_maps(&self, image: &Tensor, embedding: &TextEmbedding) -> Result<GraspMaps> {
        image.expect_ndim(3, "image")?;
        let (h, w) = (image.dim(1), image.dim(2));
        let batch = image.reshape(&[1, 3, h, w])?;
        let text = text::stack(&[embedding])?;
        self.forward(&batch, &text)?.sample(0)
    }

    pub fn predict(&self, image: &Tensor, prompt: &str, k: usize) -> Result<Vec<DecodedGrasp>> {
        let maps = self.predict_maps(image, &self.embed(prompt)?)?;
        decode_grasps(&maps, k, &self.decode_params())
    }
}

impl GraspPredictor for GraspMamba {
    fn predict(&self, sample: &Sample) -> Result<Option<GraspRect>> {
        Ok(GraspMamba::predict(self, &sample.image, &sample.prompt, 1)?
            .first()
            .map(|g| g.rect))
    }
}
