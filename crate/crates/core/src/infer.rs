//! Single-image inference and its file outputs.

use std::path::Path;

use crate::data::{load_png, save_png};
use crate::error::{Error, Result};
use crate::head::{decode_grasps, DecodedGrasp, GraspMaps};
use crate::model::GraspMamba;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Inference {
    pub grasps: Vec<DecodedGrasp>,
    pub maps: GraspMaps,
}

pub fn infer(model: &GraspMamba, image: &Tensor, prompt: &str, k: usize) -> Result<Inference> {
    image.expect_ndim(3, "image")?;
    let (h, w) = (image.dim(1), image.dim(2));
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::shape(format!("image {h}x{w}: sides must be multiples of 32")));
    }
    let maps = model.predict_maps(image, &model.embed(prompt)?)?;
    let grasps = decode_grasps(&maps, k, &model.decode_params())?;
    Ok(Inference { grasps, maps })
}

/// Piecewise-linear blue → cyan → yellow → red colormap on `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 4] = [[0.0, 0.0, 0.5], [0.0, 0.8, 1.0], [1.0, 0.9, 0.0], [0.8, 0.0, 0.0]];
    let t = v.clamp(0.0, 1.0) * 3.0;
    let i = (t.floor() as usize).min(2);
    let f = t - i as f64;
    std::array::from_fn(|k| STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k]))
}

/// Color-mapped `[3, H, W]` rendering of an `[H, W]` quality map.
pub fn heatmap(quality: &Tensor) -> Result<Tensor> {
    quality.expect_ndim(2, "quality map")?;
    let n = quality.numel();
    let mut data = vec![0.0; 3 * n];
    for (i, &q) in quality.data().iter().enumerate() {
        let c = colormap(q);
        for k in 0..3 {
            data[k * n + i] = c[k];
        }
    }
    Tensor::new(&[3, quality.dim(0), quality.dim(1)], data)
}

pub fn save_heatmap(quality: &Tensor, path: &Path) -> Result<()> {
    save_png(&heatmap(quality)?, path)
}

pub fn save_grasps_json(grasps: &[DecodedGrasp], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(grasps)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn infer_file(model: &GraspMamba, image: &Path, prompt: &str, k: usize) -> Result<Inference> {
    infer(model, &load_png(image)?, prompt, k)
}
