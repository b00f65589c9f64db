//! Procedural language-grasp scenes.
//!
//! Each scene paints one target and up to `max_distractors` other objects on
//! a noisy background. Objects are colored primitives (bar, disk, ring, L, T)
//! and a category is a `color-shape` pair. Ground-truth grasps follow from
//! the geometry: across the short axis of every straight limb, along any of 8
//! diameters of a disk, and across the wall of a ring at 8 positions. Every
//! grasp has `h = w / 2`.
//!
//! Per-sample seeds are `splitmix64(seed ^ index * 0x9e3779b97f4a7c15)`, so
//! generation can run in parallel without changing the output.
//!
//! On disk a dataset is `images/<id>.png` (8-bit RGB) plus `index.jsonl`.
//! Images are quantized to multiples of 1/255 at generation time, which
//! makes the PNG round trip lossless.

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::GraspRect;
use crate::metrics::rect_corners;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeKind {
    #[serde(rename = "bar")]
    Bar,
    #[serde(rename = "disk")]
    Disk,
    #[serde(rename = "ring")]
    Ring,
    #[serde(rename = "l-shape")]
    LShape,
    #[serde(rename = "t-shape")]
    TShape,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Bar,
        ShapeKind::Disk,
        ShapeKind::Ring,
        ShapeKind::LShape,
        ShapeKind::TShape,
    ];

    /// Identifier used in category names.
    pub fn slug(self) -> &'static str {
        match self {
            ShapeKind::Bar => "bar",
            ShapeKind::Disk => "disk",
            ShapeKind::Ring => "ring",
            ShapeKind::LShape => "l-shape",
            ShapeKind::TShape => "t-shape",
        }
    }

    /// Word used in prompts.
    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Bar => "bar",
            ShapeKind::Disk => "disk",
            ShapeKind::Ring => "ring",
            ShapeKind::LShape => "L-shape",
            ShapeKind::TShape => "T-shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedColor {
    pub name: String,
    pub rgb: [f64; 3],
}

impl NamedColor {
    pub fn new(name: &str, rgb: [f64; 3]) -> Self {
        NamedColor {
            name: name.to_string(),
            rgb,
        }
    }

    pub fn palette() -> Vec<NamedColor> {
        vec![
            NamedColor::new("red", [0.85, 0.15, 0.15]),
            NamedColor::new("green", [0.15, 0.70, 0.20]),
            NamedColor::new("blue", [0.15, 0.30, 0.85]),
            NamedColor::new("yellow", [0.90, 0.85, 0.15]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub image_size: usize,
    pub shapes: Vec<ShapeKind>,
    pub colors: Vec<NamedColor>,
    pub max_distractors: usize,
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Object size range as a fraction of the image side.
    pub min_scale: f64,
    pub max_scale: f64,
    /// Per-pixel background noise amplitude.
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: 224,
            shapes: ShapeKind::ALL.to_vec(),
            colors: NamedColor::palette(),
            max_distractors: 3,
            split_ratio: 0.7,
            split_seed: 0,
            min_scale: 0.15,
            max_scale: 0.22,
            noise: 0.03,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::arg(format!("image size {} is below 32", self.image_size)));
        }
        if self.shapes.is_empty() || self.colors.is_empty() {
            return Err(Error::arg("need at least one shape and one color"));
        }
        if self.num_categories() < 2 {
            return Err(Error::arg("need at least 2 categories to split seen/unseen"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::arg(format!("split ratio {} outside (0, 1)", self.split_ratio)));
        }
        if !(0.0 < self.min_scale && self.min_scale <= self.max_scale && self.max_scale <= 0.25) {
            return Err(Error::arg("object scale range must satisfy 0 < min <= max <= 0.25"));
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.shapes.len() * self.colors.len()
    }

    /// Category names, colors outer and shapes inner.
    pub fn categories(&self) -> Vec<String> {
        self.colors
            .iter()
            .flat_map(|c| self.shapes.iter().map(move |s| category_name(&c.name, *s)))
            .collect()
    }

    pub fn seen_categories(&self) -> Result<HashSet<String>> {
        let (seen, _) = split_categories(&self.categories(), self.split_ratio, self.split_seed)?;
        Ok(seen.into_iter().collect())
    }
}

pub fn category_name(color: &str, shape: ShapeKind) -> String {
    format!("{color}-{}", shape.slug())
}

/// Seeded shuffle, then the first `round(ratio * n)` (kept within
/// `[1, n - 1]`) become seen.
pub fn split_categories(categories: &[String], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let n = categories.len();
    if n < 2 {
        return Err(Error::arg(format!("{n} categories cannot be split")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::arg(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut shuffled = categories.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_seen = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let unseen = shuffled.split_off(n_seen);
    Ok((shuffled, unseen))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub prompt: String,
    pub category: String,
    pub grasps: Vec<GraspRect>,
    pub split: Split,
}

impl PartialEq for Sample {
    fn eq(&self, o: &Self) -> bool {
        self.id == o.id
            && self.image.shape() == o.image.shape()
            && self.image.data() == o.image.data()
            && self.prompt == o.prompt
            && self.category == o.category
            && self.grasps == o.grasps
            && self.split == o.split
    }
}

impl Sample {
    pub fn image_size(&self) -> (usize, usize) {
        (self.image.dim(1), self.image.dim(2))
    }
}

/// A filled primitive in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Part {
    /// Rectangle with `len` along `angle` and `thick` across it.
    Rect {
        cx: f64,
        cy: f64,
        len: f64,
        thick: f64,
        angle: f64,
    },
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Ring {
        cx: f64,
        cy: f64,
        inner: f64,
        outer: f64,
    },
}

impl Part {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Part::Rect {
                cx,
                cy,
                len,
                thick,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                (dx * c + dy * s).abs() <= 0.5 * len && (-dx * s + dy * c).abs() <= 0.5 * thick
            }
            Part::Disk { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
            Part::Ring { cx, cy, inner, outer } => {
                let d = (x - cx).hypot(y - cy);
                d >= inner && d <= outer
            }
        }
    }

    fn translate(self, ox: f64, oy: f64) -> Part {
        match self {
            Part::Rect {
                cx,
                cy,
                len,
                thick,
                angle,
            } => Part::Rect {
                cx: cx + ox,
                cy: cy + oy,
                len,
                thick,
                angle,
            },
            Part::Disk { cx, cy, r } => Part::Disk { cx: cx + ox, cy: cy + oy, r },
            Part::Ring { cx, cy, inner, outer } => Part::Ring {
                cx: cx + ox,
                cy: cy + oy,
                inner,
                outer,
            },
        }
    }

    /// Farthest painted distance from the origin.
    fn reach(&self) -> f64 {
        match *self {
            Part::Rect {
                cx,
                cy,
                len,
                thick,
                ..
            } => cx.hypot(cy) + 0.5 * len.hypot(thick),
            Part::Disk { cx, cy, r } => cx.hypot(cy) + r,
            Part::Ring { cx, cy, outer, .. } => cx.hypot(cy) + outer,
        }
    }
}

/// One painted object of a scene, target first.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub category: String,
    pub rgb: [f64; 3],
    pub parts: Vec<Part>,
    pub grasps: Vec<GraspRect>,
}

impl SceneObject {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.parts.iter().any(|p| p.contains(x, y))
    }
}

/// Gripper opening as a multiple of the thickness of the part it closes on.
pub const OPENING: f64 = 2.5;

fn grasp(x: f64, y: f64, w: f64, theta: f64) -> GraspRect {
    GraspRect::new(x, y, w, 0.5 * w, theta).expect("positive grasp width")
}

/// Parts and grasps of a shape centered at the origin with size `r` and
/// orientation `phi`.
fn shape_geometry(kind: ShapeKind, r: f64, phi: f64) -> (Vec<Part>, Vec<GraspRect>) {
    let rot = |x: f64, y: f64| {
        let (s, c) = phi.sin_cos();
        (x * c - y * s, x * s + y * c)
    };
    let limb = |x: f64, y: f64, len: f64, thick: f64, along: f64| {
        let (cx, cy) = rot(x, y);
        Part::Rect {
            cx,
            cy,
            len,
            thick,
            angle: phi + along,
        }
    };
    let across = |x: f64, y: f64, thick: f64, along: f64| {
        let (cx, cy) = rot(x, y);
        grasp(cx, cy, OPENING * thick, phi + along + FRAC_PI_2)
    };
    match kind {
        ShapeKind::Bar => {
            let (len, t) = (2.0 * r, 0.45 * r);
            (vec![limb(0.0, 0.0, len, t, 0.0)], vec![across(0.0, 0.0, t, 0.0)])
        }
        ShapeKind::Disk => {
            let rad = 0.6 * r;
            let grasps = (0..8)
                .map(|k| grasp(0.0, 0.0, 2.4 * rad, k as f64 * PI / 8.0))
                .collect();
            (vec![Part::Disk { cx: 0.0, cy: 0.0, r: rad }], grasps)
        }
        ShapeKind::Ring => {
            let outer = 0.75 * r;
            let inner = 0.6 * outer;
            let (mid, t) = (0.5 * (inner + outer), outer - inner);
            let grasps = (0..8)
                .map(|k| {
                    let a = phi + k as f64 * PI / 4.0;
                    grasp(mid * a.cos(), mid * a.sin(), OPENING * t, a)
                })
                .collect();
            (
                vec![Part::Ring {
                    cx: 0.0,
                    cy: 0.0,
                    inner,
                    outer,
                }],
                grasps,
            )
        }
        ShapeKind::LShape => {
            // Limbs along local +x and +y meeting at a square corner, shifted
            // so the bounding box is centered.
            let (len, t) = (1.6 * r, 0.45 * r);
            let o = -0.5 * len;
            let parts = vec![
                limb(o + 0.5 * len, o + 0.5 * t, len, t, 0.0),
                limb(o + 0.5 * t, o + 0.5 * len, len, t, FRAC_PI_2),
            ];
            let free = o + 0.5 * (t + len);
            let grasps = vec![
                across(free, o + 0.5 * t, t, 0.0),
                across(o + 0.5 * t, free, t, FRAC_PI_2),
            ];
            (parts, grasps)
        }
        ShapeKind::TShape => {
            let (len, t) = (1.8 * r, 0.45 * r);
            let stem = 0.8 * len;
            let top = -0.5 * (t + stem) + 0.5 * t;
            let stem_c = top + 0.5 * t + 0.5 * stem;
            let parts = vec![
                limb(0.0, top, len, t, 0.0),
                limb(0.0, stem_c, stem, t, FRAC_PI_2),
            ];
            let arm = 0.25 * (len + t);
            let grasps = vec![
                across(-arm, top, t, 0.0),
                across(arm, top, t, 0.0),
                across(0.0, stem_c + 0.1 * stem, t, FRAC_PI_2),
            ];
            (parts, grasps)
        }
    }
}

fn grasp_reach(g: &GraspRect) -> f64 {
    rect_corners(g)
        .map(|cs| cs.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max))
        .unwrap_or(0.0)
}

struct Placed {
    x: f64,
    y: f64,
    reach: f64,
}

fn try_place(rng: &mut ChaCha8Rng, size: f64, reach: f64, placed: &[Placed]) -> Option<(f64, f64)> {
    let lo = reach + 1.0;
    let hi = size - 1.0 - reach;
    if hi <= lo {
        return None;
    }
    for _ in 0..64 {
        let (x, y) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
        if placed.iter().all(|p| (p.x - x).hypot(p.y - y) > p.reach + reach + 2.0) {
            return Some((x, y));
        }
    }
    None
}

const TEMPLATES: [&str; 4] = ["grasp the", "pick up the", "grab the", "hold the"];

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// One scene with the painted objects it was drawn from (`objects[0]` is the
/// target).
pub fn generate_scene_layout(seed: u64, config: &DataConfig) -> Result<(Sample, Vec<SceneObject>)> {
    config.validate()?;
    let seen = config.seen_categories()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.image_size as f64;
    let n_cat = config.num_categories();

    let target_cat = rng.gen_range(0..n_cat);
    let n_distract = rng.gen_range(0..=config.max_distractors);
    let mut cats = vec![target_cat];
    for _ in 0..n_distract {
        let mut c = rng.gen_range(0..n_cat - 1);
        if c >= target_cat {
            c += 1;
        }
        cats.push(c);
    }

    let mut objects = Vec::new();
    let mut placed: Vec<Placed> = Vec::new();
    for (i, &cat) in cats.iter().enumerate() {
        let (color, shape) = (&config.colors[cat / config.shapes.len()], config.shapes[cat % config.shapes.len()]);
        let r = size * rng.gen_range(config.min_scale..=config.max_scale);
        let phi = rng.gen_range(0.0..PI);
        let jitter: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.04..0.04));
        let (parts, grasps) = shape_geometry(shape, r, phi);
        let reach = parts
            .iter()
            .map(Part::reach)
            .chain(grasps.iter().map(grasp_reach))
            .fold(0.0, f64::max);
        let Some((x, y)) = try_place(&mut rng, size, reach, &placed) else {
            if i == 0 {
                return Err(Error::arg(format!("image size {size} too small for the target object")));
            }
            continue;
        };
        placed.push(Placed { x, y, reach });
        objects.push(SceneObject {
            category: category_name(&color.name, shape),
            rgb: std::array::from_fn(|k| (color.rgb[k] + jitter[k]).clamp(0.0, 1.0)),
            parts: parts.into_iter().map(|p| p.translate(x, y)).collect(),
            grasps: grasps
                .into_iter()
                .map(|g| GraspRect { x: g.x + x, y: g.y + y, ..g })
                .collect(),
        });
    }

    let n = config.image_size;
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.40..0.60));
    let mut image = vec![0.0; 3 * n * n];
    for row in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64, row as f64);
            let noise = rng.gen_range(-config.noise..=config.noise);
            let rgb = objects
                .iter()
                .find(|o| o.contains(x, y))
                .map_or([base[0] + noise, base[1] + noise, base[2] + noise], |o| o.rgb);
            for k in 0..3 {
                image[k * n * n + row * n + col] = quantize(rgb[k]);
            }
        }
    }

    let target = &objects[0];
    let color = &config.colors[target_cat / config.shapes.len()].name;
    let shape = config.shapes[target_cat % config.shapes.len()];
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let sample = Sample {
        id: format!("{seed:016x}"),
        image: Tensor::new(&[3, n, n], image)?,
        prompt: format!("{template} {color} {}", shape.word()),
        category: target.category.clone(),
        grasps: target.grasps.clone(),
        split: if seen.contains(&target.category) {
            Split::Seen
        } else {
            Split::Unseen
        },
    };
    Ok((sample, objects))
}

pub fn generate_scene(seed: u64, config: &DataConfig) -> Result<Sample> {
    Ok(generate_scene_layout(seed, config)?.0)
}

/// `n` scenes with ids `000000`, `000001`, ….
pub fn generate_dataset(n: usize, seed: u64, config: &DataConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = generate_scene(sample_seed(seed, i as u64), config)?;
            s.id = format!("{i:06}");
            Ok(s)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    id: String,
    image: String,
    prompt: String,
    category: String,
    split: Split,
    grasps: Vec<GraspRect>,
}

fn image_to_rgb(image: &Tensor) -> Result<image::RgbImage> {
    if image.ndim() != 3 || image.dim(0) != 3 {
        return Err(Error::shape(format!("expected a [3, H, W] image, got {:?}", image.shape())));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let d = image.data();
    Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb(std::array::from_fn(|k| {
            (d[k * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    }))
}

pub fn save_png(image: &Tensor, path: &Path) -> Result<()> {
    image_to_rgb(image)?.save(path)?;
    Ok(())
}

/// Reads an 8-bit image as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for k in 0..3 {
            data[k * h * w + y as usize * w + x as usize] = p.0[k] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn save_dataset(samples: &[Sample], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    samples
        .par_iter()
        .try_for_each(|s| save_png(&s.image, &images.join(format!("{}.png", s.id))))?;
    let index = dir.join("index.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&index).map_err(|e| Error::io(&index, e))?);
    for s in samples {
        let entry = IndexEntry {
            id: s.id.clone(),
            image: format!("images/{}.png", s.id),
            prompt: s.prompt.clone(),
            category: s.category.clone(),
            split: s.split,
            grasps: s.grasps.clone(),
        };
        serde_json::to_writer(&mut f, &entry)?;
        writeln!(f).map_err(|e| Error::io(&index, e))?;
    }
    f.flush().map_err(|e| Error::io(&index, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let index = dir.join("index.jsonl");
    let f = std::fs::File::open(&index).map_err(|e| Error::io(&index, e))?;
    let mut entries = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: index.clone(),
            line: i + 1,
            msg,
        };
        let e: IndexEntry = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if e.grasps.is_empty() {
            return Err(err(format!("sample {:?} has no grasps", e.id)));
        }
        if !ids.insert(e.id.clone()) {
            return Err(err(format!("duplicate id {:?}", e.id)));
        }
        entries.push(e);
    }
    entries
        .into_par_iter()
        .map(|e| {
            Ok(Sample {
                image: load_png(&dir.join(&e.image))?,
                id: e.id,
                prompt: e.prompt,
                category: e.category,
                grasps: e.grasps,
                split: e.split,
            })
        })
        .collect()
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        })
    }
}
