//! Rotated-rectangle geometry and the grasp success protocol.
//!
//! A prediction succeeds when some ground-truth rectangle overlaps it with
//! IoU strictly above 0.25 and their orientations differ by strictly less
//! than 30°, both measured on the top-1 prediction. Seen and unseen category
//! rates are summarized by their harmonic mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, Split};
use crate::error::{Error, Result};
use crate::head::GraspRect;

pub type Point = [f64; 2];

pub const IOU_THRESHOLD: f64 = 0.25;
pub const ANGLE_THRESHOLD_DEG: f64 = 30.0;

/// Corners in counter-clockwise order (positive shoelace area with x right,
/// y up): side `w` along `(cos θ, sin θ)`, side `h` perpendicular.
pub fn rect_corners(g: &GraspRect) -> Result<[Point; 4]> {
    if !(g.w > 0.0 && g.h > 0.0) {
        return Err(Error::arg(format!("rectangle sides must be positive: {g:?}")));
    }
    let (s, c) = g.theta.sin_cos();
    let (ux, uy) = (0.5 * g.w * c, 0.5 * g.w * s);
    let (vx, vy) = (-0.5 * g.h * s, 0.5 * g.h * c);
    Ok([
        [g.x - ux - vx, g.y - uy - vy],
        [g.x + ux - vx, g.y + uy - vy],
        [g.x + ux + vx, g.y + uy + vy],
        [g.x - ux + vx, g.y - uy + vy],
    ])
}

/// Signed shoelace area.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
}

fn side(a: Point, b: Point, p: Point) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Sutherland–Hodgman: clips `subject` to the inside of the counter-clockwise
/// convex polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.len() < 3 {
            return Vec::new();
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (s, e) = (input[j], input[(j + 1) % input.len()]);
            let (ds, de) = (side(a, b, s), side(a, b, e));
            if (ds >= 0.0) != (de >= 0.0) {
                let t = ds / (ds - de);
                out.push([s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]);
            }
            if de >= 0.0 {
                out.push(e);
            }
        }
    }
    if out.len() < 3 {
        Vec::new()
    } else {
        out
    }
}

/// Intersection over union of two oriented rectangles, in [0, 1].
pub fn rotated_iou(a: &GraspRect, b: &GraspRect) -> f64 {
    let (Ok(pa), Ok(pb)) = (rect_corners(a), rect_corners(b)) else {
        return 0.0;
    };
    let inter = polygon_area(&clip_convex(&pa, &pb)).abs();
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest angle between two undirected orientations, in degrees [0, 90].
pub fn angle_offset_deg(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).to_degrees().abs() % 180.0;
    d.min(180.0 - d)
}

/// The success predicate on precomputed IoU and angle offset.
pub fn success_rule(iou: f64, offset_deg: f64) -> bool {
    iou > IOU_THRESHOLD && offset_deg < ANGLE_THRESHOLD_DEG
}

pub fn is_success(pred: &GraspRect, gts: &[GraspRect]) -> Result<bool> {
    if gts.is_empty() {
        return Err(Error::arg("success needs at least one ground-truth grasp"));
    }
    Ok(gts
        .iter()
        .any(|g| success_rule(rotated_iou(pred, g), angle_offset_deg(pred.theta, g.theta))))
}

/// `2su/(s+u)`, zero when both rates are zero.
pub fn harmonic_mean(seen: f64, unseen: f64) -> Result<f64> {
    for r in [seen, unseen] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::arg(format!("rate {r} outside [0, 1]")));
        }
    }
    if seen + unseen == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * seen * unseen / (seen + unseen))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "seen")]
    pub seen_rate: f64,
    #[serde(rename = "unseen")]
    pub unseen_rate: f64,
    pub h: f64,
    pub n_seen: usize,
    pub n_unseen: usize,
}

/// Anything that proposes a single best grasp for a sample.
pub trait GraspPredictor {
    fn predict(&self, sample: &Sample) -> Result<Option<GraspRect>>;
}

impl<F> GraspPredictor for F
where
    F: Fn(&Sample) -> Result<Option<GraspRect>>,
{
    fn predict(&self, sample: &Sample) -> Result<Option<GraspRect>> {
        self(sample)
    }
}

/// Top-1 success flags, one per sample, in input order.
pub fn success_flags<P>(predictor: &P, samples: &[Sample]) -> Result<Vec<bool>>
where
    P: GraspPredictor + Sync,
{
    samples
        .par_iter()
        .map(|s| match predictor.predict(s)? {
            Some(g) => is_success(&g, &s.grasps),
            None => Ok(false),
        })
        .collect()
}

/// Success rate over the samples of one split.
pub fn split_success_rate<P>(predictor: &P, samples: &[Sample], split: Split) -> Result<(f64, usize)>
where
    P: GraspPredictor + Sync,
{
    let subset: Vec<Sample> = samples.iter().filter(|s| s.split == split).cloned().collect();
    if subset.is_empty() {
        return Err(Error::arg(format!("no {split:?} samples to evaluate")));
    }
    let hits = success_flags(predictor, &subset)?.into_iter().filter(|&b| b).count();
    Ok((hits as f64 / subset.len() as f64, subset.len()))
}

/// Seen and unseen success rates and their harmonic mean.
pub fn evaluate<P>(predictor: &P, samples: &[Sample]) -> Result<EvalReport>
where
    P: GraspPredictor + Sync,
{
    let (seen_rate, n_seen) = split_success_rate(predictor, samples, Split::Seen)?;
    let (unseen_rate, n_unseen) = split_success_rate(predictor, samples, Split::Unseen)?;
    Ok(EvalReport {
        seen_rate,
        unseen_rate,
        h: harmonic_mean(seen_rate, unseen_rate)?,
        n_seen,
        n_unseen,
    })
}
