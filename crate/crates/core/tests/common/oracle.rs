//! Slow, direct reference implementations.

use graspmamba::head::GraspRect;

pub type Matrix = Vec<Vec<f64>>;

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Dense matrix exponential: scaling and squaring around a Taylor series.
pub fn expm(m: &Matrix) -> Matrix {
    let n = m.len();
    let norm = m
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let s = 0.5f64.powi(squarings);
    let a: Matrix = m.iter().map(|r| r.iter().map(|v| v * s).collect()).collect();
    let mut result: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut term = result.clone();
    for k in 1..=24 {
        term = matmul(&term, &a);
        term.iter_mut().flatten().for_each(|v| *v /= k as f64);
        for (r, t) in result.iter_mut().zip(&term) {
            r.iter_mut().zip(t).for_each(|(x, y)| *x += y);
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result
}

/// Zero-order hold of one channel through the block exponential
/// `exp([[ΔA, ΔB], [0, 0]]) = [[Ā, B̄], [0, 1]]` with dense `A = diag(a)`.
pub fn zoh_dense(a: &[f64], b: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut m = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        m[i][i] = delta * a[i];
        m[i][n] = delta * b[i];
    }
    let e = expm(&m);
    ((0..n).map(|i| e[i][i]).collect(), (0..n).map(|i| e[i][n]).collect())
}

/// Six nested loops over `x: [B, Cin, H, W]`, `w: [Cout, Cin, K, K]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    x: &[f64],
    [b, cin, h, w]: [usize; 4],
    wt: &[f64],
    [cout, k]: [usize; 2],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; b * cout * ho * wo];
    for n in 0..b {
        for o in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += wt[((o * cin + c) * k + ky) * k + kx]
                                    * x[((n * cin + c) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[((n * cout + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [b, cout, ho, wo])
}

/// Bilinear sample of a single `[H, W]` plane at output pixel `(oy, ox)`
/// of an integer upscale with half-pixel centers and clamped borders.
pub fn upsample_at(src: &[f64], h: usize, w: usize, scale: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, n: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let (y0, y1, fy) = coord(oy, h);
    let (x0, x1, fx) = coord(ox, w);
    let at = |y: usize, x: usize| src[y * w + x];
    let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
    let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
    top + fy * (bottom - top)
}

fn inside(r: &GraspRect, px: f64, py: f64) -> bool {
    let (dx, dy) = (px - r.x, py - r.y);
    let (s, c) = r.theta.sin_cos();
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    u.abs() <= r.w / 2.0 && v.abs() <= r.h / 2.0
}

/// IoU by counting `res × res` cell centers over the joint bounding box.
pub fn raster_iou(a: &GraspRect, b: &GraspRect, res: usize) -> f64 {
    let reach = |r: &GraspRect| 0.5 * r.w.hypot(r.h);
    let x0 = (a.x - reach(a)).min(b.x - reach(b));
    let x1 = (a.x + reach(a)).max(b.x + reach(b));
    let y0 = (a.y - reach(a)).min(b.y - reach(b));
    let y1 = (a.y + reach(a)).max(b.y + reach(b));
    let (sx, sy) = ((x1 - x0) / res as f64, (y1 - y0) / res as f64);
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..res {
        let py = y0 + (i as f64 + 0.5) * sy;
        for j in 0..res {
            let px = x0 + (j as f64 + 0.5) * sx;
            let (ia, ib) = (inside(a, px, py), inside(b, px, py));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
