//! Linear time-invariant state-space layer with a diagonal state matrix.
//!
//! Every model channel `d` carries an independent `N`-state system
//! `h' = A h + B x`, `y = C h`. Zero-order-hold discretization turns it into
//! `h_t = Ā h_{t−1} + B̄ x_t`, whose impulse response
//! `K̄ = (C B̄, C Ā B̄, …, C Ā^{L−1} B̄)` lets the same map be evaluated as a
//! causal convolution. Both evaluation routes are differentiable.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Below this `|Δa|` the input matrix uses a three-term series.
pub const SERIES_THRESHOLD: f64 = 1e-8;

/// Continuous parameters, all `[D, N]` except `log_delta: [D]`.
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub a_diag: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub log_delta: Tensor,
}

#[derive(Debug, Clone)]
pub struct DiscreteSsm {
    pub a_bar: Tensor,
    pub b_bar: Tensor,
}

impl SsmParams {
    pub fn new(a_diag: Tensor, b: Tensor, c: Tensor, log_delta: Tensor) -> Result<Self> {
        a_diag.expect_ndim(2, "a_diag")?;
        let (d, n) = (a_diag.dim(0), a_diag.dim(1));
        if n == 0 || d == 0 {
            return Err(Error::shape("state-space layer needs D >= 1 and N >= 1"));
        }
        if b.shape() != [d, n] || c.shape() != [d, n] || log_delta.shape() != [d] {
            return Err(Error::shape(format!(
                "ssm params: a {:?}, b {:?}, c {:?}, log_delta {:?}",
                a_diag.shape(),
                b.shape(),
                c.shape(),
                log_delta.shape()
            )));
        }
        Ok(SsmParams {
            a_diag,
            b,
            c,
            log_delta,
        })
    }

    pub fn channels(&self) -> usize {
        self.a_diag.dim(0)
    }

    pub fn state_dim(&self) -> usize {
        self.a_diag.dim(1)
    }
}

impl DiscreteSsm {
    pub fn channels(&self) -> usize {
        self.a_bar.dim(0)
    }

    pub fn state_dim(&self) -> usize {
        self.a_bar.dim(1)
    }

    fn check_projection(&self, c: &Tensor) -> Result<()> {
        if self.a_bar.shape() != self.b_bar.shape() || c.shape() != self.a_bar.shape() {
            return Err(Error::shape(format!(
                "a_bar {:?}, b_bar {:?}, c {:?}",
                self.a_bar.shape(),
                self.b_bar.shape(),
                c.shape()
            )));
        }
        Ok(())
    }
}

/// `(e^z − 1)/z` and its derivative.
fn phi(z: f64) -> (f64, f64) {
    let value = if z.abs() < SERIES_THRESHOLD {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    };
    let slope = if z.abs() < 1e-3 {
        0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0
    } else {
        (z * z.exp() - z.exp_m1()) / (z * z)
    };
    (value, slope)
}

/// Zero-order hold: `Ā = exp(ΔA)`, `B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB`, per
/// diagonal entry, with `Δ = exp(log_delta)`.
pub fn discretize(p: &SsmParams) -> Result<DiscreteSsm> {
    let (d, n) = (p.channels(), p.state_dim());
    let all_finite = p.a_diag.all_finite() && p.b.all_finite() && p.log_delta.all_finite();
    let deltas: Vec<f64> = p.log_delta.data().iter().map(|v| v.exp()).collect();
    if !all_finite || deltas.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numeric("non-finite state-space parameters".into()));
    }
    let a = p.a_diag.data();
    let b = p.b.data();
    let mut a_bar = vec![0.0; d * n];
    let mut b_bar = vec![0.0; d * n];
    for ch in 0..d {
        for s in 0..n {
            let i = ch * n + s;
            let z = deltas[ch] * a[i];
            a_bar[i] = z.exp();
            b_bar[i] = phi(z).0 * deltas[ch] * b[i];
        }
    }
    if a_bar.iter().chain(&b_bar).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("discretization overflowed".into()));
    }

    let a_bar = Tensor::from_op(
        "zoh_a",
        vec![d, n],
        a_bar,
        vec![p.a_diag.clone(), p.log_delta.clone()],
        move |ctx| {
            let a = ctx.inputs[0].data();
            let ld = ctx.inputs[1].data();
            let mut ga = vec![0.0; d * n];
            let mut gl = vec![0.0; d];
            for ch in 0..d {
                let delta = ld[ch].exp();
                for s in 0..n {
                    let i = ch * n + s;
                    let g = ctx.grad[i] * ctx.out[i];
                    ga[i] = g * delta;
                    gl[ch] += g * delta * a[i];
                }
            }
            vec![ctx.needs(0).then_some(ga), ctx.needs(1).then_some(gl)]
        },
    );

    let b_bar = Tensor::from_op(
        "zoh_b",
        vec![d, n],
        b_bar,
        vec![p.a_diag.clone(), p.b.clone(), p.log_delta.clone()],
        move |ctx| {
            let a = ctx.inputs[0].data();
            let b = ctx.inputs[1].data();
            let ld = ctx.inputs[2].data();
            let mut ga = vec![0.0; d * n];
            let mut gb = vec![0.0; d * n];
            let mut gl = vec![0.0; d];
            for ch in 0..d {
                let delta = ld[ch].exp();
                for s in 0..n {
                    let i = ch * n + s;
                    let z = delta * a[i];
                    let (ph, dph) = phi(z);
                    let g = ctx.grad[i];
                    gb[i] = g * ph * delta;
                    ga[i] = g * dph * delta * delta * b[i];
                    // d/d(log Δ) of φ(Δa)·Δ·b = b·Δ·(φ'(z)·z + φ(z))
                    gl[ch] += g * b[i] * delta * (dph * z + ph);
                }
            }
            vec![
                ctx.needs(0).then_some(ga),
                ctx.needs(1).then_some(gb),
                ctx.needs(2).then_some(gl),
            ]
        },
    );
    Ok(DiscreteSsm { a_bar, b_bar })
}

/// Plain-slice kernels shared by the differentiable ops and the benchmark.
pub mod raw {
    /// Sequential recurrence over `x: [batch, L, D]`. When `states` is given
    /// it receives every `h_t`, laid out `[batch, L, D, N]`.
    #[allow(clippy::too_many_arguments)]
    pub fn scan(
        x: &[f64],
        batch: usize,
        len: usize,
        d: usize,
        n: usize,
        a_bar: &[f64],
        b_bar: &[f64],
        c: &[f64],
        h0: Option<&[f64]>,
        mut states: Option<&mut Vec<f64>>,
    ) -> Vec<f64> {
        let mut y = vec![0.0; batch * len * d];
        let mut h = vec![0.0; d * n];
        if let Some(s) = states.as_deref_mut() {
            s.clear();
            s.reserve(batch * len * d * n);
        }
        for b in 0..batch {
            match h0 {
                Some(h0) => h.copy_from_slice(h0),
                None => h.fill(0.0),
            }
            for t in 0..len {
                let row = (b * len + t) * d;
                for ch in 0..d {
                    let xv = x[row + ch];
                    let base = ch * n;
                    let mut acc = 0.0;
                    for s in 0..n {
                        let hv = a_bar[base + s] * h[base + s] + b_bar[base + s] * xv;
                        h[base + s] = hv;
                        acc += c[base + s] * hv;
                    }
                    y[row + ch] = acc;
                }
                if let Some(s) = states.as_deref_mut() {
                    s.extend_from_slice(&h);
                }
            }
        }
        y
    }

    /// `K[d, j] = Σ_n c·ā^j·b̄`, iterated without explicit powers.
    pub fn kernel(d: usize, n: usize, len: usize, a_bar: &[f64], b_bar: &[f64], c: &[f64]) -> Vec<f64> {
        let mut k = vec![0.0; d * len];
        let mut p = vec![0.0; n];
        for ch in 0..d {
            let base = ch * n;
            p.copy_from_slice(&b_bar[base..base + n]);
            for j in 0..len {
                let mut acc = 0.0;
                for s in 0..n {
                    acc += c[base + s] * p[s];
                    p[s] *= a_bar[base + s];
                }
                k[ch * len + j] = acc;
            }
        }
        k
    }

    /// Direct causal convolution `y_t = Σ_{j≤t} K_j x_{t−j}` per channel.
    pub fn causal_conv(x: &[f64], batch: usize, len: usize, d: usize, k: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; batch * len * d];
        for b in 0..batch {
            let off = b * len * d;
            for t in 0..len {
                for ch in 0..d {
                    let kr = &k[ch * len..(ch + 1) * len];
                    let mut acc = 0.0;
                    for j in 0..=t {
                        acc += kr[j] * x[off + (t - j) * d + ch];
                    }
                    y[off + t * d + ch] = acc;
                }
            }
        }
        y
    }
}

/// Splits `[..., L, D]` into (batch, L, D).
fn seq_dims(x: &Tensor, d: usize) -> Result<(usize, usize)> {
    if x.ndim() < 2 || x.shape()[x.ndim() - 1] != d {
        return Err(Error::shape(format!(
            "sequence input {:?} does not end in {d} channels",
            x.shape()
        )));
    }
    let len = x.shape()[x.ndim() - 2];
    if len == 0 {
        return Err(Error::arg("sequence length must be >= 1"));
    }
    Ok((x.numel() / (len * d), len))
}

/// Recurrent evaluation `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = C h_t` over
/// `x: [..., L, D]`. `h0: [D, N]` defaults to zeros.
pub fn scan(disc: &DiscreteSsm, c: &Tensor, x: &Tensor, h0: Option<&Tensor>) -> Result<Tensor> {
    disc.check_projection(c)?;
    let (d, n) = (disc.channels(), disc.state_dim());
    let (batch, len) = seq_dims(x, d)?;
    if let Some(h) = h0 {
        if h.shape() != [d, n] {
            return Err(Error::shape(format!("h0 {:?}, expected [{d}, {n}]", h.shape())));
        }
    }
    let mut states = Vec::new();
    let y = raw::scan(
        x.data(),
        batch,
        len,
        d,
        n,
        disc.a_bar.data(),
        disc.b_bar.data(),
        c.data(),
        h0.map(Tensor::data),
        Some(&mut states),
    );
    let mut inputs = vec![x.clone(), disc.a_bar.clone(), disc.b_bar.clone(), c.clone()];
    if let Some(h) = h0 {
        inputs.push(h.clone());
    }
    Ok(Tensor::from_op("ssm_scan", x.shape().to_vec(), y, inputs, move |ctx| {
        let x = ctx.inputs[0].data();
        let a = ctx.inputs[1].data();
        let bb = ctx.inputs[2].data();
        let c = ctx.inputs[3].data();
        let h0 = ctx.inputs.get(4).map(Tensor::data);
        let dn = d * n;
        let mut gx = vec![0.0; batch * len * d];
        let mut ga = vec![0.0; dn];
        let mut gb = vec![0.0; dn];
        let mut gc = vec![0.0; dn];
        let mut gh0 = vec![0.0; dn];
        let mut gh = vec![0.0; dn];
        let zeros = vec![0.0; dn];
        for b in 0..batch {
            gh.fill(0.0);
            for t in (0..len).rev() {
                let row = (b * len + t) * d;
                let h_t = &states[(b * len + t) * dn..(b * len + t + 1) * dn];
                let h_prev = if t > 0 {
                    &states[(b * len + t - 1) * dn..(b * len + t) * dn]
                } else {
                    h0.unwrap_or(&zeros)
                };
                for ch in 0..d {
                    let gy = ctx.grad[row + ch];
                    let xv = x[row + ch];
                    let mut gxv = 0.0;
                    for s in 0..n {
                        let i = ch * n + s;
                        // gh currently holds Ā ⊙ gh_{t+1}
                        let g = gh[i] + c[i] * gy;
                        gc[i] += gy * h_t[i];
                        gb[i] += g * xv;
                        ga[i] += g * h_prev[i];
                        gxv += g * bb[i];
                        gh[i] = a[i] * g;
                    }
                    gx[row + ch] = gxv;
                }
            }
            gh0.iter_mut().zip(&gh).for_each(|(o, g)| *o += g);
        }
        let mut grads = vec![
            ctx.needs(0).then_some(gx),
            ctx.needs(1).then_some(ga),
            ctx.needs(2).then_some(gb),
            ctx.needs(3).then_some(gc),
        ];
        if ctx.inputs.len() == 5 {
            grads.push(ctx.needs(4).then_some(gh0));
        }
        grads
    }))
}

/// Impulse response `[D, L]` of the discrete system.
pub fn ssm_kernel(disc: &DiscreteSsm, c: &Tensor, len: usize) -> Result<Tensor> {
    disc.check_projection(c)?;
    if len == 0 {
        return Err(Error::arg("kernel length must be >= 1"));
    }
    let (d, n) = (disc.channels(), disc.state_dim());
    let k = raw::kernel(d, n, len, disc.a_bar.data(), disc.b_bar.data(), c.data());
    let inputs = vec![disc.a_bar.clone(), disc.b_bar.clone(), c.clone()];
    Ok(Tensor::from_op("ssm_kernel", vec![d, len], k, inputs, move |ctx| {
        let a = ctx.inputs[0].data();
        let bb = ctx.inputs[1].data();
        let c = ctx.inputs[2].data();
        let mut ga = vec![0.0; d * n];
        let mut gb = vec![0.0; d * n];
        let mut gc = vec![0.0; d * n];
        for ch in 0..d {
            for s in 0..n {
                let i = ch * n + s;
                // pow = ā^j, dpow = j·ā^{j−1}
                let (mut pow, mut dpow) = (1.0, 0.0);
                for j in 0..len {
                    let g = ctx.grad[ch * len + j];
                    gc[i] += g * pow * bb[i];
                    gb[i] += g * c[i] * pow;
                    ga[i] += g * c[i] * bb[i] * dpow;
                    dpow = dpow * a[i] + pow;
                    pow *= a[i];
                }
            }
        }
        vec![
            ctx.needs(0).then_some(ga),
            ctx.needs(1).then_some(gb),
            ctx.needs(2).then_some(gc),
        ]
    }))
}

/// Causal convolution of `x: [..., L, D]` with per-channel kernels `k: [D, L]`.
pub fn conv_apply(x: &Tensor, k: &Tensor) -> Result<Tensor> {
    k.expect_ndim(2, "ssm kernel")?;
    let (d, klen) = (k.dim(0), k.dim(1));
    let (batch, len) = seq_dims(x, d)?;
    if klen != len {
        return Err(Error::shape(format!(
            "kernel length {klen} differs from sequence length {len}"
        )));
    }
    let y = raw::causal_conv(x.data(), batch, len, d, k.data());
    Ok(Tensor::from_op(
        "ssm_conv",
        x.shape().to_vec(),
        y,
        vec![x.clone(), k.clone()],
        move |ctx| {
            let x = ctx.inputs[0].data();
            let k = ctx.inputs[1].data();
            let mut gx = vec![0.0; batch * len * d];
            let mut gk = vec![0.0; d * len];
            for b in 0..batch {
                let off = b * len * d;
                for t in 0..len {
                    for ch in 0..d {
                        let g = ctx.grad[off + t * d + ch];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..=t {
                            gx[off + (t - j) * d + ch] += g * k[ch * len + j];
                            gk[ch * len + j] += g * x[off + (t - j) * d + ch];
                        }
                    }
                }
            }
            vec![ctx.needs(0).then_some(gx), ctx.needs(1).then_some(gk)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_disc(a_bar: f64, b_bar: f64) -> DiscreteSsm {
        DiscreteSsm {
            a_bar: Tensor::new(&[1, 1], vec![a_bar]).unwrap(),
            b_bar: Tensor::new(&[1, 1], vec![b_bar]).unwrap(),
        }
    }

    fn params(a: f64, b: f64, delta: f64) -> SsmParams {
        SsmParams::new(
            Tensor::new(&[1, 1], vec![a]).unwrap(),
            Tensor::new(&[1, 1], vec![b]).unwrap(),
            Tensor::new(&[1, 1], vec![1.0]).unwrap(),
            Tensor::new(&[1], vec![delta.ln()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_a_uses_series_limit() {
        let d = discretize(&params(0.0, 1.0, 0.1)).unwrap();
        assert_eq!(d.a_bar.item(), 1.0);
        assert!((d.b_bar.item() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn discretize_closed_form() {
        let d = discretize(&params(-1.0, 1.0, 0.1)).unwrap();
        assert!((d.a_bar.item() - 0.904837418).abs() < 1e-9);
        assert!((d.b_bar.item() - 0.095162582).abs() < 1e-9);
        let d = discretize(&params(-2.0, 1.0, 0.5)).unwrap();
        assert!((d.a_bar.item() - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn discretize_rejects_non_finite() {
        let p = params(f64::NAN, 1.0, 0.1);
        assert!(matches!(discretize(&p), Err(Error::Numeric(_))));
    }

    #[test]
    fn scan_unrolled() {
        let disc = scalar_disc(0.5, 1.0);
        let c = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let x = Tensor::new(&[3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(scan(&disc, &c, &x, None).unwrap().data(), &[1.0, 1.5, 1.75]);
    }

    #[test]
    fn scan_single_step_with_state() {
        let disc = scalar_disc(0.5, 2.0);
        let c = Tensor::new(&[1, 1], vec![3.0]).unwrap();
        let x = Tensor::new(&[1, 1], vec![0.7]).unwrap();
        let h0 = Tensor::new(&[1, 1], vec![-1.5]).unwrap();
        let y = scan(&disc, &c, &x, Some(&h0)).unwrap().item();
        assert!((y - (3.0 * 2.0 * 0.7 + 3.0 * 0.5 * -1.5)).abs() < 1e-15);
    }

    #[test]
    fn scan_errors() {
        let disc = scalar_disc(0.5, 1.0);
        let c = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let empty = Tensor::new(&[0, 1], vec![]).unwrap();
        assert!(matches!(scan(&disc, &c, &empty, None), Err(Error::Argument(_))));
        let wide = Tensor::zeros(&[3, 2]);
        assert!(matches!(scan(&disc, &c, &wide, None), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_expansion_and_conv() {
        let disc = scalar_disc(0.5, 1.0);
        let c = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let k = ssm_kernel(&disc, &c, 3).unwrap();
        assert_eq!(k.data(), &[1.0, 0.5, 0.25]);
        let x = Tensor::new(&[3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(conv_apply(&x, &k).unwrap().data(), &[1.0, 1.5, 1.75]);
        assert!(ssm_kernel(&disc, &c, 0).is_err());
        let short = Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(conv_apply(&x, &short), Err(Error::Shape(_))));
    }

    #[test]
    fn identity_kernel_and_impulse() {
        let x = Tensor::new(&[4, 1], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let ident = Tensor::new(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(conv_apply(&x, &ident).unwrap().data(), x.data());
        let impulse = Tensor::new(&[4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let k = Tensor::new(&[1, 4], vec![0.9, 0.4, -0.2, 0.1]).unwrap();
        assert_eq!(conv_apply(&impulse, &k).unwrap().data(), k.data());
    }

    #[test]
    fn zero_projection_gives_zero_kernel() {
        let disc = scalar_disc(0.9, 0.3);
        let c = Tensor::zeros(&[1, 1]);
        assert!(ssm_kernel(&disc, &c, 5).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
