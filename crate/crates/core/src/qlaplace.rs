//! Jacobi theta function, the discrete q-Laplace transform along a log-spiral
//! `λq^ℤ`, and the spiral domain `T_{λ,q,δ,r0}`.
//!
//! The kernel `1/Θ(q^m λ/t)` is never formed by summing `Θ` at huge or tiny
//! arguments. Instead `y = λ/t` is reduced to the annulus
//! `|q|^{-1/2} ≤ |y0| < |q|^{1/2}` and the functional equation
//! `Θ(q^k y0) = q^{k(k+1)/2} y0^k Θ(y0)` is applied in log form.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{upper_affine_envelope, AffineFit};
use crate::series::qpow;

/// Hard cap on the number of theta-series terms per side.
const THETA_MAX_TERMS: i64 = 4096;

/// The base `q` of the dilation, with `|q| > 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QParameter {
    pub modulus: f64,
    pub b: Option<u32>,
    pub explicit_angle: Option<f64>,
    pub r2: u32,
}

impl QParameter {
    pub fn new(modulus: f64, b: Option<u32>, explicit_angle: Option<f64>, r2: u32) -> Result<Self> {
        if !(modulus.is_finite() && modulus > 1.0) {
            return Err(Error::Invalid(format!("q.modulus must be > 1, got {modulus}")));
        }
        if r2 == 0 {
            return Err(Error::Invalid("r2 must be >= 1".into()));
        }
        if b == Some(0) {
            return Err(Error::Invalid("q.b must be >= 1".into()));
        }
        if b.is_some() && explicit_angle.is_some() {
            return Err(Error::Invalid("give either q.b or q.angle, not both".into()));
        }
        if let Some(a) = explicit_angle {
            if !a.is_finite() {
                return Err(Error::Invalid("q.angle must be finite".into()));
            }
        }
        Ok(Self { modulus, b, explicit_angle, r2 })
    }

    /// Positive real `q`.
    pub fn real(modulus: f64) -> Result<Self> {
        Self::new(modulus, Some(1), None, 1)
    }

    /// Argument of `q`; with `b` given this is `2π/(b·r2)` reduced to `(-π, π]`.
    pub fn angle(&self) -> f64 {
        use std::f64::consts::PI;
        match (self.b, self.explicit_angle) {
            (Some(b), _) => match b * self.r2 {
                1 => 0.0,
                2 => PI,
                n => 2.0 * PI / n as f64,
            },
            (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    }

    pub fn value(&self) -> Complex64 {
        let a = self.angle();
        if a == 0.0 {
            Complex64::new(self.modulus, 0.0)
        } else if a == std::f64::consts::PI {
            Complex64::new(-self.modulus, 0.0)
        } else {
            Complex64::from_polar(self.modulus, a)
        }
    }

    /// A logarithm of `q` consistent with [`QParameter::value`].
    pub fn ln(&self) -> Complex64 {
        Complex64::new(self.modulus.ln(), self.angle())
    }
}

/// The direction `λ`, the spiral margin `δ`, the radius `r0` and a finite
/// sample of the open set `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lambda: Complex64,
    pub delta: f64,
    pub r0: f64,
    pub v_sample: Vec<Complex64>,
    pub epsilon_sector: f64,
    /// Minimum half-width of the `k` window in the spiral infimum; the window
    /// is widened automatically until the tails are provably harmless.
    pub k_window: i64,
}

impl DomainSpec {
    pub fn new(lambda: Complex64, delta: f64, r0: f64, v_sample: Vec<Complex64>, epsilon_sector: f64) -> Result<Self> {
        if lambda.norm() == 0.0 || !lambda.norm().is_finite() {
            return Err(Error::Invalid("domain.lambda must be a finite nonzero number".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Invalid(format!("domain.delta must lie in (0, 1), got {delta}")));
        }
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(Error::Invalid(format!("domain.r0 must be positive, got {r0}")));
        }
        if v_sample.is_empty() {
            return Err(Error::Invalid("domain.V needs at least one point".into()));
        }
        if v_sample.iter().any(|v| v.norm() == 0.0 || !v.norm().is_finite()) {
            return Err(Error::Invalid("domain.V points must be finite and nonzero".into()));
        }
        if !point_in_convex_hull(lambda, &v_sample) {
            return Err(Error::Invalid("domain.lambda is not inside the convex hull of domain.V".into()));
        }
        if !(epsilon_sector > 0.0 && epsilon_sector.is_finite()) {
            return Err(Error::Invalid("domain.epsilon_sector must be positive".into()));
        }
        Ok(Self { lambda, delta, r0, v_sample, epsilon_sector, k_window: 8 })
    }

    /// Base points used for spiral grids: `V` with `λ` appended when absent.
    pub fn base_points(&self) -> Vec<Complex64> {
        let mut pts = self.v_sample.clone();
        if !pts.contains(&self.lambda) {
            pts.push(self.lambda);
        }
        pts
    }
}

fn cross(o: Complex64, a: Complex64, b: Complex64) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Membership in the closed convex hull of `pts`, with a relative slack of
/// `1e-12` for points on the boundary.
pub fn point_in_convex_hull(p: Complex64, pts: &[Complex64]) -> bool {
    let scale = pts.iter().fold(p.norm(), |m, z| m.max(z.norm())).max(1.0);
    let eps = 1e-12 * scale * scale;
    let mut v: Vec<Complex64> = pts.to_vec();
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v.dedup();
    if v.len() == 1 {
        return (p - v[0]).norm() <= 1e-12 * scale;
    }
    // Andrew's monotone chain
    let mut hull: Vec<Complex64> = Vec::with_capacity(2 * v.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Complex64>> =
            if pass == 0 { Box::new(v.iter()) } else { Box::new(v.iter().rev()) };
        for &z in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], z) <= 0.0 {
                hull.pop();
            }
            hull.push(z);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        // collinear sample: test for lying on the segment
        let (a, b) = (v[0], v[v.len() - 1]);
        let d = b - a;
        let t = ((p - a) * d.conj()).re / d.norm_sqr();
        return (-1e-12..=1.0 + 1e-12).contains(&t) && cross(a, b, p).abs() <= eps;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= -eps)
}


/// `Θ(x)` at `x ≠ 0` by the defining bilateral series.
pub fn theta_eval(x: Complex64, q: &QParameter, tail_tol: f64) -> Result<Complex64> {
    theta_series(x, q.value(), tail_tol)
}

/// Bilateral sum `Σ_n q^{-n(n-1)/2} x^n`. Each side stops once three
/// consecutive terms past the peak fall below `tail_tol` times the running sum.
pub fn theta_series(x: Complex64, q: Complex64, tail_tol: f64) -> Result<Complex64> {
    if x.norm() == 0.0 {
        return Err(Error::Domain("theta is undefined at x = 0".into()));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::Invalid("tail_tol must be positive".into()));
    }
    // past this index the term moduli decrease on both sides
    let peak = (x.norm().ln() / q.norm().ln()).abs().ceil() as i64 + 2;
    let qi = q.inv();
    let mut sum = Complex64::new(1.0, 0.0);
    // t_n = t_{n-1} x q^{-(n-1)}  and  t_{-n} = t_{-(n-1)} x^{-1} q^{-n}
    for (mult, first) in [(x, Complex64::new(1.0, 0.0)), (x.inv(), qi)] {
        let mut term = Complex64::new(1.0, 0.0);
        let mut qfac = first;
        let mut small = 0;
        let mut n = 0;
        loop {
            n += 1;
            term *= mult * qfac;
            qfac *= qi;
            sum += term;
            let tiny = term.norm() <= tail_tol * sum.norm().max(f64::MIN_POSITIVE);
            small = if tiny { small + 1 } else { 0 };
            if (small >= 3 && n > peak) || term.norm() == 0.0 {
                break;
            }
            if n >= THETA_MAX_TERMS {
                return Err(Error::TruncationWindow { lo: -n, hi: n, last_term: term.norm() });
            }
        }
    }
    Ok(sum)
}

/// `ln Σ_n |q|^{-n(n-1)/2} y^n` for real `y > 0`, by a log-sum-exp around the peak.
pub fn ln_theta_envelope(y: f64, q_mod: f64) -> f64 {
    let lq = q_mod.ln();
    let ly = y.ln();
    let exponent = |n: f64| -0.5 * n * (n - 1.0) * lq + n * ly;
    let center = (ly / lq + 0.5).round();
    let top = exponent(center);
    // terms below e^{-50} of the peak do not move the sum
    let reach = ((2.0 * 50.0 / lq).sqrt().ceil() as i64).max(4) + 2;
    let mut acc = 0.0;
    for d in -reach..=reach {
        acc += (exponent(center + d as f64) - top).exp();
    }
    top + acc.ln()
}

/// Envelope `δ Σ_n |q|^{-n(n-1)/2} |q^m λ/t|^n` bounding `|Θ(q^m λ/t)|/K₁`
/// from below on the spiral domain.
pub fn theta_lower_envelope(m: i64, lambda: Complex64, t: Complex64, q: &QParameter, delta: f64) -> Result<f64> {
    if t.norm() == 0.0 {
        return Err(Error::Domain("t = 0".into()));
    }
    let y = q.modulus.powf(m as f64) * lambda.norm() / t.norm();
    Ok(delta * ln_theta_envelope(y, q.modulus).exp())
}

/// Reduction `y = q^k y0` with `|q|^{-1/2} ≤ |y0| < |q|^{1/2}`.
fn reduce(y: Complex64, q: Complex64) -> (i64, Complex64) {
    let k = (y.norm().ln() / q.norm().ln()).round() as i64;
    (k, y * qpow(q, -k))
}

/// `ln Θ(q^j y0)` via the functional equation, for a reduced `y0`.
fn ln_theta_shifted(j: i64, y0: Complex64, ln_theta_y0: Complex64, ln_q: Complex64) -> Complex64 {
    let jj = j as f64;
    ln_q * (0.5 * jj * (jj + 1.0)) + y0.ln() * jj + ln_theta_y0
}

/// `ln |Θ(y)|` through the annulus reduction.
pub fn ln_abs_theta(y: Complex64, q: &QParameter, tail_tol: f64) -> Result<f64> {
    let (k, y0) = reduce(y, q.value());
    let th = theta_series(y0, q.value(), tail_tol)?;
    Ok(ln_theta_shifted(k, y0, th.ln(), q.ln()).re)
}

/// Empirical `K₁`: the minimum of `|Θ(q^m λ/t)| / envelope` over the given
/// `(m, t)` grid.
pub fn estimate_k1(lambda: Complex64, ts: &[Complex64], ms: &[i64], q: &QParameter, delta: f64, tail_tol: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for &t in ts {
        for &m in ms {
            let y = qpow(q.value(), m) * lambda / t;
            let ln_ratio = ln_abs_theta(y, q, tail_tol)? - ln_theta_envelope(y.norm(), q.modulus) - delta.ln();
            best = best.min(ln_ratio.exp());
        }
    }
    Ok(best)
}

/// Result of a domain membership test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCheck {
    pub inside: bool,
    /// `inf_k |1 + λ/(t q^k)|`, capped at its `k → +∞` limit 1.
    pub margin: f64,
}

/// `inf_{k ∈ ℤ} |1 + λ/(t q^k)|` capped at 1. Outside the enumerated window the
/// quotient `|λ/(t q^k)|` is either ≥ 3 (value ≥ 2) or ≤ `tail` (value within
/// `tail` of 1).
pub fn spiral_margin(t: Complex64, lambda: Complex64, q: Complex64, k_window: i64, tail: f64) -> Result<f64> {
    if t.norm() == 0.0 {
        return Err(Error::Domain("t = 0".into()));
    }
    let lq = q.norm().ln();
    let ratio0 = lambda.norm() / t.norm();
    let k_lo = ((ratio0 / 3.0).ln() / lq).floor() as i64;
    let k_hi = ((ratio0 / tail).ln() / lq).ceil() as i64;
    let mut margin = 1.0f64;
    for k in k_lo.min(-k_window)..=k_hi.max(k_window) {
        let v = (Complex64::new(1.0, 0.0) + lambda / (t * qpow(q, k))).norm();
        margin = margin.min(v);
    }
    Ok(margin)
}

/// Membership in `T_{λ,q,δ,r0}`: spiral margin above `δ` and `|t| < r0`.
pub fn in_spiral_domain(t: Complex64, d: &DomainSpec, q: &QParameter) -> Result<DomainCheck> {
    let margin = spiral_margin(t, d.lambda, q.value(), d.k_window, 1e-16)?;
    Ok(DomainCheck { inside: margin > d.delta && t.norm() < d.r0, margin })
}

/// Controls for the bilateral Laplace sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceOptions {
    pub tail_tol: f64,
    /// Largest `|m|` visited before giving up.
    pub max_window: i64,
    /// Minimum number of terms taken on each side.
    pub min_terms: i64,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self { tail_tol: 1e-17, max_window: 400, min_terms: 4 }
    }
}

impl LaplaceOptions {
    pub fn with_tol(tail_tol: f64) -> Self {
        Self { tail_tol, ..Self::default() }
    }
}

/// One component of a Laplace sum together with its absolute-value sum,
/// which bounds the cancellation error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceValue {
    pub value: Complex64,
    pub abs_sum: f64,
    pub window: (i64, i64),
}

/// Vector-valued `Σ_m φ(q^m λ) / Θ(q^m λ/t)` without a domain check.
///
/// `phi(m, τ, out)` writes `φ(τ)` at `τ = q^m λ` into `out` and returns
/// `false` when the value is unavailable at that index.
pub fn laplace_sum_many<F>(dim: usize, phi: F, t: Complex64, lambda: Complex64, q: &QParameter, opts: &LaplaceOptions) -> Result<Vec<LaplaceValue>>
where
    F: Fn(i64, Complex64, &mut [Complex64]) -> bool,
{
    laplace_sum_log(
        dim,
        |m, tau, ln_kernel, out| {
            if !phi(m, tau, out) {
                return false;
            }
            let kernel = ln_kernel.exp();
            for v in out.iter_mut() {
                if *v != Complex64::default() {
                    *v *= kernel;
                }
            }
            true
        },
        t,
        lambda,
        q,
        opts,
    )
}

/// Bilateral sum over `τ = q^m λ` where the caller forms each term itself.
///
/// `phi(m, τ, ln_kernel, out)` receives `ln_kernel = −ln Θ(τ/t)` and writes
/// the complete terms into `out`, so that large kernel exponents can be
/// combined with other logarithmic factors before exponentiation.
pub fn laplace_sum_log<F>(dim: usize, phi: F, t: Complex64, lambda: Complex64, q: &QParameter, opts: &LaplaceOptions) -> Result<Vec<LaplaceValue>>
where
    F: Fn(i64, Complex64, Complex64, &mut [Complex64]) -> bool,
{
    if t.norm() == 0.0 {
        return Err(Error::Domain("t = 0".into()));
    }
    let qv = q.value();
    let ln_q = q.ln();
    let (k, y0) = reduce(lambda / t, qv);
    let th0 = theta_series(y0, qv, 1e-18)?;
    if th0.norm() == 0.0 {
        return Err(Error::Domain("t lies on the zero spiral of the theta kernel".into()));
    }
    let ln_th0 = th0.ln();

    let mut sums = vec![Complex64::default(); dim];
    let mut abs = vec![0.0f64; dim];
    let mut peak = vec![0.0f64; dim];
    let mut buf = vec![Complex64::default(); dim];
    let mut window = (0i64, 0i64);

    let mut visit = |m: i64, sums: &mut [Complex64], abs: &mut [f64], peak: &mut [f64]| -> Result<bool> {
        let tau = qpow(qv, m) * lambda;
        let ln_kernel = -ln_theta_shifted(m + k, y0, ln_th0, ln_q);
        if !phi(m, tau, ln_kernel, &mut buf) {
            return Err(Error::TruncationWindow { lo: m.min(0), hi: m.max(0), last_term: f64::NAN });
        }
        let mut small = true;
        for c in 0..dim {
            let term = buf[c];
            sums[c] += term;
            abs[c] += term.norm();
            peak[c] = peak[c].max(term.norm());
            let scale = sums[c].norm().max(peak[c]);
            if term.norm() > opts.tail_tol * scale {
                small = false;
            }
        }
        Ok(small)
    };

    visit(0, &mut sums, &mut abs, &mut peak)?;
    for dir in [1i64, -1] {
        let mut run = 0;
        let mut step = 0;
        loop {
            step += 1;
            let m = dir * step;
            if step > opts.max_window {
                let last = peak.iter().cloned().fold(0.0, f64::max);
                return Err(Error::TruncationWindow { lo: -opts.max_window, hi: opts.max_window, last_term: last });
            }
            let small = visit(m, &mut sums, &mut abs, &mut peak)?;
            if dir > 0 {
                window.1 = m;
            } else {
                window.0 = m;
            }
            run = if small { run + 1 } else { 0 };
            if run >= 3 && step >= opts.min_terms {
                break;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(abs)
        .map(|(value, abs_sum)| LaplaceValue { value, abs_sum, window })
        .collect())
}

/// `L_q^λ(φ)(t) = Σ_m φ(q^m λ) / Θ(q^m λ/t)` for `t` in the spiral domain.
pub fn q_laplace_eval<F>(phi: F, t: Complex64, d: &DomainSpec, q: &QParameter, tail_tol: f64) -> Result<LaplaceValue>
where
    F: Fn(i64, Complex64) -> Option<Complex64>,
{
    let check = in_spiral_domain(t, d, q)?;
    if !check.inside {
        return Err(Error::Domain(format!(
            "t = {t} is outside the spiral domain (margin {:.3e}, delta {}, r0 {})",
            check.margin, d.delta, d.r0
        )));
    }
    q_laplace_unchecked(phi, t, d.lambda, q, &LaplaceOptions::with_tol(tail_tol))
}

/// Scalar Laplace sum without the domain test.
pub fn q_laplace_unchecked<F>(phi: F, t: Complex64, lambda: Complex64, q: &QParameter, opts: &LaplaceOptions) -> Result<LaplaceValue>
where
    F: Fn(i64, Complex64) -> Option<Complex64>,
{
    let out = laplace_sum_many(
        1,
        |m, tau, buf| match phi(m, tau) {
            Some(v) => {
                buf[0] = v;
                true
            }
            None => false,
        },
        t,
        lambda,
        q,
        opts,
    )?;
    Ok(out[0])
}

/// `|L(τφ)(t) − t·L(φ)(qt)| / max(1, |L(τφ)(t)|)`.
///
/// `t` must be in the domain; `qt` only needs the spiral margin, which is the
/// same as that of `t`.
pub fn shift_identity_check<F>(phi: F, t: Complex64, d: &DomainSpec, q: &QParameter, tail_tol: f64) -> Result<f64>
where
    F: Fn(i64, Complex64) -> Option<Complex64>,
{
    let lhs = q_laplace_eval(|m, tau| phi(m, tau).map(|v| tau * v), t, d, q, tail_tol)?;
    let qt = q.value() * t;
    let rhs = q_laplace_unchecked(&phi, qt, d.lambda, q, &LaplaceOptions::with_tol(tail_tol))?;
    Ok((lhs.value - t * rhs.value).norm() / lhs.value.norm().max(1.0))
}

/// Values `W_h(x q^l)` on the discrete spiral over the sample of `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralGrid {
    pub base_points: Vec<Complex64>,
    pub l_min: i64,
    pub l_max: i64,
    pub h_count: usize,
    values: Vec<Complex64>,
}

impl SpiralGrid {
    pub fn zeros(base_points: Vec<Complex64>, l_min: i64, l_max: i64, h_count: usize) -> Result<Self> {
        if l_max < l_min {
            return Err(Error::Invalid(format!("empty l range [{l_min}, {l_max}]")));
        }
        let n = base_points.len() * ((l_max - l_min + 1) as usize) * h_count;
        Ok(Self { base_points, l_min, l_max, h_count, values: vec![Complex64::default(); n] })
    }

    pub fn l_count(&self) -> usize {
        (self.l_max - self.l_min + 1) as usize
    }

    #[inline]
    fn idx(&self, x: usize, l: i64, h: usize) -> usize {
        (x * self.l_count() + (l - self.l_min) as usize) * self.h_count + h
    }

    pub fn contains_l(&self, l: i64) -> bool {
        (self.l_min..=self.l_max).contains(&l)
    }

    pub fn get(&self, x: usize, l: i64, h: usize) -> Complex64 {
        self.values[self.idx(x, l, h)]
    }

    pub fn set(&mut self, x: usize, l: i64, h: usize, v: Complex64) {
        let i = self.idx(x, l, h);
        self.values[i] = v;
    }

    /// All `h` values at one spiral point.
    pub fn point_values(&self, x: usize, l: i64) -> &[Complex64] {
        let i = self.idx(x, l, 0);
        &self.values[i..i + self.h_count]
    }

    pub fn point_values_mut(&mut self, x: usize, l: i64) -> &mut [Complex64] {
        let i = self.idx(x, l, 0);
        let h = self.h_count;
        &mut self.values[i..i + h]
    }

    /// `w_{l,h} = max_x |W_h(x q^l)|`.
    pub fn sup_abs(&self, l: i64, h: usize) -> f64 {
        (0..self.base_points.len()).map(|x| self.get(x, l, h).norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Fitted growth `sup_x |φ(x q^l)| ≤ K |q|^{l²/2} C^l` on a range of `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub ln_k: f64,
    pub c: f64,
    /// `T = 1/C`.
    pub t: f64,
    pub envelope: AffineFit,
}

/// Upper affine envelope of `ln w_l − (l²/2) ln|q|` in `l`. Zero samples are
/// skipped; `None` when fewer than two usable points remain.
pub fn fit_growth(ls: &[i64], w: &[f64], q_mod: f64) -> Result<Option<GrowthFit>> {
    let lq = q_mod.ln();
    let (xs, ys): (Vec<f64>, Vec<f64>) = ls
        .iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(l, w)| (*l as f64, w.ln() - 0.5 * (*l as f64).powi(2) * lq))
        .unzip();
    if xs.len() < 2 {
        return Ok(None);
    }
    let env = upper_affine_envelope(&xs, &ys)?;
    Ok(Some(GrowthFit { ln_k: env.intercept, c: env.slope.exp(), t: (-env.slope).exp(), envelope: env }))
}

/// Radius `|λ|·|q|^{1/2}·T/|q|` induced by a fitted growth constant.
pub fn induced_r0(lambda: Complex64, q_mod: f64, t: f64) -> f64 {
    lambda.norm() * q_mod.sqrt() * t / q_mod
}
