//! Problem description, hypothesis checks, the formal solution `X̂(t,z)` and
//! the Borel-plane coefficients `W_h(τ)`.
//!
//! The equation is
//! `((z∂_z+1)^{r1} (tσ_q)^{r2} + 1) ∂_z^S X = Σ_k b_k(z) (tσ_q)^{m0_k} (∂_z^k X)(t, z q^{-m1_k})`
//! and its Borel counterpart replaces `tσ_q` by multiplication with `τ`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlaplace::{laplace_sum_many, DomainSpec, LaplaceOptions, LaplaceValue, QParameter, SpiralGrid};
use crate::series::{
    diff_z, euler_z, mul_poly_z, qpow, rising_ratio, scale_z, BivariateSeries, Polynomial,
    UnivariateSeries,
};

/// One right-hand-side term `b_k(z) (tσ_q)^{m0} (∂_z^k X)(t, z q^{-m1})`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTerm {
    pub k: usize,
    pub m0: usize,
    pub m1: usize,
    pub b: Polynomial,
}

/// Which side of the Borel transform an initial datum lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `X̂_j(t)`
    T,
    /// `W_j(τ)`
    Borel,
}

/// A polynomial initial datum `∂_z^j X(t, 0)` or `∂_z^j W(τ, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialDatum {
    pub side: Side,
    pub coeffs: Vec<Complex64>,
}

impl InitialDatum {
    pub fn new(side: Side, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::Invalid("initial coefficient is not finite".into()));
        }
        Ok(Self { side, coeffs })
    }

    /// Coefficients of `W_j(τ)`.
    pub fn borel_coeffs(&self, q: Complex64) -> Vec<Complex64> {
        match self.side {
            Side::Borel => self.coeffs.clone(),
            Side::T => self.coeffs.iter().enumerate().map(|(n, c)| c / crate::series::q_triangular(q, n as i64)).collect(),
        }
    }

    /// Coefficients of `X̂_j(t)`.
    pub fn formal_coeffs(&self, q: Complex64) -> Vec<Complex64> {
        match self.side {
            Side::T => self.coeffs.clone(),
            Side::Borel => self.coeffs.iter().enumerate().map(|(n, c)| c * crate::series::q_triangular(q, n as i64)).collect(),
        }
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self { side: self.side, coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub l_min: i64,
    pub l_max: i64,
    pub tail_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub t_rays: usize,
    pub t_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { n: 12, t_rays: 3, t_points: 16 }
    }
}

/// Full description of a Cauchy problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub q: QParameter,
    pub s: usize,
    pub r1: u32,
    pub r2: u32,
    pub terms: Vec<OperatorTerm>,
    /// `initial[j]` for `j = 0..S`.
    pub initial: Vec<InitialDatum>,
    pub domain: DomainSpec,
    pub truncation: Truncation,
    pub fit: FitConfig,
}

impl ProblemSpec {
    /// Structural checks only; the analytic hypotheses are reported by [`validate`].
    pub fn check(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::Invalid("S must be >= 1".into()));
        }
        if self.r2 == 0 {
            return Err(Error::Invalid("r2 must be >= 1 (r2 ≥ 1 is required)".into()));
        }
        if self.q.r2 != self.r2 {
            return Err(Error::Invalid("q was resolved with a different r2".into()));
        }
        let mut seen = vec![false; self.s];
        for t in &self.terms {
            if t.k >= self.s {
                return Err(Error::Invalid(format!("terms: k = {} must be < S = {}", t.k, self.s)));
            }
            if seen[t.k] {
                return Err(Error::Invalid(format!("terms: k = {} listed twice", t.k)));
            }
            seen[t.k] = true;
        }
        if self.initial.len() != self.s {
            return Err(Error::Invalid(format!("initial: need exactly S = {} data, got {}", self.s, self.initial.len())));
        }
        let tr = &self.truncation;
        if tr.h < self.s {
            return Err(Error::Invalid("truncation.H must be >= S".into()));
        }
        if tr.l_max < tr.l_min {
            return Err(Error::Invalid("truncation.l_max < truncation.l_min".into()));
        }
        if !(tr.tail_tol > 0.0) {
            return Err(Error::Invalid("truncation.tail_tol must be positive".into()));
        }
        let lq = self.q.modulus.log10();
        if (tr.m * tr.m.saturating_sub(1)) as f64 / 2.0 * lq >= 300.0 {
            return Err(Error::Invalid(format!(
                "q^(M(M-1)/2) overflows double precision for M = {}, |q| = {}",
                tr.m, self.q.modulus
            )));
        }
        Ok(())
    }

    pub fn qv(&self) -> Complex64 {
        self.q.value()
    }

    /// Same problem with every initial datum multiplied by `a`.
    pub fn with_scaled_initial(&self, a: Complex64) -> Self {
        let mut p = self.clone();
        p.initial = p.initial.iter().map(|d| d.scaled(a)).collect();
        p
    }

    fn max_shift(&self) -> usize {
        self.terms.iter().map(|t| t.m0).max().unwrap_or(0).max(self.r2 as usize)
    }
}

/// Per-`(k, s)` outcome of the inequalities `s+S-k ≥ 2 m0` and `m1 ≥ s+S-k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWitness {
    pub k: usize,
    pub s: usize,
    pub m0: usize,
    pub m1: usize,
    /// `s + S - k`
    pub order_gap: i64,
    pub a_first_ok: bool,
    pub a_second_ok: bool,
}

/// Closed interval `[lo, hi]`; empty when `lo > hi` beyond a `1e-12` relative slack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi * (1.0 + 1e-12))
    }

    pub fn intersect(&self, o: &Interval) -> Interval {
        Interval { lo: self.lo.max(o.lo), hi: self.hi.min(o.hi) }
    }

    pub fn everything() -> Interval {
        Interval { lo: 0.0, hi: f64::INFINITY }
    }
}

/// Outcome of every hypothesis check. Failures are recorded, never thrown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a_ok: bool,
    pub a2_ok: bool,
    pub b_ok: bool,
    pub witnesses: Vec<TermWitness>,
    /// `(k, s)` pairs violating (A).
    pub failing_a: Vec<(usize, usize)>,
    /// `(k, s)` pairs violating (A2).
    pub failing_a2: Vec<(usize, usize)>,
    /// Fitted initial radii `T_{0,j}`.
    pub t0: Vec<f64>,
    /// Fitted `K₀` for those radii.
    pub k0: f64,
    pub t_set: Interval,
    pub t1: Option<f64>,
    pub t1_set: Interval,
    /// Sector test; `None` when `q` is given by an explicit angle.
    pub sector_ok: Option<bool>,
    /// `dist(V^{r2} q^{r2 ℤ}, {-1})` over the sample.
    pub relaxed_distance: f64,
    pub geometry_ok: bool,
    pub spectral_gap: f64,
    pub disc_radii: Vec<f64>,
    /// `r = max_k max_x |x|^{m0_k}`.
    pub r_coupling: f64,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a_ok && self.a2_ok && self.b_ok && self.geometry_ok
    }
}

/// Exponents of `ln K0(u) = max_l (...) + l·u` with `u = ln T`.
fn k0_pieces(w_pos: &[f64], w_neg: &[f64], q_mod: f64) -> Vec<(f64, f64)> {
    let lq = q_mod.ln();
    let mut pieces = Vec::new();
    for (l, &w) in w_pos.iter().enumerate() {
        if w > 0.0 {
            let lf = l as f64;
            pieces.push((w.ln() + (1.0 + lf * lf).ln() - 0.25 * lf * lf * lq, lf));
        }
    }
    for (l, &w) in w_neg.iter().enumerate() {
        if w > 0.0 {
            let lf = l as f64;
            pieces.push((w.ln() + (1.0 + lf * lf).ln(), -lf));
        }
    }
    pieces
}

fn ln_k0_at(pieces: &[(f64, f64)], u: f64) -> f64 {
    pieces.iter().map(|(a, b)| a + b * u).fold(f64::NEG_INFINITY, f64::max)
}

/// Minimise the convex function `u ↦ ln K0(e^u)` by ternary search.
fn argmin_ln_k0(pieces: &[(f64, f64)]) -> (f64, f64) {
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if ln_k0_at(pieces, a) <= ln_k0_at(pieces, b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let u = 0.5 * (lo + hi);
    (u, ln_k0_at(pieces, u))
}

/// Fit `(T_{0,j}, K₀)` to the growth pattern
/// `w_{l,j} ≤ K₀ |q|^{l²/4} T^{-l}/(1+l²)` and `w_{-l,j} ≤ K₀ T^l/(1+l²)`, `l ≥ 0`.
///
/// `w_pos[l] = sup|W_j(x q^l)|`, `w_neg[l] = sup|W_j(x q^{-l})|`.
pub fn fit_initial_radius(w_pos: &[f64], w_neg: &[f64], q_mod: f64) -> (f64, f64) {
    let pieces = k0_pieces(w_pos, w_neg, q_mod);
    if pieces.is_empty() {
        return (1.0, 0.0);
    }
    let (u, lk) = argmin_ln_k0(&pieces);
    (u.exp(), lk.exp())
}

/// Distance from `-1` of the closed ray `{s e^{iφ}: s ≥ 0}`.
fn ray_distance(phi: f64) -> f64 {
    if phi.cos() >= 0.0 {
        1.0
    } else {
        phi.sin().abs()
    }
}

/// `inf_{l ∈ ℤ, h ≥ 0} |(h+1)^{r1} x^{r2} q^{r2 l} + 1|` for one base point.
///
/// Pairs with `(h+1)^{r1}|w| ≥ 2` are skipped (value ≥ 1). Below a cut-off in
/// `l` the values fill the ray through `x^{r2} q^{r2 l}` densely and the ray's
/// distance to `-1` is used; with `r1 = 0` the values just tend to 1.
fn gap_at_point(x: Complex64, q: &QParameter, r1: u32, r2: u32) -> f64 {
    let w0 = x.powu(r2);
    let qr = qpow(q.value(), r2 as i64);
    let lq = q.modulus.ln() * r2 as f64;
    // |w| = |w0| |q|^{r2 l}; above l_hi every value is ≥ 1
    let l_hi = ((2.0 / w0.norm()).ln() / lq).ceil() as i64;
    let mut best = 1.0f64;
    const H_BUDGET: f64 = 2.0e4;
    let mut l = l_hi;
    loop {
        let w = w0 * qpow(qr, l);
        let wn = w.norm();
        if r1 == 0 {
            best = best.min((w + 1.0).norm());
            if wn < 1e-17 {
                break;
            }
        } else {
            let h_count = (2.0 / wn).powf(1.0 / r1 as f64);
            if h_count > H_BUDGET {
                break;
            }
            let mut h = 0usize;
            loop {
                let s = ((h + 1) as f64).powi(r1 as i32);
                if s * wn >= 2.0 {
                    break;
                }
                best = best.min((w * s + 1.0).norm());
                h += 1;
            }
        }
        l -= 1;
    }
    if r1 > 0 {
        // remaining l < cut: directions of w0 q^{r2 l}
        let base = w0.arg();
        let step = qr.arg();
        let period = match q.b {
            Some(b) => b as i64,
            None => 4096,
        };
        for j in 0..period {
            best = best.min(ray_distance(base + step * (l - j) as f64));
        }
    }
    best
}

/// Measured spectral gap over a set of base points.
pub fn spectral_gap(points: &[Complex64], q: &QParameter, r1: u32, r2: u32) -> f64 {
    points.iter().map(|x| gap_at_point(*x, q, r1, r2)).fold(f64::INFINITY, f64::min)
}

/// `inf_l |x^{r2} q^{r2 l} + 1|` over the sample (the `h = 0` slice).
pub fn relaxed_distance(points: &[Complex64], q: &QParameter, r2: u32) -> f64 {
    spectral_gap(points, q, 0, r2)
}

/// Sector test: `arg(x^{r2})` stays `ε` away from every direction `-π + 2πl/b`.
pub fn sector_avoidance(points: &[Complex64], b: u32, r2: u32, eps: f64) -> bool {
    use std::f64::consts::PI;
    if !(eps > 0.0 && eps < (PI / b as f64).min(PI / 2.0)) {
        return false;
    }
    points.iter().all(|x| {
        let a = x.powu(r2).arg();
        (0..b).all(|l| {
            let d = -PI + 2.0 * PI * l as f64 / b as f64;
            let mut diff = (a - d).rem_euclid(2.0 * PI);
            if diff > PI {
                diff = 2.0 * PI - diff;
            }
            diff > eps
        })
    })
}

/// Check every structural hypothesis and measure the spectral gap.
pub fn validate(p: &ProblemSpec) -> Result<AssumptionReport> {
    p.check()?;
    let s_ord = p.s as i64;
    let mut witnesses = Vec::new();
    let (mut failing_a, mut failing_a2) = (Vec::new(), Vec::new());
    for t in &p.terms {
        for s in t.b.degrees() {
            let gap = s as i64 + s_ord - t.k as i64;
            let first = gap >= 2 * t.m0 as i64;
            let second = t.m1 as i64 >= gap;
            if !(first && second) {
                failing_a.push((t.k, s));
            }
            if !second {
                failing_a2.push((t.k, s));
            }
            witnesses.push(TermWitness { k: t.k, s, m0: t.m0, m1: t.m1, order_gap: gap, a_first_ok: first, a_second_ok: second });
        }
    }

    // initial radii from the spiral values of W_j
    let pts = p.domain.base_points();
    let qv = p.qv();
    let l_pos = p.truncation.l_max.max(0) as usize;
    let l_neg = (-p.truncation.l_min).max(0) as usize;
    let mut t0 = Vec::with_capacity(p.s);
    let mut k0 = 0.0f64;
    let mut sups_pos = vec![vec![0.0; l_pos + 1]; p.s];
    let mut sups_neg = vec![vec![0.0; l_neg + 1]; p.s];
    for (j, datum) in p.initial.iter().enumerate() {
        let c = datum.borel_coeffs(qv);
        let poly = UnivariateSeries::new(if c.is_empty() { vec![Complex64::default()] } else { c })?;
        for &x in &pts {
            for l in 0..=l_pos {
                let v = poly.eval(x * qpow(qv, l as i64)).norm();
                sups_pos[j][l] = f64::max(sups_pos[j][l], v);
            }
            for l in 0..=l_neg {
                let v = poly.eval(x * qpow(qv, -(l as i64))).norm();
                sups_neg[j][l] = f64::max(sups_neg[j][l], v);
            }
        }
    }
    for j in 0..p.s {
        let (t, k) = fit_initial_radius(&sups_pos[j], &sups_neg[j], p.q.modulus);
        t0.push(t);
        k0 = k0.max(k);
    }
    let (t_set, t1, t1_set) = assumption_b_sets(p, &t0);
    let mut b_ok = !t_set.is_empty() && !t1_set.is_empty();
    let (mut t0_used, mut t_set, mut t1, mut t1_set) = (t0, t_set, t1, t1_set);
    if !b_ok && p.s > 1 {
        // retry with a common radius, as in the standard example for (B)
        let mut pieces = Vec::new();
        for j in 0..p.s {
            pieces.extend(k0_pieces(&sups_pos[j], &sups_neg[j], p.q.modulus));
        }
        if !pieces.is_empty() {
            let (u, lk) = argmin_ln_k0(&pieces);
            let common = vec![u.exp(); p.s];
            let (ts, t1c, t1s) = assumption_b_sets(p, &common);
            if !ts.is_empty() && !t1s.is_empty() {
                b_ok = true;
                t0_used = common;
                t_set = ts;
                t1 = t1c;
                t1_set = t1s;
                k0 = lk.exp();
            }
        }
    }

    let sector_ok = p.q.b.map(|b| sector_avoidance(&pts, b, p.r2, p.domain.epsilon_sector));
    let relaxed = relaxed_distance(&pts, &p.q, p.r2);
    let gap = spectral_gap(&pts, &p.q, p.r1, p.r2);
    let geometry_ok = (sector_ok == Some(true) || relaxed > 1e-12) && gap > 1e-12;
    let disc_radii = (0..=p.truncation.h).map(|h| disc_radius(h, p.r1, p.r2)).collect();
    let r_coupling = coupling_r(p, &pts);

    Ok(AssumptionReport {
        a_ok: failing_a.is_empty(),
        a2_ok: failing_a2.is_empty(),
        b_ok,
        witnesses,
        failing_a,
        failing_a2,
        t0: t0_used,
        k0,
        t_set,
        t1,
        t1_set,
        sector_ok,
        relaxed_distance: relaxed,
        geometry_ok,
        spectral_gap: gap,
        disc_radii,
        r_coupling,
    })
}

/// Radius `1/(2 (h+1)^{r1/r2})` of the disc `D̄_h`.
pub fn disc_radius(h: usize, r1: u32, r2: u32) -> f64 {
    0.5 / ((h + 1) as f64).powf(r1 as f64 / r2 as f64)
}

/// `r = max_k max_x |x|^{m0_k}` (1 when there are no terms).
pub fn coupling_r(p: &ProblemSpec, pts: &[Complex64]) -> f64 {
    if p.terms.is_empty() {
        return 1.0;
    }
    p.terms
        .iter()
        .flat_map(|t| pts.iter().map(move |x| x.norm().powi(t.m0 as i32)))
        .fold(0.0, f64::max)
}

/// The sets `𝕋`, a choice `T₁ ∈ 𝕋`, and `𝕋₁` for given radii `T_{0,j}`.
pub fn assumption_b_sets(p: &ProblemSpec, t0: &[f64]) -> (Interval, Option<f64>, Interval) {
    let q = p.q.modulus;
    let mut t_set = Interval::everything();
    for term in &p.terms {
        for s in term.b.degrees() {
            for j in term.k..p.s {
                let e = (s as f64 + j as f64 - term.k as f64 - 2.0 * term.m0 as f64) / 2.0;
                t_set = t_set.intersect(&Interval { lo: q.powi(-(term.m0 as i32)) * t0[j], hi: t0[j] * q.powf(e) });
            }
        }
    }
    let mut cd = Interval::everything();
    for (j, &t) in t0.iter().enumerate() {
        cd = cd.intersect(&Interval { lo: t, hi: t * q.powf(j as f64 / 2.0) });
    }
    if t_set.is_empty() || cd.is_empty() {
        return (t_set, None, Interval { lo: 1.0, hi: 0.0 });
    }
    let half_s = q.powf(p.s as f64 / 2.0);
    // T₁ must satisfy T₁ ≤ d and T₁ q^{S/2} ≥ c
    let window = t_set.intersect(&Interval { lo: cd.lo / half_s, hi: cd.hi });
    if window.is_empty() {
        return (t_set, None, Interval { lo: 1.0, hi: 0.0 });
    }
    let t1 = cd.lo.clamp(window.lo, window.hi);
    let t1_set = Interval { lo: t1.max(cd.lo), hi: (t1 * half_s).min(cd.hi) };
    (t_set, Some(t1), t1_set)
}

/// Formal solution `f_{m,h}` on `0 ≤ m ≤ M`, `0 ≤ h ≤ H`, from the coefficient
/// recursion
/// `f_{m,h+S} + [m ≥ r2] (h+1)^{r1} q^{r2(r2-1)/2 + r2(m-r2)} f_{m-r2,h+S} = RHS_h[m]`.
pub fn solve_formal(p: &ProblemSpec) -> Result<BivariateSeries> {
    p.check()?;
    let (mo, ho) = (p.truncation.m, p.truncation.h);
    let q = p.qv();
    let mut f = BivariateSeries::zeros(mo, ho);
    for (j, datum) in p.initial.iter().enumerate() {
        for (m, c) in datum.formal_coeffs(q).into_iter().enumerate().take(mo + 1) {
            f.set(m, j, c);
        }
    }
    let r2 = p.r2 as usize;
    let lhs_q: Vec<Complex64> = (0..=mo)
        .map(|m| if m >= r2 { qpow(q, (r2 * (r2 - 1) / 2 + r2 * (m - r2)) as i64) } else { Complex64::default() })
        .collect();
    let mut rhs = vec![Complex64::default(); mo + 1];
    for h in 0..=(ho - p.s) {
        rhs.iter_mut().for_each(|c| *c = Complex64::default());
        for term in &p.terms {
            let dil: Vec<Complex64> = (0..=mo)
                .map(|m| qpow(q, (term.m0 * m + term.m0 * term.m0.saturating_sub(1) / 2) as i64))
                .collect();
            for &(h1, b) in term.b.terms() {
                if h1 > h {
                    break;
                }
                let h2 = h - h1;
                let w = b * rising_ratio(h2, h1) * qpow(q, -((term.m1 * h2) as i64));
                let src = h2 + term.k;
                for m in term.m0..=mo {
                    rhs[m] += w * dil[m - term.m0] * f.get(m - term.m0, src);
                }
            }
        }
        let euler = ((h + 1) as f64).powi(p.r1 as i32);
        for m in 0..=mo {
            let mut v = rhs[m];
            if m >= r2 {
                v -= lhs_q[m] * euler * f.get(m - r2, h + p.s);
            }
            f.set(m, h + p.s, v);
        }
    }
    if !f.is_finite() {
        return Err(Error::Data("formal coefficients overflowed double precision".into()));
    }
    Ok(f)
}

/// `max |f_{m,h}|` over `m ≤ m_top`.
fn window_scale(f: &BivariateSeries, m_top: usize) -> f64 {
    (0..=f.h_order())
        .flat_map(|h| (0..=m_top.min(f.m_order())).map(move |m| (m, h)))
        .map(|(m, h)| f.get(m, h).norm())
        .fold(0.0, f64::max)
}

/// Largest coefficient mismatch of the equation over the valid window
/// `m ≤ M - max(r2, m0)`, `h ≤ H - S`, divided by the largest `|f_{m,h}|` with
/// `m` in that window. Both sides are assembled from the series operations.
pub fn residual_formal(p: &ProblemSpec, f: &BivariateSeries) -> Result<f64> {
    let q = p.qv();
    let m_top = p.truncation.m.saturating_sub(p.max_shift());
    let scale = window_scale(f, m_top);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let g = diff_z(f, p.s)?;
    let lhs_op = euler_z(&g.dilate_t(q, p.r2 as usize), p.r1);
    let mut rhs = BivariateSeries::zeros(g.m_order(), g.h_order());
    for term in &p.terms {
        let dk = diff_z(f, term.k)?;
        let dk = BivariateSeries::from_columns(&(0..=g.h_order()).map(|h| dk.column(h)).collect::<Vec<_>>(), dk.m_order())?;
        let moved = scale_z(&dk.dilate_t(q, term.m0), q, term.m1);
        let img = mul_poly_z(&term.b, &moved);
        for h in 0..=g.h_order() {
            for m in 0..=g.m_order() {
                rhs.add_at(m, h, img.get(m, h));
            }
        }
    }
    let mut worst = 0.0f64;
    for h in 0..=g.h_order() {
        for m in 0..=m_top {
            let lhs = lhs_op.get(m, h) + g.get(m, h);
            worst = worst.max((lhs - rhs.get(m, h)).norm());
        }
    }
    Ok(worst / scale)
}

/// Taylor coefficients of `W_h` computed two ways.
#[derive(Clone, Debug)]
pub struct TaylorComparison {
    /// Column-wise q-Borel transform of the formal solution.
    pub via_borel: BivariateSeries,
    /// Direct recursion with the geometric expansion of the small divisor.
    pub via_recursion: BivariateSeries,
    /// `max_h max_n |a - b| / max_n |a|`.
    pub discrepancy: f64,
}

/// Taylor germs of `W_0..W_H` at `τ = 0` by both routes; an error is raised
/// when they disagree beyond `1e-8` relative.
pub fn wh_taylor(p: &ProblemSpec) -> Result<TaylorComparison> {
    let formal = solve_formal(p)?;
    let q = p.qv();
    let via_borel = formal.borel_q(q);
    let via_recursion = wh_taylor_recursion(p)?;
    let mut discrepancy = 0.0f64;
    for h in 0..=p.truncation.h {
        let a = via_borel.column(h);
        let b = via_recursion.column(h);
        let scale = a.max_abs().max(b.max_abs());
        if scale == 0.0 {
            continue;
        }
        let d = (0..=p.truncation.m).map(|n| (a.coeff(n) - b.coeff(n)).norm()).fold(0.0, f64::max);
        discrepancy = discrepancy.max(d / scale);
    }
    if discrepancy > 1e-8 {
        return Err(Error::Consistency(format!("Borel-plane Taylor routes disagree: relative discrepancy {discrepancy:e}")));
    }
    Ok(TaylorComparison { via_borel, via_recursion, discrepancy })
}

/// Taylor germs from
/// `W_{h+S} = h! Σ_k Σ_{h1} b_{k,h1} τ^{m0} W_{h2+k} / (h2! q^{m1 h2}) · Σ_j (-1)^j (h+1)^{r1 j} τ^{r2 j}`.
pub fn wh_taylor_recursion(p: &ProblemSpec) -> Result<BivariateSeries> {
    p.check()?;
    let cols = borel_taylor(p, p.truncation.m)?;
    BivariateSeries::from_columns(&cols, p.truncation.m)
}

/// Taylor germs of `W_0..W_H` at `τ = 0` up to `τ^order`. The Borel side
/// carries no `q^{m(m-1)/2}` factor, so `order` may exceed `M`.
pub fn borel_taylor(p: &ProblemSpec, order: usize) -> Result<Vec<UnivariateSeries>> {
    let mut shallow = p.clone();
    shallow.truncation.m = shallow.truncation.m.min(order).max(1);
    shallow.check()?;
    let (mo, ho) = (order, p.truncation.h);
    let q = p.qv();
    let mut cols: Vec<UnivariateSeries> = Vec::with_capacity(ho + 1);
    for datum in &p.initial {
        let c = datum.borel_coeffs(q);
        let s = if c.is_empty() { UnivariateSeries::zeros(mo) } else { UnivariateSeries::new(c)?.with_order(mo) };
        cols.push(s);
    }
    for h in 0..=(ho - p.s) {
        let mut acc = UnivariateSeries::zeros(mo);
        for term in &p.terms {
            for &(h1, b) in term.b.terms() {
                if h1 > h {
                    break;
                }
                let h2 = h - h1;
                let w = b * rising_ratio(h2, h1) * qpow(q, -((term.m1 * h2) as i64));
                let mut src = cols[h2 + term.k].scale(w);
                for _ in 0..term.m0 {
                    src = src.shift_up();
                }
                acc = acc.add(&src);
            }
        }
        let mut geo = UnivariateSeries::zeros(mo);
        let base = -((h + 1) as f64).powi(p.r1 as i32);
        let mut j = 0usize;
        while j * (p.r2 as usize) <= mo {
            geo.set(j * p.r2 as usize, Complex64::new(base.powi(j as i32), 0.0));
            j += 1;
        }
        cols.push(acc.mul(&geo));
    }
    Ok(cols)
}

/// Pointwise evaluation of `W_0(τ), ..., W_H(τ)` through the Borel-plane
/// recursion; the initial `W_j` are the polynomial data of the problem.
#[derive(Clone, Debug)]
pub struct BorelEvaluator {
    s: usize,
    r1: u32,
    r2: u32,
    h_max: usize,
    initial: Vec<UnivariateSeries>,
    /// `(k, m0, [(h1, b·(h)!/h2!·q^{-m1 h2}) per h])` flattened per `h`.
    steps: Vec<Vec<(usize, usize, Complex64)>>,
    floor: Option<f64>,
}

impl BorelEvaluator {
    /// `floor`: smallest admissible small-divisor modulus; `None` disables the check.
    pub fn new(p: &ProblemSpec, floor: Option<f64>) -> Result<Self> {
        let q = p.qv();
        let initial = p
            .initial
            .iter()
            .map(|d| {
                let c = d.borel_coeffs(q);
                UnivariateSeries::new(if c.is_empty() { vec![Complex64::default()] } else { c })
            })
            .collect::<Result<Vec<_>>>()?;
        let h_max = p.truncation.h;
        let mut steps = Vec::with_capacity(h_max + 1);
        for h in 0..=(h_max - p.s) {
            let mut row = Vec::new();
            for term in &p.terms {
                for &(h1, b) in term.b.terms() {
                    if h1 > h {
                        break;
                    }
                    let h2 = h - h1;
                    let w = b * rising_ratio(h2, h1) * qpow(q, -((term.m1 * h2) as i64));
                    row.push((h2 + term.k, term.m0, w));
                }
            }
            steps.push(row);
        }
        Ok(Self { s: p.s, r1: p.r1, r2: p.r2, h_max, initial, steps, floor })
    }

    pub fn h_count(&self) -> usize {
        self.h_max + 1
    }

    /// Fill `out[h] = W_h(τ)` for `h = 0..=H`.
    pub fn eval_into(&self, tau: Complex64, out: &mut [Complex64]) -> Result<()> {
        for (j, w) in self.initial.iter().enumerate() {
            out[j] = w.eval(tau);
        }
        let tr2 = tau.powu(self.r2);
        for (h, row) in self.steps.iter().enumerate() {
            let den = tr2 * ((h + 1) as f64).powi(self.r1 as i32) + 1.0;
            if let Some(fl) = self.floor {
                if den.norm() < fl {
                    return Err(Error::SmallDivisor { h, value: den.norm(), gap: fl });
                }
            }
            let mut acc = Complex64::default();
            for &(src, m0, w) in row {
                acc += w * tau.powu(m0 as u32) * out[src];
            }
            out[h + self.s] = acc / den;
        }
        Ok(())
    }

    pub fn eval(&self, tau: Complex64) -> Result<Vec<Complex64>> {
        let mut out = vec![Complex64::default(); self.h_count()];
        self.eval_into(tau, &mut out)?;
        Ok(out)
    }
}

/// `W_h(x q^l)` on the grid of base points (sample of `V` plus `λ`) and
/// `l ∈ [l_min, l_max]`. Denominators below `gap_floor` raise a small-divisor
/// error.
pub fn wh_spiral(p: &ProblemSpec, gap_floor: f64) -> Result<SpiralGrid> {
    let ev = BorelEvaluator::new(p, Some(gap_floor))?;
    let pts = p.domain.base_points();
    let tr = &p.truncation;
    let mut grid = SpiralGrid::zeros(pts.clone(), tr.l_min, tr.l_max, tr.h + 1)?;
    let q = p.qv();
    let cells: Vec<(usize, i64)> = (0..pts.len()).flat_map(|x| (tr.l_min..=tr.l_max).map(move |l| (x, l))).collect();
    let vals: Vec<Vec<Complex64>> = cells
        .par_iter()
        .map(|&(x, l)| ev.eval(pts[x] * qpow(q, l)))
        .collect::<Result<Vec<_>>>()?;
    for ((x, l), v) in cells.into_iter().zip(vals) {
        grid.point_values_mut(x, l).copy_from_slice(&v);
    }
    if !grid.is_finite() {
        return Err(Error::Data("spiral values overflowed double precision".into()));
    }
    Ok(grid)
}

/// `L(W_h)(t)` for every `h`, in one bilateral sum.
pub fn laplace_columns(p: &ProblemSpec, ev: &BorelEvaluator, t: Complex64, opts: &LaplaceOptions) -> Result<Vec<LaplaceValue>> {
    let err = std::sync::Mutex::new(None);
    let out = laplace_sum_many(
        ev.h_count(),
        |_, tau, buf| match ev.eval_into(tau, buf) {
            Ok(()) => buf.iter().all(|v| v.re.is_finite() && v.im.is_finite()),
            Err(e) => {
                *err.lock().unwrap() = Some(e);
                false
            }
        },
        t,
        p.domain.lambda,
        &p.q,
        opts,
    );
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    out
}

/// `X(t, z) = Σ_h L(W_h)(t) z^h/h!` with an estimate of the dropped `h`-tail.
#[derive(Clone, Debug)]
pub struct XValue {
    pub value: Complex64,
    /// Modulus of the last two retained terms, used as the tail estimate.
    pub h_tail: f64,
    pub columns: Vec<LaplaceValue>,
}

/// Analytic solution at `(t, z)`; `t` must lie in the spiral domain and the
/// `h`-tail must fall below `h_tol · max(1, |X|)`.
pub fn evaluate_x(p: &ProblemSpec, ev: &BorelEvaluator, t: Complex64, z: Complex64, h_tol: f64) -> Result<XValue> {
    let chk = crate::qlaplace::in_spiral_domain(t, &p.domain, &p.q)?;
    if !chk.inside {
        return Err(Error::Domain(format!("t = {t} is outside the spiral domain (margin {:.3e})", chk.margin)));
    }
    let cols = laplace_columns(p, ev, t, &LaplaceOptions::with_tol(p.truncation.tail_tol))?;
    let (value, h_tail) = sum_in_z(&cols, z);
    if h_tail > h_tol * value.norm().max(1.0) {
        return Err(Error::TailNotConverged { tail: h_tail, tol: h_tol });
    }
    Ok(XValue { value, h_tail, columns: cols })
}

/// `Σ_h c_h z^h/h!` and the modulus of its last two terms.
pub fn sum_in_z(cols: &[LaplaceValue], z: Complex64) -> (Complex64, f64) {
    let mut zh = Complex64::new(1.0, 0.0);
    let mut total = Complex64::default();
    let mut last = [0.0f64; 2];
    for (h, c) in cols.iter().enumerate() {
        let term = c.value * zh;
        total += term;
        last = [last[1], term.norm()];
        zh *= z / (h as f64 + 1.0);
    }
    (total, last[0] + last[1])
}

/// `Σ_h f_{0,h} z^h/h!`, the `t → 0` limit of `X`.
pub fn constant_term(f: &BivariateSeries, z: Complex64) -> Complex64 {
    let mut zh = Complex64::new(1.0, 0.0);
    let mut total = Complex64::default();
    for h in 0..=f.h_order() {
        total += f.get(0, h) * zh;
        zh *= z / (h as f64 + 1.0);
    }
    total
}
