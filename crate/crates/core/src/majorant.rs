//! Weighted sequence spaces for majorant series and the fixed-point solution of
//! the two auxiliary Cauchy problems.
//!
//! Grids hold nonnegative `v_{l,h}` for `V(ξ,x) = Σ v_{l,h} ξ^l x^h/h!`. Two norms
//! are used:
//!
//! * E-space: `‖V‖ = Σ v_{l,h} q^{-P(l,h)} T^l X^h/h!` over `l ∈ ℤ`;
//! * H-space: `|V|' = Σ v_{l,h} T^l q^{h²/2} X^h/h!` over `l ≥ 0`.
//!
//! All operators here have nonnegative coefficients and act column by column,
//! so their norm on a weighted `ℓ¹` space equals the largest image norm of a
//! unit column. That column formula is evaluated exactly in log space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qlaplace::SpiralGrid;
use crate::series::{ln_factorial, rising_ratio};
use crate::solver::ProblemSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpaceKind {
    /// Laurent in `l`, weight `q^{-P(l,h)} T^l X^h/h!`.
    E,
    /// Taylor in `l`, weight `T^l q^{h²/2} X^h/h!`.
    H,
}

/// Nonnegative grid `v_{l,h}` on `[l_min, l_max] × [0, h_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedGrid {
    pub kind: SpaceKind,
    pub l_min: i64,
    pub l_max: i64,
    pub h_max: usize,
    values: Vec<f64>,
}

impl WeightedGrid {
    pub fn zeros(kind: SpaceKind, l_min: i64, l_max: i64, h_max: usize) -> Result<Self> {
        if l_max < l_min {
            return Err(Error::Invalid(format!("empty l window [{l_min}, {l_max}]")));
        }
        if kind == SpaceKind::H && l_min < 0 {
            return Err(Error::Invalid("H-space grids start at l = 0".into()));
        }
        let n = (l_max - l_min + 1) as usize * (h_max + 1);
        Ok(Self { kind, l_min, l_max, h_max, values: vec![0.0; n] })
    }

    /// Same window and kind, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    #[inline]
    fn idx(&self, l: i64, h: usize) -> usize {
        (l - self.l_min) as usize * (self.h_max + 1) + h
    }

    pub fn get(&self, l: i64, h: usize) -> f64 {
        if l < self.l_min || l > self.l_max || h > self.h_max {
            return 0.0;
        }
        self.values[self.idx(l, h)]
    }

    /// Store `v ≥ 0`; negative or non-finite values are rejected.
    pub fn set(&mut self, l: i64, h: usize, v: f64) -> Result<()> {
        if !(v >= 0.0) || v.is_infinite() {
            return Err(Error::Data(format!("majorant entry must be finite and >= 0, got {v}")));
        }
        let i = self.idx(l, h);
        self.values[i] = v;
        Ok(())
    }

    fn add(&mut self, l: i64, h: usize, v: f64) {
        if l < self.l_min || l > self.l_max || h > self.h_max {
            return;
        }
        let i = self.idx(l, h);
        self.values[i] += v;
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * a).collect(), ..self.clone() }
    }

    pub fn add_grid(&self, o: &WeightedGrid) -> Self {
        let mut out = self.clone();
        for l in self.l_min..=self.l_max {
            for h in 0..=self.h_max {
                out.add(l, h, o.get(l, h));
            }
        }
        out
    }

    /// Entrywise `|a - b|` over `self`'s window.
    pub fn abs_diff(&self, o: &WeightedGrid) -> Self {
        let mut out = self.clone();
        for l in self.l_min..=self.l_max {
            for h in 0..=self.h_max {
                let i = out.idx(l, h);
                out.values[i] = (self.get(l, h) - o.get(l, h)).abs();
            }
        }
        out
    }

    pub fn with_h_max(&self, h_max: usize) -> Self {
        let mut out = WeightedGrid::zeros(self.kind, self.l_min, self.l_max, h_max).expect("same window");
        for l in self.l_min..=self.l_max {
            for h in 0..=h_max.min(self.h_max) {
                let i = out.idx(l, h);
                out.values[i] = self.get(l, h);
            }
        }
        out
    }

    pub fn nonzeros(&self) -> impl Iterator<Item = (i64, usize, f64)> + '_ {
        (self.l_min..=self.l_max)
            .flat_map(move |l| (0..=self.h_max).map(move |h| (l, h)))
            .map(move |(l, h)| (l, h, self.get(l, h)))
            .filter(|t| t.2 != 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Parameters of the weighted norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub t: f64,
    pub x: f64,
    pub q_mod: f64,
    /// Initial radii `T_{0,j}`.
    pub t0: Vec<f64>,
}

impl NormParams {
    pub fn new(t: f64, x: f64, q_mod: f64) -> Result<Self> {
        if !(t > 0.0 && x > 0.0 && q_mod > 1.0) || !(t.is_finite() && x.is_finite()) {
            return Err(Error::Invalid(format!("norm parameters need T, X > 0 and q > 1 (T={t}, X={x}, q={q_mod})")));
        }
        Ok(Self { t, x, q_mod, t0: Vec::new() })
    }

    pub fn with_x(&self, x: f64) -> Self {
        Self { x, ..self.clone() }
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }
}

/// The quadratic exponent `P(l,h)`: `l²/4 + lh/2 - h²/2` for `l ≥ 0`, `-h²/2` for `l ≤ 0`.
pub fn weight_p(l: i64, h: usize) -> f64 {
    let (lf, hf) = (l as f64, h as f64);
    if l >= 0 {
        0.25 * lf * lf + 0.5 * lf * hf - 0.5 * hf * hf
    } else {
        -0.5 * hf * hf
    }
}

/// `ln` of the norm weight of the entry `(l, h)`.
pub fn ln_weight(kind: SpaceKind, l: i64, h: usize, p: &NormParams) -> f64 {
    let lq = p.q_mod.ln();
    let base = l as f64 * p.t.ln() + h as f64 * p.x.ln() - ln_factorial(h);
    match kind {
        SpaceKind::E => base - weight_p(l, h) * lq,
        SpaceKind::H => base + 0.5 * (h * h) as f64 * lq,
    }
}

/// `Σ exp(a_i)` computed with a shift by the largest exponent.
fn sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return 0.0;
    }
    top.exp() * v.iter().map(|a| (a - top).exp()).sum::<f64>()
}

fn norm_of(v: &WeightedGrid, kind: SpaceKind, p: &NormParams) -> f64 {
    sum_exp(v.nonzeros().map(|(l, h, x)| x.ln() + ln_weight(kind, l, h, p)))
}

/// E-space norm over the grid window.
pub fn norm_e(v: &WeightedGrid, p: &NormParams) -> f64 {
    norm_of(v, SpaceKind::E, p)
}

/// H-space norm over the grid window.
pub fn norm_h(v: &WeightedGrid, p: &NormParams) -> f64 {
    norm_of(v, SpaceKind::H, p)
}

/// Norm matching the grid kind.
pub fn norm(v: &WeightedGrid, p: &NormParams) -> f64 {
    norm_of(v, v.kind, p)
}

/// `|R|'` for `R(ξ) = Σ 2^{l+1} ξ^l`, finite iff `T < 1/2`.
pub fn r_series_norm(t: f64) -> f64 {
    if t < 0.5 {
        2.0 / (1.0 - 2.0 * t)
    } else {
        f64::INFINITY
    }
}

/// Elementary operator `V ↦ c · x^s (∂_x^{n} V)(q^{m0} ξ, x/q^{m1})` where a
/// negative `n` integrates and a positive `n` differentiates. Under the `/h!`
/// convention: `∂_x^{-n}` shifts `h` up by `n` without a factorial factor,
/// `ξ ↦ q^{m0}ξ` multiplies by `q^{m0 l}`, `x ↦ x/q^{m1}` by `q^{-m1 h}`, and
/// `×x^s` moves `h` to `h+s` with the factor `(h+s)!/h!`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elementary {
    pub coef: f64,
    pub s: usize,
    /// Net derivative order; `-S+k` for the operator `A`.
    pub deriv: i64,
    pub m0: usize,
    pub m1: usize,
}

impl Elementary {
    /// Image index and `ln` of the factor applied to a unit entry at `(l, h)`.
    fn image(&self, l: i64, h: usize, lq: f64) -> Option<(usize, f64)> {
        let mid = h as i64 - self.deriv;
        if mid < 0 {
            return None;
        }
        let mid = mid as usize;
        let out = mid + self.s;
        let ln = self.coef.ln() + (self.m0 as f64 * l as f64 - (self.m1 * mid) as f64) * lq + rising_ratio(mid, self.s).ln();
        Some((out, ln))
    }
}

/// Sum of elementary operators, optionally followed by multiplication with
/// `R(ξ)` (H-space operator `B`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearOp {
    pub kind: SpaceKind,
    pub terms: Vec<Elementary>,
    pub times_r: bool,
    pub q_mod: f64,
}

impl LinearOp {
    /// Largest upward `h` shift, used to size image grids.
    pub fn max_raise(&self) -> usize {
        self.terms.iter().map(|e| (e.s as i64 - e.deriv).max(0) as usize).max().unwrap_or(0)
    }

    /// Image without the `R(ξ)` factor, on a grid tall enough to hold every
    /// image entry.
    fn apply_plain(&self, v: &WeightedGrid) -> WeightedGrid {
        let lq = self.q_mod.ln();
        let mut out = WeightedGrid::zeros(v.kind, v.l_min, v.l_max, v.h_max + self.max_raise()).expect("valid window");
        for (l, h, x) in v.nonzeros() {
            for e in &self.terms {
                if e.coef == 0.0 {
                    continue;
                }
                if let Some((ho, ln)) = e.image(l, h, lq) {
                    out.add(l, ho, x * ln.exp());
                }
            }
        }
        out
    }

    /// Image of `v`; for `B` the multiplication by `R(ξ)` is a convolution in
    /// `l` truncated at `l_max`.
    pub fn apply(&self, v: &WeightedGrid) -> WeightedGrid {
        let plain = self.apply_plain(v);
        if !self.times_r {
            return plain;
        }
        let mut out = plain.zeros_like();
        for (l, h, x) in plain.nonzeros() {
            for l2 in l..=plain.l_max {
                out.add(l2, h, x * 2f64.powi((l2 - l + 1) as i32));
            }
        }
        out
    }

    /// Exact image norm, including the part a finite grid would truncate.
    pub fn image_norm(&self, v: &WeightedGrid, p: &NormParams) -> f64 {
        let plain = self.apply_plain(v);
        let n = norm_of(&plain, self.kind, p);
        if self.times_r {
            n * r_series_norm(p.t)
        } else {
            n
        }
    }

    /// `‖op(e_{l,h})‖_out / ‖e_{l,h}‖_in`.
    pub fn column_ratio(&self, l: i64, h: usize, p_in: &NormParams, p_out: &NormParams) -> f64 {
        let lq = self.q_mod.ln();
        let w_in = ln_weight(self.kind, l, h, p_in);
        let mut total = sum_exp(self.terms.iter().filter(|e| e.coef > 0.0).filter_map(|e| {
            e.image(l, h, lq).map(|(ho, ln)| ln + ln_weight(self.kind, l, ho, p_out) - w_in)
        }));
        if self.times_r {
            total *= r_series_norm(p_out.t);
        }
        total
    }

    /// Operator norm on the window `[l_min, l_max] × [0, h_max]`.
    pub fn norm_on(&self, l_min: i64, l_max: i64, h_max: usize, p_in: &NormParams, p_out: &NormParams) -> f64 {
        let mut best = 0.0f64;
        for l in l_min..=l_max {
            for h in 0..=h_max {
                best = best.max(self.column_ratio(l, h, p_in, p_out));
            }
        }
        best
    }
}

/// `A(V) = Σ_k a_k(x) (∂_x^{k-S} V)(q^{m0}ξ, x/q^{m1})` with
/// `a_{k,s} = |b_{k,s}| r/δ`.
pub fn operator_a(p: &ProblemSpec, r: f64, delta: f64) -> LinearOp {
    let terms = p
        .terms
        .iter()
        .flat_map(|t| {
            t.b.terms().iter().map(move |(s, b)| Elementary {
                coef: b.norm() * r / delta,
                s: *s,
                deriv: t.k as i64 - p.s as i64,
                m0: t.m0,
                m1: t.m1,
            })
        })
        .collect();
    LinearOp { kind: SpaceKind::E, terms, times_r: false, q_mod: p.q.modulus }
}

/// `B(V) = Σ_k c_k(x) R(ξ) (∂_x^{k-S} V)(ξ, x/q^{m1})` with `c_{k,s} = |b_{k,s}|`.
pub fn operator_b(p: &ProblemSpec) -> LinearOp {
    let terms = p
        .terms
        .iter()
        .flat_map(|t| {
            t.b.terms().iter().map(move |(s, b)| Elementary { coef: b.norm(), s: *s, deriv: t.k as i64 - p.s as i64, m0: 0, m1: t.m1 })
        })
        .collect();
    LinearOp { kind: SpaceKind::H, terms, times_r: true, q_mod: p.q.modulus }
}

/// `-D(I) = Σ_k a_k(x) (∂_x^k I)(q^{m0}ξ, x/q^{m1})` as an operator on `I`.
pub fn operator_minus_d_of_i(a: &LinearOp, s_order: usize) -> LinearOp {
    LinearOp {
        terms: a.terms.iter().map(|e| Elementary { deriv: e.deriv + s_order as i64, ..*e }).collect(),
        ..a.clone()
    }
}

/// Outcome of the `X` search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XSearch {
    pub x: f64,
    pub op_norm: f64,
    pub halvings: u32,
}

/// Halve `X` from `x0` until the operator norm on the window is `≤ 1/2`
/// (at most 60 halvings).
pub fn find_x(op: &LinearOp, base: &NormParams, x0: f64, l_min: i64, l_max: i64, h_max: usize) -> Result<XSearch> {
    let mut x = x0;
    for halvings in 0..=60 {
        let p = base.with_x(x);
        let n = op.norm_on(l_min, l_max, h_max, &p, &p);
        if n <= 0.5 {
            return Ok(XSearch { x, op_norm: n, halvings });
        }
        x *= 0.5;
    }
    Err(Error::Consistency(format!("no X ≤ {x0} makes the operator a contraction after 60 halvings")))
}

/// Random sparse nonnegative grid: at most `max_nonzeros` entries in `[0, 1]`.
pub fn random_sparse_grid<R: Rng>(rng: &mut R, kind: SpaceKind, l_min: i64, l_max: i64, h_max: usize, max_nonzeros: usize) -> WeightedGrid {
    let mut g = WeightedGrid::zeros(kind, l_min, l_max, h_max).expect("valid window");
    let count = rng.gen_range(1..=max_nonzeros);
    for _ in 0..count {
        let l = rng.gen_range(l_min..=l_max);
        let h = rng.gen_range(0..=h_max);
        g.set(l, h, rng.gen_range(0.0..=1.0)).expect("nonnegative");
    }
    g
}

/// `max ‖op(V)‖/‖V‖` over `samples` random sparse grids (zero grids skipped).
pub fn contraction_ratio<R: Rng>(op: &LinearOp, p: &NormParams, window: (i64, i64, usize), samples: usize, rng: &mut R) -> f64 {
    let (l_min, l_max, h_max) = window;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let v = random_sparse_grid(rng, op.kind, l_min, l_max, h_max, 32);
        let nv = norm(&v, p);
        if nv == 0.0 {
            continue;
        }
        worst = worst.max(op.image_norm(&v, p) / nv);
    }
    worst
}

/// Fixed point of `U = A(U) + b` by Neumann iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannResult {
    pub u: WeightedGrid,
    pub iterations: usize,
    /// `‖U - A(U) - b‖ / ‖b‖` on the window.
    pub residual: f64,
    /// `‖U_{n+1} - U_n‖ / ‖U_n - U_{n-1}‖` per step.
    pub step_ratios: Vec<f64>,
}

/// Iterate `U ← A(U) + b` from `U = 0` on `b`'s window until the update vanishes.
pub fn neumann_solve(op: &LinearOp, b: &WeightedGrid, p: &NormParams, max_iter: usize) -> Result<NeumannResult> {
    let mut u = b.zeros_like();
    let mut prev_step = f64::NAN;
    let mut step_ratios = Vec::new();
    let nb = norm(b, p);
    let mut iterations = 0;
    for it in 0..max_iter {
        let next = op.apply(&u).with_h_max(b.h_max).add_grid(b);
        let step = norm(&next.abs_diff(&u), p);
        if it > 0 && prev_step > 0.0 {
            step_ratios.push(step / prev_step);
        }
        u = next;
        iterations = it + 1;
        if step <= 1e-300 || (nb > 0.0 && step <= 1e-17 * nb) {
            break;
        }
        prev_step = step;
        if iterations == max_iter {
            return Err(Error::Consistency(format!("Neumann iteration did not settle in {max_iter} steps")));
        }
    }
    let au = op.apply(&u).with_h_max(b.h_max).add_grid(b);
    let residual = if nb == 0.0 { norm(&au, p) } else { norm(&u.abs_diff(&au), p) / nb };
    Ok(NeumannResult { u, iterations, residual, step_ratios })
}

/// `∂_x^{-n} U`: entries move from `h` to `h + n`.
pub fn integrate(u: &WeightedGrid, n: usize, h_max: usize) -> WeightedGrid {
    let mut out = WeightedGrid::zeros(u.kind, u.l_min, u.l_max, h_max).expect("valid window");
    for (l, h, x) in u.nonzeros() {
        out.add(l, h + n, x);
    }
    out
}

/// The E-space majorant through the operator route:
/// `V = ∂_x^{-S} U + I` with `U = A(U) - D(I)`.
pub fn majorant_e_neumann(p: &ProblemSpec, r: f64, delta: f64, initial: &WeightedGrid, params: &NormParams) -> Result<(WeightedGrid, NeumannResult)> {
    let a = operator_a(p, r, delta);
    let h_max = initial.h_max;
    if h_max < p.s {
        return Err(Error::Invalid("majorant window must reach h = S".into()));
    }
    let mut i_grid = initial.zeros_like();
    for (l, h, x) in initial.nonzeros() {
        if h < p.s {
            i_grid.set(l, h, x)?;
        }
    }
    let b = operator_minus_d_of_i(&a, p.s).apply(&i_grid).with_h_max(h_max - p.s);
    let res = neumann_solve(&a, &b, params, h_max + 8)?;
    let v = integrate(&res.u, p.s, h_max).add_grid(&i_grid);
    Ok((v, res))
}

/// E-space majorant from the recursion
/// `v_{l,h+S} = h! Σ_k Σ_{h1+h2=h} |b_{k,h1}| r |q|^{m0 l}/δ · v_{l,h2+k}/(h2! |q|^{m1 h2})`
/// with `v_{l,j} = w_{l,j}` for `j < S`.
pub fn solve_majorant_e(p: &ProblemSpec, r: f64, delta: f64, initial: &WeightedGrid) -> Result<WeightedGrid> {
    if !(delta > 0.0) {
        return Err(Error::Invalid("spectral gap must be positive".into()));
    }
    let q = p.q.modulus;
    let mut v = initial.zeros_like();
    for l in v.l_min..=v.l_max {
        for j in 0..p.s.min(v.h_max + 1) {
            v.set(l, j, initial.get(l, j))?;
        }
        for h in 0..=(v.h_max.saturating_sub(p.s)) {
            if h + p.s > v.h_max {
                break;
            }
            let mut acc = 0.0;
            for term in &p.terms {
                let lfac = q.powf((term.m0 as i64 * l) as f64) * r / delta;
                for &(h1, b) in term.b.terms() {
                    if h1 > h {
                        break;
                    }
                    let h2 = h - h1;
                    acc += b.norm() * lfac * rising_ratio(h2, h1) * q.powf(-((term.m1 * h2) as f64)) * v.get(l, h2 + term.k);
                }
            }
            v.set(l, h + p.s, acc)?;
        }
    }
    Ok(v)
}

/// H-space (derivative) majorant `v_{n,h}` from
/// `v_{n0,h+S}/(n0! h!) = Σ_k Σ_{h1+h2=h} |b_{k,h1}| Σ_{l1+l2=n0} 2^{l1+1} v_{l2,h2+k}/(l2! h2! |q|^{m1 h2})`
/// with `v_{n,j} = w_{n,j}` for `j < S`.
pub fn solve_majorant_h(p: &ProblemSpec, initial: &WeightedGrid) -> Result<WeightedGrid> {
    if initial.l_min != 0 {
        return Err(Error::Invalid("derivative majorant grids start at n = 0".into()));
    }
    let q = p.q.modulus;
    let n_max = initial.l_max;
    let mut u = WeightedGrid::zeros(SpaceKind::H, 0, n_max, initial.h_max)?;
    // work with u_{n,h} = v_{n,h}/n!
    let ln_fact: Vec<f64> = (0..=n_max as usize).map(ln_factorial).collect();
    for n in 0..=n_max {
        for j in 0..p.s.min(u.h_max + 1) {
            u.set(n, j, initial.get(n, j) / ln_fact[n as usize].exp())?;
        }
    }
    for h in 0..=(u.h_max.saturating_sub(p.s)) {
        if h + p.s > u.h_max {
            break;
        }
        for n0 in 0..=n_max {
            let mut acc = 0.0;
            for term in &p.terms {
                for &(h1, b) in term.b.terms() {
                    if h1 > h {
                        break;
                    }
                    let h2 = h - h1;
                    let w = b.norm() * rising_ratio(h2, h1) * q.powf(-((term.m1 * h2) as f64));
                    let mut conv = 0.0;
                    for l1 in 0..=n0 {
                        conv += 2f64.powi((l1 + 1) as i32) * u.get(n0 - l1, h2 + term.k);
                    }
                    acc += w * conv;
                }
            }
            u.set(n0, h + p.s, acc)?;
        }
    }
    let mut v = u.clone();
    for (n, h, x) in u.nonzeros() {
        v.set(n, h, x * ln_fact[n as usize].exp())?;
    }
    Ok(v)
}

/// Divide row `n` by `n!`: the coefficients of `V̂ = Σ v_{n,h}/n! ξ^n x^h/h!`.
pub fn to_taylor_normalized(v: &WeightedGrid) -> WeightedGrid {
    let mut out = v.zeros_like();
    for (n, h, x) in v.nonzeros() {
        out.set(n, h, x / ln_factorial(n.max(0) as usize).exp()).expect("nonnegative");
    }
    out
}

/// Upper bounds `w_{n,j} ≥ sup_{D̄_j} |∂^n W_j| / (j+1)^{r1 n/r2}` for the
/// polynomial initial data, from `Σ_{i≥n} |c_i| i!/(i-n)! ρ_j^{i-n}`.
pub fn initial_derivative_bounds(p: &ProblemSpec, n_max: usize, h_max: usize) -> Result<WeightedGrid> {
    let mut g = WeightedGrid::zeros(SpaceKind::H, 0, n_max as i64, h_max)?;
    let q = p.qv();
    for (j, datum) in p.initial.iter().enumerate() {
        let c = datum.borel_coeffs(q);
        let rho = crate::solver::disc_radius(j, p.r1, p.r2);
        let scale = ((j + 1) as f64).powf(p.r1 as f64 / p.r2 as f64);
        for n in 0..=n_max {
            let mut s = 0.0;
            for (i, ci) in c.iter().enumerate().skip(n) {
                s += ci.norm() * rising_ratio(i - n, n) * rho.powi((i - n) as i32);
            }
            g.set(n as i64, j, s / scale.powi(n as i32))?;
        }
    }
    Ok(g)
}

/// Column-norm constant of `x^s V(q^{h1} ξ, x)` from `(T0, X0)` to `(T1, X1)`.
pub fn lemma2_constant(s: usize, h1: usize, q_mod: f64, p_in: &NormParams, p_out: &NormParams, window: (i64, i64, usize)) -> f64 {
    let op = LinearOp {
        kind: SpaceKind::E,
        terms: vec![Elementary { coef: 1.0, s, deriv: 0, m0: h1, m1: 0 }],
        times_r: false,
        q_mod,
    };
    op.norm_on(window.0, window.1, window.2, p_in, p_out)
}

/// Column-norm constant of `∂_x^{-h2} V` from `(T0, X0)` to `(T1, X1)`.
pub fn lemma3_constant(h2: usize, q_mod: f64, p_in: &NormParams, p_out: &NormParams, window: (i64, i64, usize)) -> f64 {
    let op = LinearOp {
        kind: SpaceKind::E,
        terms: vec![Elementary { coef: 1.0, s: 0, deriv: -(h2 as i64), m0: 0, m1: 0 }],
        times_r: false,
        q_mod,
    };
    op.norm_on(window.0, window.1, window.2, p_in, p_out)
}

/// Column-norm constant `C` of `x^s (∂_x^{-h2} V)(q^{h1} ξ, x/q^{m1})` divided
/// by `X^{s+h2}`.
pub fn lemma1_constant(s: usize, h1: usize, h2: usize, m1: usize, q_mod: f64, p: &NormParams, window: (i64, i64, usize)) -> f64 {
    let op = LinearOp {
        kind: SpaceKind::E,
        terms: vec![Elementary { coef: 1.0, s, deriv: -(h2 as i64), m0: h1, m1 }],
        times_r: false,
        q_mod,
    };
    op.norm_on(window.0, window.1, window.2, p, p) / p.x.powi((s + h2) as i32)
}

/// Comparison of `w_{l,h} = sup_x |W_h(x q^l)|` with the E-space majorant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralDomination {
    pub spectral_gap: f64,
    pub r_coupling: f64,
    /// Cells with `w_{l,h} > v_{l,h} (1 + 1e-12)`.
    pub violations: Vec<(i64, usize)>,
    /// Largest `w_{l,h} / v_{l,h}` over cells with `v > 0`.
    pub max_ratio: f64,
    pub majorant: WeightedGrid,
}

impl SpiralDomination {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Build `v_{l,h}` from the spiral values of the initial data (`h < S`) and
/// check `w_{l,h} ≤ v_{l,h}` on every cell with `h ≤ h_max`.
///
/// The relative slack `1e-12` only absorbs rounding in the two recursions.
pub fn spiral_domination(p: &ProblemSpec, grid: &SpiralGrid, h_max: usize) -> Result<SpiralDomination> {
    let h_max = h_max.min(grid.h_count.saturating_sub(1));
    if h_max < p.s {
        return Err(Error::Invalid("domination window must reach h = S".into()));
    }
    let pts = &grid.base_points;
    let gap = crate::solver::spectral_gap(pts, &p.q, p.r1, p.r2);
    let r = crate::solver::coupling_r(p, pts);
    let mut init = WeightedGrid::zeros(SpaceKind::E, grid.l_min, grid.l_max, h_max)?;
    for l in grid.l_min..=grid.l_max {
        for j in 0..p.s {
            init.set(l, j, grid.sup_abs(l, j))?;
        }
    }
    let v = solve_majorant_e(p, r, gap, &init)?;
    let mut violations = Vec::new();
    let mut max_ratio = 0.0f64;
    for l in grid.l_min..=grid.l_max {
        for h in 0..=h_max {
            let (w, bound) = (grid.sup_abs(l, h), v.get(l, h));
            if bound > 0.0 {
                max_ratio = max_ratio.max(w / bound);
            }
            if w > bound * (1.0 + 1e-12) {
                violations.push((l, h));
            }
        }
    }
    Ok(SpiralDomination { spectral_gap: gap, r_coupling: r, violations, max_ratio, majorant: v })
}
