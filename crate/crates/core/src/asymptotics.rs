//! Remainder profiles of the analytic solution against partial sums of the
//! formal one, and the fits that certify q-Gevrey order-1 asymptotics.
//!
//! Also hosts the two coefficient certificates built on the Borel plane: the
//! growth of `W_h` along the discrete spiral and the decay of its Taylor
//! coefficients.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{affine_lsq, upper_affine_envelope, AffineFit};
use crate::majorant::{find_x, initial_derivative_bounds, norm_h, operator_b, solve_majorant_h, to_taylor_normalized, NormParams};
use crate::qlaplace::{fit_growth, in_spiral_domain, laplace_sum_log, GrowthFit, LaplaceOptions, SpiralGrid};
use crate::series::{factorial, ln_factorial, BivariateSeries};
use crate::solver::{borel_taylor, disc_radius, BorelEvaluator, ProblemSpec};

/// Remainders below this multiple of the rounding estimate are unresolved.
const RESOLVE_FACTOR: f64 = 100.0;

/// `Γ(r1 (n+1)/r2)`, or `1` when `r1 = 0`.
pub fn gamma_factor(n: usize, r1: u32, r2: u32) -> f64 {
    if r1 == 0 {
        return 1.0;
    }
    let num = r1 as usize * (n + 1);
    if num.is_multiple_of(r2 as usize) {
        factorial(num / r2 as usize - 1)
    } else {
        statrs::function::gamma::gamma(num as f64 / r2 as f64)
    }
}

/// Sample points for the sup over `t`: `t_rays` rays spread over
/// `arg λ ± π/4`, each with `t_points` moduli log-spaced in
/// `[r0 |q|^{-N}/256, r0/2]`, so that `|q|^n |t|` is small at the bottom of
/// the range for every `n ≤ N`. Points outside the spiral domain are dropped.
pub fn t_samples(p: &ProblemSpec) -> Result<Vec<Complex64>> {
    let fit = &p.fit;
    let r0 = p.domain.r0;
    let arg0 = p.domain.lambda.arg();
    let lo = (r0.ln() - fit.n as f64 * p.q.modulus.ln()).exp() / 256.0;
    let hi = 0.5 * r0;
    let mut out = Vec::new();
    for i in 0..fit.t_rays {
        let phi = if fit.t_rays == 1 {
            arg0
        } else {
            arg0 - std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * i as f64 / (fit.t_rays - 1) as f64
        };
        for j in 0..fit.t_points {
            let frac = if fit.t_points == 1 { 1.0 } else { j as f64 / (fit.t_points - 1) as f64 };
            let t = Complex64::from_polar(lo * (hi / lo).powf(frac), phi);
            if in_spiral_domain(t, &p.domain, &p.q)?.inside {
                out.push(t);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Domain("no sample of t lies in the spiral domain".into()));
    }
    Ok(out)
}

/// Extra Taylor terms kept beyond `N`; the germ converges at ratio `≤ 1/2` on `D̄_h`.
const TAIL_TERMS: usize = 64;

/// `G_{n,h}(t) = (L(W_h)(t) − Σ_{m<n} f_{m,h} t^m) / (q^{n(n−1)/2} t^n)` for
/// every sample, `1 ≤ n ≤ N` and `h ≤ H`.
///
/// By the moment identity `L(τ^m)(t) = q^{m(m−1)/2} t^m`, the numerator is the
/// Laplace transform of the Taylor remainder `W_h − Σ_{m<n} c_{m,h} τ^m`. Each
/// term is formed as `((W_h − P_n)/τ^n)(τ) · τ^n/(Θ(τ/t) q^{n(n−1)/2} t^n)`
/// with the second factor in log space, which avoids both the cancellation of
/// `X − Σ f t^m` and the underflow of `R_n` at small `|t|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRemainders {
    pub t_samples: Vec<Complex64>,
    pub n_max: usize,
    pub h_count: usize,
    pub q_mod: f64,
    values: Vec<Complex64>,
    noise: Vec<f64>,
}

impl NormalizedRemainders {
    fn idx(&self, i: usize, n: usize, h: usize) -> usize {
        (i * self.n_max + (n - 1)) * self.h_count + h
    }

    pub fn value(&self, i: usize, n: usize, h: usize) -> Complex64 {
        self.values[self.idx(i, n, h)]
    }

    /// Rounding estimate of `value(i, n, h)`.
    pub fn noise(&self, i: usize, n: usize, h: usize) -> f64 {
        self.noise[self.idx(i, n, h)]
    }

    /// `ln(|q|^{n(n−1)/2} |t_i|^n)`.
    pub fn ln_scale(&self, i: usize, n: usize) -> f64 {
        let nf = n as f64;
        0.5 * nf * (nf - 1.0) * self.q_mod.ln() + nf * self.t_samples[i].norm().ln()
    }
}

pub fn normalized_remainders(p: &ProblemSpec, ts: &[Complex64], n_max: usize) -> Result<NormalizedRemainders> {
    if n_max == 0 {
        return Err(Error::Invalid("N must be at least 1".into()));
    }
    for t in ts {
        let chk = in_spiral_domain(*t, &p.domain, &p.q)?;
        if !chk.inside {
            return Err(Error::Domain(format!("t = {t} is outside the spiral domain (margin {:.3e})", chk.margin)));
        }
    }
    let order = n_max + TAIL_TERMS;
    let taylor = borel_taylor(p, order)?;
    let ev = BorelEvaluator::new(p, None)?;
    let h_count = ev.h_count();
    let radii: Vec<f64> = (0..h_count).map(|h| disc_radius(h, p.r1, p.r2)).collect();
    let ln_q = p.q.ln();
    let opts = LaplaceOptions::with_tol(p.truncation.tail_tol);
    let block = n_max * h_count;
    let eps = f64::EPSILON;

    let per_t: Vec<(Vec<Complex64>, Vec<f64>)> = ts
        .par_iter()
        .map(|&t| {
            let ln_t = t.ln();
            let sums = laplace_sum_log(
                2 * block,
                |_, tau, ln_kernel, out| {
                    let ln_tau = tau.ln();
                    let mut w: Option<Vec<Complex64>> = None;
                    for h in 0..h_count {
                        let c = taylor[h].coeffs();
                        let mut g = vec![Complex64::default(); n_max + 1];
                        let mut a = vec![0.0f64; n_max + 1];
                        if tau.norm() <= radii[h] {
                            // backward Horner: g_n = Σ_{k≥0} c_{n+k} τ^k
                            let (mut acc, mut aacc) = (Complex64::default(), 0.0);
                            for k in (1..=order).rev() {
                                let ck = c.get(k).copied().unwrap_or_default();
                                acc = ck + tau * acc;
                                aacc = ck.norm() + tau.norm() * aacc;
                                if k <= n_max {
                                    g[k] = acc;
                                    a[k] = aacc;
                                }
                            }
                        } else {
                            let wv = w.get_or_insert_with(|| ev.eval(tau).unwrap_or_else(|_| vec![Complex64::new(f64::NAN, 0.0); h_count]));
                            // g_n = (g_{n-1} − c_{n-1}) / τ from g_0 = W_h(τ)
                            let it = 1.0 / tau;
                            g[0] = wv[h];
                            a[0] = wv[h].norm();
                            for n in 1..=n_max {
                                let cn = c.get(n - 1).copied().unwrap_or_default();
                                g[n] = (g[n - 1] - cn) * it;
                                a[n] = (a[n - 1] + cn.norm()) * it.norm();
                            }
                        }
                        for n in 1..=n_max {
                            let nf = n as f64;
                            let lw = ln_kernel + nf * (ln_tau - ln_t) - 0.5 * nf * (nf - 1.0) * ln_q;
                            let k = if lw.re < -745.0 { Complex64::default() } else { lw.exp() };
                            let slot = (n - 1) * h_count + h;
                            out[slot] = if g[n] == Complex64::default() { Complex64::default() } else { g[n] * k };
                            out[block + slot] = Complex64::new(4.0 * eps * a[n] * k.norm(), 0.0);
                        }
                    }
                    out.iter().all(|v| v.re.is_finite() && v.im.is_finite())
                },
                t,
                p.domain.lambda,
                &p.q,
                &opts,
            )?;
            let values: Vec<Complex64> = sums[..block].iter().map(|v| v.value).collect();
            let noise: Vec<f64> = (0..block).map(|i| sums[block + i].value.re + 8.0 * eps * sums[i].abs_sum).collect();
            Ok((values, noise))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(ts.len() * block);
    let mut noise = Vec::with_capacity(ts.len() * block);
    for (v, e) in per_t {
        values.extend(v);
        noise.extend(e);
    }
    Ok(NormalizedRemainders { t_samples: ts.to_vec(), n_max, h_count, q_mod: p.q.modulus, values, noise })
}

/// `R_n(t) = |X(t,z) − Σ_h Σ_{m<n} f_{m,h} t^m z^h/h!|` for `n = 1..=N` and
/// the normalized maxima `ρ_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderProfile {
    pub z: Complex64,
    pub n_max: usize,
    pub r1: u32,
    pub r2: u32,
    pub q_mod: f64,
    pub t_samples: Vec<Complex64>,
    /// `remainders[i][n-1] = R_n(t_i)`; may underflow to zero for small `|t_i|`.
    pub remainders: Vec<Vec<f64>>,
    /// `R_n(t_i) / (|q|^{n(n−1)/2} |t_i|^n)`.
    pub scaled: Vec<Vec<f64>>,
    /// Rounding estimate of `scaled`.
    pub noise: Vec<Vec<f64>>,
    /// `normalized[n-1] = ρ_n` over resolved samples; `None` when no sample resolves.
    pub normalized: Vec<Option<f64>>,
    /// Per sample, the `n` minimizing `R_n(t)`.
    pub n_star: Vec<usize>,
}

impl RemainderProfile {
    pub fn is_resolved(&self, i: usize, n: usize) -> bool {
        self.scaled[i][n - 1] > RESOLVE_FACTOR * self.noise[i][n - 1]
    }
}

/// Combine the per-coefficient remainders at a fixed `z`.
pub fn remainder_profile(p: &ProblemSpec, rem: &NormalizedRemainders, z: Complex64) -> RemainderProfile {
    let mut zp = Vec::with_capacity(rem.h_count);
    let mut zh = Complex64::new(1.0, 0.0);
    for h in 0..rem.h_count {
        zp.push(zh);
        zh *= z / (h as f64 + 1.0);
    }
    let ns = rem.t_samples.len();
    let mut scaled = vec![vec![0.0; rem.n_max]; ns];
    let mut noise = vec![vec![0.0; rem.n_max]; ns];
    let mut remainders = vec![vec![0.0; rem.n_max]; ns];
    for i in 0..ns {
        for n in 1..=rem.n_max {
            let mut acc = Complex64::default();
            let mut err = 0.0;
            for (h, w) in zp.iter().enumerate() {
                acc += rem.value(i, n, h) * w;
                err += rem.noise(i, n, h) * w.norm();
            }
            scaled[i][n - 1] = acc.norm();
            noise[i][n - 1] = err;
            remainders[i][n - 1] = acc.norm() * rem.ln_scale(i, n).exp();
        }
    }
    let mut prof = RemainderProfile {
        z,
        n_max: rem.n_max,
        r1: p.r1,
        r2: p.r2,
        q_mod: rem.q_mod,
        t_samples: rem.t_samples.clone(),
        remainders,
        scaled,
        noise,
        normalized: Vec::new(),
        n_star: Vec::new(),
    };
    prof.normalized = (1..=rem.n_max)
        .map(|n| {
            (0..ns)
                .filter(|&i| prof.is_resolved(i, n))
                .map(|i| prof.scaled[i][n - 1] / gamma_factor(n, p.r1, p.r2))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    prof.n_star = prof
        .remainders
        .iter()
        .map(|r| r.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i + 1).unwrap_or(1))
        .collect();
    prof
}

/// Profile of the single coefficient `X_h(t) = L(W_h)(t)` with the plain
/// normalization `|q|^{n(n−1)/2}|t|^n` (no `Γ` factor).
pub fn coefficient_profile(p: &ProblemSpec, rem: &NormalizedRemainders, h: usize) -> Result<RemainderProfile> {
    if h >= rem.h_count {
        return Err(Error::Invalid(format!("h = {h} exceeds the computed range 0..{}", rem.h_count)));
    }
    let mut single = p.clone();
    single.r1 = 0;
    let mut prof = remainder_profile(&single, rem, Complex64::default());
    let ns = rem.t_samples.len();
    for i in 0..ns {
        for n in 1..=rem.n_max {
            let v = rem.value(i, n, h).norm();
            prof.scaled[i][n - 1] = v;
            prof.noise[i][n - 1] = rem.noise(i, n, h);
            prof.remainders[i][n - 1] = v * rem.ln_scale(i, n).exp();
        }
    }
    prof.normalized = (1..=rem.n_max)
        .map(|n| {
            (0..ns)
                .filter(|&i| prof.is_resolved(i, n))
                .map(|i| prof.scaled[i][n - 1])
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    prof.z = Complex64::default();
    Ok(prof)
}

/// Fitted `ρ_n ≤ C̃ D̃^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Constant lifted so that the bound holds for every computed `n`.
    pub c_tilde: f64,
    pub d_tilde: f64,
    /// `exp(intercept)` of the least-squares fit before lifting.
    pub c_tilde_fit: f64,
    /// `max |log ρ_n − fit|` over the fitted range.
    pub slope_residual: f64,
    /// `n` values that entered the fit.
    pub fitted_n: Vec<usize>,
    /// Largest `n` checked against the bound.
    pub n_checked: usize,
    /// No remainder rises above rounding level: the expansion is exact on the samples.
    pub exact: bool,
    /// `ρ_n ≤ C̃ D̃^n` for every resolved `n`, including those outside the fit.
    pub bound_holds: bool,
    pub per_h: Option<PerHFit>,
    pub k1: Option<f64>,
    pub k0: Option<f64>,
}

/// Least-squares affine fit of `log ρ_n` over `n ∈ [2, N]`.
pub fn gevrey_fit(profile: &RemainderProfile) -> Result<FitReport> {
    if profile.n_max < 6 {
        return Err(Error::Invalid(format!("Gevrey fit needs N >= 6, got {}", profile.n_max)));
    }
    let resolved: Vec<(usize, f64)> = profile
        .normalized
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|v| (i + 1, v)))
        .collect();
    if let Some((n, v)) = resolved.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite normalized remainder {v} at n = {n}")));
    }
    if resolved.is_empty() {
        return Ok(FitReport {
            c_tilde: 1.0,
            d_tilde: 1.0,
            c_tilde_fit: 1.0,
            slope_residual: 0.0,
            fitted_n: Vec::new(),
            n_checked: profile.n_max,
            exact: true,
            bound_holds: true,
            per_h: None,
            k1: None,
            k0: None,
        });
    }
    let fitted: Vec<(usize, f64)> = resolved.iter().cloned().filter(|(n, _)| *n >= 2).collect();
    let xs: Vec<f64> = fitted.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = fitted.iter().map(|(_, v)| v.ln()).collect();
    let fit = affine_lsq(&xs, &ys)?;
    let lift = resolved.iter().map(|(n, v)| v.ln() - fit.at(*n as f64)).fold(0.0f64, f64::max);
    let c_tilde = (fit.intercept + lift).exp() * (1.0 + 1e-12);
    let d_tilde = fit.slope.exp();
    let bound_holds = resolved.iter().all(|(n, v)| *v <= c_tilde * d_tilde.powi(*n as i32));
    Ok(FitReport {
        c_tilde,
        d_tilde,
        c_tilde_fit: fit.intercept.exp(),
        slope_residual: fit.max_abs_residual,
        fitted_n: fitted.iter().map(|(n, _)| *n).collect(),
        n_checked: profile.n_max,
        exact: false,
        bound_holds,
        per_h: None,
        k1: None,
        k0: None,
    })
}

/// Fit of one coefficient's remainder `|L(W_h)(t) − Σ_{m<n} f_{m,h} t^m| ≤ D(h) B(h)^n |q|^{n(n−1)/2}|t|^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerHRow {
    pub h: usize,
    pub b: f64,
    pub d: f64,
    /// Coefficient growth `|f_{n,h}|/|q|^{n(n−1)/2} ≤ C(h) A(h)^n`.
    pub a: f64,
    pub c: f64,
    /// `max{m : |q^m λ| < 1/(2A(h))}`.
    pub m_h: i64,
}

/// Second-stage fit `B(h) = A1 (h+1)^e`, `D(h) = A2 (h+1)^e h! A3^h |q|^{−h²/4}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerHFit {
    pub rows: Vec<PerHRow>,
    /// Rows used for the exponent regression.
    pub exponent_rows: Vec<usize>,
    pub exponent: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Smallest `h` after which the fitted `D(h)` decreases.
    pub d_decreasing_from: Option<usize>,
}

/// Per-coefficient fits over `n ∈ [2, N]`; the exponent regression uses rows
/// with `h ≥ h_min`.
pub fn per_h_constants(p: &ProblemSpec, rem: &NormalizedRemainders, h_min: usize) -> Result<PerHFit> {
    let n_max = rem.n_max;
    if n_max < 3 {
        return Err(Error::Invalid(format!("per-coefficient fits need N >= 3, got {n_max}")));
    }
    let taylor = borel_taylor(p, n_max)?;
    let lq = p.q.modulus.ln();
    let mut rows = Vec::new();
    for h in 0..rem.h_count {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (2..=n_max)
            .filter_map(|n| {
                (0..rem.t_samples.len())
                    .filter(|&i| rem.value(i, n, h).norm() > RESOLVE_FACTOR * rem.noise(i, n, h))
                    .map(|i| rem.value(i, n, h).norm())
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
                    .map(|v| (n as f64, v.ln()))
            })
            .unzip();
        if xs.len() < 2 {
            continue;
        }
        let env = upper_affine_envelope(&xs, &ys)?;
        let (cx, cy): (Vec<f64>, Vec<f64>) = (1..=n_max)
            .filter_map(|n| {
                let v = taylor[h].coeff(n).norm();
                (v > 0.0).then(|| (n as f64, v.ln()))
            })
            .unzip();
        let (a, c) = if cx.len() >= 2 {
            let e = upper_affine_envelope(&cx, &cy)?;
            (e.slope.exp(), e.intercept.exp())
        } else {
            (f64::NAN, f64::NAN)
        };
        let m_h = if a.is_finite() && a > 0.0 {
            (-(2.0 * p.domain.lambda.norm() * a).ln() / lq).ceil() as i64 - 1
        } else {
            i64::MAX
        };
        rows.push(PerHRow { h, b: env.slope.exp(), d: env.intercept.exp(), a, c, m_h });
    }
    let used: Vec<&PerHRow> = rows.iter().filter(|r| r.h >= h_min.max(1)).collect();
    if used.len() < 2 {
        return Err(Error::Data(format!("only {} coefficient rows resolved for the exponent fit", used.len())));
    }
    let lx: Vec<f64> = used.iter().map(|r| ((r.h + 1) as f64).ln()).collect();
    let lb: Vec<f64> = used.iter().map(|r| r.b.ln()).collect();
    let bfit: AffineFit = affine_lsq(&lx, &lb)?;
    let e = bfit.slope;
    let hx: Vec<f64> = used.iter().map(|r| r.h as f64).collect();
    let dy: Vec<f64> = used
        .iter()
        .map(|r| r.d.ln() - e * ((r.h + 1) as f64).ln() - ln_factorial(r.h) + 0.25 * (r.h * r.h) as f64 * lq)
        .collect();
    let dfit = affine_lsq(&hx, &dy)?;
    let d_decreasing_from = (0..rows.len()).find(|&i| rows[i..].windows(2).all(|w| w[1].d < w[0].d)).map(|i| rows[i].h);
    Ok(PerHFit {
        exponent_rows: used.iter().map(|r| r.h).collect(),
        exponent: e,
        a1: bfit.intercept.exp(),
        a2: dfit.intercept.exp(),
        a3: dfit.slope.exp(),
        d_decreasing_from,
        rows,
    })
}

/// Growth of `w_{l,h} = sup_x |W_h(x q^l)|` along the spiral: one upper
/// affine envelope of `log w_{l,h} − (l²/2) log|q|` per `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub per_h: Vec<Option<GrowthFit>>,
    /// Largest `log w − envelope` over all rows; `≤ 0` when certified.
    pub max_violation: f64,
    /// Smallest fitted `T` over the rows.
    pub t_min: f64,
    pub l_max: i64,
}

impl GrowthCertificate {
    pub fn holds(&self) -> bool {
        self.max_violation <= 0.0 && self.t_min.is_finite() && self.t_min > 0.0
    }
}

pub fn growth_certificate(grid: &SpiralGrid, q_mod: f64, h_max: usize) -> Result<GrowthCertificate> {
    let ls: Vec<i64> = (grid.l_min..=grid.l_max).collect();
    let lq = q_mod.ln();
    let mut per_h = Vec::new();
    let mut max_violation = f64::NEG_INFINITY;
    let mut t_min = f64::INFINITY;
    for h in 0..=h_max.min(grid.h_count - 1) {
        let w: Vec<f64> = ls.iter().map(|&l| grid.sup_abs(l, h)).collect();
        let g = fit_growth(&ls, &w, q_mod)?;
        if let Some(g) = &g {
            for (&l, &wl) in ls.iter().zip(&w) {
                if wl > 0.0 {
                    let y = wl.ln() - 0.5 * (l * l) as f64 * lq;
                    max_violation = max_violation.max(y - g.envelope.at(l as f64));
                }
            }
            t_min = t_min.min(g.t);
        }
        per_h.push(g);
    }
    Ok(GrowthCertificate { per_h, max_violation: max_violation.max(f64::MIN), t_min, l_max: grid.l_max })
}

/// Constants of `|∂^n W_j(0)|/n! ≤ C₁ T₁^{-n} X₁^{-j} j! (j+1)^{r1 n/r2} |q|^{−j²/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub c1: f64,
    pub t1: f64,
    pub x1: f64,
    /// Entries of the window exceeding the bound.
    pub violations: usize,
    /// Largest `coefficient / bound`.
    pub max_ratio: f64,
}

/// Derivative decay on the Taylor window `n ≤ n_max`, `j ≤ j_max`, from a
/// plane fit and from the H-space majorant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCertificate {
    pub n_max: usize,
    pub j_max: usize,
    pub fitted: DecayConstants,
    pub majorant: DecayConstants,
    /// Entries where `n!|c_{n,j}|/(j+1)^{r1 n/r2}` exceeds the majorant `v_{n,j}`.
    pub domination_violations: usize,
}

impl DerivativeCertificate {
    pub fn holds(&self) -> bool {
        self.fitted.violations == 0 && self.majorant.violations == 0 && self.domination_violations == 0
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *slot = det(m) / d;
    }
    Some(out)
}

/// `ln` of `j! (j+1)^{r1 n/r2} |q|^{−j²/2}`.
fn ln_decay_scale(p: &ProblemSpec, n: usize, j: usize) -> f64 {
    ln_factorial(j) + p.r1 as f64 * n as f64 / p.r2 as f64 * ((j + 1) as f64).ln() - 0.5 * (j * j) as f64 * p.q.modulus.ln()
}

fn count_violations(p: &ProblemSpec, taylor: &BivariateSeries, n_max: usize, j_max: usize, c1: f64, t1: f64, x1: f64) -> (usize, f64) {
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    for j in 0..=j_max {
        for n in 0..=n_max {
            let c = taylor.get(n, j).norm();
            if c == 0.0 {
                continue;
            }
            let ln_bound = c1.ln() - n as f64 * t1.ln() - j as f64 * x1.ln() + ln_decay_scale(p, n, j);
            let ratio = (c.ln() - ln_bound).exp();
            max_ratio = max_ratio.max(ratio);
            if ratio > 1.0 {
                violations += 1;
            }
        }
    }
    (violations, max_ratio)
}

/// `taylor` holds `c_{n,j} = ∂^n W_j(0)/n!` (the output of the Borel-plane
/// Taylor recursion).
pub fn derivative_certificate(p: &ProblemSpec, taylor: &BivariateSeries, n_max: usize, j_max: usize) -> Result<DerivativeCertificate> {
    if n_max > taylor.m_order() || j_max > taylor.h_order() {
        return Err(Error::Invalid(format!(
            "window n <= {n_max}, j <= {j_max} exceeds the Taylor grid ({} x {})",
            taylor.m_order(),
            taylor.h_order()
        )));
    }
    // plane fit of ln(c / scale) = α + β n + γ j, then lifted
    let mut pts = Vec::new();
    for j in 0..=j_max {
        for n in 0..=n_max {
            let c = taylor.get(n, j).norm();
            if c > 0.0 {
                pts.push((n as f64, j as f64, c.ln() - ln_decay_scale(p, n, j)));
            }
        }
    }
    if pts.is_empty() {
        return Err(Error::Data("the Taylor window is identically zero".into()));
    }
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(n, j, y) in &pts {
        let row = [1.0, n, j];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * y;
        }
    }
    let [alpha, beta, gamma] = solve3(ata, atb).unwrap_or_else(|| {
        let top = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        [top, 0.0, 0.0]
    });
    let lift = pts.iter().map(|&(n, j, y)| y - (alpha + beta * n + gamma * j)).fold(f64::NEG_INFINITY, f64::max);
    let c1 = (alpha + lift).exp() * (1.0 + 1e-12);
    let (t1, x1) = ((-beta).exp(), (-gamma).exp());
    let (violations, max_ratio) = count_violations(p, taylor, n_max, j_max, c1, t1, x1);
    let fitted = DecayConstants { c1, t1, x1, violations, max_ratio };

    // majorant route: C₁ is the H-norm of V̂ = Σ v_{n,j}/n! ξ^n x^j/j!
    let init = initial_derivative_bounds(p, n_max, j_max)?;
    let v = solve_majorant_h(p, &init)?;
    let t1m = 0.45;
    let base = NormParams::new(t1m, 1.0, p.q.modulus)?;
    let xs = find_x(&operator_b(p), &base, 1.0, 0, n_max as i64, j_max)?;
    let params = base.with_x(xs.x);
    let c1m = norm_h(&to_taylor_normalized(&v), &params) * (1.0 + 1e-12);
    let (violations, max_ratio) = count_violations(p, taylor, n_max, j_max, c1m, t1m, xs.x);
    let majorant = DecayConstants { c1: c1m, t1: t1m, x1: xs.x, violations, max_ratio };

    let mut domination_violations = 0;
    for j in 0..=j_max {
        for n in 0..=n_max {
            let w = (ln_factorial(n) + taylor.get(n, j).norm().ln() - p.r1 as f64 * n as f64 / p.r2 as f64 * ((j + 1) as f64).ln()).exp();
            if w > v.get(n as i64, j) * (1.0 + 1e-12) {
                domination_violations += 1;
            }
        }
    }
    Ok(DerivativeCertificate { n_max, j_max, fitted, majorant, domination_violations })
}
