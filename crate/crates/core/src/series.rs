//! Truncated formal power series in one and two variables.
//!
//! A [`BivariateSeries`] stores `f[m][h]` for the expansion
//! `Σ f[m][h] t^m z^h / h!`; every operation below documents its index action
//! under that `/h!` convention. Truncation is silent: terms pushed past the
//! stored window are dropped.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// `q^n` for integer `n`, by exact power for real `q` and binary
/// exponentiation otherwise.
pub fn qpow(q: Complex64, n: i64) -> Complex64 {
    if q.im == 0.0 {
        return Complex64::new(q.re.powf(n as f64), 0.0);
    }
    let mut base = if n < 0 { q.inv() } else { q };
    let mut e = n.unsigned_abs();
    let mut acc = Complex64::new(1.0, 0.0);
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// `q^{n(n-1)/2}`, the order-1 q-Borel weight of the `n`-th coefficient.
pub fn q_triangular(q: Complex64, n: i64) -> Complex64 {
    qpow(q, n * (n - 1) / 2)
}

/// `(h+s)! / h!` as a float.
pub fn rising_ratio(h: usize, s: usize) -> f64 {
    ((h + 1)..=(h + s)).fold(1.0, |acc, i| acc * i as f64)
}

/// `ln(n!)` computed by summation; exact enough for the index ranges used here.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

pub fn factorial(n: usize) -> f64 {
    (2..=n).fold(1.0, |acc, i| acc * i as f64)
}

fn check_finite(c: &[Complex64]) -> Result<()> {
    if c.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Invalid("series coefficient is not finite".into()))
    }
}

/// Truncated series `c_0 + c_1 t + ... + c_M t^M`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateSeries {
    coeffs: Vec<Complex64>,
}

impl UnivariateSeries {
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Invalid("series needs at least one coefficient".into()));
        }
        check_finite(&coeffs)?;
        Ok(Self { coeffs })
    }

    pub fn zeros(order: usize) -> Self {
        Self { coeffs: vec![Complex64::new(0.0, 0.0); order + 1] }
    }

    /// The constant series `c`, padded with zeros up to `order`.
    pub fn constant(c: Complex64, order: usize) -> Self {
        let mut s = Self::zeros(order);
        s.coeffs[0] = c;
        s
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of `t^n`, zero past the truncation order.
    pub fn coeff(&self, n: usize) -> Complex64 {
        self.coeffs.get(n).copied().unwrap_or_default()
    }

    pub fn set(&mut self, n: usize, value: Complex64) {
        self.coeffs[n] = value;
    }

    /// Re-truncate (or zero-pad) to a new order.
    pub fn with_order(&self, order: usize) -> Self {
        let mut out = Self::zeros(order);
        for (n, c) in self.coeffs.iter().enumerate().take(order + 1) {
            out.coeffs[n] = *c;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.norm() == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let order = self.order().max(other.order());
        Self { coeffs: (0..=order).map(|n| self.coeff(n) + other.coeff(n)).collect() }
    }

    /// Truncated product, kept at `self`'s order.
    pub fn mul(&self, other: &Self) -> Self {
        let order = self.order();
        let mut out = Self::zeros(order);
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == Complex64::default() {
                continue;
            }
            for j in 0..=(order - i).min(other.order()) {
                out.coeffs[i + j] += a * other.coeffs[j];
            }
        }
        out
    }

    /// Multiply by the variable: index shift `n -> n+1`.
    pub fn shift_up(&self) -> Self {
        let mut out = Self::zeros(self.order());
        for n in 1..=self.order() {
            out.coeffs[n] = self.coeffs[n - 1];
        }
        out
    }

    /// Horner evaluation of the stored polynomial.
    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::default(), |acc, c| acc * x + c)
    }

    /// Formal q-Borel transform of order 1: `f_n -> f_n / q^{n(n-1)/2}`.
    pub fn borel_q(&self, q: Complex64) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c / q_triangular(q, n as i64))
                .collect(),
        }
    }

    /// Formal q-Laplace transform of order 1: `g_n -> q^{n(n-1)/2} g_n`.
    pub fn laplace_q(&self, q: Complex64) -> Self {
        Self {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| c * q_triangular(q, n as i64))
                .collect(),
        }
    }

    /// `(t σ_q)^p`: `c_m t^m -> q^{pm + p(p-1)/2} c_m t^{m+p}`.
    pub fn dilate_t(&self, q: Complex64, p: usize) -> Self {
        let order = self.order();
        let mut out = Self::zeros(order);
        let p = p as i64;
        for m in 0..=order {
            let target = m + p as usize;
            if target > order {
                break;
            }
            out.coeffs[target] = self.coeffs[m] * qpow(q, p * m as i64 + p * (p - 1) / 2);
        }
        out
    }
}

/// Dense `(M+1) x (H+1)` grid of `f[m][h]` for `Σ f[m][h] t^m z^h / h!`.
#[derive(Clone, Debug, PartialEq)]
pub struct BivariateSeries {
    m_order: usize,
    h_order: usize,
    data: Vec<Complex64>,
}

impl BivariateSeries {
    pub fn zeros(m_order: usize, h_order: usize) -> Self {
        Self {
            m_order,
            h_order,
            data: vec![Complex64::default(); (m_order + 1) * (h_order + 1)],
        }
    }

    /// Build from z-columns `X̂_h(t)`; every column is re-truncated to `m_order`.
    pub fn from_columns(columns: &[UnivariateSeries], m_order: usize) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Invalid("need at least one z-column".into()));
        }
        let mut out = Self::zeros(m_order, columns.len() - 1);
        for (h, col) in columns.iter().enumerate() {
            out.set_column(h, col);
        }
        Ok(out)
    }

    pub fn m_order(&self) -> usize {
        self.m_order
    }

    pub fn h_order(&self) -> usize {
        self.h_order
    }

    #[inline]
    fn idx(&self, m: usize, h: usize) -> usize {
        h * (self.m_order + 1) + m
    }

    pub fn get(&self, m: usize, h: usize) -> Complex64 {
        self.data[self.idx(m, h)]
    }

    pub fn set(&mut self, m: usize, h: usize, value: Complex64) {
        let i = self.idx(m, h);
        self.data[i] = value;
    }

    pub fn add_at(&mut self, m: usize, h: usize, value: Complex64) {
        let i = self.idx(m, h);
        self.data[i] += value;
    }

    /// The `h`-th z-coefficient series `X̂_h(t)`.
    pub fn column(&self, h: usize) -> UnivariateSeries {
        let start = self.idx(0, h);
        UnivariateSeries { coeffs: self.data[start..start + self.m_order + 1].to_vec() }
    }

    pub fn set_column(&mut self, h: usize, col: &UnivariateSeries) {
        for m in 0..=self.m_order {
            self.set(m, h, col.coeff(m));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, a: Complex64) -> Self {
        Self { data: self.data.iter().map(|c| c * a).collect(), ..self.clone() }
    }

    pub fn map_columns(&self, f: impl Fn(&UnivariateSeries) -> UnivariateSeries) -> Self {
        let mut out = Self::zeros(self.m_order, self.h_order);
        for h in 0..=self.h_order {
            out.set_column(h, &f(&self.column(h)));
        }
        out
    }

    /// Column-wise `(t σ_q)^p`.
    pub fn dilate_t(&self, q: Complex64, p: usize) -> Self {
        self.map_columns(|c| c.dilate_t(q, p))
    }

    /// Column-wise formal q-Borel transform in `t`.
    pub fn borel_q(&self, q: Complex64) -> Self {
        self.map_columns(|c| c.borel_q(q))
    }

    /// Column-wise formal q-Laplace transform in `τ`.
    pub fn laplace_q(&self, q: Complex64) -> Self {
        self.map_columns(|c| c.laplace_q(q))
    }

    /// Evaluate `Σ_h Σ_m f[m][h] t^m z^h/h!` restricted to `m < n_terms`.
    pub fn partial_sum(&self, t: Complex64, z: Complex64, n_terms: usize) -> Complex64 {
        let mut total = Complex64::default();
        let mut zh = Complex64::new(1.0, 0.0);
        for h in 0..=self.h_order {
            let mut inner = Complex64::default();
            let mut tm = Complex64::new(1.0, 0.0);
            for m in 0..n_terms.min(self.m_order + 1) {
                inner += self.get(m, h) * tm;
                tm *= t;
            }
            total += inner * zh;
            zh *= z / (h as f64 + 1.0);
        }
        total
    }
}

/// Polynomial `Σ_{s ∈ I} b_s z^s` with strictly increasing degrees.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    terms: Vec<(usize, Complex64)>,
}

impl Polynomial {
    pub fn new(mut terms: Vec<(usize, Complex64)>) -> Result<Self> {
        terms.sort_by_key(|t| t.0);
        if terms.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invalid("polynomial lists a degree twice".into()));
        }
        check_finite(&terms.iter().map(|t| t.1).collect::<Vec<_>>())?;
        Ok(Self { terms })
    }

    pub fn one() -> Self {
        Self { terms: vec![(0, Complex64::new(1.0, 0.0))] }
    }

    pub fn monomial(s: usize, b: Complex64) -> Self {
        Self { terms: vec![(s, b)] }
    }

    pub fn terms(&self) -> &[(usize, Complex64)] {
        &self.terms
    }

    /// The support set `I_k`.
    pub fn degrees(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|t| t.0)
    }

    pub fn coeff(&self, s: usize) -> Complex64 {
        self.terms.iter().find(|t| t.0 == s).map(|t| t.1).unwrap_or_default()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.terms.iter().map(|(s, b)| b * z.powu(*s as u32)).sum()
    }
}

/// `P(z) · F(t,z)`; multiplying by `z^s` sends `f[m][h]` to index `(m, h+s)`
/// with weight `(h+s)!/h!`.
pub fn mul_poly_z(p: &Polynomial, f: &BivariateSeries) -> BivariateSeries {
    let (mo, ho) = (f.m_order, f.h_order);
    let mut g = BivariateSeries::zeros(mo, ho);
    for &(s, b) in &p.terms {
        for h in 0..=ho {
            if h + s > ho {
                break;
            }
            let w = b * rising_ratio(h, s);
            for m in 0..=mo {
                g.add_at(m, h + s, w * f.get(m, h));
            }
        }
    }
    g
}

/// `(z ∂_z + 1)^r`: row `h` is multiplied by `(h+1)^r`.
pub fn euler_z(f: &BivariateSeries, r: u32) -> BivariateSeries {
    let mut g = f.clone();
    for h in 0..=f.h_order {
        let w = ((h + 1) as f64).powi(r as i32);
        for m in 0..=f.m_order {
            g.set(m, h, f.get(m, h) * w);
        }
    }
    g
}

/// `∂_z^k`: an index shift `g[m][h] = f[m][h+k]`, leaving `H - k` rows.
pub fn diff_z(f: &BivariateSeries, k: usize) -> Result<BivariateSeries> {
    if k > f.h_order {
        return Err(Error::EmptySeries { order: k, available: f.h_order });
    }
    let mut g = BivariateSeries::zeros(f.m_order, f.h_order - k);
    for h in 0..=g.h_order {
        for m in 0..=f.m_order {
            g.set(m, h, f.get(m, h + k));
        }
    }
    Ok(g)
}

/// `z -> z q^{-m1}`: `g[m][h] = q^{-m1 h} f[m][h]`.
pub fn scale_z(f: &BivariateSeries, q: Complex64, m1: usize) -> BivariateSeries {
    let mut g = f.clone();
    for h in 0..=f.h_order {
        let w = qpow(q, -((m1 * h) as i64));
        for m in 0..=f.m_order {
            g.set(m, h, f.get(m, h) * w);
        }
    }
    g
}

pub fn borel_q_formal(f: &UnivariateSeries, q: Complex64) -> UnivariateSeries {
    f.borel_q(q)
}

pub fn laplace_q_formal(g: &UnivariateSeries, q: Complex64) -> UnivariateSeries {
    g.laplace_q(q)
}
