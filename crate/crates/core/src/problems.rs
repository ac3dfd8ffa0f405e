//! Ready-made problems used by the test suites and the shipped problem files.

use num_complex::Complex64;

use crate::qlaplace::{DomainSpec, QParameter};
use crate::series::Polynomial;
use crate::solver::{FitConfig, InitialDatum, OperatorTerm, ProblemSpec, Side, Truncation};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Sample of `V`: a small square around 1 together with its centre.
pub fn default_v_sample() -> Vec<Complex64> {
    vec![c(0.9, -0.1), c(1.1, -0.1), c(1.1, 0.1), c(0.9, 0.1), c(1.0, 0.0)]
}

/// `S = 1`, `r1 = r2 = 1`, `q = 2`, one term `k = 0, m0 = 0, m1 = 1, b_0 = 1`,
/// `X̂_0 = 1`. Its Borel coefficients are
/// `W_h(τ) = 2^{-h(h-1)/2} / Π_{j=1}^{h} (1 + jτ)`.
pub fn worked_example() -> ProblemSpec {
    with_r1(1)
}

/// The same problem with `r1 = 0`, where `W_h(τ) = 2^{-h(h-1)/2} / (1 + τ)^h`.
pub fn r1_zero_companion() -> ProblemSpec {
    with_r1(0)
}

fn with_r1(r1: u32) -> ProblemSpec {
    ProblemSpec {
        q: QParameter::new(2.0, Some(1), None, 1).expect("valid q"),
        s: 1,
        r1,
        r2: 1,
        terms: vec![OperatorTerm { k: 0, m0: 0, m1: 1, b: Polynomial::one() }],
        initial: vec![InitialDatum { side: Side::T, coeffs: vec![c(1.0, 0.0)] }],
        domain: DomainSpec::new(c(1.0, 0.0), 0.5, 1.0, default_v_sample(), 0.1).expect("valid domain"),
        truncation: Truncation { m: 24, h: 24, l_min: -20, l_max: 20, tail_tol: 1e-17 },
        fit: FitConfig { n: 12, t_rays: 3, t_points: 16 },
    }
}
