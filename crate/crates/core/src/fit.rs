//! Small least-squares helpers shared by the growth and remainder fits.

use crate::error::{Error, Result};

/// Affine model `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AffineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Largest `|y - fit|` over the fitted points.
    pub max_abs_residual: f64,
}

impl AffineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares on `(x, y)` pairs. Needs two distinct abscissae.
pub fn affine_lsq(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Data(format!("need at least two points, got {}", xs.len())));
    }
    if ys.iter().chain(xs).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in fit input".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_abs_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(AffineFit { intercept, slope, max_abs_residual })
}

/// Least-squares slope with the intercept raised until the line lies on or
/// above every point.
pub fn upper_affine_envelope(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    let mut fit = affine_lsq(xs, ys)?;
    let lift = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - fit.at(*x))
        .fold(f64::NEG_INFINITY, f64::max);
    fit.intercept += lift.max(0.0);
    // absorb rounding in `at` so that every point is dominated exactly
    for _ in 0..8 {
        let excess = xs.iter().zip(ys).map(|(x, y)| y - fit.at(*x)).fold(f64::NEG_INFINITY, f64::max);
        if excess <= 0.0 {
            break;
        }
        fit.intercept += excess.max(fit.intercept.abs() * f64::EPSILON);
    }
    Ok(fit)
}
