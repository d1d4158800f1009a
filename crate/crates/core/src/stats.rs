//! Least-squares line fits for log-log rate estimates.

use serde::Serialize;

use crate::error::{Result, TemError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `sqrt(SSR / (n - 2))`.
    pub residual_std_error: f64,
    /// Standard error of the slope estimate.
    pub slope_std_error: f64,
    pub points: usize,
}

/// Ordinary least squares `y = intercept + slope * x`; needs at least 3 points.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(TemError::Domain("fit_line: length mismatch".into()));
    }
    if n < 3 {
        return Err(TemError::config(
            "fit",
            format!("need at least 3 points, got {n}"),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(TemError::Domain("fit_line: non-finite input".into()));
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    if sxx == 0.0 {
        return Err(TemError::config("fit", "all abscissae coincide"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let residual_std_error = (ssr / (nf - 2.0)).sqrt();
    Ok(LinearFit {
        slope,
        intercept,
        residual_std_error,
        slope_std_error: residual_std_error / sxx.sqrt(),
        points: n,
    })
}

/// Fits `log2 y` against `log2 x` after sorting by `x`, so the result does not
/// depend on input order.
pub fn fit_log2(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(TemError::Domain("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.log2()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.log2()).collect();
    fit_line(&lx, &ly)
}
