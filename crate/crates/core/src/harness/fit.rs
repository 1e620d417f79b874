//! Ordinary least squares on log-log data.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares line through `(x, y)`; `None` with fewer than two distinct x.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    // A perfect fit of constant data explains everything there is.
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    Some(LinearFit { slope, intercept, r_squared, points: n })
}

/// Fits `log y` against `log x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    ols(&lx, &ly)
}

/// Fits data generated exactly as `c log N / sqrt N` and returns the slope.
pub fn self_test_slope(grid: &[usize], c: f64) -> Option<f64> {
    let x: Vec<f64> = grid.iter().map(|&n| (n as f64).ln() / (n as f64).sqrt()).collect();
    let y: Vec<f64> = x.iter().map(|v| c * v).collect();
    log_log_fit(&x, &y).map(|f| f.slope)
}
