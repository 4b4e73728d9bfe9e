//! Power-law fits on log–log scale and weighted correlations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub coefficient: f64,
    /// Standard error of the exponent.
    pub exponent_err: f64,
    /// Weighted RMS residual in log space.
    pub residual: f64,
}

/// Least-squares fit of `v ≈ C k^p`; the two largest `k` get double weight.
pub fn power_law_fit(ks: &[f64], values: &[f64]) -> Result<PowerFit> {
    if ks.len() != values.len() {
        return Err(Error::Dimension { expected: ks.len(), found: values.len() });
    }
    if ks.len() < 2 {
        return Err(Error::Validation("power-law fit needs at least two points".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Validation(format!("log-log fit needs positive values, got {v}")));
    }
    if ks.iter().any(|k| !(*k > 0.0)) {
        return Err(Error::Validation("log-log fit needs positive abscissae".into()));
    }
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|a, b| ks[*b].total_cmp(&ks[*a]));
    let mut w = vec![1.0; ks.len()];
    for &i in order.iter().take(2) {
        w[i] = 2.0;
    }
    let x: Vec<f64> = ks.iter().map(|k| k.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - mx).powi(2);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
    }
    if sxx <= 0.0 {
        return Err(Error::Validation("log-log fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = (0..x.len()).map(|i| w[i] * (y[i] - icpt - slope * x[i]).powi(2)).sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    Ok(PowerFit {
        exponent: slope,
        coefficient: icpt.exp(),
        exponent_err: (sse / dof / sxx).sqrt(),
        residual: (sse / sw).sqrt(),
    })
}

/// Pearson correlation with nonnegative weights.
pub fn weighted_pearson(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let ma = a.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let mb = b.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += w[i] * da * db;
        saa += w[i] * da * da;
        sbb += w[i] * db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Weighted least-squares slope of `b` against `a` after removing means.
pub fn weighted_slope(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let ma = a.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let mb = b.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let (mut sab, mut saa) = (0.0, 0.0);
    for i in 0..a.len() {
        sab += w[i] * (a[i] - ma) * (b[i] - mb);
        saa += w[i] * (a[i] - ma).powi(2);
    }
    sab / saa
}

/// Richardson extrapolation to `k → ∞` of values with an expansion in `1/k`,
/// using the last `order + 1` entries.
pub fn richardson(ks: &[f64], values: &[f64], order: usize) -> Result<f64> {
    let m = order + 1;
    if ks.len() < m || values.len() != ks.len() {
        return Err(Error::Validation(format!("richardson of order {order} needs {m} points")));
    }
    // polynomial in h = 1/k through the last m points, evaluated at h = 0
    let hs: Vec<f64> = ks[ks.len() - m..].iter().map(|k| 1.0 / k).collect();
    let vs = &values[values.len() - m..];
    let mut out = 0.0;
    for i in 0..m {
        let mut l = 1.0;
        for j in 0..m {
            if i != j {
                l *= hs[j] / (hs[j] - hs[i]);
            }
        }
        out += l * vs[i];
    }
    Ok(out)
}
