//! Least-squares fits of decay laws `v ≈ C t^{-α} (log t)^β`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub alpha_se: f64,
    /// log exponent; `None` unless it exceeds three standard errors
    pub beta: Option<f64>,
    pub beta_se: Option<f64>,
    pub log_constant: f64,
    pub points: usize,
    pub t_min: f64,
    pub t_max: f64,
}

struct Ls {
    coef: DVector<f64>,
    se: Vec<f64>,
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ls> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InvalidInput(format!("need more than {k} points to fit, got {n}")));
    }
    let xtx = x.transpose() * x;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular design matrix in decay fit".into()))?;
    let coef = &inv * x.transpose() * y;
    let resid = y - x * &coef;
    let s2 = resid.norm_squared() / (n - k) as f64;
    let se = (0..k).map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()).collect();
    Ok(Ls { coef, se })
}

/// Fit `log v = c - α log t [+ β log log t]` over `t ∈ [t_min, t_max]`.
/// The log term is tried only when every `t > 1`, and kept only when
/// `|β| > 3·se(β)`.
pub fn fit_decay(t: &[f64], v: &[f64], t_min: f64, t_max: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(v)
        .filter(|(t, v)| **t >= t_min * (1.0 - 1e-12) && **t <= t_max * (1.0 + 1e-12) && **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, *v))
        .collect();
    let n = pts.len();
    let y = DVector::from_iterator(n, pts.iter().map(|p| p.1.ln()));
    let plain = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { -pts[i].0.ln() });
    let base = least_squares(&plain, &y)?;
    let mut out = DecayFit {
        alpha: base.coef[1],
        alpha_se: base.se[1],
        beta: None,
        beta_se: None,
        log_constant: base.coef[0],
        points: n,
        t_min,
        t_max,
    };
    if n > 3 && pts.iter().all(|p| p.0 > 1.0) {
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => -pts[i].0.ln(),
            _ => pts[i].0.ln().ln(),
        });
        if let Ok(full) = least_squares(&x, &y) {
            if full.coef[2].abs() > 3.0 * full.se[2] && full.se[2].is_finite() {
                out.alpha = full.coef[1];
                out.alpha_se = full.se[1];
                out.beta = Some(full.coef[2]);
                out.beta_se = Some(full.se[2]);
                out.log_constant = full.coef[0];
            }
        }
    }
    Ok(out)
}

/// Slope of `log₁₀ y` against `log₁₀ t` (per decade) over `[t_min, t_max]`.
pub fn loglog_slope(t: &[f64], y: &[f64], t_min: f64, t_max: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(t, y)| **t >= t_min * (1.0 - 1e-12) && **t <= t_max * (1.0 + 1e-12) && **y > 0.0 && y.is_finite())
        .map(|(t, y)| (t.log10(), y.log10()))
        .collect();
    let n = pts.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two points for a slope".into()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("degenerate time samples".into()));
    }
    Ok(sxy / sxx)
}

/// `n` log-spaced points per decade from `t0` to `t1` (both included).
pub fn geometric_times(t0: f64, t1: f64, per_decade: usize) -> Vec<f64> {
    crate::potential::log_grid(t0, t1, per_decade)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_pure_power() {
        let t = geometric_times(1e2, 1e4, 10);
        let v: Vec<f64> = t.iter().map(|t| 3.0 * t.powf(-1.25)).collect();
        let f = fit_decay(&t, &v, 1e2, 1e4).unwrap();
        assert!((f.alpha - 1.25).abs() < 1e-10);
        assert!(f.beta.is_none());
    }

    #[test]
    fn detects_log_factor() {
        let t = geometric_times(1e2, 1e4, 10);
        let v: Vec<f64> = t.iter().map(|t| t.powf(-1.5) * t.ln().powi(2)).collect();
        let f = fit_decay(&t, &v, 1e2, 1e4).unwrap();
        assert!((f.alpha - 1.5).abs() < 1e-8 && (f.beta.unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn slope_per_decade() {
        let t = geometric_times(1.0, 1e3, 5);
        let y: Vec<f64> = t.iter().map(|t| 7.0 * t.powf(0.3)).collect();
        assert!((loglog_slope(&t, &y, 1.0, 1e3).unwrap() - 0.3).abs() < 1e-12);
    }
}
