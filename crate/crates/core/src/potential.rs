//! Radial inverse-square potentials and their admissibility checks.
//!
//! A potential behaves like `λ₁/r²` near the origin and `λ₂/r²` at infinity
//! with algebraic corrections of order `r^{-2+ρ₁}` and `r^{-2-ρ₂}`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode_spectrum::{omega, Dimension};
use crate::quad::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Subcritical,
    Critical,
}

type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tabulated `V` stored as `r²V(r)` against `log r`; interpolated linearly
/// and held constant outside the table.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialTable {
    log_r: Vec<f64>,
    r2v: Vec<f64>,
}

impl PotentialTable {
    pub fn new(radii: &[f64], values: &[f64]) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 2 {
            return Err(Error::InvalidInput("potential table needs >= 2 (r, V) rows".into()));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) || radii[0] <= 0.0 {
            return Err(Error::InvalidInput("potential table radii must be positive and increasing".into()));
        }
        Ok(PotentialTable {
            log_r: radii.iter().map(|r| r.ln()).collect(),
            r2v: radii.iter().zip(values).map(|(r, v)| r * r * v).collect(),
        })
    }

    fn locate(&self, y: f64) -> Option<usize> {
        let n = self.log_r.len();
        if y <= self.log_r[0] || y >= self.log_r[n - 1] {
            return None;
        }
        Some(self.log_r.partition_point(|&x| x <= y) - 1)
    }

    /// `r²V(r)`
    fn scaled(&self, r: f64) -> f64 {
        let y = r.ln();
        match self.locate(y) {
            None if y <= self.log_r[0] => self.r2v[0],
            None => *self.r2v.last().unwrap(),
            Some(j) => {
                let t = (y - self.log_r[j]) / (self.log_r[j + 1] - self.log_r[j]);
                self.r2v[j] + t * (self.r2v[j + 1] - self.r2v[j])
            }
        }
    }

    /// `d(r²V)/d(log r)`
    fn scaled_slope(&self, r: f64) -> f64 {
        match self.locate(r.ln()) {
            None => 0.0,
            Some(j) => (self.r2v[j + 1] - self.r2v[j]) / (self.log_r[j + 1] - self.log_r[j]),
        }
    }

    pub fn inner_limit(&self) -> f64 {
        self.r2v[0]
    }

    pub fn outer_limit(&self) -> f64 {
        *self.r2v.last().unwrap()
    }
}

#[derive(Clone)]
pub enum Family {
    PureHardy { lambda: f64 },
    TwoScale { lambda1: f64, lambda2: f64 },
    Table(PotentialTable),
    Custom { value: RadialFn, derivative: Option<RadialFn> },
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::PureHardy { lambda } => write!(f, "PureHardy({lambda})"),
            Family::TwoScale { lambda1, lambda2 } => write!(f, "TwoScale({lambda1}, {lambda2})"),
            Family::Table(t) => write!(f, "Table({} rows)", t.log_r.len()),
            Family::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// A validated radial potential with its asymptotic data.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    dim: Dimension,
    family: Family,
    lambda1: f64,
    lambda2: f64,
    rho1: f64,
    rho2: f64,
    criticality: Criticality,
    /// `|V - λ₁r⁻²| ≤ C_V r^{-2+ρ₁}`
    pub c_v: f64,
    /// `|V - λ₂r⁻²| ≤ C_V' r^{-2-ρ₂}`
    pub c_v_outer: f64,
}

fn check_lambda(lambda: f64, dim: Dimension) -> Result<()> {
    let crit = dim.hardy_constant();
    if lambda < crit && !dim.is_critical_lambda(lambda) {
        Err(Error::LambdaBelowCritical { lambda, critical: crit, dim: dim.get() })
    } else {
        Ok(())
    }
}

impl PotentialSpec {
    /// `V(r) = λ/r²`; critical exactly when `λ = λ*`.
    pub fn pure_hardy(lambda: f64, dim: Dimension) -> Result<Self> {
        check_lambda(lambda, dim)?;
        let criticality = if dim.is_critical_lambda(lambda) {
            Criticality::Critical
        } else {
            Criticality::Subcritical
        };
        Ok(PotentialSpec {
            dim,
            family: Family::PureHardy { lambda },
            lambda1: lambda,
            lambda2: lambda,
            rho1: 2.0,
            rho2: 2.0,
            criticality,
            c_v: 0.0,
            c_v_outer: 0.0,
        })
    }

    /// `V(r) = (λ₁ + λ₂r²)/(r²(1+r²))` with `ρ₁ = ρ₂ = 2`.
    ///
    /// Without an explicit tag the potential is critical only when it
    /// degenerates to the critical pure Hardy potential.
    pub fn two_scale(lambda1: f64, lambda2: f64, dim: Dimension, criticality: Option<Criticality>) -> Result<Self> {
        check_lambda(lambda1, dim)?;
        check_lambda(lambda2, dim)?;
        let criticality = criticality.unwrap_or(
            if dim.is_critical_lambda(lambda1) && dim.is_critical_lambda(lambda2) {
                Criticality::Critical
            } else {
                Criticality::Subcritical
            },
        );
        let gap = (lambda2 - lambda1).abs();
        Ok(PotentialSpec {
            dim,
            family: Family::TwoScale { lambda1, lambda2 },
            lambda1,
            lambda2,
            rho1: 2.0,
            rho2: 2.0,
            criticality,
            c_v: gap,
            c_v_outer: gap,
        })
    }

    /// Tabulated potential; the asymptotic constants are the table's end values of `r²V`.
    pub fn table(table: PotentialTable, dim: Dimension, criticality: Criticality) -> Result<Self> {
        let (lambda1, lambda2) = (table.inner_limit(), table.outer_limit());
        check_lambda(lambda1, dim)?;
        check_lambda(lambda2, dim)?;
        Ok(PotentialSpec {
            dim,
            family: Family::Table(table),
            lambda1,
            lambda2,
            // r²V is constant beyond the table, so any rate is admissible.
            rho1: 2.0,
            rho2: 2.0,
            criticality,
            c_v: f64::NAN,
            c_v_outer: f64::NAN,
        })
    }

    /// User-defined potential. Envelope constants are left unset (NaN) and
    /// are fitted by [`validate_condition_v`].
    #[allow(clippy::too_many_arguments)]
    pub fn custom<F>(
        dim: Dimension,
        value: F,
        derivative: Option<RadialFn>,
        lambda1: f64,
        lambda2: f64,
        rho1: f64,
        rho2: f64,
        criticality: Criticality,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_lambda(lambda1, dim)?;
        check_lambda(lambda2, dim)?;
        if !(rho1 > 0.0 && rho2 > 0.0) {
            return Err(Error::InvalidInput("rho1 and rho2 must be positive".into()));
        }
        Ok(PotentialSpec {
            dim,
            family: Family::Custom { value: Arc::new(value), derivative },
            lambda1,
            lambda2,
            rho1,
            rho2,
            criticality,
            c_v: f64::NAN,
            c_v_outer: f64::NAN,
        })
    }

    pub fn with_criticality(mut self, c: Criticality) -> Self {
        self.criticality = c;
        self
    }

    pub fn dim(&self) -> Dimension {
        self.dim
    }
    pub fn family(&self) -> &Family {
        &self.family
    }
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
    pub fn rho1(&self) -> f64 {
        self.rho1
    }
    pub fn rho2(&self) -> f64 {
        self.rho2
    }
    pub fn criticality(&self) -> Criticality {
        self.criticality
    }

    pub fn is_free(&self) -> bool {
        matches!(self.family, Family::PureHardy { lambda } if lambda == 0.0)
    }

    /// `V(r)`
    pub fn evaluate(&self, r: f64) -> f64 {
        self.scaled(r) / (r * r)
    }

    /// `r²V(r)`, the dimensionless form used by the profile solver.
    pub fn scaled(&self, r: f64) -> f64 {
        match &self.family {
            Family::PureHardy { lambda } => *lambda,
            Family::TwoScale { lambda1, lambda2 } => {
                let r2 = r * r;
                (lambda1 + lambda2 * r2) / (1.0 + r2)
            }
            Family::Table(t) => t.scaled(r),
            Family::Custom { value, .. } => r * r * value(r),
        }
    }

    /// `r²V(r) - λ₁`. Computed without cancellation for the closed-form families.
    pub fn scaled_inner_deviation(&self, r: f64) -> f64 {
        match &self.family {
            Family::PureHardy { .. } => 0.0,
            Family::TwoScale { lambda1, lambda2 } => {
                let r2 = r * r;
                (lambda2 - lambda1) * r2 / (1.0 + r2)
            }
            Family::Table(_) => snap_roundoff(self.scaled(r) - self.lambda1, self.lambda1),
            _ => self.scaled(r) - self.lambda1,
        }
    }

    /// `r²V(r) - λ₂`, with the same roundoff floor as the inner deviation.
    pub fn scaled_outer_deviation(&self, r: f64) -> f64 {
        match &self.family {
            Family::Table(_) => snap_roundoff(self.scaled(r) - self.lambda2, self.lambda2),
            _ => self.scaled(r) - self.lambda2,
        }
    }

    /// `V'(r)`; analytic where available, otherwise central differences with step `r·1e-6`.
    pub fn derivative(&self, r: f64) -> f64 {
        match &self.family {
            Family::PureHardy { lambda } => -2.0 * lambda / (r * r * r),
            Family::TwoScale { lambda1, lambda2 } => {
                // V = λ₁/r² + (λ₂-λ₁)/(1+r²)
                let r2 = r * r;
                -2.0 * lambda1 / (r2 * r) - 2.0 * (lambda2 - lambda1) * r / ((1.0 + r2) * (1.0 + r2))
            }
            Family::Table(t) => (t.scaled_slope(r) - 2.0 * t.scaled(r)) / (r * r * r),
            Family::Custom { derivative: Some(d), .. } => d(r),
            Family::Custom { value, .. } => {
                let h = r * 1e-6;
                (value(r + h) - value(r - h)) / (2.0 * h)
            }
        }
    }
}

/// `V_k(r) = V(r) + ω_k/r²`.
pub fn evaluate_mode_potential(spec: &PotentialSpec, k: usize, r: f64) -> f64 {
    (spec.scaled(r) + omega(k, spec.dim())) / (r * r)
}

/// Outcome of one sampled clause of condition (V).
#[derive(Debug, Clone, Serialize)]
pub struct ClauseReport {
    pub clause: &'static str,
    pub fitted_constant: f64,
    pub fitted_slope: f64,
    pub worst_radius: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionVReport {
    pub inner: ClauseReport,
    pub outer: ClauseReport,
    pub derivative: ClauseReport,
    pub passed: bool,
}

impl ConditionVReport {
    fn first_failure(&self) -> Option<&ClauseReport> {
        [&self.inner, &self.outer, &self.derivative].into_iter().find(|c| !c.passed)
    }
}

/// Log-uniform radii on `[lo, hi]` with `per_decade` points per decade.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=n).map(|i| lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

/// Default validation grid: `[1e-6, 1e6]`, 200 points per decade.
pub fn default_validation_grid() -> Vec<f64> {
    log_grid(1e-6, 1e6, 200)
}

const ENVELOPE_SLOPE_TOL: f64 = 0.1;

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Fit an envelope `e(r) ≤ C` over `radii`. Near an end the log–log slope of
/// `e` must not point towards blow-up at that end.
fn envelope_clause(
    clause: &'static str,
    radii: &[f64],
    excess: impl Fn(f64) -> f64,
    blowup_towards_zero: bool,
    declared: f64,
) -> ClauseReport {
    let samples: Vec<(f64, f64)> = radii.iter().map(|&r| (r, excess(r).abs())).collect();
    let (worst_radius, fitted_constant) = samples
        .iter()
        .copied()
        .fold((radii[0], 0.0f64), |acc, (r, e)| if e > acc.1 { (r, e) } else { acc });
    let logs: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, e)| *e > 0.0 && e.is_finite())
        .map(|(r, e)| (r.ln(), e.ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
    let slope = least_squares_slope(&xs, &ys);
    let finite = fitted_constant.is_finite();
    let trend_ok = if blowup_towards_zero {
        slope >= -ENVELOPE_SLOPE_TOL
    } else {
        slope <= ENVELOPE_SLOPE_TOL
    };
    let within_declared = declared.is_nan() || fitted_constant <= 2.0 * declared + 1e-12;
    ClauseReport {
        clause,
        fitted_constant,
        fitted_slope: slope,
        worst_radius,
        passed: finite && trend_ok && within_declared,
    }
}

/// Tabulated `r²V` carries a few ulps of noise that the `r^{-ρ}` weights
/// would amplify into a spurious violation.
fn snap_roundoff(dev: f64, limit: f64) -> f64 {
    if dev.abs() <= 1e-13 * limit.abs().max(1.0) {
        0.0
    } else {
        dev
    }
}

/// Clause reports of condition (V) on `grid` without failing on a violated clause.
pub fn condition_v_report(spec: &PotentialSpec, grid: &[f64]) -> Result<ConditionVReport> {
    let (lo, hi) = (grid[0], *grid.last().unwrap());
    if lo > 1e-6 * (1.0 + 1e-9) || hi < 1e6 * (1.0 - 1e-9) || grid.len() < 10 {
        return Err(Error::InvalidInput("validation grid must span at least [1e-6, 1e6]".into()));
    }
    let inner_r: Vec<f64> = grid.iter().copied().filter(|&r| r <= lo * 1e3).collect();
    let outer_r: Vec<f64> = grid.iter().copied().filter(|&r| r >= hi * 1e-3).collect();
    let (rho1, rho2) = (spec.rho1, spec.rho2);
    let inner = envelope_clause(
        "(ii) r->0",
        &inner_r,
        |r| spec.scaled_inner_deviation(r) * r.powf(-rho1),
        true,
        spec.c_v,
    );
    let outer = envelope_clause(
        "(ii) r->inf",
        &outer_r,
        |r| spec.scaled_outer_deviation(r) * r.powf(rho2),
        false,
        spec.c_v_outer,
    );
    let d_all: Vec<f64> = grid.iter().map(|&r| (r * r * r * spec.derivative(r)).abs()).collect();
    let d_inner = envelope_clause("(iii) r->0", &inner_r, |r| r * r * r * spec.derivative(r), true, f64::NAN);
    let d_outer = envelope_clause("(iii) r->inf", &outer_r, |r| r * r * r * spec.derivative(r), false, f64::NAN);
    let (worst_idx, max_d) = d_all
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, v)| if v > acc.1 || v.is_nan() { (i, v) } else { acc });
    let derivative = ClauseReport {
        clause: "(iii)",
        fitted_constant: max_d,
        fitted_slope: if d_inner.passed { d_outer.fitted_slope } else { d_inner.fitted_slope },
        worst_radius: grid[worst_idx],
        passed: max_d.is_finite() && d_inner.passed && d_outer.passed,
    };
    let passed = inner.passed && outer.passed && derivative.passed;
    Ok(ConditionVReport { inner, outer, derivative, passed })
}

/// Sampled check of condition (V) (ii)–(iii) on `grid`.
///
/// Clause (ii) is split into the inner envelope on the lowest three decades
/// and the outer envelope on the highest three; clause (iii) bounds
/// `|r³V'|` over the whole grid with bounded trends at both ends.
pub fn validate_condition_v(spec: &PotentialSpec, grid: &[f64]) -> Result<ConditionVReport> {
    let report = condition_v_report(spec, grid)?;
    if let Some(bad) = report.first_failure() {
        return Err(Error::ValidationFailure {
            clause: bad.clause,
            radius: bad.worst_radius,
            detail: format!(
                "fitted constant {:e}, log-log slope {:.3}",
                bad.fitted_constant, bad.fitted_slope
            ),
        });
    }
    Ok(report)
}

/// Result of the quadratic-form screen.
#[derive(Debug, Clone, Serialize)]
pub struct RayleighReport {
    pub trials: usize,
    /// min over trials of `Q(φ)/∫|∇φ|²`
    pub min_quotient: f64,
    pub worst_center: f64,
    pub worst_width: f64,
}

/// Screen condition (N) on radial test functions
/// `φ(r) = r^{-(N-2)/2} ψ(log r)` with `ψ` a `cos²` bump of width `L` in `log r`.
///
/// The family is scaled and translated in `log r`, so it probes both short and
/// very wide logarithmic ranges, where the Hardy inequality is tight. Each
/// trial reports `Q(φ)/∫|∇φ|² = 1 + ∫Vφ²/∫|∇φ|²`, which is scale invariant.
pub fn rayleigh_check<F: Fn(f64) -> f64 + Sync>(potential: F, dim: Dimension, trials: usize) -> Result<RayleighReport> {
    if trials == 0 {
        return Err(Error::InvalidInput("rayleigh_check needs at least one trial".into()));
    }
    let n = dim.as_f64();
    let s = 0.5 * (n - 2.0);
    let widths = (trials as f64).sqrt().ceil() as usize;
    let centers = trials.div_ceil(widths);
    let rule = GaussLegendre::new(24);
    let mut best = RayleighReport { trials: 0, min_quotient: f64::INFINITY, worst_center: 0.0, worst_width: 0.0 };
    let mut done = 0;
    'outer: for iw in 0..widths {
        let frac_w = if widths == 1 { 1.0 } else { iw as f64 / (widths - 1) as f64 };
        let width = 0.5 * (80.0f64).powf(frac_w);
        for ic in 0..centers {
            if done == trials {
                break 'outer;
            }
            let frac_c = if centers == 1 { 0.5 } else { ic as f64 / (centers - 1) as f64 };
            let center = -10.0 + 20.0 * frac_c;
            let (mut kinetic, mut potential_part) = (0.0, 0.0);
            let cells = 64;
            let (ya, yb) = (center - 0.5 * width, center + 0.5 * width);
            for c in 0..cells {
                let a = ya + (yb - ya) * c as f64 / cells as f64;
                let b = ya + (yb - ya) * (c + 1) as f64 / cells as f64;
                for (y, w) in rule.mapped(a, b) {
                    let u = std::f64::consts::PI * (y - center) / width;
                    let psi = u.cos().powi(2);
                    let dpsi = -(std::f64::consts::PI / width) * (2.0 * u).sin();
                    let r = y.exp();
                    // φ = r^{-s}ψ, φ' = r^{-s-1}(ψ' - sψ); dx ∝ r^{N-1} dr = r^N dy
                    let phi = r.powf(-s) * psi;
                    let dphi = r.powf(-s - 1.0) * (dpsi - s * psi);
                    let jac = r.powf(n);
                    kinetic += w * dphi * dphi * jac;
                    potential_part += w * potential(r) * phi * phi * jac;
                }
            }
            let q = 1.0 + potential_part / kinetic;
            if q < best.min_quotient {
                best.min_quotient = q;
                best.worst_center = center.exp();
                best.worst_width = width;
            }
            done += 1;
        }
    }
    best.trials = done;
    if best.min_quotient < -1e-9 {
        return Err(Error::NotNonnegative { min_quotient: best.min_quotient });
    }
    Ok(best)
}

impl PotentialSpec {
    pub fn rayleigh_check(&self, trials: usize) -> Result<RayleighReport> {
        rayleigh_check(|r| self.evaluate(r), self.dim, trials)
    }
}
