//! Decay experiments: right-hand sides of the `L^{p,σ} → L^{q,θ}` estimates,
//! measured norms of evolved data, exponent fits and kernel-envelope reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::fit::{fit_decay, loglog_slope, DecayFit};
use crate::harmonic_profile::{solve_profile, HarmonicProfile, ProfileOptions};
use crate::lorentz::{lorentz_norm, profile_field, q0_normalization, Interp, ModalField, RadialField, Region};
use crate::mode_spectrum::{admissible, Dimension};
use crate::potential::PotentialSpec;
use crate::radial_heat::{estimate_kernel, time_derivative, Boundary, KernelEstimate, KernelOptions, SolverOptions, SolverState};

/// Lorentz indices `(p, q, σ, θ)` of an `L^{p,σ} → L^{q,θ}` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadruple {
    pub p: ExtReal,
    pub q: ExtReal,
    pub sigma: ExtReal,
    pub theta: ExtReal,
}

impl Quadruple {
    pub fn new(p: ExtReal, q: ExtReal, sigma: ExtReal, theta: ExtReal) -> Result<Self> {
        if !admissible(p, q, sigma, theta) {
            return Err(Error::NotAdmissible { p: format!("{p}, q = {q}"), sigma: format!("{sigma}, theta = {theta}") });
        }
        Ok(Quadruple { p, q, sigma, theta })
    }

    /// `p = σ = 1`, `q = θ = ∞`
    pub fn one_to_infinity() -> Self {
        Quadruple { p: ExtReal::ONE, q: ExtReal::INF, sigma: ExtReal::ONE, theta: ExtReal::INF }
    }
}

fn ball_norm(h0: &HarmonicProfile, radius: f64, derivative: bool, p: ExtReal, sigma: ExtReal) -> Result<f64> {
    if radius > h0.r_max() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("sqrt(t) = {radius} exceeds the profile grid (R_max = {})", h0.r_max())));
    }
    let field = profile_field(h0, radius, derivative)?;
    lorentz_norm(&field.restrict(Region::Ball(radius)), p, sigma)
}

/// `t^{-N/2-j} (‖h₀‖_{L^{p',σ'}(B√t)}/h₀(√t)) (‖∇^ℓ h₀‖_{L^{q,θ}(B√t)}/h₀(√t) + t^{N/2q - ℓ/2})`
pub fn theorem_rhs(h0: &HarmonicProfile, quad: &Quadruple, ell: usize, j: usize, t: f64) -> Result<f64> {
    let quad = Quadruple::new(quad.p, quad.q, quad.sigma, quad.theta)?;
    if ell > 1 {
        return Err(Error::InvalidInput(format!("derivative order {ell} is not 0 or 1")));
    }
    let n = h0.dim().as_f64();
    let rt = t.sqrt();
    let hr = h0.h(rt);
    let dual = ball_norm(h0, rt, false, quad.p.conjugate(), quad.sigma.conjugate())?;
    if !dual.is_finite() {
        return Ok(f64::INFINITY);
    }
    let grad = ball_norm(h0, rt, ell == 1, quad.q, quad.theta)?;
    let inv_q = quad.q.recip();
    Ok(t.powf(-n / 2.0 - j as f64) * (dual / hr) * (grad / hr + t.powf(n * inv_q / 2.0 - ell as f64 / 2.0)))
}

/// `t^{-N/2} ‖h₀‖_{L^{p',σ'}(B√t)} ‖h₀‖_{L^{q,θ}(B√t)} / h₀(√t)²`
pub fn corollary_rhs(h0: &HarmonicProfile, quad: &Quadruple, t: f64) -> Result<f64> {
    let quad = Quadruple::new(quad.p, quad.q, quad.sigma, quad.theta)?;
    let n = h0.dim().as_f64();
    let rt = t.sqrt();
    let hr = h0.h(rt);
    let dual = ball_norm(h0, rt, false, quad.p.conjugate(), quad.sigma.conjugate())?;
    if !dual.is_finite() {
        return Ok(f64::INFINITY);
    }
    let own = ball_norm(h0, rt, false, quad.q, quad.theta)?;
    Ok(t.powf(-n / 2.0) * dual * own / (hr * hr))
}

/// Shape of the initial data before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataFamily {
    /// `1_{B(0,R)}`
    Indicator { radius: f64 },
    /// `r^k exp(-r²/width²)`
    Gaussian { width: f64 },
    /// `h_k` truncated to `B(0,R)`
    ProfileShaped { radius: f64 },
}

impl Default for DataFamily {
    fn default() -> Self {
        DataFamily::Indicator { radius: 1.0 }
    }
}

/// Unnormalized radial coefficient of the data for the mode of `hk`.
pub fn data_shape(family: &DataFamily, hk: &HarmonicProfile) -> Result<RadialField> {
    let n = hk.dim().get();
    let k = hk.k;
    Ok(match *family {
        DataFamily::Indicator { radius } => RadialField::new(vec![0.0, radius], vec![1.0, 1.0], n)?.with_interp(Interp::Constant),
        DataFamily::Gaussian { width } => {
            let radii: Vec<f64> = (0..=1600).map(|i| i as f64 * 8.0 * width / 1600.0).collect();
            RadialField::from_fn(radii, n, |r| r.powi(k as i32) * (-(r / width).powi(2)).exp())?.with_interp(Interp::Linear)
        }
        DataFamily::ProfileShaped { radius } => profile_field(hk, radius, false)?,
    })
}

/// Modal coefficient `φ_k` of the data `φ = φ_k Q_{k,1}` (`k ∈ {0, 1}`),
/// scaled so that `‖φ‖_{L^{p,σ}} = 1`, with the unscaled norm.
pub fn initial_data(family: &DataFamily, hk: &HarmonicProfile, p: ExtReal, sigma: ExtReal) -> Result<(RadialField, f64)> {
    let dim = hk.dim();
    let k = hk.k;
    if k > 1 || (k == 1 && dim.get() != 3) {
        return Err(Error::UnsupportedMode { k, i: 1, dim: dim.get() });
    }
    let shape = data_shape(family, hk)?;
    let norm = physical_norm(&shape, k, dim, p, sigma)?;
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::InvalidInput(format!("initial data has L^(p,sigma) norm {norm}")));
    }
    // coefficient of Q_{k,1}
    let coef = if k == 0 { 1.0 / (q0_normalization(dim) * norm) } else { 1.0 / norm };
    let scaled = RadialField::new(shape.radii().to_vec(), shape.values().iter().map(|v| v * coef).collect(), dim.get())?;
    let scaled = match family {
        DataFamily::Indicator { .. } => scaled.with_interp(Interp::Constant),
        DataFamily::Gaussian { .. } => scaled.with_interp(Interp::Linear),
        DataFamily::ProfileShaped { .. } => scaled.with_head(shape.head()),
    };
    Ok((scaled, norm))
}

/// `‖φ‖_{L^{p,σ}}` for `φ = shape` (k = 0) or `φ = shape·Q_{1,1}` (k = 1).
fn physical_norm(shape: &RadialField, k: usize, dim: Dimension, p: ExtReal, sigma: ExtReal) -> Result<f64> {
    if k == 0 {
        lorentz_norm(shape, p, sigma)
    } else {
        let modal = ModalField::new(dim, vec![(1, 1, shape.clone())])?;
        lorentz_norm(&modal, p, sigma)
    }
}

/// `‖∂_t^j ∇^ℓ u(t)‖_{L^{q,θ}}` for the single-mode solution held by `state`.
pub fn measure_norm(state: &SolverState, q: ExtReal, theta: ExtReal, ell: usize, j: usize) -> Result<f64> {
    let profile = state.profile();
    let dim = profile.dim();
    let k = profile.k;
    if k > 1 || (k == 1 && dim.get() != 3) {
        return Err(Error::UnsupportedMode { k, i: 1, dim: dim.get() });
    }
    if ell > 1 {
        return Err(Error::InvalidInput(format!("derivative order {ell} is not 0 or 1")));
    }
    let td = time_derivative(state, j)?;
    let radial = if ell == 0 { td.field.clone() } else { state.dv_dr_field_of(&td.w)? };
    if k == 0 {
        let q0 = q0_normalization(dim);
        let scaled = RadialField::new(radial.radii().to_vec(), radial.values().iter().map(|x| x * q0).collect(), dim.get())?
            .with_head(radial.head());
        lorentz_norm(&scaled, q, theta)
    } else {
        let field = if ell == 0 {
            ModalField::new(dim, vec![(1, 1, radial)])?
        } else {
            ModalField::gradient(dim, vec![(1, 1, td.field)], vec![radial])?
        };
        lorentz_norm(&field, q, theta)
    }
}

/// Everything needed for one decay run.
#[derive(Debug, Clone)]
pub struct DecayConfig {
    pub spec: PotentialSpec,
    pub quad: Quadruple,
    pub ell: usize,
    pub j: usize,
    /// mode of the data (0 or 1)
    pub mode: usize,
    pub data: DataFamily,
    pub times: Vec<f64>,
    pub fit_window: (f64, f64),
    pub profile: ProfileOptions,
    pub solver: SolverOptions,
}

impl DecayConfig {
    pub fn new(spec: PotentialSpec, quad: Quadruple, times: Vec<f64>) -> Self {
        DecayConfig {
            spec,
            quad,
            ell: 0,
            j: 0,
            mode: 0,
            data: DataFamily::default(),
            times,
            fit_window: (1e2, 1e4),
            profile: ProfileOptions::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// One time sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayRow {
    pub t: f64,
    pub measured: f64,
    pub thm_rhs: f64,
    pub cor_rhs: f64,
    pub ratio_thm: f64,
    pub ratio_cor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioStats {
    /// fitted constant: `max measured/RHS` over finite rows
    pub max: f64,
    /// `d log₁₀(ratio)/d log₁₀ t` over the final two decades
    pub trend: f64,
    /// ratio finite and not growing faster than 0.05 per decade
    pub bounded: bool,
    /// `|trend| ≤ 0.05`
    pub flat: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub measured_fit: Option<DecayFit>,
    pub thm_fit: Option<DecayFit>,
    pub cor_fit: Option<DecayFit>,
    /// fits restricted to `t < 1`
    pub measured_fit_small_t: Option<DecayFit>,
    pub thm_ratio: Option<RatioStats>,
    pub cor_ratio: Option<RatioStats>,
    pub pass: bool,
    pub data_norm: f64,
    pub escaped_fraction: f64,
    pub support_escape: bool,
    pub grid_nodes: usize,
    pub steps: usize,
    pub warnings: Vec<String>,
}

fn ratio_stats(rows: &[DecayRow], pick: impl Fn(&DecayRow) -> f64) -> Option<RatioStats> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, pick(r))).filter(|p| p.1.is_finite() && p.1 > 0.0).collect();
    if pts.len() < 2 {
        return None;
    }
    let max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let t_end = pts.last().unwrap().0;
    let (t, r): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let trend = loglog_slope(&t, &r, t_end / 100.0, t_end).ok()?;
    Some(RatioStats { max, trend, bounded: max.is_finite() && trend <= 0.05, flat: trend.abs() <= 0.05 })
}

fn try_fit(t: &[f64], v: &[f64], lo: f64, hi: f64) -> Option<DecayFit> {
    let inside = t.iter().zip(v).filter(|(t, v)| **t >= lo && **t <= hi && v.is_finite() && **v > 0.0).count();
    if inside < 4 {
        return None;
    }
    fit_decay(t, v, lo, hi).ok()
}

/// Run one experiment: build the profiles, evolve the normalized data and
/// tabulate measured norms against both right-hand sides.
pub fn run_decay_experiment(cfg: &DecayConfig) -> Result<DecayReport> {
    if cfg.times.is_empty() || cfg.times.windows(2).any(|w| w[1] <= w[0]) || cfg.times[0] <= 0.0 {
        return Err(Error::InvalidInput("decay times must be positive and strictly increasing".into()));
    }
    if !crate::mode_spectrum::check_nprime(&cfg.spec) {
        return Err(Error::InvalidInput("condition (N') fails for this potential".into()));
    }
    let quad = Quadruple::new(cfg.quad.p, cfg.quad.q, cfg.quad.sigma, cfg.quad.theta)?;
    let t_end = *cfg.times.last().unwrap();
    let heat_r_max = 40.0 * t_end.sqrt().max(1.0);
    let mut popts = cfg.profile;
    popts.r_max = popts.r_max.max(heat_r_max);
    let h0 = solve_profile(&cfg.spec, 0, &popts)?;
    let hk = if cfg.mode == 0 { h0.clone() } else { solve_profile(&cfg.spec, cfg.mode, &popts)? };
    let (data, data_norm) = initial_data(&cfg.data, &hk, quad.p, quad.sigma)?;
    let mut solver = cfg.solver;
    solver.grid = solver.grid.with_r_max(heat_r_max);
    let mut state = SolverState::new(&hk, &data, &solver)?;
    let mut warnings = Vec::new();
    if cfg.j >= 3 {
        warnings.push(format!("time-derivative order {} amplifies discretization noise", cfg.j));
    }
    let mut rows = Vec::with_capacity(cfg.times.len());
    for &t in &cfg.times {
        state.advance_to(t)?;
        let measured = measure_norm(&state, quad.q, quad.theta, cfg.ell, cfg.j)?;
        let thm = theorem_rhs(&h0, &quad, cfg.ell, cfg.j, t)?;
        let cor = if cfg.ell == 0 && cfg.j == 0 { corollary_rhs(&h0, &quad, t)? } else { f64::NAN };
        let ratio = |rhs: f64| if rhs.is_finite() && rhs > 0.0 { measured / rhs } else { f64::NAN };
        rows.push(DecayRow { t, measured, thm_rhs: thm, cor_rhs: cor, ratio_thm: ratio(thm), ratio_cor: ratio(cor) });
    }
    if state.support_escape() {
        warnings.push(format!("absorbing boundary removed {:.3e} of the mass", state.escaped_fraction()));
    }
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let col = |f: fn(&DecayRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (lo, hi) = cfg.fit_window;
    let thm_ratio = ratio_stats(&rows, |r| r.ratio_thm);
    let cor_ratio = ratio_stats(&rows, |r| r.ratio_cor);
    let pass = thm_ratio.as_ref().is_some_and(|s| s.bounded);
    Ok(DecayReport {
        measured_fit: try_fit(&t, &col(|r| r.measured), lo, hi),
        thm_fit: try_fit(&t, &col(|r| r.thm_rhs), lo, hi),
        cor_fit: try_fit(&t, &col(|r| r.cor_rhs), lo, hi),
        measured_fit_small_t: try_fit(&t, &col(|r| r.measured), 0.0, 1.0),
        thm_ratio,
        cor_ratio,
        pass,
        data_norm,
        escaped_fraction: state.escaped_fraction(),
        support_escape: state.support_escape(),
        grid_nodes: state.nodes().len(),
        steps: state.history().len(),
        warnings,
        rows,
    })
}

/// Independent experiments in parallel; results keep the input order.
pub fn run_decay_batch(cfgs: &[DecayConfig]) -> Vec<Result<DecayReport>> {
    cfgs.par_iter().map(run_decay_experiment).collect()
}

/// Envelope constants of the kernel at one grid resolution.
#[derive(Debug, Clone, Serialize)]
pub struct KernelLevel {
    pub grid_scale: f64,
    pub constant: f64,
    pub min_value: f64,
    /// `(y, C_y)`
    pub per_source: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianBoundReport {
    pub coarse: KernelLevel,
    pub fine: KernelLevel,
    /// `|C_fine - C_coarse| / C_fine`
    pub refinement_change: f64,
    pub pass: bool,
    /// per-source runs on the refined grid
    #[serde(skip)]
    pub estimates: Vec<KernelEstimate>,
}

/// Fit one envelope constant over all `(y, t)` samples, at the given grid
/// and at one refinement.
pub fn gaussian_bound_report(h0: &HarmonicProfile, sources: &[f64], times: &[f64], opts: &KernelOptions) -> Result<GaussianBoundReport> {
    let level = |scale: f64| -> Result<(KernelLevel, Vec<KernelEstimate>)> {
        let o = KernelOptions { grid: opts.grid.scaled(scale), ..*opts };
        let runs: Vec<Result<KernelEstimate>> = sources.par_iter().map(|&y| estimate_kernel(h0, y, times, &o)).collect();
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let per_source: Vec<(f64, f64)> = runs.iter().map(|e| (e.y, e.constant)).collect();
        let min_value = runs.iter().map(|e| e.min_value).fold(f64::INFINITY, f64::min);
        let constant = per_source.iter().map(|p| p.1).fold(0.0, f64::max);
        Ok((KernelLevel { grid_scale: scale, constant, min_value, per_source }, runs))
    };
    let (coarse, _) = level(1.0)?;
    let (fine, estimates) = level(2.0)?;
    let change = (fine.constant - coarse.constant).abs() / fine.constant;
    let pass = fine.constant.is_finite() && change <= 0.05 && fine.min_value >= -1e-12;
    Ok(GaussianBoundReport { coarse, fine, refinement_change: change, pass, estimates })
}

/// Reflecting-boundary variant of `opts` (conservation studies).
pub fn reflecting(opts: SolverOptions) -> SolverOptions {
    SolverOptions { boundary: Boundary::Reflecting, ..opts }
}
