//! Modal heat flow in the weighted variable `w = v/h_k`.
//!
//! Each mode solves `∂_t w = ν⁻¹ r^{1-N} (ν r^{N-1} w')'` with `ν = h_k²`,
//! discretized by node-centred finite volumes on a grid that is uniform near
//! the origin and geometric further out. Cell masses `∫ ν r^{N-1}` come from
//! the profile's cumulative weight, so the singular weight near zero is
//! integrated exactly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::harmonic_profile::HarmonicProfile;
use crate::lorentz::{lorentz_norm, profile_field, ModalField, RadialField, Region};
use crate::mode_spectrum::Dimension;
use crate::quad::GaussLegendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Reflecting,
    /// `w = 0` at the outer radius.
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    /// Adaptive Crank–Nicolson with a backward-Euler start.
    CrankNicolson,
    /// Exact exponential of the semi-discrete operator (dense eigensolve).
    Exponential,
}

/// Radial grid with cell size `max(spacing, growth·r)` up to `r_max`:
/// uniform near the origin, geometric beyond `spacing/growth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridOptions {
    pub spacing: f64,
    pub growth: f64,
    pub r_max: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { spacing: 0.01, growth: 0.005, r_max: 100.0 }
    }
}

impl GridOptions {
    /// Refine (`scale > 1`) or coarsen both the spacing and the growth.
    pub fn scaled(mut self, scale: f64) -> Self {
        self.spacing /= scale;
        self.growth /= scale;
        self
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }

    pub fn build(&self) -> Result<Vec<f64>> {
        if !(self.spacing > 0.0 && self.growth > 0.0 && self.r_max > self.spacing) {
            return Err(Error::InvalidInput(format!("bad grid options {self:?}")));
        }
        let mut nodes = vec![0.0];
        let mut r = 0.0f64;
        while r < self.r_max * (1.0 - 1e-12) {
            let step = (r * self.growth).max(self.spacing);
            r = (r + step).min(self.r_max);
            nodes.push(r);
        }
        Ok(nodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub grid: GridOptions,
    pub boundary: Boundary,
    pub propagator: Propagator,
    /// Local error target per step, relative to `max |w|`.
    pub tol: f64,
    /// Backward-Euler steps before switching to Crank–Nicolson.
    pub startup_steps: usize,
    /// Absorbed mass fraction that flags a run.
    pub escape_threshold: f64,
    /// Constant step instead of the error controller (order studies).
    pub fixed_dt: Option<f64>,
    /// Finish each interval with backward-Euler steps so that stiff modes,
    /// which Crank–Nicolson leaves undamped, do not pollute `∂_t^j w`.
    pub smooth_output: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            grid: GridOptions::default(),
            boundary: Boundary::Absorbing,
            propagator: Propagator::CrankNicolson,
            tol: 1e-6,
            startup_steps: 4,
            escape_threshold: 1e-3,
            fixed_dt: None,
            smooth_output: true,
        }
    }
}

/// One accepted time step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub error: f64,
    /// `Σ m_j w_j`
    pub mass: f64,
    /// `Σ m_j w_j²`
    pub energy: f64,
}

struct Spectral {
    t0: f64,
    /// eigenvalues of `M^{-1/2} K M^{-1/2}`
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    coeffs: DVector<f64>,
}

/// Mutable state of one modal evolution.
pub struct SolverState {
    profile: HarmonicProfile,
    opts: SolverOptions,
    nodes: Vec<f64>,
    /// `h_k` at the nodes (`+∞` at the origin when `A_{1,k} < 0`)
    h: Vec<f64>,
    /// control-volume masses `∫ ν r^{N-1}`
    mass: Vec<f64>,
    /// face conductances `ν r^{N-1}/Δr` between nodes `j` and `j+1`
    cond: Vec<f64>,
    w: Vec<f64>,
    t: f64,
    dt: f64,
    accepted: usize,
    initial_mass: f64,
    history: Vec<StepRecord>,
    max_energy_increase: f64,
    spectral: Option<Spectral>,
}

impl std::fmt::Debug for SolverState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverState")
            .field("k", &self.profile.k)
            .field("nodes", &self.nodes.len())
            .field("t", &self.t)
            .field("dt", &self.dt)
            .finish()
    }
}

fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::StabilityFailure("zero pivot in tridiagonal solve".into()));
    }
    c[0] = if n > 1 { upper[0] / beta } else { 0.0 };
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i - 1] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::StabilityFailure(format!("zero pivot at row {i}")));
        }
        if i < n - 1 {
            c[i] = upper[i] / beta;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

impl SolverState {
    /// Set up the grid and project the data `φ_k` (modal coefficient) onto
    /// cell averages of `w = φ_k/h_k` in the weighted sense.
    pub fn new(profile: &HarmonicProfile, data: &RadialField, opts: &SolverOptions) -> Result<Self> {
        let nodes = opts.grid.build()?;
        let n = nodes.len();
        let dim = profile.dim().as_f64();
        let faces: Vec<f64> = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mut mass = Vec::with_capacity(n);
        for j in 0..n {
            let a = if j == 0 { 0.0 } else { faces[j - 1] };
            let b = if j == n - 1 { nodes[n - 1] } else { faces[j] };
            mass.push(profile.weight_integral(a, b));
        }
        let cond: Vec<f64> = (0..n - 1)
            .map(|j| {
                let f = faces[j];
                profile.nu(f) * f.powf(dim - 1.0) / (nodes[j + 1] - nodes[j])
            })
            .collect();
        if mass.iter().chain(&cond).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::StabilityFailure("non-positive cell mass or conductance".into()));
        }
        let h: Vec<f64> = nodes.iter().map(|&r| if r == 0.0 { h_at_origin(profile) } else { profile.h(r) }).collect();
        if data.support_radius() > nodes[n - 1] {
            return Err(Error::InvalidInput("initial data extends beyond the grid".into()));
        }
        // w_j = ∫_cell φ h r^{N-1} / m_j
        let rule = GaussLegendre::new(8);
        let mut w = Vec::with_capacity(n);
        for j in 0..n {
            let a = if j == 0 { 0.0 } else { faces[j - 1] };
            let b = if j == n - 1 { nodes[n - 1] } else { faces[j] };
            let mut acc = 0.0;
            for (lo, hi) in split_at_breaks(a, b, data.radii()) {
                for (r, wt) in rule.mapped(lo, hi) {
                    acc += wt * data.eval(r) * profile.h(r) * r.powf(dim - 1.0);
                }
            }
            w.push(acc / mass[j]);
        }
        if opts.boundary == Boundary::Absorbing {
            w[n - 1] = 0.0;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("data/h_k is not bounded on the grid".into()));
        }
        let dt = 0.1 * opts.grid.spacing * opts.grid.spacing;
        let mut state = SolverState {
            profile: profile.clone(),
            opts: *opts,
            nodes,
            h,
            mass,
            cond,
            w,
            t: 0.0,
            dt,
            accepted: 0,
            initial_mass: 0.0,
            history: Vec::new(),
            max_energy_increase: 0.0,
            spectral: None,
        };
        state.initial_mass = state.mass_total();
        state.history.push(StepRecord { t: 0.0, dt: 0.0, error: 0.0, mass: state.initial_mass, energy: state.energy() });
        Ok(state)
    }

    /// Number of unknowns (the Dirichlet node is excluded).
    fn active(&self) -> usize {
        match self.opts.boundary {
            Boundary::Reflecting => self.nodes.len(),
            Boundary::Absorbing => self.nodes.len() - 1,
        }
    }

    /// `(K w)_j` for the active unknowns.
    fn apply_stiffness(&self, w: &[f64]) -> Vec<f64> {
        let m = self.active();
        let mut out = vec![0.0; m];
        for (j, &c) in self.cond.iter().enumerate() {
            let wr = if j + 1 < m { w[j + 1] } else { 0.0 };
            let flux = c * (w[j] - wr);
            out[j] += flux;
            if j + 1 < m {
                out[j + 1] -= flux;
            }
        }
        out
    }

    /// Discrete operator `L w = -M⁻¹ K w`.
    pub fn apply_operator(&self, w: &[f64]) -> Vec<f64> {
        let mut kw = self.apply_stiffness(w);
        for (j, v) in kw.iter_mut().enumerate() {
            *v = -*v / self.mass[j];
        }
        kw.resize(self.nodes.len(), 0.0);
        kw
    }

    /// `(M + θ dt K) w' = (M - (1-θ) dt K) w`
    fn theta_step(&self, w: &[f64], dt: f64, theta: f64) -> Result<Vec<f64>> {
        let m = self.active();
        let kw = self.apply_stiffness(w);
        let rhs: Vec<f64> = (0..m).map(|j| self.mass[j] * w[j] - (1.0 - theta) * dt * kw[j]).collect();
        let mut diag: Vec<f64> = self.mass[..m].to_vec();
        let mut off = vec![0.0; m.saturating_sub(1)];
        for (j, &c) in self.cond.iter().enumerate() {
            diag[j] += theta * dt * c;
            if j + 1 < m {
                diag[j + 1] += theta * dt * c;
                off[j] = -theta * dt * c;
            }
        }
        let mut next = solve_tridiagonal(&off, &diag, &off, &rhs)?;
        next.resize(self.nodes.len(), 0.0);
        Ok(next)
    }

    fn step_pair(&self, dt: f64, startup: bool) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let step = |w: &[f64], dt: f64| -> Result<Vec<f64>> {
            if startup {
                self.theta_step(w, dt, 1.0)
            } else {
                self.theta_step(w, dt, 0.5)
            }
        };
        let full = step(&self.w, dt)?;
        let mid = step(&self.w, 0.5 * dt)?;
        let half = step(&mid, 0.5 * dt)?;
        let order = if startup { 1 } else { 2 };
        let scale = half.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let diff = full.iter().zip(&half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let err = diff / scale / ((1u32 << order) - 1) as f64;
        Ok((full, half, err))
    }

    /// Advance to time `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        if t_target < self.t {
            return Err(Error::InvalidInput(format!("cannot step back from t = {} to {t_target}", self.t)));
        }
        if self.opts.propagator == Propagator::Exponential {
            return self.advance_exponential(t_target);
        }
        if let Some(h) = self.opts.fixed_dt {
            return self.advance_fixed(t_target, h);
        }
        while self.t < t_target {
            let remaining = t_target - self.t;
            let dt = self.dt.min(remaining);
            let startup = self.accepted < self.opts.startup_steps || (self.opts.smooth_output && remaining <= 2.0 * self.dt);
            let (_, half, err) = self.step_pair(dt, startup)?;
            if !err.is_finite() {
                return Err(Error::StabilityFailure(format!("non-finite step at t = {}", self.t)));
            }
            let expo = if startup { 0.5 } else { 1.0 / 3.0 };
            let factor = if err > 0.0 { (0.9 * (self.opts.tol / err).powf(expo)).clamp(0.2, 2.0) } else { 2.0 };
            if err <= self.opts.tol {
                let before = self.energy();
                self.w = half;
                self.t = if dt == remaining { t_target } else { self.t + dt };
                self.accepted += 1;
                let energy = self.energy();
                if before > 0.0 {
                    self.max_energy_increase = self.max_energy_increase.max((energy - before) / before);
                }
                self.history.push(StepRecord { t: self.t, dt, error: err, mass: self.mass_total(), energy });
                // a step shortened to hit an output time does not shrink the controller's step
                if dt == self.dt || factor < 1.0 {
                    self.dt = dt * factor;
                }
            } else {
                self.dt = dt * factor;
                if self.dt < 1e-14 * self.t.max(1e-300) || self.dt < 1e-300 {
                    return Err(Error::StabilityFailure(format!("step size underflow at t = {}", self.t)));
                }
            }
        }
        Ok(())
    }

    fn advance_fixed(&mut self, t_target: f64, h: f64) -> Result<()> {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("fixed step must be positive, got {h}")));
        }
        while self.t < t_target {
            let remaining = t_target - self.t;
            let dt = if remaining < 1.5 * h { remaining } else { h };
            let theta = if self.accepted < self.opts.startup_steps { 1.0 } else { 0.5 };
            let before = self.energy();
            self.w = self.theta_step(&self.w, dt, theta)?;
            self.t = if dt == remaining { t_target } else { self.t + dt };
            self.accepted += 1;
            let energy = self.energy();
            if before > 0.0 {
                self.max_energy_increase = self.max_energy_increase.max((energy - before) / before);
            }
            self.history.push(StepRecord { t: self.t, dt, error: 0.0, mass: self.mass_total(), energy });
        }
        Ok(())
    }

    fn advance_exponential(&mut self, t_target: f64) -> Result<()> {
        if self.spectral.is_none() {
            let m = self.active();
            let sq: Vec<f64> = self.mass[..m].iter().map(|v| v.sqrt()).collect();
            let mut s = DMatrix::<f64>::zeros(m, m);
            for (j, &c) in self.cond.iter().enumerate() {
                s[(j, j)] += c / self.mass[j];
                if j + 1 < m {
                    s[(j + 1, j + 1)] += c / self.mass[j + 1];
                    let o = -c / (sq[j] * sq[j + 1]);
                    s[(j, j + 1)] = o;
                    s[(j + 1, j)] = o;
                }
            }
            let eig = SymmetricEigen::new(s);
            let x = DVector::from_iterator(m, (0..m).map(|j| sq[j] * self.w[j]));
            let coeffs = eig.eigenvectors.transpose() * x;
            self.spectral = Some(Spectral { t0: self.t, values: eig.eigenvalues, vectors: eig.eigenvectors, coeffs });
        }
        let sp = self.spectral.as_ref().unwrap();
        let m = self.active();
        let tau = t_target - sp.t0;
        let damped = DVector::from_iterator(m, (0..m).map(|i| (-sp.values[i].max(0.0) * tau).exp() * sp.coeffs[i]));
        let x = &sp.vectors * damped;
        let before = self.energy();
        for j in 0..m {
            self.w[j] = x[j] / self.mass[j].sqrt();
        }
        let dt = t_target - self.t;
        self.t = t_target;
        self.accepted += 1;
        let energy = self.energy();
        if before > 0.0 && dt > 0.0 {
            self.max_energy_increase = self.max_energy_increase.max((energy - before) / before);
        }
        self.history.push(StepRecord { t: self.t, dt, error: 0.0, mass: self.mass_total(), energy });
        Ok(())
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    pub fn profile(&self) -> &HarmonicProfile {
        &self.profile
    }
    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }
    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }
    pub fn cell_masses(&self) -> &[f64] {
        &self.mass
    }

    /// Discrete weighted mass `Σ m_j w_j`.
    pub fn mass_total(&self) -> f64 {
        self.mass.iter().zip(&self.w).map(|(m, w)| m * w).sum()
    }

    /// Discrete weighted `L²` norm squared `Σ m_j w_j²`.
    pub fn energy(&self) -> f64 {
        self.mass.iter().zip(&self.w).map(|(m, w)| m * w * w).sum()
    }

    /// Largest relative increase of the weighted energy over one step.
    pub fn max_energy_increase(&self) -> f64 {
        self.max_energy_increase
    }

    /// Fraction of the initial weighted mass absorbed at the outer radius.
    pub fn escaped_fraction(&self) -> f64 {
        if self.initial_mass == 0.0 {
            return 0.0;
        }
        (self.initial_mass - self.mass_total()) / self.initial_mass
    }

    pub fn support_escape(&self) -> bool {
        self.opts.boundary == Boundary::Absorbing && self.escaped_fraction().abs() > self.opts.escape_threshold
    }

    fn values_to_field(&self, values: &[f64]) -> Result<RadialField> {
        let a = self.profile.exponents.a1k;
        if a < 0.0 {
            // v is unbounded at the origin; start at the first node with the profile's power head
            let f = RadialField::new(self.nodes[1..].to_vec(), values[1..].to_vec(), self.profile.dim().get())?;
            Ok(f.with_head(crate::lorentz::Head::PowerLaw(a)))
        } else {
            RadialField::new(self.nodes.clone(), values.to_vec(), self.profile.dim().get())
        }
    }

    /// `v = h_k w` as a radial field.
    pub fn v_field(&self) -> Result<RadialField> {
        self.values_to_field(&self.v_values())
    }

    pub fn v_values(&self) -> Vec<f64> {
        self.h.iter().zip(&self.w).map(|(h, w)| if h.is_finite() { h * w } else { f64::INFINITY }).collect()
    }

    /// `∂_r w` at the nodes (centred differences, zero at the origin).
    pub fn dw_dr(&self) -> Vec<f64> {
        gradient_nonuniform(&self.nodes, &self.w)
    }

    /// `∂_r v = h' w + h w'`.
    pub fn dv_dr_values(&self) -> Vec<f64> {
        self.dv_dr_values_of(&self.w)
    }

    /// `∂_r (h_k w)` for an arbitrary nodal `w` on this grid.
    pub fn dv_dr_values_of(&self, w: &[f64]) -> Vec<f64> {
        let dw = gradient_nonuniform(&self.nodes, w);
        self.nodes
            .iter()
            .enumerate()
            .map(|(j, &r)| {
                if r == 0.0 {
                    return dh_at_origin(&self.profile) * w[0];
                }
                self.profile.dh(r) * w[j] + self.h[j] * dw[j]
            })
            .collect()
    }

    pub fn dv_dr_field(&self) -> Result<RadialField> {
        self.dv_dr_field_of(&self.w)
    }

    pub fn dv_dr_field_of(&self, w: &[f64]) -> Result<RadialField> {
        let vals = self.dv_dr_values_of(w);
        let a = self.profile.exponents.a1k;
        if a < 1.0 && a != 0.0 {
            let f = RadialField::new(self.nodes[1..].to_vec(), vals[1..].iter().map(|v| v.abs()).collect(), self.profile.dim().get())?;
            return Ok(f.with_head(crate::lorentz::Head::PowerLaw(a - 1.0)));
        }
        RadialField::new(self.nodes.clone(), vals, self.profile.dim().get())
    }
}

fn h_at_origin(p: &HarmonicProfile) -> f64 {
    let a = p.exponents.a1k;
    if a > 0.0 {
        0.0
    } else if a == 0.0 {
        p.g(p.r_min() * 1e-3)
    } else {
        f64::INFINITY
    }
}

fn dh_at_origin(p: &HarmonicProfile) -> f64 {
    let a = p.exponents.a1k;
    if a == 1.0 {
        p.g(p.r_min() * 1e-3)
    } else if a > 1.0 || a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn split_at_breaks(a: f64, b: f64, breaks: &[f64]) -> Vec<(f64, f64)> {
    let mut cuts = vec![a];
    cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Second-order derivative on a nonuniform grid, with `f'(0) = 0`.
fn gradient_nonuniform(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for j in 1..n {
        if j == n - 1 {
            d[j] = (f[j] - f[j - 1]) / (x[j] - x[j - 1]);
            continue;
        }
        let (h0, h1) = (x[j] - x[j - 1], x[j + 1] - x[j]);
        d[j] = (-h1 / (h0 * (h0 + h1))) * f[j - 1] + ((h1 - h0) / (h0 * h1)) * f[j] + (h0 / (h1 * (h0 + h1))) * f[j + 1];
    }
    d
}

/// One output time of an evolution.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub r: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub dv_dr: Vec<f64>,
}

impl Snapshot {
    fn field(&self, values: &[f64], a: f64, dim: usize, head_shift: f64) -> Result<RadialField> {
        if a - head_shift < 0.0 || (head_shift == 1.0 && a < 1.0 && a != 0.0) {
            let f = RadialField::new(self.r[1..].to_vec(), values[1..].to_vec(), dim)?;
            Ok(f.with_head(crate::lorentz::Head::PowerLaw(a - head_shift)))
        } else {
            RadialField::new(self.r.clone(), values.to_vec(), dim)
        }
    }
}

/// Result of [`evolve_mode`].
#[derive(Debug, Clone, Serialize)]
pub struct Evolution {
    pub k: usize,
    pub dim: usize,
    pub a1k: f64,
    pub snapshots: Vec<Snapshot>,
    pub history: Vec<StepRecord>,
    pub escaped_fraction: f64,
    pub support_escape: bool,
    pub max_energy_increase: f64,
}

impl Evolution {
    /// `v(·, t_i)` as radial fields.
    pub fn fields(&self) -> Result<Vec<RadialField>> {
        self.snapshots.iter().map(|s| s.field(&s.v, self.a1k, self.dim, 0.0)).collect()
    }

    pub fn v_field(&self, index: usize) -> Result<RadialField> {
        let s = &self.snapshots[index];
        s.field(&s.v, self.a1k, self.dim, 0.0)
    }

    pub fn dv_dr_field(&self, index: usize) -> Result<RadialField> {
        let s = &self.snapshots[index];
        s.field(&s.dv_dr, self.a1k, self.dim, 1.0)
    }

    /// `max_t |M(t) - M(0)| / (M(0) max(t, 1))` over accepted steps.
    pub fn mass_drift_rate(&self) -> f64 {
        let m0 = self.history.first().map_or(0.0, |h| h.mass);
        self.history
            .iter()
            .map(|h| ((h.mass - m0) / m0).abs() / h.t.max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Evolve the modal data `φ_k` (coefficient of `Q_{k,i}`) and return `v` at
/// every requested time.
pub fn evolve_mode(profile: &HarmonicProfile, data: &RadialField, times: &[f64], opts: &SolverOptions) -> Result<Evolution> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| *t < 0.0) {
        return Err(Error::InvalidInput("times must be nonnegative and increasing".into()));
    }
    let mut state = SolverState::new(profile, data, opts)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for &t in times {
        state.advance_to(t)?;
        snapshots.push(snapshot_of(&state));
    }
    Ok(Evolution {
        k: profile.k,
        dim: profile.dim().get(),
        a1k: profile.exponents.a1k,
        snapshots,
        history: state.history.clone(),
        escaped_fraction: state.escaped_fraction(),
        support_escape: state.support_escape(),
        max_energy_increase: state.max_energy_increase(),
    })
}

pub fn snapshot_of(state: &SolverState) -> Snapshot {
    Snapshot { t: state.t, r: state.nodes.clone(), v: state.v_values(), w: state.w.clone(), dv_dr: state.dv_dr_values() }
}

/// `h_k L_k^j w` with an accuracy flag for `j ≥ 3`.
#[derive(Debug, Clone)]
pub struct TimeDerivative {
    pub order: usize,
    /// `∂_t^j w` at the nodes
    pub w: Vec<f64>,
    pub field: RadialField,
    pub accuracy_warning: bool,
}

pub fn time_derivative(state: &SolverState, order: usize) -> Result<TimeDerivative> {
    let mut w = state.w.clone();
    for _ in 0..order {
        w = state.apply_operator(&w);
    }
    let v: Vec<f64> = state.h.iter().zip(&w).map(|(h, w)| if h.is_finite() { h * w } else { f64::INFINITY }).collect();
    Ok(TimeDerivative { order, field: state.values_to_field(&v)?, w, accuracy_warning: order >= 3 })
}

/// `u` and `|∇u|` assembled from evolved modes at one snapshot.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub value: ModalField,
    pub gradient: ModalField,
}

/// Combine `(k, i, evolution)` at snapshot `index` into `u` and `|∇u|`.
pub fn assemble(dim: Dimension, modes: &[(usize, usize, &Evolution)], index: usize) -> Result<Assembled> {
    let mut values = Vec::new();
    let mut derivs = Vec::new();
    for (k, i, evo) in modes {
        values.push((*k, *i, evo.v_field(index)?));
        derivs.push(evo.dv_dr_field(index)?);
    }
    let value = ModalField::new(dim, values.clone())?;
    let gradient = ModalField::gradient(dim, values, derivs)?;
    Ok(Assembled { value, gradient })
}

// --- kernels -------------------------------------------------------------------

/// Kernel sample with its envelope factors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelSample {
    pub t: f64,
    pub x: f64,
    pub p: f64,
    /// `t^{-N/2} h̃₀(x,t) h̃₀(y,t) / h₀(√t)²`
    pub prefactor: f64,
    /// `(|x| - |y|)² / t`
    pub distance: f64,
}

impl KernelSample {
    pub fn envelope(&self, c: f64) -> f64 {
        c * self.prefactor * (-self.distance / c).exp()
    }

    /// Smallest `C` with `p ≤ C·prefactor·exp(-distance/C)`.
    pub fn required_constant(&self) -> f64 {
        if self.p <= 0.0 {
            return 0.0;
        }
        let f = |c: f64| self.envelope(c) - self.p;
        let (mut lo, mut hi) = (1e-12f64, 1.0f64);
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-12 {
                break;
            }
        }
        hi
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelEstimate {
    pub y: f64,
    pub times: Vec<f64>,
    pub samples: Vec<KernelSample>,
    /// smallest `C` valid at every sample
    pub constant: f64,
    pub min_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelOptions {
    pub grid: GridOptions,
    /// bump width in cells
    pub bump_cells: usize,
    /// samples are taken for `| |x| - y | ≤ window·√t`
    pub window: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions { grid: GridOptions { spacing: 0.02, growth: 0.005, r_max: 40.0 }, bump_cells: 4, window: 5.0 }
    }
}

/// Radially averaged kernel `p̄(x, y, t)` of `e^{-tH}` via the `k = 0` mode,
/// started from a unit-mass shell bump at radius `y`.
pub fn estimate_kernel(h0: &HarmonicProfile, y: f64, times: &[f64], opts: &KernelOptions) -> Result<KernelEstimate> {
    if h0.k != 0 {
        return Err(Error::InvalidInput("kernel estimates use the k = 0 profile".into()));
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let r_max = opts.grid.r_max.max(y + 2.0 * opts.window * t_max.sqrt());
    let grid = GridOptions { r_max, ..opts.grid };
    let nodes = grid.build()?;
    if !(y > 0.0 && y < r_max) {
        return Err(Error::InvalidInput(format!("source radius {y} outside the grid")));
    }
    let dim = h0.dim();
    let n = dim.as_f64();
    // hat of half-width 2 cells at the local spacing, unit L¹ mass on R^N
    let j = nodes.partition_point(|&r| r < y).min(nodes.len() - 2);
    let local = nodes[j + 1] - nodes[j];
    let half = 0.5 * opts.bump_cells as f64 * local;
    let shape = |r: f64| (1.0 - (r - y).abs() / half).max(0.0);
    let mass = dim.sphere_area()
        * crate::quad::adaptive(|r: f64| shape(r) * r.powf(n - 1.0), (y - half).max(0.0), y + half, 1e-300, 1e-13)?.value;
    let lo = (y - half).max(0.0);
    let bump_nodes: Vec<f64> = (0..=40).map(|i| lo + (y + half - lo) * i as f64 / 40.0).collect();
    let bump = RadialField::from_fn(bump_nodes, dim.get(), |r| shape(r) / mass)?.with_interp(crate::lorentz::Interp::Linear);
    let solver = SolverOptions { grid, boundary: Boundary::Absorbing, propagator: Propagator::Exponential, ..SolverOptions::default() };
    let mut state = SolverState::new(h0, &bump, &solver)?;
    let mut samples = Vec::new();
    let mut min_value = f64::INFINITY;
    for &t in times {
        state.advance_to(t)?;
        let v = state.v_values();
        let rt = t.sqrt();
        let h_root = h0.h(rt);
        let h_tilde = |r: f64| h0.h(r.min(rt));
        for (i, &x) in state.nodes.iter().enumerate() {
            if x == 0.0 || !v[i].is_finite() {
                continue;
            }
            min_value = min_value.min(v[i]);
            if v[i] < -1e-12 {
                return Err(Error::PositivityViolation { value: v[i], radius: x, time: t });
            }
            if (x - y).abs() > opts.window * rt {
                continue;
            }
            let prefactor = t.powf(-n / 2.0) * h_tilde(x) * h_tilde(y) / (h_root * h_root);
            samples.push(KernelSample { t, x, p: v[i], prefactor, distance: (x - y).powi(2) / t });
        }
    }
    let constant = samples.iter().map(|s| s.required_constant()).fold(0.0, f64::max);
    Ok(KernelEstimate { y, times: times.to_vec(), samples, constant, min_value })
}

/// Spherical average of the free Gaussian kernel in `N = 3`.
pub fn free_kernel_average_3d(r: f64, y: f64, t: f64) -> f64 {
    let pre = (4.0 * std::f64::consts::PI * t).powf(-1.5);
    let z = r * y / (2.0 * t);
    if z < 1e-8 {
        return pre * (-(r * r + y * y) / (4.0 * t)).exp();
    }
    // e^{-(r²+y²)/4t} sinh(z)/z without overflow
    pre * ((-(r - y).powi(2) / (4.0 * t)).exp() - (-(r + y).powi(2) / (4.0 * t)).exp()) / (2.0 * z)
}

// --- cone diagnostics ----------------------------------------------------------

/// Scale of the interior bound: `M_{k,i} t^{-N/2-j} ‖h₀‖_{L^{p',σ'}(B√t)} / (h_k(δ√t) h₀(√t)) ‖φ‖_{L^{p,σ}}`.
pub struct ConeScale<'a> {
    pub h0: &'a HarmonicProfile,
    pub p: ExtReal,
    pub sigma: ExtReal,
    pub data_norm: f64,
    /// `‖Q_{k,i}‖_∞`
    pub m_ki: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub t: f64,
    pub delta: f64,
    pub order: usize,
    /// `max |w(r) - w(0) - F(r)|` over the cone, divided by `max |w|` there
    pub residual: f64,
    /// same residual divided by `max |w(r) - w(0)|`
    pub residual_of_variation: f64,
    /// fitted constant of `|∂_t^j w| ≤ C·scale`
    pub c_interior: Option<f64>,
    /// fitted constant of `|F| ≤ C·scale·r²/t`
    pub c_envelope: Option<f64>,
    pub samples: usize,
}

/// Check `∂_t^j w(r,t) = ∂_t^j w(0,t) + F^j(r,t)` inside `r < δ√t`, with
/// `F^j` built by nested quadrature from `∂_t^{j+1} w`.
pub fn cone_diagnostics(state: &SolverState, delta: f64, order: usize, scale: Option<&ConeScale<'_>>) -> Result<ConeReport> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("cone aperture must lie in (0, 1], got {delta}")));
    }
    let t = state.t;
    let lhs = time_derivative(state, order)?.w;
    let psi = time_derivative(state, order + 1)?.w;
    let radius = delta * t.sqrt();
    let nodes = &state.nodes;
    let m = nodes.partition_point(|&r| r < radius);
    if m < 2 {
        return Err(Error::InvalidInput("cone contains fewer than two grid nodes".into()));
    }
    let profile = &state.profile;
    let n = profile.dim().as_f64();
    // cubic interpolation of ψ through the four nearest nodes
    let psi_at = |r: f64| -> f64 {
        let i = nodes.partition_point(|&x| x <= r).clamp(2, nodes.len() - 2) - 2;
        let xs = &nodes[i..i + 4];
        let ys = &psi[i..i + 4];
        (0..4).map(|a| ys[a] * crate::quad::lagrange_basis(xs, a, r)).sum()
    };
    let rule = GaussLegendre::new(6);
    let weight = |r: f64| profile.nu(r) * r.powf(n - 1.0);
    // inner integral at nodes
    let mut inner = vec![0.0; m + 1];
    for i in 0..m {
        inner[i + 1] = inner[i] + rule.mapped(nodes[i], nodes[i + 1]).map(|(r, w)| w * weight(r) * psi_at(r)).sum::<f64>();
    }
    let inner_at = |s: f64, i: usize| -> f64 { inner[i] + rule.mapped(nodes[i], s).map(|(r, w)| w * weight(r) * psi_at(r)).sum::<f64>() };
    let mut f = vec![0.0; m + 1];
    for i in 0..m {
        f[i + 1] = f[i]
            + rule
                .mapped(nodes[i], nodes[i + 1])
                .map(|(s, w)| w * inner_at(s, i) / weight(s))
                .sum::<f64>();
    }
    let w0 = lhs[0];
    let mut worst = 0.0f64;
    let mut scale_w = 0.0f64;
    let mut variation = 0.0f64;
    for i in 0..m {
        let res = lhs[i] - w0 - f[i];
        worst = worst.max(res.abs());
        scale_w = scale_w.max(lhs[i].abs());
        variation = variation.max((lhs[i] - w0).abs());
    }
    let (c_interior, c_envelope) = match scale {
        None => (None, None),
        Some(sc) => {
            let rt = t.sqrt();
            let field = profile_field(sc.h0, rt.min(sc.h0.r_max()), false)?;
            let dual = lorentz_norm(&field.restrict(Region::Ball(rt)), sc.p.conjugate(), sc.sigma.conjugate())?;
            let base = sc.m_ki * t.powf(-n / 2.0 - order as f64) * dual / (profile.h(delta * rt) * sc.h0.h(rt)) * sc.data_norm;
            let ci = lhs[..m].iter().map(|v| v.abs()).fold(0.0, f64::max) / base;
            let ce = (1..m).map(|i| f[i].abs() / (base / t * nodes[i] * nodes[i])).fold(0.0, f64::max);
            (Some(ci), Some(ce))
        }
    };
    Ok(ConeReport {
        t,
        delta,
        order,
        residual: worst / scale_w.max(1e-300),
        residual_of_variation: worst / variation.max(1e-300),
        c_interior,
        c_envelope,
        samples: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_profile::{solve_profile, ProfileOptions};
    use crate::potential::PotentialSpec;

    fn free(k: usize) -> HarmonicProfile {
        let spec = PotentialSpec::pure_hardy(0.0, Dimension::new(3).unwrap()).unwrap();
        solve_profile(&spec, k, &ProfileOptions::default()).unwrap()
    }

    fn gaussian_data(k: usize) -> RadialField {
        let radii: Vec<f64> = (0..=800).map(|i| i as f64 * 0.01).collect();
        RadialField::from_fn(radii, 3, |r| if k == 0 { (-r * r).exp() } else { r * (-r * r).exp() })
            .unwrap()
            .with_interp(crate::lorentz::Interp::Linear)
    }

    #[test]
    fn grid_shape() {
        let g = GridOptions { spacing: 0.1, growth: 0.1, r_max: 5.0 }.build().unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert!((g[11] - 1.1).abs() < 1e-12);
        assert!((g[12] - 1.21).abs() < 1e-12);
        assert_eq!(*g.last().unwrap(), 5.0);
    }

    #[test]
    fn tridiagonal_solver() {
        let lower = [1.0, 1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [1.0, 1.0];
        let x = solve_tridiagonal(&lower, &diag, &upper, &[5.0, 6.0, 5.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let p = free(0);
        let data = gaussian_data(0);
        let evo = evolve_mode(&p, &data, &[0.0], &SolverOptions { grid: GridOptions::default().with_r_max(10.0), ..Default::default() }).unwrap();
        let s = &evo.snapshots[0];
        for (r, v) in s.r.iter().zip(&s.v).take(300).step_by(10) {
            // cell averages of a smooth function: O(Δ²)
            assert!((v - (-r * r).exp()).abs() < 1e-4, "r={r}");
        }
    }

    #[test]
    fn constants_are_stationary() {
        let p = free(0);
        let data = RadialField::new(vec![0.0, 10.0], vec![1.0, 1.0], 3).unwrap();
        let opts = SolverOptions { grid: GridOptions::default().with_r_max(10.0), boundary: Boundary::Reflecting, ..Default::default() };
        let mut state = SolverState::new(&p, &data, &opts).unwrap();
        let d = time_derivative(&state, 1).unwrap();
        assert!(d.w.iter().all(|v| v.abs() < 1e-8));
        state.advance_to(3.0).unwrap();
        assert!(state.w().iter().all(|w| (w - 1.0).abs() < 1e-12));
        let cone = cone_diagnostics(&state, 1.0, 0, None).unwrap();
        assert!(cone.residual < 1e-12);
    }

    #[test]
    fn free_gaussian_k0_and_k1() {
        for k in [0usize, 1] {
            let p = free(k);
            let data = gaussian_data(k);
            let times = [0.1, 1.0, 10.0];
            let opts = SolverOptions { grid: GridOptions::default().with_r_max(40.0 * 10f64.sqrt()), ..Default::default() };
            let evo = evolve_mode(&p, &data, &times, &opts).unwrap();
            for s in &evo.snapshots {
                let t = s.t;
                let exact = |r: f64| {
                    let a = 1.0 + 4.0 * t;
                    if k == 0 {
                        a.powf(-1.5) * (-r * r / a).exp()
                    } else {
                        a.powf(-2.5) * r * (-r * r / a).exp()
                    }
                };
                let peak = s.r.iter().map(|&r| exact(r).abs()).fold(0.0, f64::max);
                let err = s.r.iter().zip(&s.v).map(|(&r, v)| (v - exact(r)).abs()).fold(0.0, f64::max);
                assert!(err / peak < 1e-3, "k={k} t={t}: {}", err / peak);
            }
        }
    }

    #[test]
    fn reflecting_conserves_mass_and_contracts() {
        let p = free(0);
        let data = RadialField::indicator(1.0, 3).unwrap();
        let opts = SolverOptions { grid: GridOptions::default().with_r_max(8.0), boundary: Boundary::Reflecting, ..Default::default() };
        let evo = evolve_mode(&p, &data, &[0.5, 5.0, 50.0], &opts).unwrap();
        assert!(evo.mass_drift_rate() < 1e-10, "{}", evo.mass_drift_rate());
        assert!(evo.max_energy_increase <= 1e-13, "{}", evo.max_energy_increase);
        assert!(evo.history.windows(2).all(|w| w[1].energy <= w[0].energy * (1.0 + 1e-13)));
    }

    #[test]
    fn exponential_matches_crank_nicolson() {
        let p = free(0);
        let data = gaussian_data(0);
        let grid = GridOptions { spacing: 0.05, growth: 0.025, r_max: 30.0 };
        let cn = evolve_mode(&p, &data, &[1.0], &SolverOptions { grid, ..Default::default() }).unwrap();
        let ex = evolve_mode(&p, &data, &[1.0], &SolverOptions { grid, propagator: Propagator::Exponential, ..Default::default() }).unwrap();
        let peak = cn.snapshots[0].v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = cn.snapshots[0].v.iter().zip(&ex.snapshots[0].v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff / peak < 1e-4, "{}", diff / peak);
    }

    #[test]
    fn free_kernel_against_exact_average() {
        let p = free(0);
        let est = estimate_kernel(&p, 1.0, &[0.5, 2.0], &KernelOptions::default()).unwrap();
        assert!(est.min_value > -1e-12);
        for s in est.samples.iter().filter(|s| s.distance < 4.0) {
            let exact = free_kernel_average_3d(s.x, 1.0, s.t);
            assert!((s.p - exact).abs() < 2e-2 * exact.max(1e-3), "t={} x={} p={} exact={exact}", s.t, s.x, s.p);
        }
        assert!(est.constant.is_finite() && est.constant > 0.0);
    }

    #[test]
    fn time_derivative_of_gaussian() {
        let p = free(0);
        let data = gaussian_data(0);
        let opts = SolverOptions { grid: GridOptions::default().with_r_max(40.0), ..Default::default() };
        let mut state = SolverState::new(&p, &data, &opts).unwrap();
        state.advance_to(1.0).unwrap();
        let d = time_derivative(&state, 1).unwrap();
        // ∂_t of a^{-3/2} e^{-r²/a}, a = 1 + 4t
        let exact = |r: f64| {
            let a: f64 = 5.0;
            (-6.0 / a + 4.0 * r * r / (a * a)) * a.powf(-1.5) * (-r * r / a).exp()
        };
        let peak = exact(0.0).abs();
        for (i, &r) in state.nodes().iter().enumerate().filter(|(_, r)| **r < 3.0) {
            assert!((d.w[i] - exact(r)).abs() < 1e-2 * peak, "r={r}");
        }
        assert!(time_derivative(&state, 3).unwrap().accuracy_warning);
    }

    #[test]
    fn representation_in_the_cone() {
        let p = free(0);
        let data = gaussian_data(0);
        let opts = SolverOptions { grid: GridOptions::default().with_r_max(40.0 * 10.0), ..Default::default() };
        let mut state = SolverState::new(&p, &data, &opts).unwrap();
        for t in [1.0, 10.0, 100.0] {
            state.advance_to(t).unwrap();
            let rep = cone_diagnostics(&state, 0.5, 0, None).unwrap();
            assert!(rep.residual < 1e-4, "t={t}: {rep:?}");
        }
    }

    #[test]
    fn linear_mode_assembly() {
        let dim = Dimension::new(3).unwrap();
        let radii: Vec<f64> = (0..=100).map(|i| i as f64 * 0.02).collect();
        let snap = Snapshot { t: 0.0, r: radii.clone(), v: radii.clone(), w: vec![1.0; 101], dv_dr: vec![1.0; 101] };
        let evo = Evolution {
            k: 1,
            dim: 3,
            a1k: 1.0,
            snapshots: vec![snap],
            history: vec![],
            escaped_fraction: 0.0,
            support_escape: false,
            max_energy_increase: 0.0,
        };
        let asm = assemble(dim, &[(1, 1, &evo)], 0).unwrap();
        for (r, t) in [(0.5, 0.3), (1.5, -0.8)] {
            assert!((asm.gradient.eval(r, t) - crate::lorentz::Q1_NORMALIZATION).abs() < 1e-9);
            assert!((asm.value.eval(r, t) - crate::lorentz::Q1_NORMALIZATION * r * t.abs()).abs() < 1e-9);
        }
    }
}
