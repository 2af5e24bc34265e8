//! Positive radial solutions `h_k` of `h'' + (N-1)h'/r - V_k h = 0`
//! normalized by `h_k(r) ~ r^{A_{1,k}}` as `r → 0`.
//!
//! The solver works with `g = h/r^{A_{1,k}}` in `y = log r`, where the
//! equation becomes
//!
//! ```text
//! g'' + b g' = W g,   b = N - 2 + 2A_{1,k},   W(y) = r²V(r) - λ₁,
//! ```
//!
//! and `g → 1`, `g' → 0` as `y → -∞`. Near the origin `g` is built by Picard
//! iteration of the Volterra form `g = 1 + ∫∫ e^{-b(y-y')} W g`; beyond the
//! Picard radius the same cell operators are used as an implicit exponential
//! collocation stepper with step doubling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mode_spectrum::{exponents, mode_exponents, Dimension, ModeExponents};
use crate::potential::PotentialSpec;
use crate::quad::{adaptive, lagrange_basis, GaussLegendre};

/// Grid and tolerance settings for [`solve_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileOptions {
    pub r_min: f64,
    pub r_max: f64,
    pub cells_per_decade: usize,
    /// Picard stopping tolerance (sup of successive differences, relative).
    pub tol: f64,
    /// First Picard radius tried; halved until the iteration contracts.
    pub picard_start: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions { r_min: 1e-6, r_max: 1e3, cells_per_decade: 64, tol: 1e-12, picard_start: 1.0 }
    }
}

impl ProfileOptions {
    /// Default grid `[1e-6, 1e3]·scale`.
    pub fn scaled(scale: f64) -> Self {
        ProfileOptions { r_min: 1e-6 * scale, r_max: 1e3 * scale, picard_start: scale, ..Default::default() }
    }

    pub fn with_r_max(mut self, r_max: f64) -> Self {
        self.r_max = r_max;
        self
    }
}

const NODES_PER_CELL: usize = 8;
const MAX_DEPTH: usize = 12;

/// Exact exponential-weighted integration operators on one cell `[0, Δ]`
/// for data interpolated at Gauss–Legendre nodes.
#[derive(Debug, Clone)]
struct CellOps {
    delta: f64,
    nodes: Vec<f64>,
    /// `∫_0^{s_i} φ₁(s_i-s) ℓ_l(s) ds`, `φ₁(u) = (1-e^{-bu})/b`
    phi_int: Vec<Vec<f64>>,
    exp_end: Vec<f64>,
    phi_end: Vec<f64>,
    phi: Vec<f64>,
    decay_end: f64,
    phi1_end: f64,
}

fn phi1(b: f64, u: f64) -> f64 {
    if b.abs() * u < 1e-8 {
        u * (1.0 - 0.5 * b * u)
    } else {
        -(-b * u).exp_m1() / b
    }
}

impl CellOps {
    fn new(b: f64, delta: f64) -> Self {
        let rule = GaussLegendre::new(NODES_PER_CELL);
        let nodes: Vec<f64> = rule.nodes.iter().map(|x| 0.5 * (1.0 + x) * delta).collect();
        let fine = GaussLegendre::new(32);
        let ints = |upper: f64| -> (Vec<f64>, Vec<f64>) {
            let mut e = vec![0.0; NODES_PER_CELL];
            let mut p = vec![0.0; NODES_PER_CELL];
            for (s, w) in fine.mapped(0.0, upper) {
                let (ex, ph) = ((-b * (upper - s)).exp(), phi1(b, upper - s));
                for l in 0..NODES_PER_CELL {
                    let basis = lagrange_basis(&nodes, l, s);
                    e[l] += w * ex * basis;
                    p[l] += w * ph * basis;
                }
            }
            (e, p)
        };
        let phi_int: Vec<Vec<f64>> = nodes.iter().map(|&s| ints(s).1).collect();
        let (exp_end, phi_end) = ints(delta);
        CellOps {
            delta,
            phi: nodes.iter().map(|&s| phi1(b, s)).collect(),
            nodes,
            phi_int,
            exp_end,
            phi_end,
            decay_end: (-b * delta).exp(),
            phi1_end: phi1(b, delta),
        }
    }

    /// One implicit step of `(g, g')` across the cell starting at `y_a`.
    fn step(&self, w: &[f64], g_a: f64, j_a: f64) -> Option<(f64, f64)> {
        let m = NODES_PER_CELL;
        let mat = DMatrix::from_fn(m, m, |i, l| f64::from(u8::from(i == l)) - self.phi_int[i][l] * w[l]);
        let rhs = DVector::from_fn(m, |i, _| g_a + j_a * self.phi[i]);
        let g = mat.lu().solve(&rhs)?;
        let g_end = g_a + j_a * self.phi1_end + (0..m).map(|l| self.phi_end[l] * w[l] * g[l]).sum::<f64>();
        let j_end = self.decay_end * j_a + (0..m).map(|l| self.exp_end[l] * w[l] * g[l]).sum::<f64>();
        Some((g_end, j_end))
    }
}

/// Cell operators for `Δ, Δ/2, Δ/4, …`, built on demand.
struct Stepper<'a> {
    spec: &'a PotentialSpec,
    b: f64,
    levels: Vec<CellOps>,
    tol: f64,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a PotentialSpec, b: f64, delta: f64, tol: f64) -> Self {
        Stepper { spec, b, levels: vec![CellOps::new(b, delta)], tol }
    }

    fn ops(&mut self, level: usize) -> &CellOps {
        while self.levels.len() <= level {
            let d = self.levels.last().unwrap().delta * 0.5;
            self.levels.push(CellOps::new(self.b, d));
        }
        &self.levels[level]
    }

    fn weights_at(&mut self, level: usize, y_a: f64) -> Vec<f64> {
        let spec = self.spec;
        self.ops(level).nodes.iter().map(|&s| spec.scaled_inner_deviation((y_a + s).exp())).collect()
    }

    fn single(&mut self, level: usize, y_a: f64, g: f64, j: f64) -> Result<(f64, f64)> {
        let w = self.weights_at(level, y_a);
        self.ops(level).step(&w, g, j).ok_or_else(|| Error::OdeFailure {
            radius: y_a.exp(),
            detail: "singular collocation system".into(),
        })
    }

    /// Advance across `[y_a, y_a + Δ·2^{-level}]` with step doubling.
    fn advance(&mut self, level: usize, y_a: f64, g: f64, j: f64) -> Result<(f64, f64)> {
        let coarse = self.single(level, y_a, g, j)?;
        let half = self.ops(level + 1).delta;
        let mid = self.single(level + 1, y_a, g, j)?;
        let fine = self.single(level + 1, y_a + half, mid.0, mid.1)?;
        let scale = fine.0.abs().max(1.0);
        let err = (fine.0 - coarse.0).abs().max(half * (fine.1 - coarse.1).abs());
        if !(fine.0.is_finite() && fine.1.is_finite()) {
            return Err(Error::OdeFailure { radius: y_a.exp(), detail: "non-finite state".into() });
        }
        if err <= self.tol * scale {
            return Ok(fine);
        }
        if level + 1 >= MAX_DEPTH {
            return Err(Error::OdeFailure {
                radius: y_a.exp(),
                detail: format!("step size underflow (local error {err:e})"),
            });
        }
        let m = self.advance(level + 1, y_a, g, j)?;
        self.advance(level + 1, y_a + half, m.0, m.1)
    }
}

/// `h_k` sampled on a log-uniform grid with its matched data.
#[derive(Debug, Clone)]
pub struct HarmonicProfile {
    pub k: usize,
    pub exponents: ModeExponents,
    spec: PotentialSpec,
    y0: f64,
    delta: f64,
    /// `g` at cell boundaries
    g: Vec<f64>,
    /// `g'` (in `y`) at cell boundaries
    gy: Vec<f64>,
    /// `∫_{-∞}^y e^{c(y'-y)} g² dy'` with `c = N + 2A_{1,k}`
    vol: Vec<f64>,
    /// `f_k` at cell boundaries
    fk: Vec<f64>,
    pub picard_radius: f64,
    pub picard_ratio: f64,
    pub picard_iterations: usize,
    /// relative mismatch `(value, derivative)` between Picard and continuation at `R₀`
    pub matching_error: (f64, f64),
    /// `(c_k, residual)` when the large-r fit succeeded
    pub c_k: Option<(f64, f64)>,
}

struct PicardOutcome {
    g: Vec<f64>,
    gy: Vec<f64>,
    ratio: f64,
    iterations: usize,
}

/// Picard iteration of the Volterra form on `n` cells starting at `y_lo`.
fn picard(spec: &PotentialSpec, ops: &CellOps, y_lo: f64, n: usize, rho: f64, b: f64, tol: f64) -> Option<PicardOutcome> {
    let m = NODES_PER_CELL;
    let w: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let a = y_lo + c as f64 * ops.delta;
            ops.nodes.iter().map(|&s| spec.scaled_inner_deviation((a + s).exp())).collect()
        })
        .collect();
    let w_head = spec.scaled_inner_deviation(y_lo.exp());
    let mut nodes_g = vec![vec![1.0; m]; n];
    let mut bnd_g = vec![1.0; n + 1];
    let mut bnd_j = vec![0.0; n + 1];
    let mut prev_diff = f64::NAN;
    let mut worst_ratio = 0.0f64;
    for it in 1..=500 {
        // head: W ≈ W₀ e^{ρ(y - y_lo)}, g ≈ g(y_lo) below the grid
        let j_head = w_head * bnd_g[0] / (b + rho);
        let (mut ga, mut ja) = (1.0 + j_head / rho, j_head);
        let mut new_nodes = vec![vec![0.0; m]; n];
        let mut new_g = vec![0.0; n + 1];
        let mut new_j = vec![0.0; n + 1];
        new_g[0] = ga;
        new_j[0] = ja;
        for c in 0..n {
            let f: Vec<f64> = (0..m).map(|l| w[c][l] * nodes_g[c][l]).collect();
            for i in 0..m {
                new_nodes[c][i] = ga + ja * ops.phi[i] + (0..m).map(|l| ops.phi_int[i][l] * f[l]).sum::<f64>();
            }
            let g_end = ga + ja * ops.phi1_end + (0..m).map(|l| ops.phi_end[l] * f[l]).sum::<f64>();
            let j_end = ops.decay_end * ja + (0..m).map(|l| ops.exp_end[l] * f[l]).sum::<f64>();
            ga = g_end;
            ja = j_end;
            new_g[c + 1] = ga;
            new_j[c + 1] = ja;
        }
        let diff = new_nodes
            .iter()
            .flatten()
            .zip(nodes_g.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .chain(new_g.iter().zip(&bnd_g).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let size = new_g.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if it >= 2 && prev_diff > 1e3 * f64::EPSILON * size {
            worst_ratio = worst_ratio.max(diff / prev_diff);
        }
        nodes_g = new_nodes;
        bnd_g = new_g;
        bnd_j = new_j;
        if worst_ratio > 0.5 || !diff.is_finite() {
            return None;
        }
        if diff <= tol * size && it >= 2 {
            return Some(PicardOutcome { g: bnd_g, gy: bnd_j, ratio: worst_ratio, iterations: it });
        }
        prev_diff = diff;
    }
    None
}

/// Build `h_k` for `spec` on `[r_min, r_max]`.
pub fn solve_profile(spec: &PotentialSpec, k: usize, opts: &ProfileOptions) -> Result<HarmonicProfile> {
    let ex = mode_exponents(k, spec)?;
    if !(opts.r_min > 0.0 && opts.r_max > opts.r_min && opts.tol > 0.0 && opts.cells_per_decade >= 4) {
        return Err(Error::InvalidInput("profile grid needs 0 < r_min < r_max, tol > 0".into()));
    }
    let b = ex.sqrt_d1();
    let delta = std::f64::consts::LN_10 / opts.cells_per_decade as f64;
    let rho = spec.rho1();
    let ops = CellOps::new(b, delta);
    let (y_min, y_max) = (opts.r_min.ln(), opts.r_max.ln());

    let mut best_ratio = f64::INFINITY;
    let mut r0 = opts.picard_start.min(opts.r_max);
    let found = loop {
        if r0 < 1e-8 {
            return Err(Error::ContractionFailure { best_ratio });
        }
        let y0 = r0.ln();
        let n0 = (((y0 - y_min) / delta).ceil() as usize).max(2 * opts.cells_per_decade);
        let y_lo = y0 - n0 as f64 * delta;
        match picard(spec, &ops, y_lo, n0, rho, b, opts.tol) {
            Some(out) => break (y_lo, n0, out),
            None => {
                // record the first-step ratio for the error message
                best_ratio = best_ratio.min(first_ratio(spec, &ops, y_lo, n0, rho, b));
                r0 *= 0.5;
            }
        }
    };
    let (y_lo, n0, out) = found;
    let n_total = n0 + ((y_max - (y_lo + n0 as f64 * delta)) / delta).ceil().max(0.0) as usize;
    let mut g = out.g;
    let mut gy = out.gy;
    let local_tol = (opts.tol * 1e-2).max(1e-14);
    let mut stepper = Stepper::new(spec, b, delta, local_tol);

    // agreement of the two constructions over the last decade before R₀
    let start = n0.saturating_sub(opts.cells_per_decade);
    let (mut gc, mut jc) = (g[start], gy[start]);
    for c in start..n0 {
        (gc, jc) = stepper.advance(0, y_lo + c as f64 * delta, gc, jc)?;
    }
    let a = ex.a1k;
    let value_err = (gc - g[n0]).abs() / g[n0].abs();
    let d_ref = (a * g[n0] + gy[n0]).abs().max(1e-300);
    let deriv_err = if (a * g[n0]).abs() + gy[n0].abs() == 0.0 {
        0.0
    } else {
        ((a * gc + jc) - (a * g[n0] + gy[n0])).abs() / d_ref
    };

    for c in n0..n_total {
        let (gn, jn) = stepper.advance(0, y_lo + c as f64 * delta, g[c], gy[c])?;
        g.push(gn);
        gy.push(jn);
    }
    if let Some(i) = g.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::OdeFailure {
            radius: (y_lo + i as f64 * delta).exp(),
            detail: format!("profile lost positivity (g = {})", g[i]),
        });
    }

    let mut profile = HarmonicProfile {
        k,
        exponents: ex,
        spec: spec.clone(),
        y0: y_lo,
        delta,
        g,
        gy,
        vol: Vec::new(),
        fk: Vec::new(),
        picard_radius: (y_lo + n0 as f64 * delta).exp(),
        picard_ratio: out.ratio,
        picard_iterations: out.iterations,
        matching_error: (value_err, deriv_err),
        c_k: None,
    };
    profile.build_weights();
    profile.c_k = fit_ck(&profile).ok();
    Ok(profile)
}

fn first_ratio(spec: &PotentialSpec, ops: &CellOps, y_lo: f64, n: usize, rho: f64, b: f64) -> f64 {
    // ‖T1‖ / ‖1‖ and ‖T²1‖/‖T1‖ from two sweeps with tol = 0 (never converges)
    let m = NODES_PER_CELL;
    let mut vals = vec![vec![1.0; m]; n];
    let mut norms = Vec::new();
    for _ in 0..2 {
        let mut next = vec![vec![0.0; m]; n];
        let (mut ga, mut ja) = (0.0, 0.0);
        let w_head = spec.scaled_inner_deviation(y_lo.exp());
        ja += w_head * vals[0][0] / (b + rho);
        ga += ja / rho;
        for c in 0..n {
            let a = y_lo + c as f64 * ops.delta;
            let f: Vec<f64> = (0..m)
                .map(|l| spec.scaled_inner_deviation((a + ops.nodes[l]).exp()) * vals[c][l])
                .collect();
            for i in 0..m {
                next[c][i] = ga + ja * ops.phi[i] + (0..m).map(|l| ops.phi_int[i][l] * f[l]).sum::<f64>();
            }
            ga += ja * ops.phi1_end + (0..m).map(|l| ops.phi_end[l] * f[l]).sum::<f64>();
            ja = ops.decay_end * ja + (0..m).map(|l| ops.exp_end[l] * f[l]).sum::<f64>();
        }
        norms.push(next.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())));
        vals = next;
    }
    if norms[0] == 0.0 {
        0.0
    } else {
        norms[1] / norms[0]
    }
}

/// Quintic Hermite interpolation on `t ∈ [0,1]` from values, first and second
/// derivatives (already scaled by `Δ`, `Δ²`) at both ends. Returns `(p, dp/dt)`.
fn hermite5(t: f64, p0: [f64; 3], p1: [f64; 3]) -> (f64, f64) {
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h5 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h3 = 0.5 * (t3 - 2.0 * t4 + t5);
    let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d5 = -d0;
    let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d3 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    (
        p0[0] * h0 + p0[1] * h1 + p0[2] * h2 + p1[0] * h5 + p1[1] * h4 + p1[2] * h3,
        p0[0] * d0 + p0[1] * d1 + p0[2] * d2 + p1[0] * d5 + p1[1] * d4 + p1[2] * d3,
    )
}

impl HarmonicProfile {
    pub fn dim(&self) -> Dimension {
        self.spec.dim()
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn r_min(&self) -> f64 {
        self.y0.exp()
    }

    pub fn r_max(&self) -> f64 {
        (self.y0 + (self.g.len() - 1) as f64 * self.delta).exp()
    }

    /// Grid radii (cell boundaries, log-uniform).
    pub fn radii(&self) -> Vec<f64> {
        (0..self.g.len()).map(|i| (self.y0 + i as f64 * self.delta).exp()).collect()
    }

    fn w_at(&self, y: f64) -> f64 {
        self.spec.scaled_inner_deviation(y.exp())
    }

    fn b(&self) -> f64 {
        self.exponents.sqrt_d1()
    }

    fn gyy(&self, i: usize) -> f64 {
        let y = self.y0 + i as f64 * self.delta;
        self.w_at(y) * self.g[i] - self.b() * self.gy[i]
    }

    /// `(g, g_y)` at `y = log r`. Below the grid the power-law head is used;
    /// above it `h` continues as `r^{A_{2,k}}`.
    pub fn g_and_slope(&self, r: f64) -> (f64, f64) {
        let y = r.ln();
        let n = self.g.len() - 1;
        let x = (y - self.y0) / self.delta;
        if x <= 0.0 {
            let rho = self.spec.rho1();
            let e = (rho * (y - self.y0)).exp();
            let j0 = self.gy[0];
            return (1.0 + (self.g[0] - 1.0) * e, j0 * e);
        }
        if x >= n as f64 {
            let a_shift = self.exponents.a2k - self.exponents.a1k;
            let e = (a_shift * (y - self.y0 - n as f64 * self.delta)).exp();
            return (self.g[n] * e, a_shift * self.g[n] * e);
        }
        let i = (x.floor() as usize).min(n - 1);
        let t = x - i as f64;
        let d = self.delta;
        let p0 = [self.g[i], d * self.gy[i], d * d * self.gyy(i)];
        let p1 = [self.g[i + 1], d * self.gy[i + 1], d * d * self.gyy(i + 1)];
        let (v, dv) = hermite5(t, p0, p1);
        (v, dv / d)
    }

    /// `h_k(r)/r^{A_{1,k}}`
    pub fn g(&self, r: f64) -> f64 {
        self.g_and_slope(r).0
    }

    pub fn h(&self, r: f64) -> f64 {
        r.powf(self.exponents.a1k) * self.g(r)
    }

    pub fn log_h(&self, r: f64) -> f64 {
        self.exponents.a1k * r.ln() + self.g(r).ln()
    }

    /// `h_k'(r) = r^{A-1}(A g + g_y)`
    pub fn dh(&self, r: f64) -> f64 {
        let (g, gy) = self.g_and_slope(r);
        let a = self.exponents.a1k;
        r.powf(a - 1.0) * (a * g + gy)
    }

    /// `r h'/h`
    pub fn log_derivative(&self, r: f64) -> f64 {
        let (g, gy) = self.g_and_slope(r);
        self.exponents.a1k + gy / g
    }

    /// Weight `ν_k = h_k²`.
    pub fn nu(&self, r: f64) -> f64 {
        let h = self.h(r);
        h * h
    }

    pub fn h_samples(&self) -> Vec<f64> {
        self.radii().iter().zip(&self.g).map(|(r, g)| r.powf(self.exponents.a1k) * g).collect()
    }

    pub fn dh_samples(&self) -> Vec<f64> {
        let a = self.exponents.a1k;
        self.radii()
            .iter()
            .zip(self.g.iter().zip(&self.gy))
            .map(|(r, (g, gy))| r.powf(a - 1.0) * (a * g + gy))
            .collect()
    }

    /// `v⁺_{k,λ₁}(r) = r^{A_{1,k}}`
    pub fn v_plus(&self, r: f64) -> f64 {
        r.powf(self.exponents.a1k)
    }

    /// `v_k(r) = r^{A_{2,k}} (log r)^{B_k}`
    pub fn v_k(&self, r: f64) -> f64 {
        let base = r.powf(self.exponents.a2k);
        if self.exponents.bk == 1 {
            base * r.ln()
        } else {
            base
        }
    }

    /// `h_k/v_k` without forming either factor.
    pub fn ratio_to_vk(&self, r: f64) -> f64 {
        let e = &self.exponents;
        let mut v = self.g(r) * r.powf(e.a1k - e.a2k);
        if e.bk == 1 {
            v /= r.ln();
        }
        v
    }

    fn c_weight(&self) -> f64 {
        self.dim().as_f64() + 2.0 * self.exponents.a1k
    }

    fn build_weights(&mut self) {
        let c = self.c_weight();
        let n = self.g.len();
        let rule = GaussLegendre::new(NODES_PER_CELL);
        let d = self.delta;
        let mut vol = Vec::with_capacity(n);
        let mut fk = Vec::with_capacity(n);
        vol.push(self.g[0] * self.g[0] / c);
        fk.push((2.0 * self.y0).exp() * vol[0] / (2.0 * self.g[0] * self.g[0]));
        for i in 0..n - 1 {
            let a = self.y0 + i as f64 * d;
            let decay = (-c * d).exp();
            let mut inc = 0.0;
            let mut f_inc = 0.0;
            for (s, w) in rule.mapped(a, a + d) {
                let g = self.g_and_slope(s.exp()).0;
                inc += w * (-c * (a + d - s)).exp() * g * g;
                f_inc += w * (2.0 * s).exp() * self.vol_inside(a, vol[i], s) / (g * g);
            }
            vol.push(decay * vol[i] + inc);
            fk.push(fk[i] + f_inc);
        }
        self.vol = vol;
        self.fk = fk;
    }

    /// `Ĵ(s)` from its value at the cell start `a`.
    fn vol_inside(&self, a: f64, vol_a: f64, s: f64) -> f64 {
        let c = self.c_weight();
        let rule = GaussLegendre::new(NODES_PER_CELL);
        let mut acc = (-c * (s - a)).exp() * vol_a;
        for (u, w) in rule.mapped(a, s) {
            let g = self.g_and_slope(u.exp()).0;
            acc += w * (-c * (s - u)).exp() * g * g;
        }
        acc
    }

    fn vol_at(&self, y: f64) -> f64 {
        let x = (y - self.y0) / self.delta;
        if x <= 0.0 {
            let g = self.g_and_slope(y.exp()).0;
            return g * g / self.c_weight();
        }
        let i = (x.floor() as usize).min(self.vol.len() - 1);
        let a = self.y0 + i as f64 * self.delta;
        self.vol_inside(a, self.vol[i], y)
    }

    /// `∫_0^r s^{N-1} h_k(s)² ds / (r^N h_k(r)²)`
    pub fn volume_ratio(&self, r: f64) -> f64 {
        let g = self.g(r);
        self.vol_at(r.ln()) / (g * g)
    }

    /// `∫_0^r s^{N-1} h_k(s)² ds`. Beyond the grid `h` continues as a power law.
    pub fn cumulative_weight(&self, r: f64) -> f64 {
        let r_max = self.r_max();
        if r <= r_max {
            return (self.c_weight() * r.ln()).exp() * self.vol_at(r.ln());
        }
        let inside = self.cumulative_weight(r_max);
        let h = self.h(r_max);
        let e = self.dim().as_f64() + 2.0 * self.exponents.a2k;
        let tail = if e.abs() < 1e-12 {
            (r / r_max).ln()
        } else {
            ((r / r_max).powf(e) - 1.0) / e
        };
        inside + h * h * r_max.powf(self.dim().as_f64()) * tail
    }

    /// `∫_a^b s^{N-1} h_k(s)² ds`
    pub fn weight_integral(&self, a: f64, b: f64) -> f64 {
        if a <= 0.0 {
            return self.cumulative_weight(b);
        }
        self.cumulative_weight(b) - self.cumulative_weight(a)
    }

    /// Grid spacing in `log r`.
    pub fn log_spacing(&self) -> f64 {
        self.delta
    }

    /// Summary data for reports.
    pub fn summary(&self) -> ProfileSummary {
        ProfileSummary {
            k: self.k,
            a1k: self.exponents.a1k,
            a2k: self.exponents.a2k,
            bk: self.exponents.bk,
            r_min: self.r_min(),
            r_max: self.r_max(),
            picard_radius: self.picard_radius,
            picard_ratio: self.picard_ratio,
            picard_iterations: self.picard_iterations,
            matching_value_error: self.matching_error.0,
            matching_derivative_error: self.matching_error.1,
            c_k: self.c_k.map(|c| c.0),
            c_k_residual: self.c_k.map(|c| c.1),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSummary {
    pub k: usize,
    pub a1k: f64,
    pub a2k: f64,
    pub bk: u8,
    pub r_min: f64,
    pub r_max: f64,
    pub picard_radius: f64,
    pub picard_ratio: f64,
    pub picard_iterations: usize,
    pub matching_value_error: f64,
    pub matching_derivative_error: f64,
    pub c_k: Option<f64>,
    pub c_k_residual: Option<f64>,
}

/// Large-r constant: median of `h/v_k` over the top decade of the grid, with
/// the maximal deviation from it as residual.
pub fn fit_ck(profile: &HarmonicProfile) -> Result<(f64, f64)> {
    let r_max = profile.r_max();
    let mut ratios: Vec<f64> = profile
        .radii()
        .into_iter()
        .filter(|&r| r >= r_max / 10.0 && r > 1.0)
        .map(|r| profile.ratio_to_vk(r))
        .collect();
    if ratios.is_empty() {
        return Err(Error::InvalidInput("profile grid does not reach r > 1".into()));
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let ck = if n % 2 == 1 { ratios[n / 2] } else { 0.5 * (ratios[n / 2 - 1] + ratios[n / 2]) };
    let residual = ratios.iter().map(|v| (v - ck).abs()).fold(0.0, f64::max);
    if residual > 0.05 * ck.abs() {
        return Err(Error::AsymptoticNotReached { ck, residual });
    }
    Ok((ck, residual))
}

/// `f_k(r) = ∫_0^r s^{1-N} ν_k(s)^{-1} ∫_0^s τ^{N-1} ν_k(τ) dτ ds`.
pub fn weight_fk(profile: &HarmonicProfile, r: f64) -> Result<f64> {
    if r > profile.r_max() * (1.0 + 1e-12) || r <= 0.0 {
        return Err(Error::InvalidInput(format!("f_k needs 0 < r <= R_max, got {r}")));
    }
    let y = r.ln();
    let x = (y - profile.y0) / profile.delta;
    if x <= 0.0 {
        return Ok(r * r / (2.0 * profile.c_weight()));
    }
    let i = (x.floor() as usize).min(profile.fk.len() - 1);
    let a = profile.y0 + i as f64 * profile.delta;
    let rule = GaussLegendre::new(NODES_PER_CELL);
    let mut acc = profile.fk[i];
    for (s, w) in rule.mapped(a, y) {
        let g = profile.g(s.exp());
        acc += w * (2.0 * s).exp() * profile.vol_inside(a, profile.vol[i], s) / (g * g);
    }
    if acc.is_finite() {
        Ok(acc)
    } else {
        Err(Error::QuadratureFailure { tol: 0.0, estimate: acc })
    }
}

/// Branch of the comparison profiles `v±_{k,λ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

/// Closed-form `v±_{k,λ}`; the minus branch at `λ = λ*`, `k = 0` is
/// `r^{-(N-2)/2}|log(r/2)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonProfile {
    pub branch: Branch,
    pub k: usize,
    pub lambda: f64,
    pub dim: Dimension,
    exponent: f64,
    log_corrected: bool,
}

impl ComparisonProfile {
    pub fn new(branch: Branch, k: usize, lambda: f64, dim: Dimension) -> Result<Self> {
        let e = exponents(lambda + crate::mode_spectrum::omega(k, dim), dim)?;
        let log_corrected = branch == Branch::Minus && k == 0 && dim.is_critical_lambda(lambda);
        let exponent = match branch {
            Branch::Plus => e.plus,
            Branch::Minus => e.minus,
        };
        Ok(ComparisonProfile { branch, k, lambda, dim, exponent, log_corrected })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn eval(&self, r: f64) -> f64 {
        let base = r.powf(self.exponent);
        if self.log_corrected {
            base * (0.5 * r).ln().abs()
        } else {
            base
        }
    }
}

/// Caps used by [`compare_asymptotics`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AsymptoticCaps {
    /// `C` in `C⁻¹ ≤ h/v ≤ C`
    pub ratio: f64,
    /// `C` in the derivative sandwich `C⁻¹ ≤ r h'/(k h) ≤ C`
    pub sandwich: f64,
}

impl Default for AsymptoticCaps {
    fn default() -> Self {
        AsymptoticCaps { ratio: 10.0, sandwich: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsReport {
    /// `(min, max)` of `h/v⁺_{k,λ₁}` on `(0, 1]`
    pub inner_ratio: (f64, f64),
    /// `(min, max)` of `h/v_k` on `(1, R_max]`
    pub outer_ratio: (f64, f64),
    /// `sup |h - v⁺| / (r^{ρ₁} v⁺)` on `(0, 1]`
    pub inner_correction: f64,
    /// `(min, max)` of `r h'/(k h)`, for `k ≥ 1`
    pub sandwich: Option<(f64, f64)>,
    pub inner_pass: bool,
    pub outer_pass: bool,
    pub sandwich_pass: Option<bool>,
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn compare_asymptotics(profile: &HarmonicProfile, caps: &AsymptoticCaps) -> AsymptoticsReport {
    let radii = profile.radii();
    let rho = profile.spec.rho1();
    let inner: Vec<(f64, f64)> = radii
        .iter()
        .zip(&profile.g)
        .filter(|(r, _)| **r <= 1.0)
        .map(|(r, g)| (*r, *g))
        .collect();
    let inner_ratio = min_max(inner.iter().map(|p| p.1));
    let inner_correction = inner.iter().map(|(r, g)| (g - 1.0).abs() / r.powf(rho)).fold(0.0, f64::max);
    let outer_ratio = min_max(radii.iter().filter(|&&r| r > 1.0).map(|&r| profile.ratio_to_vk(r)));
    let within = |(lo, hi): (f64, f64), c: f64| lo >= 1.0 / c && hi <= c;
    let sandwich = (profile.k >= 1).then(|| {
        let k = profile.k as f64;
        min_max(
            profile
                .g
                .iter()
                .zip(&profile.gy)
                .map(|(g, gy)| (profile.exponents.a1k + gy / g) / k),
        )
    });
    AsymptoticsReport {
        inner_ratio,
        outer_ratio,
        inner_correction,
        sandwich,
        inner_pass: inner.is_empty() || within(inner_ratio, caps.ratio),
        outer_pass: outer_ratio.0 > outer_ratio.1 || within(outer_ratio, caps.ratio),
        sandwich_pass: sandwich.map(|s| within(s, caps.sandwich)),
        }
}

/// Smallest `k ≤ k_max` from which the derivative sandwich holds with
/// constant `cap` for every mode up to `k_max`.
pub fn sandwich_kstar(spec: &PotentialSpec, k_max: usize, cap: f64, opts: &ProfileOptions) -> Result<Option<usize>> {
    let caps = AsymptoticCaps { ratio: f64::INFINITY, sandwich: cap };
    let mut kstar = None;
    for k in (1..=k_max).rev() {
        let p = solve_profile(spec, k, opts)?;
        if compare_asymptotics(&p, &caps).sandwich_pass == Some(true) {
            kstar = Some(k);
        } else {
            break;
        }
    }
    Ok(kstar)
}

/// Profile-equation check at interior grid nodes, normalized so that values
/// `≤ 1` mean `|h'' + (N-1)h'/r - V_k h| ≤ 1e-6 |V_k h| + 1e-10`.
///
/// Derivatives come from sixth-order differences of `g` in `y`.
pub fn ode_residual(profile: &HarmonicProfile) -> f64 {
    let d = profile.delta;
    let b = profile.b();
    let g = &profile.g;
    let a = profile.exponents.a1k;
    let lam_omega = profile.spec.lambda1() + profile.exponents.omega_k;
    (3..g.len().saturating_sub(3))
        .map(|i| {
            let gp = (-g[i - 3] + 9.0 * g[i - 2] - 45.0 * g[i - 1] + 45.0 * g[i + 1] - 9.0 * g[i + 2] + g[i + 3])
                / (60.0 * d);
            let gpp = (2.0 * g[i - 3] - 27.0 * g[i - 2] + 270.0 * g[i - 1] - 490.0 * g[i] + 270.0 * g[i + 1]
                - 27.0 * g[i + 2]
                + 2.0 * g[i + 3])
                / (180.0 * d * d);
            let y = profile.y0 + i as f64 * d;
            let w = profile.w_at(y);
            // h-equation residual = r^{A-2} (g'' + b g' - W g)
            let scale = ((a - 2.0) * y).exp();
            let res = (gpp + b * gp - w * g[i]).abs() * scale;
            let vkh = (lam_omega + w).abs() * g[i] * scale;
            res / (1e-6 * vkh + 1e-10)
        })
        .fold(0.0, f64::max)
}

/// `F⁺_{k,λ}[f]` at `radii`, by nested adaptive quadrature.
///
/// `f` must satisfy `|f(r)| ≤ M r^{-2+ε} v⁺_{k,λ}(r)`; both integrals are
/// taken in the variables `u = τ^{N-2+2A+ε}` and `w = s^ε`, in which the
/// integrands stay bounded.
pub fn picard_operator<F>(k: usize, lambda: f64, dim: Dimension, f: F, eps: f64, radii: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("envelope exponent eps must be positive".into()));
    }
    let a = exponents(lambda + crate::mode_spectrum::omega(k, dim), dim)?.plus;
    let n = dim.as_f64();
    let c = n - 2.0 + 2.0 * a + eps;
    let env = |r: f64| r.powf(-2.0 + eps + a);
    let r_top = radii.iter().copied().fold(0.0, f64::max);
    if r_top > 0.0 {
        check_envelope(&f, env, r_top)?;
    }
    let scaled = |tau: f64| f(tau) / env(tau);
    radii
        .iter()
        .map(|&r| {
            let inner = |s: f64| -> Result<f64> {
                if s <= 0.0 {
                    return Ok(0.0);
                }
                let res = adaptive(|u: f64| scaled(u.max(1e-300).powf(1.0 / c)), 0.0, s.powf(c), 1e-300, 1e-12)?;
                Ok(res.value / c)
            };
            let mut failure = None;
            let outer = adaptive(
                |w: f64| {
                    let s = w.max(1e-300).powf(1.0 / eps);
                    match inner(s) {
                        Ok(i) => s.powf(1.0 - n - 2.0 * a) * i * s.powf(1.0 - eps) / eps,
                        Err(e) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                },
                0.0,
                r.powf(eps),
                1e-300,
                1e-10,
            )?;
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(r.powf(a) * outer.value)
        })
        .collect()
}

fn check_envelope(f: &impl Fn(f64) -> f64, env: impl Fn(f64) -> f64, r_top: f64) -> Result<()> {
    let grid = crate::potential::log_grid(r_top * 1e-8, r_top, 10);
    let ratios: Vec<f64> = grid.iter().map(|&r| f(r).abs() / env(r)).collect();
    if let Some(i) = ratios.iter().position(|v| !v.is_finite()) {
        return Err(Error::EnvelopeViolation { radius: grid[i], exponent: f64::NAN });
    }
    // the envelope ratio must not grow towards the origin
    let lo: Vec<(f64, f64)> = grid
        .iter()
        .zip(&ratios)
        .take(30)
        .filter(|(_, v)| **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    if lo.len() >= 2 {
        let (x0, y0) = lo[0];
        let (x1, y1) = lo[lo.len() - 1];
        let slope = (y1 - y0) / (x1 - x0);
        if slope < -0.05 {
            return Err(Error::EnvelopeViolation { radius: grid[0], exponent: slope });
        }
    }
    Ok(())
}
