//! Distribution functions, rearrangements and Lorentz norms of radial and
//! low-mode fields on `R^N`.
//!
//! Norms are evaluated through the layer-cake form
//!
//! ```text
//! ∫_0^∞ (s^{1/p} f*(s))^σ ds/s = p ∫_0^∞ λ^{σ-1} μ(λ)^{σ/p} dλ,
//! sup_s s^{1/p} f*(s)          = sup_λ λ μ(λ)^{1/p},
//! ```
//!
//! with `μ` computed in closed form on every interpolation piece.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::mode_spectrum::{admissible_pair, unit_ball_volume, Dimension};
use crate::quad::{adaptive_capped, adaptive_with_breaks, GaussLegendre};

/// Interpolation between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    /// Log–log (power law) between same-sign nonzero samples, linear otherwise.
    PowerLaw,
    Linear,
    /// `f = values[j]` on `[r_j, r_{j+1})`.
    Constant,
}

/// Behavior below the first sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Zero,
    /// `f(r) = f(r₀)(r/r₀)^γ` on `(0, r₀)`.
    PowerLaw(f64),
}

/// Region used for zero extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Ball(f64),
    Complement(f64),
}

/// Constant in front of the norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(∫ (s^{1/p} f*)^σ ds/s)^{1/σ}`
    #[default]
    Rearrangement,
    /// `(∫ (|x|^{N/p} f^♯(x))^σ dx/|x|^N)^{1/σ}`, which carries an extra `α_N^{1/σ - 1/p}`.
    Spherical,
}

/// Radial function sampled on a grid and zero beyond its last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    radii: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
    interp: Interp,
    head: Head,
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Const { a: f64, b: f64, v: f64 },
    /// `|f|` linear from `va` to `vb`
    Lin { a: f64, b: f64, va: f64, vb: f64 },
    /// `|f| = c (r/r_c)^γ`
    Pow { a: f64, b: f64, c: f64, rc: f64, gamma: f64 },
}

impl RadialField {
    /// `dim` may be 1 (even functions on the line).
    pub fn new(radii: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::InvalidInput("radial field needs matching, non-empty radii and values".into()));
        }
        if radii[0] < 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("radial field grid must be nonnegative and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("radial field values must be finite".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(RadialField { radii, values, dim, interp: Interp::PowerLaw, head: Head::Zero })
    }

    pub fn from_fn(radii: Vec<f64>, dim: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = radii.iter().map(|&r| f(r)).collect();
        RadialField::new(radii, values, dim)
    }

    pub fn with_interp(mut self, interp: Interp) -> Self {
        self.interp = interp;
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    /// Power-law head fitted to the first two samples.
    pub fn with_fitted_head(self) -> Self {
        let (r, v) = (&self.radii, &self.values);
        if r.len() >= 2 && r[0] > 0.0 && v[0] != 0.0 && v[0].signum() == v[1].signum() {
            let gamma = (v[1] / v[0]).ln() / (r[1] / r[0]).ln();
            self.with_head(Head::PowerLaw(gamma))
        } else {
            self
        }
    }

    /// Indicator of `B(0, R)`.
    pub fn indicator(radius: f64, dim: usize) -> Result<Self> {
        Ok(RadialField::new(vec![0.0, radius], vec![1.0, 1.0], dim)?.with_interp(Interp::Constant))
    }

    /// `|x|^A` on `B(0, R)`.
    pub fn power_law(exponent: f64, radius: f64, dim: usize) -> Result<Self> {
        Ok(RadialField::new(vec![radius], vec![radius.powf(exponent)], dim)?.with_head(Head::PowerLaw(exponent)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn head(&self) -> Head {
        self.head
    }

    /// Outer edge of the support.
    pub fn support_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    fn ball_volume(&self) -> f64 {
        unit_ball_volume(self.dim)
    }

    pub fn eval(&self, r: f64) -> f64 {
        let (rr, vv) = (&self.radii, &self.values);
        let n = rr.len();
        if r < rr[0] {
            return match self.head {
                Head::Zero => 0.0,
                Head::PowerLaw(g) => vv[0] * (r / rr[0]).powf(g),
            };
        }
        if r > rr[n - 1] {
            return 0.0;
        }
        if n == 1 || r == rr[n - 1] {
            return vv[n - 1];
        }
        let j = rr.partition_point(|&x| x <= r) - 1;
        let (a, b, va, vb) = (rr[j], rr[j + 1], vv[j], vv[j + 1]);
        match self.interp {
            Interp::Constant => va,
            Interp::PowerLaw if a > 0.0 && va * vb > 0.0 => va * (r / a).powf((vb / va).ln() / (b / a).ln()),
            _ => va + (vb - va) * (r - a) / (b - a),
        }
    }

    /// Derivative of the interpolant (one-sided at nodes).
    pub fn derivative(&self, r: f64) -> f64 {
        let h = 1e-7 * r.max(1e-12);
        (self.eval(r + h) - self.eval((r - h).max(0.0))) / (r + h - (r - h).max(0.0))
    }

    /// Zero extension of the restriction to `region`.
    pub fn restrict(&self, region: Region) -> RadialField {
        match region {
            Region::All => self.clone(),
            Region::Ball(radius) => {
                let mut radii: Vec<f64> = self.radii.iter().copied().filter(|&r| r < radius).collect();
                let mut values: Vec<f64> = self.radii.iter().zip(&self.values).filter(|(r, _)| **r < radius).map(|(_, v)| *v).collect();
                if radius <= self.support_radius() {
                    radii.push(radius);
                    values.push(self.eval(radius));
                }
                if radii.is_empty() {
                    // entirely inside the head
                    return RadialField { radii: vec![radius], values: vec![self.eval(radius)], ..self.clone() };
                }
                RadialField { radii, values, ..self.clone() }
            }
            Region::Complement(radius) => {
                let mut radii = vec![radius];
                let mut values = vec![self.eval(radius)];
                for (r, v) in self.radii.iter().zip(&self.values) {
                    if *r > radius {
                        radii.push(*r);
                        values.push(*v);
                    }
                }
                RadialField { radii, values, head: Head::Zero, ..self.clone() }
            }
        }
    }

    /// Dilation `f(·/s)`.
    pub fn dilate(&self, s: f64) -> RadialField {
        RadialField { radii: self.radii.iter().map(|r| r * s).collect(), ..self.clone() }
    }

    /// Monotone pieces of `|f|` covering the support.
    fn pieces(&self) -> Vec<Piece> {
        let (rr, vv) = (&self.radii, &self.values);
        let mut out = Vec::with_capacity(rr.len() + 1);
        if rr[0] > 0.0 {
            if let Head::PowerLaw(g) = self.head {
                out.push(Piece::Pow { a: 0.0, b: rr[0], c: vv[0].abs(), rc: rr[0], gamma: g });
            }
        }
        for j in 0..rr.len().saturating_sub(1) {
            let (a, b, va, vb) = (rr[j], rr[j + 1], vv[j], vv[j + 1]);
            match self.interp {
                Interp::Constant => out.push(Piece::Const { a, b, v: va.abs() }),
                Interp::PowerLaw if a > 0.0 && va * vb > 0.0 => {
                    let gamma = (vb / va).ln() / (b / a).ln();
                    out.push(Piece::Pow { a, b, c: va.abs(), rc: a, gamma });
                }
                _ if va * vb < 0.0 => {
                    let z = a + (b - a) * va / (va - vb);
                    out.push(Piece::Lin { a, b: z, va: va.abs(), vb: 0.0 });
                    out.push(Piece::Lin { a: z, b, va: 0.0, vb: vb.abs() });
                }
                _ => out.push(Piece::Lin { a, b, va: va.abs(), vb: vb.abs() }),
            }
        }
        out
    }

    /// `r` with `N`-dimensional ball volume `α_N r^N` for the measure of
    /// `{r ∈ (a, b) : |f(r)| > λ}`.
    fn shell(&self, a: f64, b: f64) -> f64 {
        let n = self.dim as i32;
        self.ball_volume() * (b.powi(n) - a.powi(n))
    }

    fn piece_measure(&self, piece: &Piece, lambda: f64) -> f64 {
        match *piece {
            Piece::Const { a, b, v } => {
                if v > lambda {
                    self.shell(a, b)
                } else {
                    0.0
                }
            }
            Piece::Lin { a, b, va, vb } => {
                if va > lambda && vb > lambda {
                    self.shell(a, b)
                } else if va <= lambda && vb <= lambda {
                    0.0
                } else {
                    let x = a + (b - a) * (lambda - va) / (vb - va);
                    if va > lambda {
                        self.shell(a, x)
                    } else {
                        self.shell(x, b)
                    }
                }
            }
            Piece::Pow { a, b, c, rc, gamma } => {
                if gamma == 0.0 {
                    return if c > lambda { self.shell(a, b) } else { 0.0 };
                }
                let x = rc * (lambda / c).powf(1.0 / gamma);
                if gamma < 0.0 {
                    self.shell(a, x.clamp(a, b))
                } else {
                    self.shell(x.clamp(a, b), b)
                }
            }
        }
    }
}

/// A function with a computable distribution function `μ(λ) = |{|f| > λ}|`.
pub trait Distribution {
    fn distribution(&self, lambda: f64) -> f64;
    /// `sup |f|` (may be `+∞`).
    fn sup_abs(&self) -> f64;
    /// Levels at which `μ` may have kinks or jumps, within `[0, sup)`.
    fn level_breaks(&self) -> Vec<f64>;
    /// For unbounded `f`: `μ(λ) = coef·λ^{exponent}` above the largest break.
    fn unbounded_tail(&self) -> Option<(f64, f64)>;
    fn dim(&self) -> usize;
    /// Relative accuracy to which `μ` itself is known.
    fn distribution_accuracy(&self) -> f64 {
        1e-13
    }
}

impl Distribution for RadialField {
    fn distribution(&self, lambda: f64) -> f64 {
        self.pieces().iter().map(|p| self.piece_measure(p, lambda)).sum()
    }

    fn sup_abs(&self) -> f64 {
        if self.unbounded_tail().is_some() {
            return f64::INFINITY;
        }
        let nodes = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match (self.head, self.radii[0] > 0.0) {
            (Head::PowerLaw(g), true) if g == 0.0 => nodes,
            _ => nodes,
        }
    }

    fn level_breaks(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.iter().map(|x| x.abs()).collect();
        v.push(0.0);
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn unbounded_tail(&self) -> Option<(f64, f64)> {
        match self.head {
            Head::PowerLaw(g) if g < 0.0 && self.radii[0] > 0.0 && self.values[0] != 0.0 => {
                let c = self.values[0].abs() / self.radii[0].powf(g);
                let n = self.dim as f64;
                // c r^γ > λ  ⇔  r < (λ/c)^{1/γ}
                Some((self.ball_volume() * c.powf(-n / g), n / g))
            }
            _ => None,
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

fn check_pair(p: ExtReal, sigma: ExtReal) -> Result<()> {
    if admissible_pair(p, sigma) {
        Ok(())
    } else {
        Err(Error::NotAdmissible { p: p.to_string(), sigma: sigma.to_string() })
    }
}

/// Lorentz norm `‖f‖_{L^{p,σ}}`; `+∞` when `f ∉ L^{p,σ}`.
pub fn lorentz_norm<F: Distribution + ?Sized>(f: &F, p: ExtReal, sigma: ExtReal) -> Result<f64> {
    lorentz_norm_with(f, p, sigma, Normalization::Rearrangement)
}

pub fn lorentz_norm_with<F: Distribution + ?Sized>(
    f: &F,
    p: ExtReal,
    sigma: ExtReal,
    normalization: Normalization,
) -> Result<f64> {
    check_pair(p, sigma)?;
    let raw = match (p, sigma) {
        (ExtReal::Infinity, _) => f.sup_abs(),
        (ExtReal::Finite(p), ExtReal::Infinity) => weak_norm(f, p),
        (ExtReal::Finite(p), ExtReal::Finite(s)) => strong_norm(f, p, s)?,
    };
    let factor = match normalization {
        Normalization::Rearrangement => 1.0,
        Normalization::Spherical => unit_ball_volume(f.dim()).powf(sigma.recip() - p.recip()),
    };
    Ok(raw * factor)
}

fn strong_norm<F: Distribution + ?Sized>(f: &F, p: f64, s: f64) -> Result<f64> {
    let breaks = f.level_breaks();
    let top = *breaks.last().unwrap();
    let expo = s / p;
    let mut total = 0.0;
    if let Some((coef, e)) = f.unbounded_tail() {
        // ∫_top^∞ λ^{s-1} (coef λ^e)^{s/p} dλ
        let k = s + e * expo;
        if k >= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += coef.powf(expo) * (-top.powf(k) / k);
    }
    if top > 0.0 {
        let mut integrand = |l: f64| l.powf(s - 1.0) * f.distribution(l).powf(expo);
        let scale = top.powf(s) * f.distribution(0.0).powf(expo);
        let acc = f.distribution_accuracy();
        let rel = (100.0 * acc).max(1e-11);
        let (res, converged) = adaptive_capped(&mut integrand, &breaks, 1e-14 * scale, rel, 4_000 + 8 * breaks.len())?;
        if !converged && res.error > 1e3 * rel * res.value.abs() {
            return Err(Error::QuadratureFailure { tol: rel * res.value.abs(), estimate: res.error });
        }
        total += res.value;
    }
    Ok((p * total).powf(1.0 / s))
}

fn weak_norm<F: Distribution + ?Sized>(f: &F, p: f64) -> f64 {
    let breaks = f.level_breaks();
    let top = *breaks.last().unwrap();
    let g = |l: f64| l * f.distribution(l).powf(1.0 / p);
    let mut best = 0.0f64;
    if let Some((coef, e)) = f.unbounded_tail() {
        let k = 1.0 + e / p;
        if k > 0.0 {
            return f64::INFINITY;
        }
        best = best.max(top * (coef * top.powf(e)).powf(1.0 / p));
    }
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = 64;
        let mut arg = a;
        let mut local = 0.0f64;
        for i in 1..n {
            let l = a + (b - a) * i as f64 / n as f64;
            let v = g(l);
            if v > local {
                local = v;
                arg = l;
            }
        }
        // golden-section refinement around the sampled maximum
        let h = (b - a) / n as f64;
        let (mut lo, mut hi) = ((arg - h).max(a), (arg + h).min(b));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if g(x1) >= g(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        local = local.max(g(0.5 * (lo + hi)));
        // left limit at the upper break
        local = local.max(b * (1.0 - 1e-15) * f.distribution(b * (1.0 - 1e-15)).powf(1.0 / p));
        best = best.max(local);
    }
    best
}

/// Direct `L^p` norm `(∫ |f|^p dx)^{1/p}` by radial quadrature.
pub fn lp_norm_direct(f: &RadialField, p: ExtReal) -> Result<f64> {
    let p = match p {
        ExtReal::Infinity => return Ok(f.sup_abs()),
        ExtReal::Finite(p) => p,
    };
    let n = f.dim as f64;
    let area = n * f.ball_volume();
    let mut total = 0.0;
    let r0 = f.radii[0];
    if r0 > 0.0 {
        if let Head::PowerLaw(g) = f.head {
            let e = g * p + n;
            if e <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += area * f.values[0].abs().powf(p) * r0.powf(n) / e;
        }
    }
    let mut breaks: Vec<f64> = f.radii.clone();
    // zero crossings of linear pieces are kinks of |f|^p
    for piece in f.pieces() {
        if let Piece::Lin { b, vb, .. } = piece {
            if vb == 0.0 {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut integrand = |r: f64| f.eval(r).abs().powf(p) * r.powf(n - 1.0);
    let res = adaptive_with_breaks(&mut integrand, &breaks, 1e-300, 1e-12, 50_000)?;
    total += area * res.value;
    Ok(total.powf(1.0 / p))
}

/// Non-increasing rearrangement `f*`.
pub struct Rearrangement<'a, F: Distribution + ?Sized> {
    field: &'a F,
}

pub fn decreasing_rearrangement<F: Distribution + ?Sized>(f: &F) -> Rearrangement<'_, F> {
    Rearrangement { field: f }
}

impl<F: Distribution + ?Sized> Rearrangement<'_, F> {
    /// `f*(s) = inf{λ > 0 : μ(λ) ≤ s}`
    pub fn eval(&self, s: f64) -> f64 {
        let f = self.field;
        if f.distribution(0.0) <= s {
            return 0.0;
        }
        let mut hi = f.sup_abs();
        if !hi.is_finite() {
            hi = f.level_breaks().last().copied().unwrap_or(1.0).max(1.0);
            while f.distribution(hi) > s {
                hi *= 2.0;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f.distribution(mid) <= s {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Spherical rearrangement `f^♯(x) = f*(α_N |x|^N)`.
    pub fn spherical(&self, r: f64) -> f64 {
        let n = self.field.dim();
        self.eval(unit_ball_volume(n) * r.powi(n as i32))
    }

    /// `(s, f*(s))` at `n` log-spaced volumes between `s_min` and `s_max`.
    pub fn sample(&self, s_min: f64, s_max: f64, n: usize) -> Vec<(f64, f64)> {
        let n = n.max(2);
        let ratio = s_max / s_min;
        (0..n)
            .map(|i| s_min * ratio.powf(i as f64 / (n - 1) as f64))
            .map(|s| (s, self.eval(s)))
            .collect()
    }
}

// --- modal fields in N = 3 ---------------------------------------------------

/// `Q_{0,1} = |S^{N-1}|^{-1/2}`.
pub fn q0_normalization(dim: Dimension) -> f64 {
    dim.sphere_area().powf(-0.5)
}

/// `Q_{1,1}(ω) = √(3/4π) cos θ` in `N = 3`.
pub const Q1_NORMALIZATION: f64 = 0.488_602_511_902_919_9;

/// Sum of implemented modes, or the magnitude of its gradient.
///
/// For `u = a(r) + b(r) cos θ` (`a = v₀ Q₀`, `b = v₁ √(3/4π)`) the squared
/// magnitude at fixed `r` is a quadratic in `t = cos θ`:
/// `|u|² = (a + b t)²` and `|∇u|² = (a' + b' t)² + (b/r)²(1 - t²)`.
#[derive(Debug, Clone)]
pub struct ModalField {
    dim: Dimension,
    entries: Vec<(usize, usize, RadialField)>,
    derivatives: Option<Vec<RadialField>>,
    nodes: Vec<f64>,
}

impl ModalField {
    pub fn new(dim: Dimension, entries: Vec<(usize, usize, RadialField)>) -> Result<Self> {
        Self::build(dim, entries, None)
    }

    /// `|∇u|` for `u = Σ v_{k,i} Q_{k,i}`; `derivatives[j]` is `∂_r` of entry `j`.
    pub fn gradient(dim: Dimension, entries: Vec<(usize, usize, RadialField)>, derivatives: Vec<RadialField>) -> Result<Self> {
        if derivatives.len() != entries.len() {
            return Err(Error::InvalidInput("one derivative field per modal entry".into()));
        }
        Self::build(dim, entries, Some(derivatives))
    }

    fn build(dim: Dimension, entries: Vec<(usize, usize, RadialField)>, derivatives: Option<Vec<RadialField>>) -> Result<Self> {
        let mut seen = Vec::new();
        for (k, i, _) in &entries {
            let ok = (*k == 0 && *i == 1) || (*k == 1 && *i == 1 && dim.get() == 3);
            if !ok {
                return Err(Error::UnsupportedMode { k: *k, i: *i, dim: dim.get() });
            }
            if seen.contains(&(*k, *i)) {
                return Err(Error::InvalidInput(format!("duplicate mode ({k}, {i})")));
            }
            seen.push((*k, *i));
        }
        let mut nodes: Vec<f64> = entries.iter().flat_map(|e| e.2.radii.iter().copied()).collect();
        if let Some(d) = &derivatives {
            nodes.extend(d.iter().flat_map(|f| f.radii.iter().copied()));
        }
        nodes.push(0.0);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        Ok(ModalField { dim, entries, derivatives, nodes })
    }

    /// `(α, β, γ)` with `value² = α t² + β t + γ`.
    fn quadratic(&self, r: f64) -> (f64, f64, f64) {
        let q0 = q0_normalization(self.dim);
        let (mut a, mut b) = (0.0, 0.0);
        for (k, _, f) in &self.entries {
            if *k == 0 {
                a += q0 * f.eval(r);
            } else {
                b += Q1_NORMALIZATION * f.eval(r);
            }
        }
        match &self.derivatives {
            None => (b * b, 2.0 * a * b, a * a),
            Some(ds) => {
                let (mut da, mut db) = (0.0, 0.0);
                for ((k, _, _), d) in self.entries.iter().zip(ds) {
                    if *k == 0 {
                        da += q0 * d.eval(r);
                    } else {
                        db += Q1_NORMALIZATION * d.eval(r);
                    }
                }
                let tang = if r > 0.0 { b / r } else { db };
                (db * db - tang * tang, 2.0 * da * db, da * da + tang * tang)
            }
        }
    }

    /// Value (or gradient magnitude) at radius `r`, polar cosine `t`.
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let (al, be, ga) = self.quadratic(r);
        (al * t * t + be * t + ga).max(0.0).sqrt()
    }

    fn sup_at(&self, r: f64) -> f64 {
        let (al, be, ga) = self.quadratic(r);
        let q = |t: f64| al * t * t + be * t + ga;
        let mut m = q(-1.0).max(q(1.0));
        if al < 0.0 {
            let t = -be / (2.0 * al);
            if (-1.0..=1.0).contains(&t) {
                m = m.max(q(t));
            }
        }
        m.max(0.0).sqrt()
    }

    /// Surface measure of `{ω : |F(r, ω)| > λ}`.
    fn angular_measure(&self, r: f64, lambda: f64) -> f64 {
        let (al, be, ga) = self.quadratic(r);
        let l2 = lambda * lambda;
        let area = self.dim.sphere_area();
        let has_t = self.entries.iter().any(|e| e.0 == 1);
        if !has_t {
            return if ga > l2 { area } else { 0.0 };
        }
        // |{t ∈ [-1,1] : α t² + β t + (γ - λ²) > 0}|, surface element 2π dt
        let c = ga - l2;
        let above = measure_quadratic_positive(al, be, c);
        area * above / 2.0
    }
}

/// Length of `{t ∈ [-1, 1] : a t² + b t + c > 0}`.
fn measure_quadratic_positive(a: f64, b: f64, c: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return 0.0;
    }
    let clip = |lo: f64, hi: f64| (hi.min(1.0) - lo.max(-1.0)).max(0.0);
    if a.abs() <= 1e-14 * scale {
        if b.abs() <= 1e-14 * scale {
            return if c > 0.0 { 2.0 } else { 0.0 };
        }
        let z = -c / b;
        return if b > 0.0 { clip(z, 1.0) } else { clip(-1.0, z) };
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return if a > 0.0 { 2.0 } else { 0.0 };
    }
    let sq = disc.sqrt();
    // stable roots
    let qq = -0.5 * (b + b.signum() * sq);
    let (mut t1, mut t2) = (qq / a, if qq != 0.0 { c / qq } else { -qq / a });
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
    }
    if a > 0.0 {
        clip(-1.0, t1) + clip(t2, 1.0)
    } else {
        clip(t1, t2)
    }
}

impl Distribution for ModalField {
    fn distribution(&self, lambda: f64) -> f64 {
        let rule = GaussLegendre::new(16);
        let n = self.dim.as_f64();
        self.nodes
            .windows(2)
            .map(|w| {
                rule.mapped(w[0], w[1])
                    .map(|(r, wt)| wt * r.powf(n - 1.0) * self.angular_measure(r, lambda))
                    .sum::<f64>()
            })
            .sum()
    }

    fn sup_abs(&self) -> f64 {
        let rule = GaussLegendre::new(4);
        let mut m = self.nodes.iter().fold(0.0f64, |m, &r| m.max(self.sup_at(r)));
        for w in self.nodes.windows(2) {
            for (r, _) in rule.mapped(w[0], w[1]) {
                m = m.max(self.sup_at(r));
            }
        }
        m
    }

    fn level_breaks(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.nodes.iter().map(|&r| self.sup_at(r)).collect();
        v.push(0.0);
        v.push(self.sup_abs());
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    fn unbounded_tail(&self) -> Option<(f64, f64)> {
        None
    }

    fn distribution_accuracy(&self) -> f64 {
        1e-8
    }

    fn dim(&self) -> usize {
        self.dim.get()
    }
}

// --- inequality checks ---------------------------------------------------------

/// Piecewise-constant nonnegative radial function: `values[j]` on `[radii[j], radii[j+1])`.
fn random_step_field(rng: &mut impl Rng, dim: usize) -> RadialField {
    let n = rng.gen_range(2..12);
    let mut radii: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    radii.push(0.0);
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let mut values: Vec<f64> = radii.iter().map(|_| rng.gen_range(0.0..5.0f64).powi(2)).collect();
    *values.last_mut().unwrap() = 0.0;
    RadialField::new(radii, values, dim).unwrap().with_interp(Interp::Constant)
}

/// Exact `∫_{R^N} f g` for two piecewise-constant radial fields.
fn integral_product_steps(f: &RadialField, g: &RadialField) -> f64 {
    let mut cuts: Vec<f64> = f.radii.iter().chain(&g.radii).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| {
            let m = 0.5 * (w[0] + w[1]);
            f.eval(m).abs() * g.eval(m).abs() * f.shell(w[0], w[1])
        })
        .sum()
}

/// `(volume, level)` steps of `f*` for a piecewise-constant field.
fn rearranged_steps(f: &RadialField) -> Vec<(f64, f64)> {
    let mut cells: Vec<(f64, f64)> = f
        .radii
        .windows(2)
        .zip(&f.values)
        .map(|(w, v)| (f.shell(w[0], w[1]), v.abs()))
        .filter(|c| c.0 > 0.0 && c.1 > 0.0)
        .collect();
    cells.sort_by(|a, b| b.1.total_cmp(&a.1));
    cells
}

/// `∫_0^∞ f*(s) g*(s) ds`, exact for step functions.
fn integral_rearranged(f: &RadialField, g: &RadialField) -> f64 {
    let (fs, gs) = (rearranged_steps(f), rearranged_steps(g));
    let (mut i, mut j) = (0, 0);
    let (mut fl, mut gl) = (fs.first().map_or(0.0, |c| c.0), gs.first().map_or(0.0, |c| c.0));
    let mut total = 0.0;
    while i < fs.len() && j < gs.len() {
        let w = fl.min(gl);
        total += w * fs[i].1 * gs[j].1;
        fl -= w;
        gl -= w;
        if fl <= 0.0 {
            i += 1;
            fl = fs.get(i).map_or(0.0, |c| c.0);
        }
        if gl <= 0.0 {
            j += 1;
            gl = gs.get(j).map_or(0.0, |c| c.0);
        }
    }
    total
}

#[derive(Debug, Clone, Serialize)]
pub struct RearrangementReport {
    pub trials: usize,
    /// pairs with `∫|fg| > ∫ f* g*` beyond rounding
    pub violations: usize,
    pub worst_excess: f64,
    /// `max ∫|fg| / (‖f‖_{p,σ} ‖g‖_{p',σ'})` over trials
    pub empirical_holder_constant: f64,
}

/// Hardy–Littlewood check `∫|fg| ≤ ∫ f* g*` on random step pairs, plus the
/// empirical constant of the Lorentz–Hölder inequality at random `(p, σ)`.
pub fn check_rearrangement_inequalities(trials: usize, dim: usize, seed: u64) -> Result<RearrangementReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut holder = 0.0f64;
    for t in 0..trials {
        let f = random_step_field(&mut rng, dim);
        let g = random_step_field(&mut rng, dim);
        let lhs = integral_product_steps(&f, &g);
        let rhs = integral_rearranged(&f, &g);
        let excess = (lhs - rhs) / rhs.max(1e-300);
        worst_excess = worst_excess.max(excess);
        if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
            violations += 1;
        }
        // Hölder constant on a subsample; the Lorentz norms cost more
        if t % 10 == 0 {
            let p = rng.gen_range(1.2..6.0);
            let s = rng.gen_range(1.0..8.0);
            let (pe, se) = (ExtReal::Finite(p), ExtReal::Finite(s));
            let nf = lorentz_norm(&f, pe, se)?;
            let ng = lorentz_norm(&g, pe.conjugate(), se.conjugate())?;
            if nf > 0.0 && ng > 0.0 {
                holder = holder.max(lhs / (nf * ng));
            }
        }
    }
    Ok(RearrangementReport { trials, violations, worst_excess, empirical_holder_constant: holder })
}

/// `(f * g)(x)` for even step functions on the line, exact at every kink.
pub fn convolve_even_steps_1d(f: &RadialField, g: &RadialField) -> Result<RadialField> {
    if f.dim != 1 || g.dim != 1 {
        return Err(Error::InvalidInput("convolution check is one-dimensional".into()));
    }
    // intervals of the full line: [-b, -a) ∪ [a, b) with value v
    let intervals = |h: &RadialField| -> Vec<(f64, f64, f64)> {
        h.radii
            .windows(2)
            .zip(&h.values)
            .flat_map(|(w, v)| [(-w[1], -w[0], *v), (w[0], w[1], *v)])
            .filter(|(a, b, v)| b > a && *v != 0.0)
            .collect()
    };
    let (fi, gi) = (intervals(f), intervals(g));
    let eval = |x: f64| -> f64 {
        let mut acc = 0.0;
        for &(fa, fb, fv) in &fi {
            for &(ga, gb, gv) in &gi {
                // ∫ 1_{[fa,fb)}(x - y) 1_{[ga,gb)}(y) dy = |[x-fb, x-fa] ∩ [ga, gb]|
                let lo = (x - fb).max(ga);
                let hi = (x - fa).min(gb);
                if hi > lo {
                    acc += fv * gv * (hi - lo);
                }
            }
        }
        acc
    };
    let mut kinks: Vec<f64> = Vec::new();
    for &(fa, fb, _) in &fi {
        for &(ga, gb, _) in &gi {
            for x in [fa + ga, fa + gb, fb + ga, fb + gb] {
                if x >= 0.0 {
                    kinks.push(x);
                }
            }
        }
    }
    kinks.push(0.0);
    kinks.sort_by(f64::total_cmp);
    kinks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    let values: Vec<f64> = kinks.iter().map(|&x| eval(x)).collect();
    Ok(RadialField::new(kinks, values, 1)?.with_interp(Interp::Linear))
}

#[derive(Debug, Clone, Serialize)]
pub struct YoungReport {
    pub trials: usize,
    /// `max ‖f*g‖_{q,θ} / (‖f‖_{p,σ}‖g‖_{r,s})`
    pub empirical_constant: f64,
    /// same ratio restricted to Lebesgue indices `σ = p`, `s = r`, `θ = q`
    pub lebesgue_constant: f64,
}

/// Young's inequality in Lorentz form on the line, by exact convolution of
/// random even step functions.
pub fn check_young_1d(trials: usize, seed: u64) -> Result<YoungReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut lorentz_c = 0.0f64;
    let mut lebesgue_c = 0.0f64;
    for t in 0..trials {
        let f = random_step_field(&mut rng, 1);
        let g = random_step_field(&mut rng, 1);
        let conv = convolve_even_steps_1d(&f, &g)?;
        // 1/r + 1/p = 1/q + 1 with q ≥ max(p, r)
        let ip: f64 = rng.gen_range(0.3..1.0);
        let ir: f64 = rng.gen_range((1.0 - ip).max(0.05)..1.0);
        let iq = ip + ir - 1.0;
        let (p, r, q) = (1.0 / ip, 1.0 / ir, if iq > 0.0 { ExtReal::Finite(1.0 / iq) } else { ExtReal::INF });
        let lebesgue = t % 2 == 0;
        let (sigma, s, theta) = if lebesgue {
            (ExtReal::Finite(p), ExtReal::Finite(r), q)
        } else {
            // 1/θ = 1/s + 1/σ
            let is: f64 = rng.gen_range(0.0..1.0);
            let isig: f64 = rng.gen_range(0.0..(1.0 - is).max(1e-3));
            let to_ext = |x: f64| if x > 0.0 { ExtReal::Finite(1.0 / x) } else { ExtReal::INF };
            (to_ext(isig), to_ext(is), to_ext(is + isig))
        };
        let (pe, re) = (ExtReal::Finite(p), ExtReal::Finite(r));
        if !(admissible_pair(pe, sigma) && admissible_pair(re, s) && admissible_pair(q, theta)) {
            continue;
        }
        let lhs = lorentz_norm(&conv, q, theta)?;
        let rhs = lorentz_norm(&f, pe, sigma)? * lorentz_norm(&g, re, s)?;
        if rhs > 0.0 {
            let ratio = lhs / rhs;
            lorentz_c = lorentz_c.max(ratio);
            if lebesgue {
                lebesgue_c = lebesgue_c.max(ratio);
            }
        }
    }
    Ok(YoungReport { trials, empirical_constant: lorentz_c, lebesgue_constant: lebesgue_c })
}

/// `‖h₀‖_{L^{p,σ}(B(0,√t))} / h₀(√t)` from a profile.
pub fn norm_ratio_h0(
    profile: &crate::harmonic_profile::HarmonicProfile,
    p: ExtReal,
    sigma: ExtReal,
    t: f64,
) -> Result<f64> {
    let rt = t.sqrt();
    if rt > profile.r_max() * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("sqrt(t) = {rt} exceeds the profile grid")));
    }
    let field = profile_field(profile, rt, false)?;
    Ok(lorentz_norm(&field, p, sigma)? / profile.h(rt))
}

/// `h_k` (or `|h_k'|`) on `B(0, R)` as a [`RadialField`] with the small-r
/// power head `r^{A_{1,k}}` (or `r^{A_{1,k}-1}`).
pub fn profile_field(profile: &crate::harmonic_profile::HarmonicProfile, radius: f64, derivative: bool) -> Result<RadialField> {
    let mut radii: Vec<f64> = profile.radii().into_iter().filter(|&r| r < radius * (1.0 - 1e-12)).collect();
    radii.push(radius);
    let values: Vec<f64> = if derivative {
        radii.iter().map(|&r| profile.dh(r).abs()).collect()
    } else {
        radii.iter().map(|&r| profile.h(r)).collect()
    };
    let a = profile.exponents.a1k;
    let gamma = if derivative { a - 1.0 } else { a };
    let field = RadialField::new(radii, values, profile.dim().get())?;
    // h' ≡ 0 for the constant profile: no head needed
    if derivative && a == 0.0 {
        return Ok(field);
    }
    Ok(field.with_head(Head::PowerLaw(gamma)))
}
