//! Spectral arithmetic on the sphere and the indicial exponents of the
//! inverse-square operator.
//!
//! Mode `k` of `-Δ_{S^{N-1}}` has eigenvalue `ω_k = k(N+k-2)` and multiplicity
//! `d_k`. The Euler equation `h'' + (N-1)h'/r - λ h/r² = 0` has the power
//! solutions `r^{A±_λ}` with `A±_λ = (-(N-2) ± √D_λ)/2`, `D_λ = (N-2)² + 4λ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::potential::{Criticality, PotentialSpec};

/// Relative tolerance used to decide `λ = λ*`.
pub const CRITICAL_REL_TOL: f64 = 1e-12;

/// Spatial dimension `N ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n >= 2 {
            Ok(Dimension(n))
        } else {
            Err(Error::InvalidDimension(n))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Hardy constant `λ* = -(N-2)²/4`.
    pub fn hardy_constant(self) -> f64 {
        let m = self.as_f64() - 2.0;
        -0.25 * m * m
    }

    /// `λ = λ*` up to [`CRITICAL_REL_TOL`] (absolute when `λ* = 0`).
    pub fn is_critical_lambda(self, lambda: f64) -> bool {
        let crit = self.hardy_constant();
        (lambda - crit).abs() <= CRITICAL_REL_TOL * crit.abs().max(1.0)
    }

    /// Volume of the unit ball `α_N`.
    pub fn unit_ball_volume(self) -> f64 {
        unit_ball_volume(self.0)
    }

    /// Surface measure of `S^{N-1}`, equal to `N α_N`.
    pub fn sphere_area(self) -> f64 {
        self.as_f64() * self.unit_ball_volume()
    }
}

/// `α_n = π^{n/2}/Γ(n/2 + 1)` for any `n ≥ 1`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // recurrence α_n = 2π/n · α_{n-2}, α_0 = 1, α_1 = 2
    let mut a = if n % 2 == 0 { 1.0 } else { 2.0 };
    let mut m = if n % 2 == 0 { 2 } else { 3 };
    while m <= n {
        a *= 2.0 * std::f64::consts::PI / m as f64;
        m += 2;
    }
    a
}

/// Sphere eigenvalue `ω_k = k(N+k-2)`.
pub fn omega(k: usize, dim: Dimension) -> f64 {
    let k = k as f64;
    k * (dim.as_f64() + k - 2.0)
}

/// Dimension of the `ω_k` eigenspace, `(N+2k-2)(N+k-3)!/((N-2)!k!)`.
///
/// `d_0 = 1` for every `N` (the formula's `0·(−1)!` form at `N = 2`).
pub fn multiplicity(k: usize, dim: Dimension) -> u128 {
    if k == 0 {
        return 1;
    }
    let n = dim.get() as u128;
    let k = k as u128;
    // (N+k-3)!/((N-2)!(k-1)!) = C(N+k-3, k-1), then times (N+2k-2)/k
    let binom = binomial(n + k - 3, k - 1);
    (n + 2 * k - 2) * binom / k
}

fn binomial(n: u128, r: u128) -> u128 {
    let r = r.min(n - r.min(n));
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Indicial exponents of the Euler equation for `λ/r²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicialExponents {
    pub minus: f64,
    pub plus: f64,
    pub discriminant: f64,
}

/// `(A⁻_λ, A⁺_λ, D_λ)`. Values of `λ` within the critical tolerance of `λ*`
/// snap to the double root.
pub fn exponents(lambda: f64, dim: Dimension) -> Result<IndicialExponents> {
    let crit = dim.hardy_constant();
    let m = dim.as_f64() - 2.0;
    if dim.is_critical_lambda(lambda) {
        return Ok(IndicialExponents { minus: -0.5 * m, plus: -0.5 * m, discriminant: 0.0 });
    }
    if lambda < crit {
        return Err(Error::LambdaBelowCritical { lambda, critical: crit, dim: dim.get() });
    }
    let d = m * m + 4.0 * lambda;
    let s = d.max(0.0).sqrt();
    Ok(IndicialExponents { minus: 0.5 * (-m - s), plus: 0.5 * (-m + s), discriminant: d })
}

/// Per-mode constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeExponents {
    pub k: usize,
    pub omega_k: f64,
    pub d_k: u128,
    /// `D_{λ₁+ω_k}`
    pub d1: f64,
    /// `D_{λ₂+ω_k}`
    pub d2: f64,
    /// small-r exponent `A_{1,k}`
    pub a1k: f64,
    /// large-r exponent `A_{2,k}`
    pub a2k: f64,
    /// log flag `B_k`
    pub bk: u8,
}

impl ModeExponents {
    /// `√D_{λ₁+ω_k} = N - 2 + 2A_{1,k}`.
    pub fn sqrt_d1(&self) -> f64 {
        self.d1.max(0.0).sqrt()
    }
}

pub fn mode_exponents(k: usize, spec: &PotentialSpec) -> Result<ModeExponents> {
    let dim = spec.dim();
    let w = omega(k, dim);
    let (l1, l2) = (spec.lambda1(), spec.lambda2());
    let e1 = exponents(l1 + w, dim)?;
    let e2 = exponents(l2 + w, dim)?;
    let critical = spec.criticality() == Criticality::Critical;
    let a2k = if k == 0 && critical { exponents(l2, dim)?.minus } else { e2.plus };
    let bk = u8::from(k == 0 && dim.is_critical_lambda(l2) && !critical);
    Ok(ModeExponents {
        k,
        omega_k: w,
        d_k: multiplicity(k, dim),
        d1: e1.discriminant,
        d2: e2.discriminant,
        a1k: e1.plus,
        a2k,
        bk,
    })
}

/// Membership of `(p, q, σ, θ)` in the admissible index set.
pub fn admissible(p: ExtReal, q: ExtReal, sigma: ExtReal, theta: ExtReal) -> bool {
    if ![p, q, sigma, theta].iter().all(|x| x.in_unit_range()) {
        return false;
    }
    if !p.le(q) {
        return false;
    }
    if p.is_one() && !sigma.is_one() {
        return false;
    }
    if p.is_infinite() && !sigma.is_infinite() {
        return false;
    }
    if q.is_one() && !theta.is_one() {
        return false;
    }
    if q.is_infinite() && !theta.is_infinite() {
        return false;
    }
    if p == q && !sigma.le(theta) {
        return false;
    }
    true
}

/// `(p, σ)` is a valid single-space Lorentz pair, i.e. `(p, p, σ, σ)` is admissible.
pub fn admissible_pair(p: ExtReal, sigma: ExtReal) -> bool {
    admissible(p, p, sigma, sigma)
}

/// Condition (N'): subcritical, or critical with `A_{2,0} > -N/2`.
pub fn check_nprime(spec: &PotentialSpec) -> bool {
    match spec.criticality() {
        Criticality::Subcritical => true,
        Criticality::Critical => match exponents(spec.lambda2(), spec.dim()) {
            Ok(e) => e.minus > -0.5 * spec.dim().as_f64(),
            Err(_) => false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialSpec;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn omega_values() {
        assert_eq!(omega(0, dim(3)), 0.0);
        assert_eq!(omega(2, dim(3)), 6.0);
        assert_eq!(omega(3, dim(4)), 15.0);
    }

    #[test]
    fn multiplicity_values() {
        assert_eq!(multiplicity(0, dim(5)), 1);
        assert_eq!(multiplicity(0, dim(2)), 1);
        assert_eq!(multiplicity(2, dim(3)), 5);
        assert_eq!(multiplicity(4, dim(2)), 2);
        for k in 1..30 {
            assert_eq!(multiplicity(k, dim(3)), 2 * k as u128 + 1);
            assert_eq!(multiplicity(k, dim(2)), 2);
            // N = 4: (k+1)²
            assert_eq!(multiplicity(k, dim(4)), (k as u128 + 1).pow(2));
        }
    }

    #[test]
    fn multiplicity_matches_harmonic_polynomial_count() {
        // d_k = dim P_k − dim P_{k−2}, P_k homogeneous polynomials of degree k in N variables
        let count = |n: u128, k: i64| -> u128 {
            if k < 0 {
                0
            } else {
                binomial(n + k as u128 - 1, k as u128)
            }
        };
        for n in 2..8usize {
            for k in 0..25usize {
                let expect = count(n as u128, k as i64) - count(n as u128, k as i64 - 2);
                assert_eq!(multiplicity(k, dim(n)), expect, "N={n} k={k}");
            }
        }
    }

    #[test]
    fn exponents_examples() {
        let e = exponents(0.0, dim(3)).unwrap();
        assert_eq!((e.minus, e.plus, e.discriminant), (-1.0, 0.0, 1.0));
        let e = exponents(-0.16, dim(3)).unwrap();
        assert!((e.minus + 0.8).abs() < 1e-15);
        assert!((e.plus + 0.2).abs() < 1e-15);
        assert!((e.discriminant - 0.36).abs() < 1e-15);
        let e = exponents(-1.0, dim(4)).unwrap();
        assert_eq!((e.minus, e.plus, e.discriminant), (-1.0, -1.0, 0.0));
        assert!(matches!(exponents(-1.5, dim(4)), Err(Error::LambdaBelowCritical { .. })));
    }

    #[test]
    fn mode_exponent_examples() {
        let free = PotentialSpec::pure_hardy(0.0, dim(3)).unwrap();
        let m = mode_exponents(1, &free).unwrap();
        assert_eq!((m.a1k, m.a2k, m.bk), (1.0, 1.0, 0));

        let crit = PotentialSpec::pure_hardy(-1.0, dim(4)).unwrap();
        let m = mode_exponents(0, &crit).unwrap();
        assert_eq!(m.a2k, -1.0);
        assert_eq!(m.bk, 0);

        let log_case = PotentialSpec::two_scale(0.0, -0.25, dim(3), Some(Criticality::Subcritical)).unwrap();
        assert_eq!(mode_exponents(0, &log_case).unwrap().bk, 1);
        assert_eq!(mode_exponents(1, &log_case).unwrap().bk, 0);
    }

    #[test]
    fn admissible_examples() {
        let f = ExtReal::Finite;
        let inf = ExtReal::INF;
        assert!(admissible(f(1.0), f(2.0), f(1.0), inf));
        assert!(!admissible(f(1.0), f(1.0), f(2.0), f(1.0)));
        assert!(!admissible(f(2.0), f(2.0), inf, f(1.0)));
        assert!(admissible(f(1.0), inf, f(1.0), inf));
        assert!(!admissible(f(3.0), f(2.0), f(3.0), f(2.0)));
        assert!(!admissible(f(0.5), f(2.0), f(1.0), f(2.0)));
        assert!(admissible(f(1.5), f(3.0), f(7.0), f(1.0)));
    }

    #[test]
    fn nprime_examples() {
        let d3 = dim(3);
        assert!(check_nprime(&PotentialSpec::pure_hardy(1.0, d3).unwrap()));
        // critical, λ₂ = λ*: A_{2,0} = -1/2 > -3/2
        assert!(check_nprime(&PotentialSpec::pure_hardy(-0.25, d3).unwrap()));
        // A⁻_{λ₂} = -3/2 needs λ₂ = A(A + 1) = 3/4 in N = 3
        let border = PotentialSpec::two_scale(0.75, 0.75, d3, Some(Criticality::Critical)).unwrap();
        assert!(!check_nprime(&border));
    }

    #[test]
    fn ball_volumes() {
        let pi = std::f64::consts::PI;
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume(2) - pi).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * pi / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - pi * pi / 2.0).abs() < 1e-14);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn root_identities(n in 2usize..9, k in 0usize..200, excess in 0.0f64..50.0) {
                let d = dim(n);
                let lambda = d.hardy_constant() + excess;
                let e = exponents(lambda + omega(k, d), d).unwrap();
                let m = n as f64 - 2.0;
                prop_assert!((e.plus + e.minus + m).abs() < 1e-9 * (1.0 + e.plus.abs()));
                let prod = e.plus * e.minus + lambda + omega(k, d);
                prop_assert!(prod.abs() < 1e-8 * (1.0 + omega(k, d) + lambda.abs()));
                prop_assert!(e.minus <= e.plus);
            }

            #[test]
            fn admissible_monotone_in_sigma_theta(
                p in 1.0f64..6.0, dq in 0.0f64..4.0, s in 1.0f64..8.0, th in 1.0f64..8.0,
                shrink in 0.0f64..1.0, grow in 0.0f64..5.0,
            ) {
                let (pe, qe) = (ExtReal::Finite(p), ExtReal::Finite(p + dq));
                let (se, te) = (ExtReal::Finite(s), ExtReal::Finite(th));
                if admissible(pe, qe, se, te) {
                    let s2 = 1.0 + (s - 1.0) * shrink;
                    let t2 = th + grow;
                    prop_assert!(admissible(pe, qe, ExtReal::Finite(s2), ExtReal::Finite(t2)));
                }
            }
        }
    }

    #[test]
    fn a1k_over_k_tends_to_one() {
        let d = dim(3);
        let lambda = 3.0;
        let ratio = |k: usize| exponents(lambda + omega(k, d), d).unwrap().plus / k as f64;
        assert!((ratio(1000) - 1.0).abs() < 1e-3);
        assert!((ratio(1000) - 1.0).abs() < (ratio(10) - 1.0).abs());
    }

    #[test]
    fn multiplicity_growth_constant_is_stable() {
        for n in [3usize, 4, 5] {
            let d = dim(n);
            let c = |k: usize| multiplicity(k, d) as f64 / (k as f64).powi(n as i32 - 2);
            let (c10, c100, c1000) = (c(10), c(100), c(1000));
            let limit = 2.0 / (1..=n - 2).product::<usize>() as f64;
            assert!((c1000 - limit).abs() < (c10 - limit).abs() + 1e-12);
            assert!((c100 / c1000 - 1.0).abs() < 0.1);
        }
    }
}
