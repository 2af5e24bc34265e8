use hardy_heat::decay_lab::{corollary_rhs, run_decay_batch, run_decay_experiment, DataFamily, DecayConfig, Quadruple};
use hardy_heat::fit::{fit_decay, geometric_times, loglog_slope};
use hardy_heat::harmonic_profile::{solve_profile, ProfileOptions};
use hardy_heat::{Dimension, ExtReal, PotentialSpec};
use proptest::prelude::*;

fn free() -> PotentialSpec {
    PotentialSpec::pure_hardy(0.0, Dimension::new(3).unwrap()).unwrap()
}

fn fin(x: f64) -> ExtReal {
    ExtReal::Finite(x)
}

#[test]
fn gaussian_l2_norm_closed_form() {
    // ‖e^{tΔ}φ‖₂ = (1+4t)^{-3/4} for φ ∝ e^{-r²}, ‖φ‖₂ = 1
    let quad = Quadruple::new(fin(2.0), fin(2.0), fin(2.0), fin(2.0)).unwrap();
    let mut cfg = DecayConfig::new(free(), quad, vec![0.1, 1.0, 10.0]);
    cfg.data = DataFamily::Gaussian { width: 1.0 };
    let rep = run_decay_experiment(&cfg).unwrap();
    for row in &rep.rows {
        let exact = (1.0 + 4.0 * row.t).powf(-0.75);
        assert!((row.measured / exact - 1.0).abs() < 1e-3, "t={}: {} vs {exact}", row.t, row.measured);
    }
}

#[test]
fn free_rate_has_no_log_factor() {
    let mut cfg = DecayConfig::new(free(), Quadruple::one_to_infinity(), geometric_times(1.0, 1e4, 10));
    cfg.fit_window = (1.0, 1e4);
    let rep = run_decay_experiment(&cfg).unwrap();
    let fit = rep.measured_fit.unwrap();
    assert!((fit.alpha - 1.5).abs() < 0.02, "{fit:?}");
    assert!(fit.beta.unwrap_or(0.0).abs() < 0.05, "{fit:?}");
    assert!(rep.pass);
}

#[test]
fn time_derivative_adds_one_to_the_rate() {
    let times = geometric_times(1.0, 1e4, 10);
    let mut base = DecayConfig::new(free(), Quadruple::one_to_infinity(), times.clone());
    base.data = DataFamily::Gaussian { width: 1.0 };
    let mut dt = base.clone();
    dt.j = 1;
    let reps = run_decay_batch(&[base, dt]);
    let a0 = reps[0].as_ref().unwrap().measured_fit.unwrap().alpha;
    let a1 = reps[1].as_ref().unwrap().measured_fit.unwrap().alpha;
    assert!((a1 - a0 - 1.0).abs() < 0.05, "{a0} -> {a1}");
}

#[test]
fn ratios_only_where_rhs_is_finite() {
    // A⁺ ≈ -0.276 for λ = -0.2: h₀ ∉ L^{p'} near 0 for p' = 12
    let spec = PotentialSpec::pure_hardy(-0.2, Dimension::new(3).unwrap()).unwrap();
    let p = 12.0 / 11.0;
    let quad = Quadruple::new(fin(p), ExtReal::INF, fin(p), ExtReal::INF).unwrap();
    let rep = run_decay_experiment(&DecayConfig::new(spec, quad, vec![0.5, 1.0, 2.0])).unwrap();
    for row in &rep.rows {
        assert!(row.thm_rhs.is_infinite() && row.ratio_thm.is_nan());
    }
    assert!(!rep.pass);
}

#[test]
fn small_and_large_t_fitted_separately() {
    let mut cfg = DecayConfig::new(free(), Quadruple::one_to_infinity(), geometric_times(1e-2, 1e3, 8));
    cfg.data = DataFamily::ProfileShaped { radius: 1.0 };
    let rep = run_decay_experiment(&cfg).unwrap();
    assert!(rep.measured_fit_small_t.unwrap().t_max <= 1.0);
    assert!(rep.measured_fit.unwrap().t_min >= 1e2);
}

#[test]
fn two_scale_corollary_rate() {
    // h₀ ~ c r^{-1/4} + O(r^{-3/4}) at infinity, so the local slope of
    // corollary_rhs tends to -5/4 with an O(t^{-1/4}) correction
    let spec = PotentialSpec::two_scale(3.0, -3.0 / 16.0, Dimension::new(3).unwrap(), None).unwrap();
    let h0 = solve_profile(&spec, 0, &ProfileOptions::default().with_r_max(1e4)).unwrap();
    let t = geometric_times(1e4, 1e8, 5);
    let v: Vec<f64> = t.iter().map(|&t| corollary_rhs(&h0, &Quadruple::one_to_infinity(), t).unwrap()).collect();
    let slopes: Vec<f64> = [1e4, 1e5, 1e6, 1e7].iter().map(|&lo| -loglog_slope(&t, &v, lo, 10.0 * lo).unwrap() - 1.25).collect();
    assert!(slopes.windows(2).all(|w| w[1].abs() < w[0].abs()), "{slopes:?}");
    assert!(slopes[3].abs() < 0.02, "{slopes:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_recovers_power_laws(alpha in 0.1f64..3.0, c in -3.0f64..3.0) {
        let t = geometric_times(1e2, 1e4, 10);
        let v: Vec<f64> = t.iter().map(|t| c.exp() * t.powf(-alpha)).collect();
        let fit = fit_decay(&t, &v, 1e2, 1e4).unwrap();
        prop_assert!((fit.alpha - alpha).abs() < 1e-9);
        prop_assert!((fit.log_constant - c).abs() < 1e-8);
    }
}
