use hardy_heat::harmonic_profile::{solve_profile, HarmonicProfile, ProfileOptions};
use hardy_heat::lorentz::{Interp, RadialField};
use hardy_heat::radial_heat::{estimate_kernel, evolve_mode, GridOptions, KernelOptions, Propagator, SolverOptions, SolverState};
use hardy_heat::{Dimension, PotentialSpec};

fn profile(lambda: f64, k: usize) -> HarmonicProfile {
    let spec = PotentialSpec::pure_hardy(lambda, Dimension::new(3).unwrap()).unwrap();
    solve_profile(&spec, k, &ProfileOptions::default()).unwrap()
}

fn gaussian() -> RadialField {
    let radii: Vec<f64> = (0..=800).map(|i| i as f64 * 0.01).collect();
    RadialField::from_fn(radii, 3, |r| (-r * r).exp()).unwrap().with_interp(Interp::Linear)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn semigroup_property() {
    let p = profile(3.0, 0);
    let opts = SolverOptions { grid: GridOptions::default().with_r_max(30.0), ..Default::default() };
    let mut split = SolverState::new(&p, &gaussian(), &opts).unwrap();
    split.advance_to(0.7).unwrap();
    split.advance_to(2.0).unwrap();
    let mut direct = SolverState::new(&p, &gaussian(), &opts).unwrap();
    direct.advance_to(2.0).unwrap();
    let peak = direct.w().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_diff(split.w(), direct.w()) <= 2.0 * opts.tol * peak, "{}", max_diff(split.w(), direct.w()) / peak);
}

#[test]
fn second_order_in_time() {
    let p = profile(0.0, 0);
    let grid = GridOptions { spacing: 0.05, growth: 0.02, r_max: 20.0 };
    let exact = {
        let mut s = SolverState::new(&p, &gaussian(), &SolverOptions { grid, propagator: Propagator::Exponential, ..Default::default() }).unwrap();
        s.advance_to(1.0).unwrap();
        s.w().to_vec()
    };
    let err = |dt: f64| {
        let mut s = SolverState::new(&p, &gaussian(), &SolverOptions { grid, fixed_dt: Some(dt), ..Default::default() }).unwrap();
        s.advance_to(1.0).unwrap();
        max_diff(s.w(), &exact)
    };
    let (e1, e2) = (err(0.02), err(0.01));
    let ratio = e1 / e2;
    assert!((3.0..5.0).contains(&ratio), "error ratio {ratio} ({e1:.3e} -> {e2:.3e})");
}

#[test]
fn nonnegative_data_stays_nonnegative() {
    for (lambda, k) in [(0.0, 0), (3.0, 0), (-0.16, 1), (3.0, 2)] {
        let p = profile(lambda, k);
        let data = RadialField::indicator(0.5, 3).unwrap();
        let opts = SolverOptions { grid: GridOptions::default().with_r_max(20.0), ..Default::default() };
        let mut s = SolverState::new(&p, &data, &opts).unwrap();
        for t in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
            s.advance_to(t).unwrap();
            let lo = s.w().iter().copied().fold(f64::INFINITY, f64::min);
            assert!(lo >= -1e-14, "lambda={lambda} k={k} t={t}: min w {lo}");
        }
    }
}

#[test]
fn evolve_mode_snapshots_in_order() {
    let p = profile(0.0, 1);
    let data = RadialField::from_fn((0..=400).map(|i| i as f64 * 0.02).collect(), 3, |r| r * (-r * r).exp()).unwrap();
    let evo = evolve_mode(&p, &data, &[0.5, 1.0, 4.0], &SolverOptions { grid: GridOptions::default().with_r_max(30.0), ..Default::default() }).unwrap();
    let t: Vec<f64> = evo.snapshots.iter().map(|s| s.t).collect();
    assert_eq!(t, vec![0.5, 1.0, 4.0]);
    assert!(evo.history.windows(2).all(|w| w[1].t > w[0].t));
}

fn sample_at(samples: &[(f64, f64)], x: f64) -> f64 {
    let i = samples.partition_point(|s| s.0 < x);
    let (a, b) = (samples[i - 1], samples[i]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

#[test]
fn kernel_is_symmetric() {
    let p = profile(3.0, 0);
    let opts = KernelOptions::default();
    let t = 1.0;
    let (y1, y2) = (1.0, 1.8);
    let k1 = estimate_kernel(&p, y1, &[t], &opts).unwrap();
    let k2 = estimate_kernel(&p, y2, &[t], &opts).unwrap();
    let s1: Vec<(f64, f64)> = k1.samples.iter().map(|s| (s.x, s.p)).collect();
    let s2: Vec<(f64, f64)> = k2.samples.iter().map(|s| (s.x, s.p)).collect();
    let (a, b) = (sample_at(&s1, y2), sample_at(&s2, y1));
    assert!((a / b - 1.0).abs() < 1e-2, "p(y2,y1) = {a}, p(y1,y2) = {b}");
}

#[test]
fn hardy_kernel_suppressed_near_origin() {
    // with λ > 0, h₀(x) → 0 at the origin, so the kernel vanishes there
    let p = profile(3.0, 0);
    let est = estimate_kernel(&p, 1.0, &[4.0], &KernelOptions::default()).unwrap();
    let near: Vec<_> = est.samples.iter().filter(|s| s.x < 0.1).collect();
    let at_root = est.samples.iter().min_by(|a, b| (a.x - 2.0).abs().total_cmp(&(b.x - 2.0).abs())).unwrap();
    let free = estimate_kernel(&profile(0.0, 0), 1.0, &[4.0], &KernelOptions::default()).unwrap();
    let free_near = free.samples.iter().find(|s| s.x < 0.1 && s.x > 0.0).unwrap();
    assert!(near.iter().all(|s| s.p < 0.1 * at_root.p));
    assert!(near[0].p < 0.1 * free_near.p);
}
