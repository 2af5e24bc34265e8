//! Subcommand implementations. Each writes its CSV files plus a TOML run
//! manifest into `outputs.dir` and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use hardy_heat::decay_lab::{data_shape, gaussian_bound_report, run_decay_batch, DecayReport, DecayRow, GaussianBoundReport};
use hardy_heat::harmonic_profile::{compare_asymptotics, fit_ck, solve_profile, AsymptoticCaps, AsymptoticsReport, HarmonicProfile, ProfileSummary};
use hardy_heat::lorentz::{decreasing_rearrangement, lorentz_norm_with, profile_field, Interp, RadialField, Region};
use hardy_heat::mode_spectrum::{admissible, check_nprime};
use hardy_heat::potential::{condition_v_report, default_validation_grid};
use hardy_heat::radial_heat::{evolve_mode, Evolution};
use hardy_heat::ExtReal;

use crate::config::{read_two_columns, ExperimentConfig, FieldSpec};

pub const TOOL: &str = "decay_lab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct ToolInfo<'a> {
    name: &'a str,
    version: &'a str,
    command: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    tool: ToolInfo<'a>,
    /// files written by the run, relative to `outputs.dir`
    files: Vec<String>,
    results: T,
    config: &'a ExperimentConfig,
}

fn ensure_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.outputs.dir).with_context(|| format!("creating {}", cfg.outputs.dir.display()))
}

fn write_manifest<T: Serialize>(cfg: &ExperimentConfig, command: &str, files: &[PathBuf], results: T) -> Result<PathBuf> {
    let names = files.iter().map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())).collect();
    let m = Manifest { tool: ToolInfo { name: TOOL, version: VERSION, command }, files: names, results, config: cfg };
    let path = cfg.output_path(&format!("{command}_manifest.toml"));
    fs::write(&path, toml::to_string(&m).context("serializing manifest")?)?;
    Ok(path)
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn profile_for(cfg: &ExperimentConfig, k: usize, r_max: f64) -> Result<HarmonicProfile> {
    let spec = cfg.potential()?;
    let mut opts = cfg.solver.profile;
    opts.r_max = opts.r_max.max(r_max);
    solve_profile(&spec, k, &opts).with_context(|| format!("solving the k = {k} profile"))
}

// --- validate ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub value: f64,
    pub passed: bool,
    pub detail: String,
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub passed: bool,
}

pub fn validate(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(cfg)?;
    let spec = cfg.potential()?;
    let mut rows = Vec::new();
    let v = condition_v_report(&spec, &default_validation_grid())?;
    for c in [&v.inner, &v.outer, &v.derivative] {
        rows.push(CheckRow {
            check: format!("condition_v_{}", c.clause),
            value: c.fitted_constant,
            passed: c.passed,
            detail: format!("slope {:.4e} worst at r = {:.4e}", c.fitted_slope, c.worst_radius),
        });
    }
    let ray = spec.rayleigh_check(400)?;
    rows.push(CheckRow {
        check: "rayleigh_quotient".into(),
        value: ray.min_quotient,
        passed: ray.min_quotient >= -1e-6,
        detail: format!("{} trials, worst bump at r = {:.3e} width {:.3e}", ray.trials, ray.worst_center, ray.worst_width),
    });
    rows.push(CheckRow {
        check: "condition_n_prime".into(),
        value: f64::NAN,
        passed: check_nprime(&spec),
        detail: format!("{:?}", spec.criticality()).to_lowercase(),
    });
    let crit = spec.dim().hardy_constant();
    for (name, lambda) in [("lambda1", spec.lambda1()), ("lambda2", spec.lambda2())] {
        rows.push(CheckRow {
            check: format!("{name}_above_hardy_constant"),
            value: lambda,
            passed: lambda >= crit * (1.0 + 1e-12),
            detail: format!("hardy constant {crit}"),
        });
    }
    let l = &cfg.lorentz;
    rows.push(CheckRow {
        check: "lorentz_indices_admissible".into(),
        value: f64::NAN,
        passed: admissible(l.p, l.q, l.sigma(), l.theta()),
        detail: format!("p={} q={} sigma={} theta={}", l.p, l.q, l.sigma(), l.theta()),
    });
    let passed = rows.iter().all(|r| r.passed);
    let csv_path = cfg.output_path("validate.csv");
    write_csv(&csv_path, &rows)?;
    for r in &rows {
        println!("{:<34} {:<5} {:>12.4e}  {}", r.check, if r.passed { "ok" } else { "FAIL" }, r.value, r.detail);
    }
    #[derive(Serialize)]
    struct Res {
        passed: bool,
    }
    let mut files = vec![csv_path];
    files.push(write_manifest(cfg, "validate", &files, Res { passed })?);
    Ok(Outcome { files, passed })
}

// --- profile -----------------------------------------------------------------

#[derive(Serialize)]
struct ProfileRow {
    r: f64,
    h_k: f64,
    dh_k: f64,
    v_plus: f64,
    v_k: f64,
    ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    pub summary: ProfileSummary,
    pub asymptotics: AsymptoticsReport,
    /// median of `h/v_k` over the top decade and its spread
    pub fitted_c_k: Option<(f64, f64)>,
    /// `sup_r (k+1) ∫_0^r s^{N-1} h² ds / (r^N h(r)²)`
    pub volume_ratio_constant: f64,
}

pub fn profile(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(cfg)?;
    if cfg.modes.k.is_empty() {
        bail!("modes.k is empty");
    }
    let profiles: Vec<HarmonicProfile> = cfg.modes.k.par_iter().map(|&k| profile_for(cfg, k, 0.0)).collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for p in &profiles {
        let path = cfg.output_path(&format!("profile_k{}.csv", p.k));
        let rows = p.radii().into_iter().map(|r| ProfileRow { r, h_k: p.h(r), dh_k: p.dh(r), v_plus: p.v_plus(r), v_k: p.v_k(r), ratio: p.ratio_to_vk(r) });
        write_csv(&path, rows)?;
        files.push(path);
        let volume_ratio_constant = p.radii().into_iter().map(|r| p.volume_ratio(r)).fold(0.0, f64::max) * (p.k as f64 + 1.0);
        reports.push(ProfileReport {
            summary: p.summary(),
            asymptotics: compare_asymptotics(p, &AsymptoticCaps::default()),
            fitted_c_k: fit_ck(p).ok(),
            volume_ratio_constant,
        });
    }
    for r in &reports {
        println!(
            "k = {:<3} c_k = {:<12} picard ratio {:.3e}  volume constant {:.4}",
            r.summary.k,
            r.summary.c_k.map_or("-".into(), |c| format!("{c:.6e}")),
            r.summary.picard_ratio,
            r.volume_ratio_constant
        );
    }
    let json = cfg.output_path("profile_summary.json");
    write_json(&json, &reports)?;
    files.push(json);
    let ks = cfg.modes.k.clone();
    #[derive(Serialize)]
    struct Res {
        modes: Vec<usize>,
    }
    files.push(write_manifest(cfg, "profile", &files, Res { modes: ks })?);
    Ok(files)
}

// --- norm --------------------------------------------------------------------

pub fn build_field(cfg: &ExperimentConfig, spec: &FieldSpec) -> Result<RadialField> {
    let n = cfg.potential.dim;
    Ok(match spec {
        FieldSpec::PowerLaw { exponent, radius } => RadialField::power_law(*exponent, *radius, n)?,
        FieldSpec::Indicator { radius } => RadialField::indicator(*radius, n)?,
        FieldSpec::Profile { k, radius, derivative } => {
            let p = profile_for(cfg, *k, *radius)?;
            profile_field(&p, *radius, *derivative)?
        }
        FieldSpec::Table { path } => {
            let (r, f) = read_two_columns(path)?;
            RadialField::new(r, f, n)?.with_interp(Interp::Linear)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormResult {
    pub p: ExtReal,
    pub sigma: ExtReal,
    pub region: Region,
    pub value: f64,
}

pub fn norm(cfg: &ExperimentConfig) -> Result<(NormResult, Vec<PathBuf>)> {
    ensure_dir(cfg)?;
    let l = &cfg.lorentz;
    let field = build_field(cfg, &l.field)?.restrict(l.region);
    let value = lorentz_norm_with(&field, l.p, l.sigma(), l.normalization)?;
    let result = NormResult { p: l.p, sigma: l.sigma(), region: l.region, value };
    println!("{value:.12e}");
    let mut files = Vec::new();
    if l.rearrangement_samples > 0 {
        let r = field.support_radius();
        if !(r.is_finite() && r > 0.0) {
            bail!("field has empty support");
        }
        let s_max = hardy_heat::mode_spectrum::unit_ball_volume(field.dim()) * r.powi(field.dim() as i32);
        let rows = decreasing_rearrangement(&field).sample(s_max * 1e-8, s_max, l.rearrangement_samples);
        #[derive(Serialize)]
        struct Row {
            s: f64,
            f_star: f64,
        }
        let path = cfg.output_path("rearrangement.csv");
        write_csv(&path, rows.into_iter().map(|(s, f_star)| Row { s, f_star }))?;
        files.push(path);
    }
    files.push(write_manifest(cfg, "norm", &files, &result)?);
    Ok((result, files))
}

// --- evolve ------------------------------------------------------------------

#[derive(Serialize)]
struct EvolveRow {
    r: f64,
    v: f64,
    w: f64,
    dv_dr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeLedger {
    pub k: usize,
    pub grid_nodes: usize,
    pub r_max: f64,
    pub times: Vec<f64>,
    pub snapshot_files: Vec<String>,
    pub steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    pub mass_drift_rate: f64,
    pub escaped_fraction: f64,
    pub support_escape: bool,
    pub max_energy_increase: f64,
    pub history_file: String,
}

pub fn evolve(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(cfg)?;
    let times = cfg.times.resolved()?;
    let data = cfg.modes.data.first().copied().unwrap_or_default();
    let heat = cfg.solver.heat();
    let runs: Vec<(usize, Evolution)> = cfg
        .modes
        .k
        .par_iter()
        .map(|&k| {
            let hk = profile_for(cfg, k, heat.grid.r_max)?;
            let shape = data_shape(&data, &hk)?;
            Ok((k, evolve_mode(&hk, &shape, &times, &heat)?))
        })
        .collect::<Result<_>>()?;
    let mut files = Vec::new();
    let mut ledger = Vec::new();
    for (k, evo) in &runs {
        let mut snapshot_files = Vec::new();
        for (i, s) in evo.snapshots.iter().enumerate() {
            let path = cfg.output_path(&format!("evolve_k{k}_t{i:03}.csv"));
            let rows = (0..s.r.len()).map(|j| EvolveRow { r: s.r[j], v: s.v[j], w: s.w[j], dv_dr: s.dv_dr[j] });
            write_csv(&path, rows)?;
            snapshot_files.push(path.file_name().unwrap().to_string_lossy().into_owned());
            files.push(path);
        }
        let hist = cfg.output_path(&format!("evolve_k{k}_steps.csv"));
        write_csv(&hist, &evo.history)?;
        let dts = evo.history.iter().map(|h| h.dt).filter(|&dt| dt > 0.0);
        ledger.push(ModeLedger {
            k: *k,
            grid_nodes: evo.snapshots.first().map_or(0, |s| s.r.len()),
            r_max: evo.snapshots.first().and_then(|s| s.r.last().copied()).unwrap_or(0.0),
            times: evo.snapshots.iter().map(|s| s.t).collect(),
            snapshot_files,
            steps: evo.history.len(),
            dt_min: dts.clone().fold(f64::INFINITY, f64::min),
            dt_max: dts.fold(0.0, f64::max),
            mass_initial: evo.history.first().map_or(f64::NAN, |h| h.mass),
            mass_final: evo.history.last().map_or(f64::NAN, |h| h.mass),
            mass_drift_rate: evo.mass_drift_rate(),
            escaped_fraction: evo.escaped_fraction,
            support_escape: evo.support_escape,
            max_energy_increase: evo.max_energy_increase,
            history_file: hist.file_name().unwrap().to_string_lossy().into_owned(),
        });
        println!(
            "k = {:<3} {} steps, mass {:.6e} -> {:.6e}, escaped {:.3e}",
            k,
            evo.history.len(),
            ledger.last().unwrap().mass_initial,
            ledger.last().unwrap().mass_final,
            evo.escaped_fraction
        );
        files.push(hist);
    }
    #[derive(Serialize)]
    struct Res {
        modes: Vec<ModeLedger>,
    }
    files.push(write_manifest(cfg, "evolve", &files, Res { modes: ledger })?);
    Ok(files)
}

// --- kernel ------------------------------------------------------------------

#[derive(Serialize)]
struct KernelRow {
    t: f64,
    x: f64,
    p: f64,
    bound: f64,
    ratio: f64,
}

pub fn kernel(cfg: &ExperimentConfig) -> Result<(GaussianBoundReport, Vec<PathBuf>)> {
    ensure_dir(cfg)?;
    let sources = &cfg.solver.kernel_sources;
    let times = &cfg.times.kernel;
    if sources.is_empty() || times.is_empty() {
        bail!("kernel needs solver.kernel_sources and times.kernel");
    }
    let opts = cfg.solver.kernel;
    let y_max = sources.iter().copied().fold(0.0, f64::max);
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let reach = opts.grid.r_max.max(y_max + 2.0 * opts.window * t_max.sqrt());
    let h0 = profile_for(cfg, 0, reach)?;
    let report = gaussian_bound_report(&h0, sources, times, &opts)?;
    let c = report.fine.constant;
    let mut files = Vec::new();
    for (i, est) in report.estimates.iter().enumerate() {
        let path = cfg.output_path(&format!("kernel_y{i}.csv"));
        let rows = est.samples.iter().map(|s| {
            let bound = s.envelope(c);
            KernelRow { t: s.t, x: s.x, p: s.p, bound, ratio: s.p / bound }
        });
        write_csv(&path, rows)?;
        files.push(path);
    }
    println!(
        "C = {:.6e} (coarse {:.6e}, change {:.3e}), min p = {:.3e}: {}",
        c,
        report.coarse.constant,
        report.refinement_change,
        report.fine.min_value,
        if report.pass { "pass" } else { "FAIL" }
    );
    files.push(write_manifest(cfg, "kernel", &files, &report)?);
    Ok((report, files))
}

// --- decay -------------------------------------------------------------------

#[derive(Serialize)]
struct DecaySummary<'a> {
    data: hardy_heat::decay_lab::DataFamily,
    csv: String,
    #[serde(flatten)]
    report: ReportView<'a>,
}

/// The report without its rows.
#[derive(Serialize)]
struct ReportView<'a> {
    measured_fit: &'a Option<hardy_heat::fit::DecayFit>,
    thm_fit: &'a Option<hardy_heat::fit::DecayFit>,
    cor_fit: &'a Option<hardy_heat::fit::DecayFit>,
    measured_fit_small_t: &'a Option<hardy_heat::fit::DecayFit>,
    thm_ratio: &'a Option<hardy_heat::decay_lab::RatioStats>,
    cor_ratio: &'a Option<hardy_heat::decay_lab::RatioStats>,
    pass: bool,
    data_norm: f64,
    escaped_fraction: f64,
    support_escape: bool,
    grid_nodes: usize,
    steps: usize,
    warnings: &'a [String],
}

impl<'a> From<&'a DecayReport> for ReportView<'a> {
    fn from(r: &'a DecayReport) -> Self {
        ReportView {
            measured_fit: &r.measured_fit,
            thm_fit: &r.thm_fit,
            cor_fit: &r.cor_fit,
            measured_fit_small_t: &r.measured_fit_small_t,
            thm_ratio: &r.thm_ratio,
            cor_ratio: &r.cor_ratio,
            pass: r.pass,
            data_norm: r.data_norm,
            escaped_fraction: r.escaped_fraction,
            support_escape: r.support_escape,
            grid_nodes: r.grid_nodes,
            steps: r.steps,
            warnings: &r.warnings,
        }
    }
}

fn gnuplot_script(csv_name: &str, png_name: &str, corollary: bool) -> String {
    let mut s = format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 900,1000\n\
         set output '{png_name}'\n\
         set multiplot layout 2,1\n\
         set logscale xy\n\
         set format xy '10^{{%L}}'\n\
         set xlabel 't'\n\
         set key top right\n\
         set title 'measured norm and bounds'\n\
         plot '{csv_name}' using 1:2 skip 1 with linespoints title 'measured', \\\n\
         \x20    '' using 1:3 skip 1 with lines title 'theorem rhs'"
    );
    if corollary {
        s.push_str(", \\\n     '' using 1:4 skip 1 with lines title 'corollary rhs'");
    }
    s.push_str("\nset title 'measured / rhs'\nunset logscale y\nset format y '%g'\n");
    s.push_str(&format!("plot '{csv_name}' using 1:5 skip 1 with linespoints title 'theorem'"));
    if corollary {
        s.push_str(", \\\n     '' using 1:6 skip 1 with linespoints title 'corollary'");
    }
    s.push_str("\nunset multiplot\n");
    s
}

pub fn decay(cfg: &ExperimentConfig) -> Result<Outcome> {
    ensure_dir(cfg)?;
    let configs = cfg.decay_configs()?;
    let reports = run_decay_batch(&configs);
    let single = configs.len() == 1;
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut passed = true;
    let reports: Vec<DecayReport> = reports.into_iter().collect::<hardy_heat::Result<_>>()?;
    for (i, (c, rep)) in configs.iter().zip(&reports).enumerate() {
        let stem = if single { "decay".to_string() } else { format!("decay_{i}") };
        let csv_path = cfg.output_path(&format!("{stem}.csv"));
        write_csv::<&DecayRow>(&csv_path, &rep.rows)?;
        let csv_name = csv_path.file_name().unwrap().to_string_lossy().into_owned();
        let gp = cfg.output_path(&format!("{stem}.gp"));
        let png = format!("{}_{stem}.png", cfg.outputs.prefix);
        fs::write(&gp, gnuplot_script(&csv_name, &png, c.ell == 0 && c.j == 0))?;
        files.push(csv_path);
        files.push(gp);
        let alpha = rep.measured_fit.map_or("-".into(), |f| format!("{:.4}", f.alpha));
        let trend = rep.thm_ratio.as_ref().map_or("-".into(), |s| format!("{:+.4}", s.trend));
        println!("{stem}: {:?} alpha {alpha}, ratio trend {trend}: {}", c.data, if rep.pass { "bounded" } else { "NOT BOUNDED" });
        for w in &rep.warnings {
            eprintln!("warning: {stem}: {w}");
        }
        passed &= rep.pass;
        summaries.push(DecaySummary { data: c.data, csv: csv_name, report: rep.into() });
    }
    let json = cfg.output_path("decay_summary.json");
    write_json(&json, &summaries)?;
    files.push(json);
    #[derive(Serialize)]
    struct Res<'a> {
        passed: bool,
        experiments: &'a [DecaySummary<'a>],
    }
    files.push(write_manifest(cfg, "decay", &files, Res { passed, experiments: &summaries })?);
    Ok(Outcome { files, passed })
}
