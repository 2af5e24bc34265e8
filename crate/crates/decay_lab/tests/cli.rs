use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use decay_lab::commands;
use decay_lab::config::ExperimentConfig;

fn bin(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_decay_lab"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let i = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[i].parse().unwrap()).collect()
}

fn config(text: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg: ExperimentConfig = toml::from_str(text).unwrap();
    cfg.outputs.dir = dir.join("out");
    cfg
}

#[test]
fn decay_writes_csv_plot_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), "[times]\nstart = 0.1\nend = 100.0\nper_decade = 4\nfit_window = [1.0, 100.0]\n", &["decay"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    assert_eq!(header(&o.join("run_decay.csv")), "t,measured,thm_rhs,cor_rhs,ratio_thm,ratio_cor");
    assert!(fs::read_to_string(o.join("run_decay.gp")).unwrap().contains("'run_decay.csv'"));
    let manifest: toml::Table = toml::from_str(&fs::read_to_string(o.join("run_decay_manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["tool"]["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    assert_eq!(manifest["config"]["lorentz"]["q"].as_str(), Some("inf"));
    assert_eq!(manifest["results"]["passed"].as_bool(), Some(true));
    // free heat flow of unit L¹ data: ‖u(t)‖_∞ ≤ (4πt)^{-3/2}
    let t = column(&o.join("run_decay.csv"), "t");
    let m = column(&o.join("run_decay.csv"), "measured");
    for (t, m) in t.iter().zip(&m) {
        assert!(*m <= (4.0 * std::f64::consts::PI * t).powf(-1.5) * (1.0 + 1e-3), "t={t}: {m}");
    }
}

#[test]
fn profile_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[potential]\nlambda = 3.0\n[modes]\nk = [0, 2]\n", dir.path());
    commands::profile(&cfg).unwrap();
    let o = dir.path().join("out");
    for k in [0, 2] {
        let p = o.join(format!("run_profile_k{k}.csv"));
        assert_eq!(header(&p), "r,h_k,dh_k,v_plus,v_k,ratio");
        // pure Hardy: h_k is exactly r^{A_{1,k}}
        let ratio = column(&p, "ratio");
        assert!(ratio.iter().all(|r| (r - 1.0).abs() < 1e-8));
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(o.join("run_profile_summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
    assert!(json[0]["summary"]["picard_ratio"].is_number());
    assert!(json[1]["volume_ratio_constant"].as_f64().unwrap() > 0.0);
}

#[test]
fn norm_of_indicator_by_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), "", &["norm", "--field", "indicator:2", "--p", "2", "--rearrangement", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    let volume = 4.0 / 3.0 * std::f64::consts::PI * 8.0;
    assert!((value / volume.sqrt() - 1.0).abs() < 1e-12, "{value}");
    let f = column(&dir.path().join("out/run_rearrangement.csv"), "f_star");
    assert_eq!(f.len(), 8);
    // f* = 1 below the support volume and 0 at it
    assert!(f[..7].iter().all(|v| *v == 1.0));
    assert_eq!(f[7], 0.0);
}

#[test]
fn weak_norm_on_ball_region() {
    // ‖r^{-1/2}‖_{L^{2,∞}(B₁)} = α₃^{1/2}
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[lorentz]\np = 2\nsigma = \"inf\"\nfield = { kind = \"power_law\", exponent = -0.5, radius = 5.0 }\nregion = { ball = 1.0 }\n", dir.path());
    let (res, _) = commands::norm(&cfg).unwrap();
    let alpha = 4.0 / 3.0 * std::f64::consts::PI;
    assert!((res.value / alpha.sqrt() - 1.0).abs() < 1e-9, "{}", res.value);
}

#[test]
fn table_field_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("f.csv"), "r,f\n0,1\n1,1\n").unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    fs::write(&cfg_path, "[lorentz]\np = 1\nfield = { kind = \"table\", path = \"f.csv\" }\n").unwrap();
    let mut cfg = ExperimentConfig::load(&cfg_path).unwrap();
    cfg.outputs.dir = dir.path().join("out");
    let (res, _) = commands::norm(&cfg).unwrap();
    assert!((res.value / (4.0 / 3.0 * std::f64::consts::PI) - 1.0).abs() < 1e-12);
}

#[test]
fn evolve_snapshots_and_mass_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[potential]\nfamily = \"two_scale\"\nlambda1 = 3.0\nlambda2 = -0.1875\n[modes]\nk = [0, 1]\n[times]\nlist = [0.5, 2.0]\n[solver]\nboundary = \"reflecting\"\ngrid = { r_max = 20.0 }\n";
    let cfg = config(text, dir.path());
    commands::evolve(&cfg).unwrap();
    let o = dir.path().join("out");
    for k in [0, 1] {
        for i in 0..2 {
            assert_eq!(header(&o.join(format!("run_evolve_k{k}_t{i:03}.csv"))), "r,v,w,dv_dr");
        }
        let mass = column(&o.join(format!("run_evolve_k{k}_steps.csv")), "mass");
        assert!(mass.iter().all(|m| (m / mass[0] - 1.0).abs() < 1e-12));
    }
    let manifest: toml::Table = toml::from_str(&fs::read_to_string(o.join("run_evolve_manifest.toml")).unwrap()).unwrap();
    let modes = manifest["results"]["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 2);
    assert!(modes[0]["dt_min"].as_float().unwrap() > 0.0);
    assert_eq!(modes[1]["times"].as_array().unwrap().len(), 2);
}

#[test]
fn kernel_rows_respect_fitted_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("[times]\nkernel = [1.0]\n[solver]\nkernel_sources = [1.0]\n", dir.path());
    let (rep, _) = commands::kernel(&cfg).unwrap();
    let p = dir.path().join("out/run_kernel_y0.csv");
    assert_eq!(header(&p), "t,x,p,bound,ratio");
    let ratio = column(&p, "ratio");
    assert!(ratio.iter().all(|r| *r <= 1.0 + 1e-12));
    assert!(rep.pass);
}

#[test]
fn validate_flags_inadmissible_indices() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), "[lorentz]\np = 3\nq = 2\n", &["validate"]);
    assert_eq!(out.status.code(), Some(2));
    let rows = fs::read_to_string(dir.path().join("out/run_validate.csv")).unwrap();
    assert!(rows.lines().any(|l| l.starts_with("lorentz_indices_admissible,") && l.contains(",false,")));
    assert!(rows.lines().any(|l| l.starts_with("condition_n_prime,") && l.contains(",true,")));
}

#[test]
fn table_potential_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let r: Vec<f64> = (0..=120).map(|i| 10f64.powf(-6.0 + 0.1 * i as f64)).collect();
    let table: String = std::iter::once("r,V".to_string()).chain(r.iter().map(|r| format!("{r},{}", 0.75 / (r * r)))).collect::<Vec<_>>().join("\n");
    fs::write(dir.path().join("v.csv"), table).unwrap();
    let out = bin(dir.path(), "[potential]\nfamily = \"table\"\ntable = \"v.csv\"\n", &["validate"]);
    assert!(out.status.success(), "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), "[potential]\nlamda = 1.0\n", &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}
