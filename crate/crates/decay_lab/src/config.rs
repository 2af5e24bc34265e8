//! TOML experiment configuration.
//!
//! Every key has a default, so an empty file is a valid config (free
//! Laplacian in N = 3, `L¹ → L^∞`, indicator data).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hardy_heat::decay_lab::{DataFamily, DecayConfig, Quadruple};
use hardy_heat::fit::geometric_times;
use hardy_heat::harmonic_profile::ProfileOptions;
use hardy_heat::lorentz::{Normalization, Region};
use hardy_heat::mode_spectrum::check_nprime;
use hardy_heat::potential::PotentialTable;
use hardy_heat::radial_heat::{Boundary, GridOptions, KernelOptions, Propagator, SolverOptions};
use hardy_heat::{Criticality, Dimension, ExtReal, PotentialSpec};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSection,
    pub modes: ModesSection,
    pub lorentz: LorentzSection,
    pub times: TimesSection,
    pub solver: SolverSection,
    pub outputs: OutputsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    PureHardy,
    TwoScale,
    Table,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub family: FamilyKind,
    pub dim: usize,
    /// pure Hardy coupling (default 0); `lambda1` is accepted as a synonym
    pub lambda: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub criticality: Option<Criticality>,
    /// two-column CSV `(r, V)`, relative to the config file
    pub table: Option<PathBuf>,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection { family: FamilyKind::PureHardy, dim: 3, lambda: None, lambda1: None, lambda2: None, criticality: None, table: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModesSection {
    /// modes built by `profile` and evolved by `evolve`
    pub k: Vec<usize>,
    /// mode of the decay data (0, or 1 in N = 3)
    pub decay_mode: usize,
    /// input families; `decay` runs one experiment per entry
    pub data: Vec<DataFamily>,
}

impl Default for ModesSection {
    fn default() -> Self {
        ModesSection { k: vec![0], decay_mode: 0, data: vec![DataFamily::default()] }
    }
}

/// Field whose norm the `norm` subcommand computes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// `r^exponent` on `(0, radius]`
    PowerLaw { exponent: f64, radius: f64 },
    Indicator { radius: f64 },
    /// `h_k` (or `h_k'`) on `(0, radius]`
    Profile {
        k: usize,
        radius: f64,
        #[serde(default)]
        derivative: bool,
    },
    /// two-column CSV `(r, f)`, linear between samples
    Table { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorentzSection {
    pub p: ExtReal,
    pub q: ExtReal,
    /// defaults to `p`
    pub sigma: Option<ExtReal>,
    /// defaults to `q`
    pub theta: Option<ExtReal>,
    pub ell: usize,
    pub j: usize,
    pub normalization: Normalization,
    pub field: FieldSpec,
    pub region: Region,
    /// points of `f*` written by `norm` (0 = none)
    pub rearrangement_samples: usize,
}

impl Default for LorentzSection {
    fn default() -> Self {
        LorentzSection {
            p: ExtReal::ONE,
            q: ExtReal::INF,
            sigma: None,
            theta: None,
            ell: 0,
            j: 0,
            normalization: Normalization::Rearrangement,
            field: FieldSpec::Indicator { radius: 1.0 },
            region: Region::All,
            rearrangement_samples: 0,
        }
    }
}

impl LorentzSection {
    pub fn sigma(&self) -> ExtReal {
        self.sigma.unwrap_or(self.p)
    }

    pub fn theta(&self) -> ExtReal {
        self.theta.unwrap_or(self.q)
    }

    pub fn quadruple(&self) -> Result<Quadruple> {
        Ok(Quadruple::new(self.p, self.q, self.sigma(), self.theta())?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimesSection {
    pub start: f64,
    pub end: f64,
    pub per_decade: usize,
    /// explicit times; overrides start/end/per_decade
    pub list: Option<Vec<f64>>,
    pub fit_window: [f64; 2],
    /// sample times of the `kernel` subcommand
    pub kernel: Vec<f64>,
}

impl Default for TimesSection {
    fn default() -> Self {
        TimesSection { start: 0.1, end: 1e4, per_decade: 10, list: None, fit_window: [1e2, 1e4], kernel: vec![0.25, 1.0, 4.0, 16.0] }
    }
}

impl TimesSection {
    pub fn resolved(&self) -> Result<Vec<f64>> {
        let t = match &self.list {
            Some(list) => list.clone(),
            None => {
                if !(self.start > 0.0 && self.end > self.start && self.per_decade > 0) {
                    bail!("times: need 0 < start < end and per_decade > 0");
                }
                geometric_times(self.start, self.end, self.per_decade)
            }
        };
        if t.is_empty() || t[0] <= 0.0 || t.windows(2).any(|w| w[1] <= w[0]) {
            bail!("times must be positive and strictly increasing");
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub boundary: Boundary,
    pub propagator: Propagator,
    pub startup_steps: usize,
    pub smooth_output: bool,
    pub escape_threshold: f64,
    pub grid: GridOptions,
    pub profile: ProfileOptions,
    pub kernel: KernelOptions,
    pub kernel_sources: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverOptions::default();
        SolverSection {
            tol: s.tol,
            boundary: s.boundary,
            propagator: s.propagator,
            startup_steps: s.startup_steps,
            smooth_output: s.smooth_output,
            escape_threshold: s.escape_threshold,
            grid: s.grid,
            profile: ProfileOptions::default(),
            kernel: KernelOptions::default(),
            kernel_sources: vec![0.5, 1.0, 2.0, 4.0],
        }
    }
}

impl SolverSection {
    pub fn heat(&self) -> SolverOptions {
        SolverOptions {
            grid: self.grid,
            boundary: self.boundary,
            propagator: self.propagator,
            tol: self.tol,
            startup_steps: self.startup_steps,
            escape_threshold: self.escape_threshold,
            fixed_dt: None,
            smooth_output: self.smooth_output,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection { dir: PathBuf::from("out"), prefix: "run".into() }
    }
}

/// Command-line overrides applied after loading.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides<'a> {
    pub out: Option<&'a Path>,
    pub grid_scale: Option<f64>,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // table paths are relative to the config file
        if let (Some(table), Some(dir)) = (&cfg.potential.table, path.parent()) {
            if table.is_relative() {
                cfg.potential.table = Some(dir.join(table));
            }
        }
        if let FieldSpec::Table { path: p } = &mut cfg.lorentz.field {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides<'_>) -> Result<()> {
        if let Some(dir) = o.out {
            self.outputs.dir = dir.to_path_buf();
        }
        if let Some(s) = o.grid_scale {
            if !(s > 0.0 && s.is_finite()) {
                bail!("--grid-scale must be positive, got {s}");
            }
            self.solver.grid = self.solver.grid.scaled(s);
            self.solver.kernel.grid = self.solver.kernel.grid.scaled(s);
            self.solver.profile.cells_per_decade = ((self.solver.profile.cells_per_decade as f64) * s).round().max(4.0) as usize;
        }
        if let Some(tol) = o.tol {
            if !(tol > 0.0 && tol < 1.0) {
                bail!("--tol must lie in (0, 1), got {tol}");
            }
            self.solver.tol = tol;
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PotentialSpec> {
        let p = &self.potential;
        let dim = Dimension::new(p.dim)?;
        let spec = match p.family {
            FamilyKind::PureHardy => {
                let lambda = p.lambda.or(p.lambda1).unwrap_or(0.0);
                let spec = PotentialSpec::pure_hardy(lambda, dim)?;
                match p.criticality {
                    Some(c) => spec.with_criticality(c),
                    None => spec,
                }
            }
            FamilyKind::TwoScale => {
                let l1 = p.lambda1.context("two_scale needs `lambda1`")?;
                let l2 = p.lambda2.context("two_scale needs `lambda2`")?;
                PotentialSpec::two_scale(l1, l2, dim, p.criticality)?
            }
            FamilyKind::Table => {
                let path = p.table.as_ref().context("table family needs `table`")?;
                let (r, v) = read_two_columns(path)?;
                PotentialSpec::table(PotentialTable::new(&r, &v)?, dim, p.criticality.unwrap_or(Criticality::Subcritical))?
            }
        };
        Ok(spec)
    }

    /// One decay experiment per configured data family.
    pub fn decay_configs(&self) -> Result<Vec<DecayConfig>> {
        let spec = self.potential()?;
        if !check_nprime(&spec) {
            bail!("condition (N') fails for the configured potential");
        }
        if self.lorentz.ell > 1 {
            bail!("lorentz.ell must be 0 or 1");
        }
        let quad = self.lorentz.quadruple()?;
        let times = self.times.resolved()?;
        Ok(self
            .modes
            .data
            .iter()
            .map(|data| {
                let mut c = DecayConfig::new(spec.clone(), quad, times.clone());
                c.ell = self.lorentz.ell;
                c.j = self.lorentz.j;
                c.mode = self.modes.decay_mode;
                c.data = *data;
                c.fit_window = (self.times.fit_window[0], self.times.fit_window[1]);
                c.profile = self.solver.profile;
                c.solver = self.solver.heat();
                c
            })
            .collect())
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.outputs.dir.join(format!("{}_{name}", self.outputs.prefix))
    }
}

/// Two numeric columns with a header row.
pub fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, rec) in reader.deserialize::<(f64, f64)>().enumerate() {
        let (x, y) = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        a.push(x);
        b.push(y);
    }
    Ok((a, b))
}
