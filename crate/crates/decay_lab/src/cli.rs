//! Command-line interface.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hardy_heat::lorentz::Region;
use hardy_heat::ExtReal;

use crate::commands;
use crate::config::{ExperimentConfig, FieldSpec, Overrides};

#[derive(Debug, Parser)]
#[command(name = "decay_lab", version, about = "Heat-semigroup decay experiments for Schrödinger operators with inverse-square potentials")]
pub struct Cli {
    /// TOML experiment file; defaults apply to every missing key
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// output directory (overrides outputs.dir)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// refine (>1) or coarsen all grids
    #[arg(long, global = true)]
    pub grid_scale: Option<f64>,
    /// local error target of the time stepper
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check conditions (V), (N), (N') and the Lorentz indices
    Validate,
    /// Solve the harmonic profiles h_k for modes.k
    Profile,
    /// Lorentz norm of a radial field
    Norm {
        /// power_law:EXP:R | indicator:R | profile:K:R[:d] | table:PATH
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        p: Option<ExtReal>,
        #[arg(long)]
        sigma: Option<ExtReal>,
        /// all | ball:R | complement:R
        #[arg(long)]
        region: Option<String>,
        /// write this many samples of f* to a CSV
        #[arg(long)]
        rearrangement: Option<usize>,
    },
    /// Evolve the configured data mode by mode
    Evolve,
    /// Averaged heat kernel against its Gaussian envelope
    Kernel,
    /// Measured decay against both right-hand sides
    Decay,
}

pub fn parse_field(s: &str) -> Result<FieldSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |i: usize| -> Result<f64> {
        let t = parts.get(i).with_context(|| format!("field `{s}`: missing argument {i}"))?;
        t.parse().with_context(|| format!("field `{s}`: `{t}` is not a number"))
    };
    Ok(match parts[0] {
        "power_law" | "power" => FieldSpec::PowerLaw { exponent: num(1)?, radius: num(2)? },
        "indicator" => FieldSpec::Indicator { radius: num(1)? },
        "profile" => FieldSpec::Profile {
            k: parts.get(1).context("profile needs k")?.parse()?,
            radius: num(2)?,
            derivative: matches!(parts.get(3), Some(&"d")),
        },
        "table" => FieldSpec::Table { path: PathBuf::from(&s["table:".len().min(s.len())..]) },
        other => bail!("unknown field kind `{other}`"),
    })
}

pub fn parse_region(s: &str) -> Result<Region> {
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let radius = || -> Result<f64> { arg.parse().with_context(|| format!("region `{s}`: bad radius")) };
    Ok(match kind {
        "all" => Region::All,
        "ball" => Region::Ball(radius()?),
        "complement" => Region::Complement(radius()?),
        other => bail!("unknown region `{other}`"),
    })
}

pub fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides { out: cli.out.as_deref(), grid_scale: cli.grid_scale, tol: cli.tol })?;
    Ok(cfg)
}

/// Run the parsed command; `Ok(false)` means a check or bound failed.
pub fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = load(&cli)?;
    match cli.command {
        Command::Validate => Ok(commands::validate(&cfg)?.passed),
        Command::Profile => commands::profile(&cfg).map(|_| true),
        Command::Norm { field, p, sigma, region, rearrangement } => {
            let l = &mut cfg.lorentz;
            if let Some(f) = field {
                l.field = parse_field(&f)?;
            }
            if let Some(p) = p {
                l.p = p;
                if sigma.is_none() {
                    l.sigma = None;
                }
            }
            if let Some(s) = sigma {
                l.sigma = Some(s);
            }
            if let Some(r) = region {
                l.region = parse_region(&r)?;
            }
            if let Some(n) = rearrangement {
                l.rearrangement_samples = n;
            }
            commands::norm(&cfg).map(|_| true)
        }
        Command::Evolve => commands::evolve(&cfg).map(|_| true),
        Command::Kernel => Ok(commands::kernel(&cfg)?.0.pass),
        Command::Decay => Ok(commands::decay(&cfg)?.passed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_specs() {
        assert!(matches!(parse_field("power_law:-0.5:2").unwrap(), FieldSpec::PowerLaw { exponent, radius } if exponent == -0.5 && radius == 2.0));
        assert!(matches!(parse_field("profile:1:3:d").unwrap(), FieldSpec::Profile { k: 1, derivative: true, .. }));
        assert!(matches!(parse_field("table:a:b.csv").unwrap(), FieldSpec::Table { path } if path == PathBuf::from("a:b.csv")));
        assert!(parse_field("indicator").is_err());
        assert!(parse_field("cone:1").is_err());
    }

    #[test]
    fn regions() {
        assert_eq!(parse_region("all").unwrap(), Region::All);
        assert_eq!(parse_region("ball:2.5").unwrap(), Region::Ball(2.5));
        assert!(parse_region("complement").is_err());
    }
}
