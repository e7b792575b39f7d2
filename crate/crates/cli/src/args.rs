//! Command-line surface. Every flag mirrors a config key; unset flags leave
//! the file (or the default) in charge.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{parse_pairs, parse_potential};
use crate::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "pam", version, about = "Parabolic Anderson model experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Io {
    /// JSON config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "pam-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one realization and write snapshots and the total mass.
    Solve(SolveArgs),
    /// Ensemble moments and the Lyapunov table.
    Moments(MomentsArgs),
    /// Principal eigenpair of `κΔ + V` for a stored field.
    Eigen(EigenArgs),
    /// Top of the spectrum of `Δ + rδ_0`.
    Mu(MuArgs),
    /// Characteristic variational problems.
    Variational(VariationalArgs),
    /// Annealed and quenched scale functions.
    Scaling(ScalingArgs),
    /// Island extraction on a stored run.
    Islands(IslandsArgs),
    /// Asymptotic diagnostics.
    Check {
        #[command(subcommand)]
        which: CheckCommand,
    },
    /// Catalytic model: moments by two routes and predictions.
    Catalytic(CatalyticArgs),
    /// Merge the tables of several runs.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Ensemble moments against the cumulant sandwich.
    Annealed(AnnealedArgs),
    /// One realization: growth rate against the local maximum of the field.
    Quenched(QuenchedArgs),
    /// Spatial correlation of the solution against the limit profiles.
    Correlation(CorrelationArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    /// `family:key=value,...`, e.g. `double_exponential:rho=1`.
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub radius: Option<usize>,
    /// `zero_dirichlet` or `periodic`.
    #[arg(long)]
    pub boundary_mode: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    /// `delta` or `one`.
    #[arg(long)]
    pub u0: Option<String>,
    /// `auto`, `spectral`, `split_exponential` or `explicit`.
    #[arg(long)]
    pub stepper: Option<String>,
    #[arg(long)]
    pub dt_max: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub radius: Option<usize>,
    #[arg(long)]
    pub boundary_mode: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EigenArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    /// Field snapshot of the potential.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct MuArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub r: Option<Vec<f64>>,
    /// `resolvent`, `box` or `both`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct VariationalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// A number or `inf`.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub radius: Option<usize>,
    /// `chi`, `chitilde` or `shapes`.
    #[arg(long)]
    pub which: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    /// `coefficient=c,gamma=g[,log_power=k]`.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct IslandsArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    /// Output directory of a `solve` or `check quenched` run.
    #[arg(long)]
    pub run: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Window of the shape distances.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub window: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub capture_radius: Option<usize>,
    #[arg(long)]
    pub shapes_radius: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnnealedArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct QuenchedArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    /// `reach` or `enlarged`.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CorrelationArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub potential: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub t: Option<f64>,
    /// Distances along the first axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x: Option<Vec<i64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct CatalyticArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub io: Io,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<f64>>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub radius: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub death_rate: Option<f64>,
    #[arg(long)]
    pub polaron: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories to merge.
    pub runs: Vec<PathBuf>,
    /// Expected command of the runs; required when no run is given.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value = "pam-report")]
    pub out: PathBuf,
}

/// Subcommand name, I/O options and flag overrides.
pub type Invocation = (&'static str, Io, Map<String, Value>);

/// Non-null flags as config keys, with shorthand strings expanded.
pub fn flag_map(args: &impl Serialize) -> Result<Map<String, Value>> {
    let Value::Object(mut m) = serde_json::to_value(args).map_err(|e| CliError::Config(e.to_string()))? else {
        unreachable!("argument structs serialize to objects")
    };
    m.retain(|_, v| !v.is_null());
    if let Some(Value::String(s)) = m.get("potential").cloned() {
        m.insert("potential".into(), parse_potential(&s)?);
    }
    if let Some(Value::String(s)) = m.get("eta").cloned() {
        m.insert("eta".into(), Value::Object(parse_pairs(&s)?));
    }
    Ok(m)
}

impl Command {
    /// `(command, io, flags)` for the run subcommands; `None` for `report`.
    pub fn split(&self) -> Result<Option<Invocation>> {
        Ok(Some(match self {
            Self::Solve(a) => ("solve", a.io.clone(), flag_map(a)?),
            Self::Moments(a) => ("moments", a.io.clone(), flag_map(a)?),
            Self::Eigen(a) => ("eigen", a.io.clone(), flag_map(a)?),
            Self::Mu(a) => ("mu", a.io.clone(), flag_map(a)?),
            Self::Variational(a) => ("variational", a.io.clone(), flag_map(a)?),
            Self::Scaling(a) => ("scaling", a.io.clone(), flag_map(a)?),
            Self::Islands(a) => ("islands", a.io.clone(), flag_map(a)?),
            Self::Check { which: CheckCommand::Annealed(a) } => ("check_annealed", a.io.clone(), flag_map(a)?),
            Self::Check { which: CheckCommand::Quenched(a) } => ("check_quenched", a.io.clone(), flag_map(a)?),
            Self::Check { which: CheckCommand::Correlation(a) } => ("check_correlation", a.io.clone(), flag_map(a)?),
            Self::Catalytic(a) => ("catalytic", a.io.clone(), flag_map(a)?),
            Self::Report(_) => return Ok(None),
        }))
    }
}
