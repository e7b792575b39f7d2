//! Run configurations. A config file holds one JSON object whose keys are the
//! fields of the subcommand's config (plus an optional matching `command`);
//! command-line flags override keys of the file.

use std::path::Path;

use pam_core::catalytic::CatalyticParams;
use pam_core::intermittency::QuenchedDomain;
use pam_core::lattice::BoundaryMode;
use pam_core::potentials::PotentialSpec;
use pam_core::scaling::EtaSpec;
use pam_core::solver::Stepper;
use pam_core::spectral::MuMethod;
use pam_core::PamError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{io_err, CliError, Result};

fn one() -> f64 {
    1.0
}

fn one_dim() -> usize {
    1
}

fn dirichlet() -> BoundaryMode {
    BoundaryMode::ZeroDirichlet
}

fn periodic() -> BoundaryMode {
    BoundaryMode::Periodic
}

fn default_dt() -> f64 {
    0.01
}

fn default_orders() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

fn default_realizations() -> usize {
    1000
}

fn variational_radius() -> usize {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    #[default]
    Delta,
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub potential: PotentialSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    /// Box radius; defaults to the walk's reach at the last time.
    #[serde(rename = "R", default)]
    pub radius: Option<usize>,
    #[serde(default = "dirichlet")]
    pub boundary_mode: BoundaryMode,
    pub t: Vec<f64>,
    #[serde(default)]
    pub u0: InitialData,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default = "default_dt")]
    pub dt_max: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub potential: PotentialSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(rename = "R", default)]
    pub radius: Option<usize>,
    #[serde(default = "periodic")]
    pub boundary_mode: BoundaryMode,
    pub t: Vec<f64>,
    #[serde(default = "default_orders")]
    pub p: Vec<f64>,
    #[serde(default = "default_realizations")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    /// Path of a field snapshot holding the potential.
    pub field: String,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuChoice {
    #[default]
    Resolvent,
    Box,
    Both,
}

impl MuChoice {
    pub fn methods(self) -> Vec<MuMethod> {
        match self {
            Self::Resolvent => vec![MuMethod::Resolvent],
            Self::Box => vec![MuMethod::Box],
            Self::Both => vec![MuMethod::Resolvent, MuMethod::Box],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuConfig {
    #[serde(default = "one_dim")]
    pub d: usize,
    pub r: Vec<f64>,
    #[serde(default)]
    pub method: MuChoice,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationalProblem {
    #[default]
    Chi,
    Chitilde,
    Shapes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalConfig {
    #[serde(default = "one")]
    pub kappa: f64,
    /// A number or `"inf"`.
    #[serde(with = "extended")]
    pub rho: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(rename = "R", default = "variational_radius")]
    pub radius: usize,
    #[serde(default)]
    pub which: VariationalProblem,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    /// `η(t) = c t^γ log(e + t)^k`; exclusive with `potential`.
    #[serde(default)]
    pub eta: Option<EtaSpec>,
    /// Derive `η` and the class from a potential law.
    #[serde(default)]
    pub potential: Option<PotentialSpec>,
    #[serde(default = "one_dim")]
    pub d: usize,
    pub t: Vec<f64>,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IslandsConfig {
    /// Output directory of a `solve` or `check quenched` run.
    pub run: String,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Window of the shape distances.
    #[serde(rename = "R", default = "one_window")]
    pub window: usize,
    /// Snapshot time; the last one by default.
    #[serde(default)]
    pub t: Option<f64>,
    /// Replaces `r(ε)` from the optimal eigenfunction.
    #[serde(default)]
    pub capture_radius: Option<usize>,
    #[serde(default = "variational_radius")]
    pub shapes_radius: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_eps() -> f64 {
    0.05
}

fn one_window() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealedConfig {
    pub potential: PotentialSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(default = "one")]
    pub p: f64,
    pub t: Vec<f64>,
    #[serde(default = "default_realizations")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedConfig {
    pub potential: PotentialSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    pub t: Vec<f64>,
    #[serde(default)]
    pub domain: QuenchedDomain,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationConfig {
    pub potential: PotentialSpec,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_dim")]
    pub d: usize,
    pub t: f64,
    /// Distances along the first axis.
    pub x: Vec<i64>,
    #[serde(default = "default_realizations")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalyticConfig {
    #[serde(default = "one_dim")]
    pub d: usize,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub rho: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default = "one_order")]
    pub p: usize,
    pub t: Vec<f64>,
    /// Torus radius; defaults to twice the reach of the faster walk.
    #[serde(rename = "L", default)]
    pub radius: Option<usize>,
    /// Catalyst realizations of the direct route (0 skips it).
    #[serde(default = "default_realizations")]
    pub n: usize,
    /// Reactant path bundles of the representation route (0 skips it).
    #[serde(default = "default_realizations")]
    pub paths: usize,
    #[serde(default)]
    pub death_rate: Option<f64>,
    /// Constant of the three-dimensional large-`κ` limit.
    #[serde(default)]
    pub polaron: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn one_order() -> usize {
    1
}

impl CatalyticConfig {
    pub fn params(&self) -> CatalyticParams {
        CatalyticParams { d: self.d, nu: self.nu, gamma: self.gamma, rho: self.rho, death_rate: self.death_rate }
    }
}

/// A resolved run configuration; the JSON form carries a `command` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Experiment {
    Solve(SolveConfig),
    Moments(MomentsConfig),
    Eigen(EigenConfig),
    Mu(MuConfig),
    Variational(VariationalConfig),
    Scaling(ScalingConfig),
    Islands(IslandsConfig),
    CheckAnnealed(AnnealedConfig),
    CheckQuenched(QuenchedConfig),
    CheckCorrelation(CorrelationConfig),
    Catalytic(CatalyticConfig),
}

pub const COMMANDS: [&str; 11] = [
    "solve",
    "moments",
    "eigen",
    "mu",
    "variational",
    "scaling",
    "islands",
    "check_annealed",
    "check_quenched",
    "check_correlation",
    "catalytic",
];

impl Experiment {
    pub fn command(&self) -> &'static str {
        match self {
            Self::Solve(_) => "solve",
            Self::Moments(_) => "moments",
            Self::Eigen(_) => "eigen",
            Self::Mu(_) => "mu",
            Self::Variational(_) => "variational",
            Self::Scaling(_) => "scaling",
            Self::Islands(_) => "islands",
            Self::CheckAnnealed(_) => "check_annealed",
            Self::CheckQuenched(_) => "check_quenched",
            Self::CheckCorrelation(_) => "check_correlation",
            Self::Catalytic(_) => "catalytic",
        }
    }

    pub fn threads(&self) -> Option<usize> {
        match self {
            Self::Solve(c) => c.threads,
            Self::Moments(c) => c.threads,
            Self::Eigen(c) => c.threads,
            Self::Mu(c) => c.threads,
            Self::Variational(c) => c.threads,
            Self::Scaling(c) => c.threads,
            Self::Islands(c) => c.threads,
            Self::CheckAnnealed(c) => c.threads,
            Self::CheckQuenched(c) => c.threads,
            Self::CheckCorrelation(c) => c.threads,
            Self::Catalytic(c) => c.threads,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Solve(c) => Some(c.seed),
            Self::Moments(c) => Some(c.seed),
            Self::CheckAnnealed(c) => Some(c.seed),
            Self::CheckQuenched(c) => Some(c.seed),
            Self::CheckCorrelation(c) => Some(c.seed),
            Self::Catalytic(c) => Some(c.seed),
            _ => None,
        }
    }

    /// Parses a complete config with its `command` tag.
    pub fn from_json(text: &str) -> Result<Self> {
        let exp: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        exp.validate()?;
        Ok(exp)
    }

    /// Range checks that do not need a computation; errors name the field.
    pub fn validate(&self) -> Result<()> {
        let check = |r: std::result::Result<(), PamError>| r.map_err(|e| CliError::Config(e.to_string()));
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("invalid parameter `{name}`: must be positive and finite, got {v}")))
            }
        };
        let times = |t: &[f64]| {
            if t.is_empty() || t.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || t.windows(2).any(|w| w[1] <= w[0]) {
                Err(CliError::Config("invalid parameter `t`: times must be nonempty, nonnegative and increasing".into()))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Solve(c) => {
                check(c.potential.validate())?;
                positive("kappa", c.kappa)?;
                times(&c.t)
            }
            Self::Moments(c) => {
                check(c.potential.validate())?;
                positive("kappa", c.kappa)?;
                times(&c.t)
            }
            Self::Eigen(c) => positive("kappa", c.kappa),
            Self::Mu(_) => Ok(()),
            Self::Variational(c) => {
                positive("kappa", c.kappa)?;
                if !(c.rho > 0.0) {
                    return Err(CliError::Config(format!("invalid parameter `rho`: must be positive, got {}", c.rho)));
                }
                Ok(())
            }
            Self::Scaling(c) => {
                if c.eta.is_some() == c.potential.is_some() {
                    return Err(CliError::Config("give exactly one of `eta` and `potential`".into()));
                }
                if let Some(p) = &c.potential {
                    check(p.validate())?;
                }
                times(&c.t)
            }
            Self::Islands(c) => positive("eps", c.eps),
            Self::CheckAnnealed(c) => {
                check(c.potential.validate())?;
                positive("kappa", c.kappa)?;
                times(&c.t)
            }
            Self::CheckQuenched(c) => {
                check(c.potential.validate())?;
                positive("kappa", c.kappa)?;
                times(&c.t)
            }
            Self::CheckCorrelation(c) => {
                check(c.potential.validate())?;
                positive("kappa", c.kappa)?;
                positive("t", c.t)
            }
            Self::Catalytic(c) => {
                check(c.params().validate())?;
                times(&c.t)
            }
        }
    }

    /// JSON echo written next to the results; `threads` is dropped because
    /// it never changes a result.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("configs serialize");
        if let Value::Object(m) = &mut v {
            m.remove("threads");
        }
        v
    }
}

/// Builds the config of `command` from an optional file and flag overrides.
pub fn resolve(command: &str, file: Option<&Path>, flags: Map<String, Value>) -> Result<Experiment> {
    let mut base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            match serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))? {
                Value::Object(m) => m,
                _ => return Err(CliError::Config(format!("{}: expected a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Some(tag) = base.remove("command") {
        if tag.as_str() != Some(command) {
            return Err(CliError::Config(format!("config is for `{tag}`, not `{command}`")));
        }
    }
    for (k, v) in flags {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
    base.insert("command".into(), Value::String(command.into()));
    let exp: Experiment = serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Config(format!("{command}: {e}")))?;
    exp.validate()?;
    Ok(exp)
}

/// `family:key=value,...`, or a JSON object, into the potential's JSON form.
/// List values separate their entries with `;`.
pub fn parse_potential(s: &str) -> Result<Value> {
    if s.trim_start().starts_with('{') {
        return serde_json::from_str(s).map_err(|e| CliError::Config(format!("potential: {e}")));
    }
    let (family, rest) = s.split_once(':').unwrap_or((s, ""));
    let mut obj = Map::new();
    obj.insert("family".into(), Value::String(family.trim().into()));
    obj.insert("params".into(), Value::Object(parse_pairs(rest)?));
    Ok(Value::Object(obj))
}

/// `key=value,...` into a JSON object of numbers (lists with `;`).
pub fn parse_pairs(s: &str) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| CliError::Config(format!("expected key=value, got `{item}`")))?;
        let num = |x: &str| -> Result<Value> {
            let f: f64 = x.trim().parse().map_err(|_| CliError::Config(format!("`{k}`: not a number: `{x}`")))?;
            serde_json::Number::from_f64(f).map(Value::Number).ok_or_else(|| CliError::Config(format!("`{k}` must be finite")))
        };
        let value = if v.contains(';') { Value::Array(v.split(';').map(num).collect::<Result<_>>()?) } else { num(v)? };
        m.insert(k.trim().into(), value);
    }
    Ok(m)
}

/// Reads a typed value out of a stored config echo.
pub fn field_of<T: DeserializeOwned>(echo: &Value, key: &str) -> Result<T> {
    let v = echo.get(key).ok_or_else(|| CliError::Config(format!("stored config lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("stored `{key}`: {e}")))
}

/// `f64` that may be `+∞`, written as `"inf"` in JSON.
mod extended {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(s) => {
                s.trim().parse().map_err(|_| serde::de::Error::custom(format!("expected a number or \"inf\", got \"{s}\"")))
            }
        }
    }
}
