//! Dispatch of a resolved config to the library and collection of its
//! artifacts. Nothing here computes a diagnostic; it routes and formats.

use std::fs;
use std::path::Path;
use std::time::Instant;

use pam_core::catalytic::{
    catalytic_radius, direct_moment, fk_moment, growth_fits, lambda_limits, lambda_star_probe, CatalyticRegime, Estimate,
    MomentEstimate,
};
use pam_core::intermittency::{
    annealed_check, correlation_profile, extract_islands, quenched_check, CorrelationCandidate, EnsembleOptions, IslandParams,
    LyapunovTable,
};
use pam_core::lattice::{load_field, Field, LatticeBox, SnapshotMeta};
use pam_core::potentials::PotentialSpec;
use pam_core::scaling::{alpha_annealed, alpha_quenched_from_eta, classify, profile_for};
use pam_core::solver::{default_radius, evolve, moment_ensemble, EvolutionConfig};
use pam_core::spectral::{mu_of_r, principal_eigen};
use pam_core::variational::{chi_d, chi_tilde_d, optimal_shapes};
use pam_core::PamError;
use serde_json::{json, Value};

use crate::config::*;
use crate::output::{
    num, opt, pretty, sha256_hex, write_artifacts, write_text, Artifacts, RunRecord, Table, CONFIG_ECHO, MANIFEST,
};
use crate::{io_err, CliError, Result};

enum Fail {
    Pam(PamError),
    Cli(CliError),
}

impl From<PamError> for Fail {
    fn from(e: PamError) -> Self {
        Self::Pam(e)
    }
}

impl From<CliError> for Fail {
    fn from(e: CliError) -> Self {
        Self::Cli(e)
    }
}

type Step<T> = std::result::Result<T, Fail>;

/// Main table of each command: file name and fixed column order.
pub const TABLES: [(&str, &str, &[&str]); 11] = [
    ("solve", "solve.csv", &["t", "U", "log_U", "log_u_center", "log_scale"]),
    ("moments", "moments.csv", &["p", "t", "lambda", "lambda_lo", "lambda_hi", "ess", "warning"]),
    ("eigen", "eigen.csv", &["lambda", "residual", "iterations", "multiplicity"]),
    ("mu", "mu.csv", &["r", "mu", "method", "residual"]),
    ("variational", "variational.csv", &["which", "value", "iterations", "converged", "boundary_mass", "tensorized_value"]),
    ("scaling", "scaling.csv", &["t", "alpha", "alpha_tilde", "class"]),
    ("islands", "islands.csv", &["center", "peak", "captured", "potential_distance", "solution_distance"]),
    (
        "check_annealed",
        "annealed.csv",
        &[
            "t",
            "lambda",
            "lambda_lo",
            "lambda_hi",
            "cumulant",
            "lower_bound",
            "upper_bound",
            "difference",
            "difference_lo",
            "difference_hi",
            "warning",
        ],
    ),
    ("check_quenched", "quenched.csv", &["t", "growth", "height", "gap", "lower_bound", "boundary_mass"]),
    ("check_correlation", "correlation.csv", &["x", "c", "c_lo", "c_hi", "limit_law", "limit_doubled"]),
    ("catalytic", "catalytic.csv", &["t", "route", "estimate", "se"]),
];

/// `(file, header)` of a command's main table.
pub fn table_spec(command: &str) -> Option<(&'static str, &'static [&'static str])> {
    TABLES.iter().find(|(c, _, _)| *c == command).map(|(_, f, h)| (*f, *h))
}

fn primary(command: &str) -> (&'static str, Table) {
    let (file, header) = table_spec(command).expect("every command has a table");
    (file, Table::new(header))
}

/// Worker count: `PAM_THREADS`, then the config, then all cores.
pub fn thread_count(exp: &Experiment) -> Result<usize> {
    if let Ok(v) = std::env::var("PAM_THREADS") {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("PAM_THREADS must be a positive integer, got `{v}`")));
    }
    Ok(exp.threads().unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Runs one experiment and writes its artifacts, config echo and manifest
/// into `out`.
pub fn execute(exp: &Experiment, out: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    exp.validate()?;
    let echo = pretty(&exp.echo());
    let hash = sha256_hex(echo.as_bytes());
    let threads = thread_count(exp)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let art = pool.install(|| dispatch(exp)).map_err(|f| match f {
        Fail::Pam(source) => CliError::Module { command: exp.command(), hash: hash[..12].to_string(), source },
        Fail::Cli(e) => e,
    })?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_text(out, CONFIG_ECHO, &echo)?;
    let mut files = vec![CONFIG_ECHO.to_string()];
    files.extend(write_artifacts(out, &art)?);
    let record = RunRecord {
        command: exp.command().into(),
        config_hash: hash,
        seed: exp.seed(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        threads,
        files,
        conclusive: art.conclusive,
    };
    write_text(out, MANIFEST, &pretty(&serde_json::to_value(&record).expect("manifest serializes")))?;
    Ok(record)
}

fn dispatch(exp: &Experiment) -> Step<Artifacts> {
    match exp {
        Experiment::Solve(c) => solve(c),
        Experiment::Moments(c) => moments(c),
        Experiment::Eigen(c) => eigen(c),
        Experiment::Mu(c) => mu(c),
        Experiment::Variational(c) => variational(c),
        Experiment::Scaling(c) => scaling(c),
        Experiment::Islands(c) => islands(c),
        Experiment::CheckAnnealed(c) => annealed(c),
        Experiment::CheckQuenched(c) => quenched(c),
        Experiment::CheckCorrelation(c) => correlation(c),
        Experiment::Catalytic(c) => catalytic(c),
    }
}

fn last(t: &[f64]) -> f64 {
    t.last().copied().unwrap_or(0.0)
}

fn snapshot_name(k: usize) -> String {
    format!("u_{k}.snap")
}

fn solve(c: &SolveConfig) -> Step<Artifacts> {
    let radius = c.radius.unwrap_or_else(|| default_radius(c.d, c.kappa, last(&c.t)));
    let lattice = LatticeBox::with_center(c.d, radius, vec![0; c.d], c.boundary_mode)?;
    let xi = c.potential.sample_field(&lattice, c.seed)?;
    let u0 = match c.u0 {
        InitialData::Delta => Field::delta(lattice.clone()),
        InitialData::One => Field::constant(lattice.clone(), 1.0),
    };
    let cfg = EvolutionConfig::new(c.kappa, last(&c.t)).with_snapshots(c.t.clone()).with_stepper(c.stepper, c.dt_max);
    let snaps = evolve(&xi, &u0, &cfg)?;
    let mut art = Artifacts::default();
    let (file, mut table) = primary("solve");
    for (k, s) in snaps.iter().enumerate() {
        let m = s.total_mass();
        table.push(vec![num(s.t), num(m.mass), num(m.log_mass), num(s.log_value_at_center()), num(s.log_scale)]);
        art.field(&snapshot_name(k), s.field.clone(), SnapshotMeta { time: s.t, seed: Some(c.seed) });
    }
    art.table(file, table);
    art.field("xi.snap", xi, SnapshotMeta { time: 0.0, seed: Some(c.seed) });
    Ok(art)
}

fn moments(c: &MomentsConfig) -> Step<Artifacts> {
    let radius = c.radius.unwrap_or_else(|| default_radius(c.d, c.kappa, last(&c.t)));
    let lattice = LatticeBox::with_center(c.d, radius, vec![0; c.d], c.boundary_mode)?;
    let cfg = EvolutionConfig::new(c.kappa, last(&c.t)).with_snapshots(c.t.clone());
    let m = moment_ensemble(&c.potential, &lattice, &cfg, &c.p, c.n, c.seed)?;
    let (file, mut table) = primary("moments");
    for r in &m.rows {
        table.push(vec![
            num(r.p),
            num(r.t),
            num(r.lambda.estimate),
            num(r.lambda.lo),
            num(r.lambda.hi),
            num(r.ess),
            r.warning.clone().unwrap_or_default(),
        ]);
    }
    let lyap = LyapunovTable::from_moments(&m);
    let mut art = Artifacts::default();
    art.table(file, table);
    art.json(
        "lyapunov.json",
        json!({ "holder_ordered": lyap.holder_ordered(), "rows": lyap.rows, "gap_tests": lyap.verdicts() }),
    );
    Ok(art)
}

fn eigen(c: &EigenConfig) -> Step<Artifacts> {
    let (v, _) = load_field(&c.field)?;
    let res = principal_eigen(&v, c.kappa)?;
    let (file, mut table) = primary("eigen");
    table.push(vec![num(res.lambda), num(res.residual), res.iterations.to_string(), res.multiplicity.to_string()]);
    let mut art = Artifacts::default();
    art.table(file, table);
    art.json(
        "eigen.json",
        json!({
            "lambda": res.lambda,
            "residual": res.residual,
            "iterations": res.iterations,
            "multiplicity": res.multiplicity,
            "eigenfunction": "eigenfunction.snap",
        }),
    );
    art.field("eigenfunction.snap", res.eigenfunction, SnapshotMeta::default());
    Ok(art)
}

fn mu(c: &MuConfig) -> Step<Artifacts> {
    let (file, mut table) = primary("mu");
    for &r in &c.r {
        for method in c.method.methods() {
            let res = mu_of_r(r, c.d, method)?;
            let name = serde_json::to_value(res.method).expect("method serializes");
            table.push(vec![num(r), num(res.mu), name.as_str().unwrap_or_default().to_string(), num(res.residual)]);
        }
    }
    let mut art = Artifacts::default();
    art.table(file, table);
    Ok(art)
}

fn variational(c: &VariationalConfig) -> Step<Artifacts> {
    let mut art = Artifacts::default();
    let (file, mut table) = primary("variational");
    let which = serde_json::to_value(c.which).expect("enum serializes");
    match c.which {
        VariationalProblem::Chi | VariationalProblem::Chitilde => {
            let sol = if c.which == VariationalProblem::Chi {
                chi_d(c.kappa, c.rho, c.d, c.radius)?
            } else {
                chi_tilde_d(c.kappa, c.rho, c.d, c.radius)?
            };
            table.push(vec![
                which.as_str().unwrap_or_default().into(),
                num(sol.value),
                sol.iterations.to_string(),
                sol.converged.to_string(),
                num(sol.boundary_mass),
                opt(sol.tensorized_value),
            ]);
            art.json(
                "variational.json",
                json!({ "which": which, "value": sol.value, "profile": "profile.snap", "diagnostics": sol }),
            );
            art.field("profile.snap", sol.profile, SnapshotMeta::default());
        }
        VariationalProblem::Shapes => {
            let sh = optimal_shapes(c.kappa, c.rho, c.d, c.radius)?;
            table.push(vec![
                which.as_str().unwrap_or_default().into(),
                num(sh.chi_tilde),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
            art.json(
                "variational.json",
                json!({ "which": which, "value": sh.chi_tilde, "v_star": "v_star.snap", "w_star": "w_star.snap", "diagnostics": sh }),
            );
            art.field("v_star.snap", sh.v_star, SnapshotMeta::default());
            art.field("w_star.snap", sh.w_star, SnapshotMeta::default());
        }
    }
    art.table(file, table);
    Ok(art)
}

fn scaling(c: &ScalingConfig) -> Step<Artifacts> {
    let (eta, class) = match (&c.eta, &c.potential) {
        (Some(eta), _) => (*eta, classify(eta.gamma, eta.eta_star())?),
        (None, Some(p)) => {
            let (eta, profile) = profile_for(p)?;
            (eta, profile.class)
        }
        (None, None) => return Err(CliError::Config("give exactly one of `eta` and `potential`".into()).into()),
    };
    let f = |s: f64| eta.eval(s);
    let (file, mut table) = primary("scaling");
    for &t in &c.t {
        let a = alpha_annealed(&f, c.d, t)?;
        let q = if t > 1.0 { Some(alpha_quenched_from_eta(&f, c.d, t)?.value) } else { None };
        table.push(vec![num(t), num(a.value), opt(q), class.number().to_string()]);
    }
    let mut art = Artifacts::default();
    art.table(file, table);
    Ok(art)
}

fn islands(c: &IslandsConfig) -> Step<Artifacts> {
    let run = Path::new(&c.run);
    let echo_path = run.join(CONFIG_ECHO);
    let text = fs::read_to_string(&echo_path).map_err(io_err(&echo_path))?;
    let echo: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", echo_path.display())))?;
    let command = echo.get("command").and_then(Value::as_str).unwrap_or_default();
    if command != "solve" && command != "check_quenched" {
        return Err(CliError::Config(format!("islands need a `solve` or `check_quenched` run, got `{command}`")).into());
    }
    let potential: PotentialSpec = field_of(&echo, "potential")?;
    let kappa: f64 = field_of(&echo, "kappa")?;
    let d: usize = field_of(&echo, "d")?;
    let times: Vec<f64> = field_of(&echo, "t")?;
    let rho = potential.rho().ok_or_else(|| CliError::Config("island shapes need a double-exponential potential".into()))?;
    let k = match c.t {
        None => times.len() - 1,
        Some(t) => times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.max(1.0))
            .ok_or_else(|| CliError::Config(format!("run has no snapshot at t = {t}")))?,
    };
    let t = times[k];
    let (u, _) = load_field(run.join(snapshot_name(k)))?;
    let (xi_full, _) = load_field(run.join("xi.snap"))?;
    let xi = Field::from_fn(u.lattice().clone(), |z| xi_full.at_offset(z).unwrap_or(f64::NEG_INFINITY))?;
    let height = xi.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shapes = optimal_shapes(kappa, rho, d, c.shapes_radius)?;
    let mut params = IslandParams::for_time(t, c.eps, c.window, height, &shapes);
    if let Some(r) = c.capture_radius {
        params.capture_radius = r;
    }
    let report = extract_islands(&xi, &u, &shapes, &params)?;
    let (file, mut table) = primary("islands");
    for isl in &report.islands {
        let center: Vec<String> = isl.center.iter().map(|x| x.to_string()).collect();
        table.push(vec![
            center.join(";"),
            num(isl.peak),
            num(isl.captured),
            num(isl.potential_distance),
            num(isl.solution_distance),
        ]);
    }
    let mut art = Artifacts::default();
    art.table(file, table);
    art.json("islands.json", json!({ "t": t, "params": params, "report": report, "best": report.best() }));
    Ok(art)
}

fn annealed(c: &AnnealedConfig) -> Step<Artifacts> {
    let rep = annealed_check(&c.potential, c.kappa, c.p, &c.t, EnsembleOptions { d: c.d, realizations: c.n, seed: c.seed })?;
    let (file, mut table) = primary("check_annealed");
    for r in &rep.rows {
        table.push(vec![
            num(r.t),
            num(r.lambda.estimate),
            num(r.lambda.lo),
            num(r.lambda.hi),
            num(r.cumulant),
            num(r.lower_bound),
            num(r.upper_bound),
            num(r.difference.estimate),
            num(r.difference.lo),
            num(r.difference.hi),
            r.warning.clone().unwrap_or_default(),
        ]);
    }
    let mut art =
        Artifacts { conclusive: Some(rep.trend_to_zero && rep.rows.iter().all(|r| r.warning.is_none())), ..Default::default() };
    art.table(file, table);
    art.json("annealed.json", json!({ "p": rep.p, "chi": rep.chi, "trend_to_zero": rep.trend_to_zero }));
    Ok(art)
}

fn quenched(c: &QuenchedConfig) -> Step<Artifacts> {
    let rep = quenched_check(&c.potential, c.kappa, c.d, &c.t, c.seed, c.domain)?;
    let (file, mut table) = primary("check_quenched");
    for r in &rep.rows {
        table.push(vec![num(r.t), num(r.growth), num(r.height), num(r.gap), num(r.lower_bound), num(r.boundary_mass)]);
    }
    let mut art = Artifacts { conclusive: rep.trend_to_zero, ..Default::default() };
    art.table(file, table);
    art.json("quenched.json", &rep);
    for (k, s) in rep.snapshots.iter().enumerate() {
        art.field(&snapshot_name(k), s.field.clone(), SnapshotMeta { time: s.t, seed: Some(c.seed) });
    }
    if let Some(xi) = rep.xi {
        art.field("xi.snap", xi, SnapshotMeta { time: 0.0, seed: Some(c.seed) });
    }
    Ok(art)
}

fn correlation(c: &CorrelationConfig) -> Step<Artifacts> {
    let offsets: Vec<Vec<i64>> =
        c.x.iter()
            .map(|&x| {
                let mut z = vec![0; c.d];
                z[0] = x;
                z
            })
            .collect();
    let rep =
        correlation_profile(&c.potential, c.kappa, c.t, &offsets, EnsembleOptions { d: c.d, realizations: c.n, seed: c.seed })?;
    let (file, mut table) = primary("check_correlation");
    for r in &rep.rows {
        let limit = |w: CorrelationCandidate| opt(r.limits.iter().find(|(k, _)| *k == w).map(|(_, v)| *v));
        table.push(vec![
            r.x[0].to_string(),
            num(r.c.estimate),
            num(r.c.lo),
            num(r.c.hi),
            limit(CorrelationCandidate::Law),
            limit(CorrelationCandidate::Doubled),
        ]);
    }
    let mut art = Artifacts { conclusive: Some(!rep.inconclusive), ..Default::default() };
    art.table(file, table);
    art.json("correlation.json", json!({ "t": rep.t, "ess": rep.ess, "inconclusive": rep.inconclusive }));
    Ok(art)
}

fn catalytic(c: &CatalyticConfig) -> Step<Artifacts> {
    let params = c.params();
    let radius = c.radius.unwrap_or_else(|| catalytic_radius(c.d, c.kappa, c.rho, last(&c.t)));
    let direct = if c.n > 0 { direct_moment(&params, c.kappa, c.p, &c.t, c.n, radius, c.seed)? } else { vec![] };
    let fk = if c.paths > 0 { fk_moment(&params, c.kappa, c.p, &c.t, c.paths, radius, c.seed)? } else { vec![] };
    let (file, mut table) = primary("catalytic");
    for (route, est) in [("direct", &direct), ("fk", &fk)] {
        for (t, e) in c.t.iter().zip(est.iter()) {
            table.push(vec![num(*t), route.into(), num(e.mean), num(e.standard_error)]);
        }
    }
    let fitted: &[Estimate] = if fk.is_empty() { &direct } else { &fk };
    let means: Vec<f64> = fitted.iter().map(|e| e.mean).collect();
    let (lambda_hat, lambda_star_hat) = if means.is_empty() { (None, None) } else { growth_fits(&c.t, &means) };
    let discrepancy = (!direct.is_empty() && !fk.is_empty()).then(|| {
        MomentEstimate { p: c.p, times: c.t.clone(), direct: direct.clone(), fk: fk.clone(), lambda_hat, lambda_star_hat }
            .max_discrepancy()
    });
    let star = if c.rho > 0.0 { Some(lambda_star_probe(c.d, c.rho, c.gamma, c.p)?) } else { None };
    let limits = match star {
        Some(s) if c.d >= 3 && s.regime == CatalyticRegime::Weak && c.gamma > 0.0 => {
            Some(lambda_limits(c.d, c.nu, c.gamma, c.rho, c.p, c.polaron)?)
        }
        _ => None,
    };
    let mut art = Artifacts::default();
    art.table(file, table);
    art.json(
        "catalytic.json",
        json!({
            "radius": radius,
            "prediction": { "lambda_star": star, "limits": limits },
            "fits": { "lambda_hat": lambda_hat, "lambda_star_hat": lambda_star_hat, "route": if fk.is_empty() { "direct" } else { "fk" } },
            "max_discrepancy_se": discrepancy,
        }),
    );
    Ok(art)
}
