//! Forward evolution of `∂_t u = κΔu + ξu` on a box, Feynman–Kac Monte Carlo,
//! and annealed moment ensembles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PamError, Result};
use crate::lattice::{restrict_domain, BoundaryMode, Domain, Field, LatticeBox};
use crate::linalg::expm_apply;
use crate::potentials::PotentialSpec;
use crate::rng::{child_seed, substream, tag};
use crate::spectral::dense_matrix;
use crate::stats::{bootstrap, effective_sample_size, log_mean_exp, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    /// `Spectral` on domains of at most [`SPECTRAL_LIMIT`] sites, `SplitExponential` otherwise.
    #[default]
    Auto,
    /// Exact propagation through a dense eigendecomposition.
    Spectral,
    /// Strang splitting: half diagonal growth, Krylov diffusion, half growth.
    SplitExponential,
    /// Forward Euler.
    Explicit,
}

pub const SPECTRAL_LIMIT: usize = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub kappa: f64,
    pub t_end: f64,
    /// Increasing times in `[0, t_end]`; empty means `[t_end]`.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub stepper: Stepper,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
}

fn default_dt_max() -> f64 {
    0.01
}

impl EvolutionConfig {
    pub fn new(kappa: f64, t_end: f64) -> Self {
        Self { kappa, t_end, snapshot_times: vec![], stepper: Stepper::Auto, dt_max: default_dt_max() }
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn with_stepper(mut self, stepper: Stepper, dt_max: f64) -> Self {
        self.stepper = stepper;
        self.dt_max = dt_max;
        self
    }

    fn times(&self) -> Result<Vec<f64>> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be positive, got {}", self.kappa)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", format!("must be positive, got {}", self.t_end)));
        }
        if !(self.dt_max > 0.0) {
            return Err(invalid("dt_max", "must be positive"));
        }
        let times = if self.snapshot_times.is_empty() { vec![self.t_end] } else { self.snapshot_times.clone() };
        if times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("snapshot_times", "must be increasing and lie in [0, t_end]"));
        }
        Ok(times)
    }
}

/// `u(t, ·) = e^{log_scale} · field`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub log_scale: f64,
    pub field: Field,
}

impl Snapshot {
    /// `log u(t, x)` at a box index.
    pub fn log_value(&self, index: usize) -> f64 {
        self.log_scale + self.field.get(index).ln()
    }

    pub fn log_value_at_center(&self) -> f64 {
        self.log_value(self.field.lattice().center_index())
    }

    pub fn total_mass(&self) -> TotalMass {
        let m = total_mass(&self.field);
        TotalMass { mass: m.mass * self.log_scale.exp(), log_mass: m.log_mass + self.log_scale }
    }

    /// Unscaled values; errors if they overflow.
    pub fn to_field(&self) -> Result<Field> {
        let s = self.log_scale.exp();
        let vals: Vec<f64> = self.field.values().iter().map(|v| v * s).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(PamError::NonFinite { step: 0, t: self.t });
        }
        Field::new(self.field.lattice().clone(), vals)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TotalMass {
    pub mass: f64,
    pub log_mass: f64,
}

/// `U = Σ_x u(x)` and `log U`.
pub fn total_mass(u: &Field) -> TotalMass {
    let m = u.values().iter().copied().fold(0.0f64, f64::max);
    if m == 0.0 {
        return TotalMass { mass: 0.0, log_mass: f64::NEG_INFINITY };
    }
    let s: f64 = u.values().iter().map(|v| v / m).sum();
    TotalMass { mass: s * m, log_mass: m.ln() + s.ln() }
}

/// Box radius capturing the walk's reach up to time `t`.
pub fn default_radius(d: usize, kappa: f64, t: f64) -> usize {
    let s = 2.0 * d as f64 * kappa * t;
    (s + 6.0 * s.sqrt()).ceil() as usize
}

/// Solution snapshots of the Cauchy problem with potential `xi` and data `u0`.
pub fn evolve(xi: &Field, u0: &Field, cfg: &EvolutionConfig) -> Result<Vec<Snapshot>> {
    let times = cfg.times()?;
    if xi.lattice() != u0.lattice() {
        return Err(PamError::SizeMismatch { expected: xi.len(), found: u0.len() });
    }
    if u0.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(invalid("u0", "must be finite and nonnegative"));
    }
    let domain = restrict_domain(xi);
    let lattice = xi.lattice();
    if domain.is_empty() {
        return Ok(times.iter().map(|&t| Snapshot { t, log_scale: 0.0, field: Field::constant(lattice.clone(), 0.0) }).collect());
    }
    let x0 = domain.gather(u0);
    let stepper = match cfg.stepper {
        Stepper::Auto if domain.len() <= SPECTRAL_LIMIT => Stepper::Spectral,
        Stepper::Auto => Stepper::SplitExponential,
        s => s,
    };
    let states = match stepper {
        Stepper::Spectral => spectral_flow(&domain, cfg.kappa, &x0, &times),
        Stepper::SplitExponential | Stepper::Explicit => stepped_flow(&domain, cfg, stepper, &x0, &times)?,
        Stepper::Auto => unreachable!(),
    };
    Ok(states
        .into_iter()
        .zip(&times)
        .map(|((log_scale, x), &t)| Snapshot { t, log_scale, field: domain.scatter(&x, 0.0) })
        .collect())
}

fn spectral_flow(domain: &Domain, kappa: f64, x0: &[f64], times: &[f64]) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(dense_matrix(domain, kappa));
    let q: &DMatrix<f64> = &eig.eigenvectors;
    let c = q.transpose() * DVector::from_column_slice(x0);
    let top = eig.eigenvalues.max();
    times
        .iter()
        .map(|&t| {
            let w =
                DVector::from_iterator(c.len(), c.iter().zip(eig.eigenvalues.iter()).map(|(ci, l)| ci * ((l - top) * t).exp()));
            let x: Vec<f64> = (q * w).iter().map(|v| v.max(0.0)).collect();
            renormalized(top * t, x)
        })
        .collect()
}

/// Pulls the maximum of `x` to one, folding the factor into the log scale.
fn renormalized(log_scale: f64, mut x: Vec<f64>) -> (f64, Vec<f64>) {
    let m = x.iter().copied().fold(0.0f64, f64::max);
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v /= m);
        (log_scale + m.ln(), x)
    } else {
        (log_scale, x)
    }
}

fn stepped_flow(
    domain: &Domain,
    cfg: &EvolutionConfig,
    stepper: Stepper,
    x0: &[f64],
    times: &[f64],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let d = domain.lattice().dim() as f64;
    let kappa = cfg.kappa;
    let vals = domain.values();
    let max_abs = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if stepper == Stepper::Explicit {
        let bound = 1.0 / (2.0 * d * kappa + max_abs);
        if cfg.dt_max > bound {
            return Err(PamError::Stability { step: 0, dt: cfg.dt_max, bound });
        }
    }
    let n = domain.len();
    let zero = vec![0.0; n];
    let mut diffusion = |x: &[f64], y: &mut [f64]| domain.apply_operator(kappa, &zero, x, y);
    let mut x = x0.to_vec();
    let mut log_scale = 0.0;
    let mut t = 0.0;
    let mut step = 0usize;
    let mut out = Vec::with_capacity(times.len());
    let mut y = vec![0.0; n];
    for &target in times {
        let span = target - t;
        let steps = if span > 0.0 { (span / cfg.dt_max).ceil().max(1.0) as usize } else { 0 };
        let dt = if steps > 0 { span / steps as f64 } else { 0.0 };
        let half: Vec<f64> = vals.iter().map(|v| (0.5 * dt * v).exp()).collect();
        for _ in 0..steps {
            step += 1;
            match stepper {
                Stepper::Explicit => {
                    domain.apply_hamiltonian(kappa, &x, &mut y);
                    for (xi, yi) in x.iter_mut().zip(&y) {
                        *xi += dt * yi;
                    }
                }
                _ => {
                    x.iter_mut().zip(&half).for_each(|(a, h)| *a *= h);
                    x = expm_apply(&mut diffusion, &x, dt, 4.0 * d * kappa, 1e-13);
                    x.iter_mut().zip(&half).for_each(|(a, h)| *a = (*a * h).max(0.0));
                }
            }
            t += dt;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(PamError::NonFinite { step, t });
            }
            let m = x.iter().copied().fold(0.0f64, f64::max);
            if m > 1e100 || (m > 0.0 && m < 1e-100) {
                let (s, nx) = renormalized(log_scale, std::mem::take(&mut x));
                log_scale = s;
                x = nx;
            }
        }
        t = target;
        out.push(renormalized(log_scale, x.clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// Weight only paths ending at this offset from the box center.
    Pinned(Vec<i64>),
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    pub kappa: f64,
    pub paths: usize,
    pub seed: u64,
    pub endpoint: Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub log_estimate: f64,
}

/// Monte Carlo estimate of `E_0[exp ∫_0^t ξ(X_s) ds · 1{X_t = x}]` (pinned) or
/// `E_0 exp ∫_0^t ξ(X_s) ds` (free) for the walk with generator `κΔ` started
/// at the box center. Leaving a zero-Dirichlet box kills the path.
pub fn feynman_kac(xi: &Field, t: f64, cfg: &WalkConfig) -> Result<FkEstimate> {
    if cfg.paths == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    if !(cfg.kappa > 0.0) || !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("kappa", "kappa must be positive and t finite"));
    }
    let lattice = xi.lattice();
    let target = match &cfg.endpoint {
        Endpoint::Pinned(x) => Some(lattice.index_of_offset(x).ok_or_else(|| invalid("endpoint", "target outside the box"))?),
        Endpoint::Free => None,
    };
    let base = child_seed(cfg.seed, tag::PATHS, 0);
    let logs: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(base, i as u64);
            let end_weight = walk_log_weight(xi, lattice, t, cfg.kappa, &mut rng);
            match (end_weight, target) {
                (Some((lw, end)), Some(tg)) if end == tg => lw,
                (Some((lw, _)), None) => lw,
                _ => f64::NEG_INFINITY,
            }
        })
        .collect();
    let log_estimate = log_mean_exp(&logs);
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (estimate, standard_error) = if m == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let se = crate::stats::standard_error(&w);
        let scale = m.exp();
        (log_estimate.exp(), if cfg.paths > 1 { se * scale } else { f64::INFINITY })
    };
    Ok(FkEstimate { estimate, standard_error, log_estimate })
}

/// `(∫ξ(X_s)ds, X_t)` for one path, `None` if it is killed.
fn walk_log_weight(xi: &Field, lattice: &LatticeBox, t: f64, kappa: f64, rng: &mut crate::rng::Rng) -> Option<(f64, usize)> {
    let d = lattice.dim();
    let hold = Exp::new(2.0 * d as f64 * kappa).expect("positive rate");
    let mut pos = lattice.center_index();
    let mut clock = 0.0;
    let mut acc = 0.0;
    loop {
        let v = xi.get(pos);
        if v == f64::NEG_INFINITY {
            return None;
        }
        let h: f64 = hold.sample(rng);
        if clock + h >= t {
            acc += v * (t - clock);
            return Some((acc, pos));
        }
        acc += v * h;
        clock += h;
        let dir = rng.random_range(0..2 * d);
        pos = lattice.neighbors(pos)[dir]?;
    }
}

/// `Λ̂_p(t)` estimate with bootstrap interval and effective sample size.
#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub p: f64,
    pub t: f64,
    pub lambda: Interval,
    pub ess: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
    /// `log u(t, 0)` per realization (outer) and snapshot time (inner).
    pub log_values: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl MomentTable {
    pub fn get(&self, p: f64, t: f64) -> Option<&MomentRow> {
        self.rows.iter().find(|r| r.p == p && (r.t - t).abs() <= 1e-12 * t.max(1.0))
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 400;

/// Ensemble of `û(t, 0)` with `û(0, ·) = 1` over i.i.d. fields on `lattice`.
pub fn moment_ensemble(
    spec: &PotentialSpec,
    lattice: &LatticeBox,
    cfg: &EvolutionConfig,
    p_list: &[f64],
    n_realizations: usize,
    seed: u64,
) -> Result<MomentTable> {
    if n_realizations == 0 {
        return Err(invalid("n_realizations", "need at least one realization"));
    }
    if p_list.iter().any(|p| !(*p > 0.0)) {
        return Err(invalid("p", "moment orders must be positive"));
    }
    let times = cfg.times()?;
    let log_values: Vec<Vec<f64>> = (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let xi = spec.sample_field(lattice, child_seed(seed, tag::ENSEMBLE, i as u64))?;
            let one = Field::constant(lattice.clone(), 1.0);
            let snaps = evolve(&xi, &one, cfg)?;
            Ok(snaps.iter().map(Snapshot::log_value_at_center).collect())
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let col: Vec<f64> = log_values.iter().map(|v| v[k]).collect();
        for &p in p_list {
            let scaled: Vec<f64> = col.iter().map(|l| p * l).collect();
            let est = log_mean_exp(&scaled);
            let mut buf = Vec::with_capacity(scaled.len());
            let lambda = bootstrap(scaled.len(), BOOTSTRAP_RESAMPLES, seed ^ ((k as u64) << 20), est, |idx| {
                buf.clear();
                buf.extend(idx.iter().map(|&i| scaled[i]));
                log_mean_exp(&buf)
            });
            let ess = effective_sample_size(&scaled);
            let warning = (ess < 10.0).then(|| format!("effective sample size {ess:.1} below 10"));
            rows.push(MomentRow { p, t, lambda, ess, warning });
        }
    }
    Ok(MomentTable { rows, log_values, times })
}

/// Evolution on the periodic box used for `U(t) = û(t,0)` comparisons.
pub fn torus_of(lattice: &LatticeBox) -> LatticeBox {
    lattice.clone().with_boundary(BoundaryMode::Periodic)
}
