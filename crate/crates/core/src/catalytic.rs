//! Time-dependent potential from a Poisson field of random walks on the torus:
//! catalyst dynamics, the centered equation, the moment representation with
//! the auxiliary field `w`, and the growth-rate predictions.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, PamError, Result};
use crate::lattice::{restrict_domain, Domain, Field, LatticeBox};
use crate::linalg::{norm, phi1, phi2, taylor_expm_apply, Krylov};
use crate::rng::{child_seed, site_key, substream, tag};
use crate::solver::{default_radius, Snapshot, BOOTSTRAP_RESAMPLES};
use crate::spectral::{green_function_origin, mu_of_r, MuMethod};
use crate::stats::{bootstrap, linear_fit, log_mean_exp, mean, standard_error, Interval};

/// `ν` density, `ρ` catalyst diffusion, `γ` coupling; the centering defaults
/// to `νγ` and can be replaced by a death rate `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalyticParams {
    pub d: usize,
    pub nu: f64,
    pub gamma: f64,
    pub rho: f64,
    #[serde(default)]
    pub death_rate: Option<f64>,
}

impl CatalyticParams {
    pub fn new(d: usize, nu: f64, gamma: f64, rho: f64) -> Self {
        Self { d, nu, gamma, rho, death_rate: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        for (name, v) in [("nu", self.nu), ("gamma", self.gamma), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if let Some(delta) = self.death_rate {
            if !delta.is_finite() {
                return Err(invalid("death_rate", "must be finite"));
            }
        }
        Ok(())
    }

    /// Constant subtracted from the potential.
    pub fn centering(&self) -> f64 {
        self.death_rate.unwrap_or(self.nu * self.gamma)
    }
}

/// Torus radius covering twice the reach of the faster of the two walks.
pub fn catalytic_radius(d: usize, kappa: f64, rho: f64, t: f64) -> usize {
    default_radius(d, kappa.max(rho), t)
}

/// Catalyst positions on a torus.
#[derive(Debug, Clone)]
pub struct CatalystState {
    pub lattice: LatticeBox,
    pub params: CatalyticParams,
    /// Site of every walker; a site may host several.
    pub walkers: Vec<usize>,
}

impl CatalystState {
    /// I.i.d. Poisson(ν) occupation numbers.
    pub fn equilibrium(params: CatalyticParams, radius: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let lattice = LatticeBox::torus(params.d, radius)?;
        let mut walkers = Vec::new();
        if params.nu > 0.0 {
            let law = Poisson::new(params.nu).map_err(|e| invalid("nu", e.to_string()))?;
            let base = child_seed(seed, tag::CATALYST, 0);
            for i in 0..lattice.len() {
                let k: f64 = law.sample(&mut substream(base, site_key(&lattice.point(i))));
                walkers.extend(std::iter::repeat_n(i, k as usize));
            }
        }
        Ok(Self { lattice, params, walkers })
    }

    pub fn counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.lattice.len()];
        self.walkers.iter().for_each(|&s| c[s] += 1);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CatalystEvent {
    pub t: f64,
    pub walker: usize,
    pub to: usize,
}

/// Exact jump times of every catalyst up to `t_end`.
#[derive(Debug, Clone)]
pub struct CatalystTrajectory {
    pub initial: CatalystState,
    pub events: Vec<CatalystEvent>,
    pub t_end: f64,
}

impl CatalystTrajectory {
    pub fn walker_count(&self) -> usize {
        self.initial.walkers.len()
    }

    /// Occupation numbers just after time `t`.
    pub fn counts_at(&self, t: f64) -> Vec<u32> {
        let mut pos = self.initial.walkers.clone();
        for e in self.events.iter().take_while(|e| e.t <= t) {
            pos[e.walker] = e.to;
        }
        let mut c = vec![0u32; self.initial.lattice.len()];
        pos.iter().for_each(|&s| c[s] += 1);
        c
    }

    /// `ξ(t,·) = γ · counts`.
    pub fn potential_at(&self, t: f64) -> Result<Field> {
        let g = self.initial.params.gamma;
        Field::new(self.initial.lattice.clone(), self.counts_at(t).iter().map(|&k| g * k as f64).collect())
    }

    /// Potentials at each requested time.
    pub fn snapshots(&self, t_grid: &[f64]) -> Result<Vec<Field>> {
        t_grid.iter().map(|&t| self.potential_at(t)).collect()
    }
}

/// Independent walks with generator `ρΔ`, simulated event by event.
pub fn simulate_catalysts(state: &CatalystState, t_end: f64, seed: u64) -> Result<CatalystTrajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", "must be finite and nonnegative"));
    }
    let rate = 2.0 * state.lattice.dim() as f64 * state.params.rho;
    let mut events = Vec::new();
    if rate > 0.0 {
        let wait = Exp::new(rate).map_err(|e| invalid("rho", e.to_string()))?;
        let base = child_seed(seed, tag::CATALYST, 1);
        for (k, &start) in state.walkers.iter().enumerate() {
            let mut rng = substream(base, k as u64);
            let (mut t, mut at) = (0.0, start);
            loop {
                t += wait.sample(&mut rng);
                if t > t_end {
                    break;
                }
                let dir = rng.random_range(0..2 * state.lattice.dim());
                at = state.lattice.neighbors(at)[dir].expect("torus neighbours exist");
                events.push(CatalystEvent { t, walker: k, to: at });
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(CatalystTrajectory { initial: state.clone(), events, t_end })
}

fn full_domain(lattice: &LatticeBox) -> Domain {
    restrict_domain(&Field::constant(lattice.clone(), 0.0))
}

const KRYLOV_TOL: f64 = 1e-12;

/// `u(t,·)` for `∂u = κΔu + (ξ(t,·) - νγ)u`, `u(0,·) = 1`, with the potential
/// frozen between catalyst jumps and each interval solved by a Krylov
/// exponential (`κ = 0`: per-site exponentials).
pub fn evolve_catalytic(traj: &CatalystTrajectory, kappa: f64, t_grid: &[f64]) -> Result<Vec<Snapshot>> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", "must be finite and nonnegative"));
    }
    check_grid(t_grid, traj.t_end)?;
    let lattice = &traj.initial.lattice;
    let params = traj.initial.params;
    let domain = full_domain(lattice);
    let d = lattice.dim() as f64;
    let mut counts = traj.initial.counts();
    let mut pos = traj.initial.walkers.clone();
    let mut u = vec![1.0; lattice.len()];
    let mut log_scale = 0.0;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut events = traj.events.iter().peekable();
    for &target in t_grid {
        while now < target {
            let next = events.peek().map_or(f64::INFINITY, |e| e.t);
            let stop = next.min(target);
            let tau = stop - now;
            if tau > 0.0 {
                let diag: Vec<f64> = counts.iter().map(|&k| params.gamma * k as f64 - params.centering()).collect();
                if kappa == 0.0 {
                    u.iter_mut().zip(&diag).for_each(|(x, v)| *x *= (tau * v).exp());
                } else {
                    let bound = 4.0 * d * kappa + diag.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let mut op = |x: &[f64], y: &mut [f64]| domain.apply_operator(kappa, &diag, x, y);
                    u = taylor_expm_apply(&mut op, &u, tau, bound, KRYLOV_TOL);
                }
                let m = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if !m.is_finite() {
                    return Err(PamError::NonFinite { step: out.len(), t: stop });
                }
                if m > 1e100 || (m > 0.0 && m < 1e-100) {
                    u.iter_mut().for_each(|x| *x /= m);
                    log_scale += m.ln();
                }
            }
            now = stop;
            while let Some(e) = events.next_if(|e| e.t <= now) {
                counts[pos[e.walker]] -= 1;
                counts[e.to] += 1;
                pos[e.walker] = e.to;
            }
        }
        out.push(Snapshot { t: target, log_scale, field: Field::new(lattice.clone(), u.clone())? });
    }
    Ok(out)
}

fn check_grid(t_grid: &[f64], t_end: f64) -> Result<()> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] < 0.0 {
        return Err(invalid("t_grid", "times must be nonnegative and increasing"));
    }
    if *t_grid.last().unwrap() > t_end + 1e-12 {
        return Err(invalid("t_grid", format!("times exceed the simulated horizon {t_end}")));
    }
    Ok(())
}

/// `∫_0^t Σ_i w(s, X_i(s)) ds` at each time of `t_grid` for one bundle of `p`
/// reactant walks with generator `κΔ` from the center, where
/// `∂w = ρΔw + γ Σ_i δ_{X_i}(1 + w)`, `w(0) = 0`. Between reactant jumps
/// the equation is linear with constant coefficients and each step is the
/// exact Duhamel formula `w ← e^{hA}w + hφ₁(hA)b`, with the path integral
/// `mᵀ(hφ₁(hA)w + h²φ₂(hA)b)`, evaluated by Krylov projection.
pub fn fk_bundle(
    params: &CatalyticParams,
    kappa: f64,
    p: usize,
    t_grid: &[f64],
    lattice: &LatticeBox,
    seed: u64,
) -> Result<Vec<f64>> {
    let t_end = *t_grid.last().ok_or_else(|| invalid("t_grid", "empty"))?;
    check_grid(t_grid, t_end)?;
    if params.gamma == 0.0 || p == 0 {
        return Ok(vec![0.0; t_grid.len()]);
    }
    let n = lattice.len();
    let dim = lattice.dim();
    let mut rng = substream(seed, 0);
    let mut jumps: Vec<(f64, usize, usize)> = Vec::new();
    if kappa > 0.0 {
        let wait = Exp::new(2.0 * dim as f64 * kappa).map_err(|e| invalid("kappa", e.to_string()))?;
        for i in 0..p {
            let mut t = 0.0;
            loop {
                t += wait.sample(&mut rng);
                if t > t_end {
                    break;
                }
                jumps.push((t, i, rng.random_range(0..2 * dim)));
            }
        }
    }
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let domain = full_domain(lattice);
    let mut pos = vec![lattice.center_index(); p];
    let mut mult = vec![0.0; n];
    mult[lattice.center_index()] = p as f64;
    let bound = 4.0 * dim as f64 * params.rho + params.gamma * p as f64;
    let mut w = vec![0.0; n];
    let mut integral = 0.0;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut k = 0;
    for &target in t_grid {
        while now < target {
            let next = jumps.get(k).map_or(f64::INFINITY, |j| j.0);
            let stop = next.min(target);
            if stop > now {
                let diag: Vec<f64> = mult.iter().map(|m| params.gamma * m).collect();
                let mut op = |x: &[f64], y: &mut [f64]| domain.apply_operator(params.rho, &diag, x, y);
                let tau = stop - now;
                let substeps = (tau * bound / 8.0).ceil().max(1.0) as usize;
                let h = tau / substeps as f64;
                for _ in 0..substeps {
                    let (wn, inc) = duhamel_step(&mut op, &w, &diag, &mult, h).ok_or(PamError::StepRejection { seed, t: now })?;
                    w = wn;
                    integral += inc;
                }
            }
            now = stop;
            while k < jumps.len() && jumps[k].0 <= now {
                let (_, i, dir) = jumps[k];
                mult[pos[i]] -= 1.0;
                pos[i] = lattice.neighbors(pos[i])[dir].expect("torus neighbours exist");
                mult[pos[i]] += 1.0;
                k += 1;
            }
        }
        out.push(integral);
    }
    Ok(out)
}

/// One exact step of `w' = Aw + b` on `[0, h]`; returns the new `w` and
/// `∫ mᵀw`. `None` when no Krylov size up to 96 meets the tolerance.
fn duhamel_step(op: &mut impl FnMut(&[f64], &mut [f64]), w: &[f64], b: &[f64], m: &[f64], h: f64) -> Option<(Vec<f64>, f64)> {
    let scale = norm(w).max(norm(b) * h).max(1e-300);
    let mut size = 12;
    loop {
        let kw = Krylov::build(op, w, size);
        let kb = Krylov::build(op, b, size);
        let (e_w, err1) = kw.apply(|l| (h * l).exp());
        let (f_w, err2) = kw.apply(|l| h * phi1(h * l));
        let (f_b, err3) = kb.apply(|l| h * phi1(h * l));
        let (g_b, err4) = kb.apply(|l| h * h * phi2(h * l));
        let err = err1 + err2 + err3 + err4;
        let full = kw.dim() < size && kb.dim() < size;
        if err <= KRYLOV_TOL * scale || full {
            let next: Vec<f64> = e_w.iter().zip(&f_b).map(|(a, c)| a + c).collect();
            let inc: f64 = m.iter().zip(f_w.iter().zip(&g_b)).map(|(mi, (a, c))| mi * (a + c)).sum();
            return Some((next, inc));
        }
        if size >= 96 {
            return None;
        }
        size += 12;
    }
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub standard_error: f64,
}

impl Estimate {
    fn of(xs: &[f64]) -> Self {
        Self { mean: mean(xs), standard_error: standard_error(xs) }
    }
}

/// `⟨u(t,0)^p⟩` via the representation `E exp{νγ ∫ Σ_i w(s, X_i(s)) ds}`
/// (shifted by `p(νγ - δ)t` for a death rate `δ`).
pub fn fk_moment(
    params: &CatalyticParams,
    kappa: f64,
    p: usize,
    t_grid: &[f64],
    paths: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    Ok(fk_samples(params, kappa, p, t_grid, paths, radius, seed)?
        .iter()
        .map(|col| Estimate::of(&col.iter().map(|l| l.exp()).collect::<Vec<_>>()))
        .collect())
}

/// Log weights per time (outer) and bundle (inner).
fn fk_samples(
    params: &CatalyticParams,
    kappa: f64,
    p: usize,
    t_grid: &[f64],
    paths: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if paths == 0 {
        return Err(invalid("paths", "need at least one path bundle"));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", "must be finite and nonnegative"));
    }
    let lattice = LatticeBox::torus(params.d, radius)?;
    let shift = params.nu * params.gamma - params.centering();
    let runs: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|i| fk_bundle(params, kappa, p, t_grid, &lattice, child_seed(seed, tag::REACTANT, i as u64)))
        .collect::<Result<_>>()?;
    Ok((0..t_grid.len())
        .map(|k| runs.iter().map(|r| params.nu * params.gamma * r[k] + p as f64 * shift * t_grid[k]).collect())
        .collect())
}

/// Direct ensemble of `u(t,0)^p` over catalyst realizations on the torus.
pub fn direct_moment(
    params: &CatalyticParams,
    kappa: f64,
    p: usize,
    t_grid: &[f64],
    realizations: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    params.validate()?;
    if realizations == 0 {
        return Err(invalid("realizations", "need at least one realization"));
    }
    let t_end = *t_grid.last().ok_or_else(|| invalid("t_grid", "empty"))?;
    let runs: Vec<Vec<f64>> = (0..realizations)
        .into_par_iter()
        .map(|i| {
            let s = child_seed(seed, tag::ENSEMBLE, i as u64);
            let state = CatalystState::equilibrium(*params, radius, s)?;
            let traj = simulate_catalysts(&state, t_end, s)?;
            let snaps = evolve_catalytic(&traj, kappa, t_grid)?;
            let c = state.lattice.center_index();
            Ok(snaps.iter().map(|sn| sn.log_value(c)).collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..t_grid.len()).map(|k| Estimate::of(&runs.iter().map(|r| (p as f64 * r[k]).exp()).collect::<Vec<_>>())).collect())
}

/// Both routes on one torus, with growth-rate fits.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub p: usize,
    pub times: Vec<f64>,
    pub direct: Vec<Estimate>,
    pub fk: Vec<Estimate>,
    /// Slope of `log⟨u^p⟩` over the latter half of the horizon (FK route).
    pub lambda_hat: Option<f64>,
    /// Slope of `log log⟨u^p⟩`, when the moment exceeds `e^e` there.
    pub lambda_star_hat: Option<f64>,
}

impl MomentEstimate {
    /// Largest `|direct - fk| / sqrt(SE_direct² + SE_fk²)` over the grid.
    pub fn max_discrepancy(&self) -> f64 {
        self.direct
            .iter()
            .zip(&self.fk)
            .map(|(a, b)| {
                let se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
                if se > 0.0 {
                    (a.mean - b.mean).abs() / se
                } else if a.mean == b.mean {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRun {
    pub kappa: f64,
    pub p: usize,
    pub realizations: usize,
    pub paths: usize,
    pub radius: usize,
    pub seed: u64,
}

pub fn catalytic_moments(params: &CatalyticParams, run: &MomentRun, t_grid: &[f64]) -> Result<MomentEstimate> {
    let direct = direct_moment(params, run.kappa, run.p, t_grid, run.realizations, run.radius, run.seed)?;
    let fk = fk_moment(params, run.kappa, run.p, t_grid, run.paths, run.radius, run.seed)?;
    let means: Vec<f64> = fk.iter().map(|e| e.mean).collect();
    let (lambda_hat, lambda_star_hat) = growth_fits(t_grid, &means);
    Ok(MomentEstimate { p: run.p, times: t_grid.to_vec(), direct, fk, lambda_hat, lambda_star_hat })
}

/// `(λ̂, λ̂*)` from regressions over the latter half of the horizon.
pub fn growth_fits(times: &[f64], moments: &[f64]) -> (Option<f64>, Option<f64>) {
    let half = times.last().copied().unwrap_or(0.0) / 2.0;
    let (ts, ms): (Vec<f64>, Vec<f64>) = times.iter().zip(moments).filter(|(t, _)| **t >= half).map(|(t, m)| (*t, *m)).unzip();
    if ts.len() < 2 || ms.iter().any(|m| !(*m > 0.0)) {
        return (None, None);
    }
    let logs: Vec<f64> = ms.iter().map(|m| m.ln()).collect();
    let lambda = linear_fit(&ts, &logs).1;
    let star = if ms.iter().all(|m| *m > std::f64::consts::E.exp()) {
        Some(linear_fit(&ts, &logs.iter().map(|l| l.ln()).collect::<Vec<_>>()).1)
    } else {
        None
    };
    (Some(lambda), star)
}

/// Pearson chi-square of occupation counts against Poisson(ν); cells are
/// `0, 1, …, K-1` and `≥ K` with every expected count at least 5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

pub fn poisson_chi_square(counts: &[u32], nu: f64) -> Result<ChiSquareTest> {
    if counts.is_empty() {
        return Err(invalid("counts", "empty sample"));
    }
    let n = counts.len() as f64;
    if nu == 0.0 {
        let ok = counts.iter().all(|&c| c == 0);
        return Ok(ChiSquareTest {
            statistic: if ok { 0.0 } else { f64::INFINITY },
            dof: 0,
            p_value: if ok { 1.0 } else { 0.0 },
        });
    }
    let law = statrs::distribution::Poisson::new(nu).map_err(|e| invalid("nu", e.to_string()))?;
    use statrs::distribution::{Discrete, DiscreteCDF};
    // cells 0..k-1 individually while both they and the remaining tail hold ≥ 5
    let mut k = 0u64;
    while n * law.pmf(k) >= 5.0 && n * law.sf(k) >= 5.0 {
        k += 1;
    }
    if k == 0 {
        return Err(invalid("counts", "sample too small for a chi-square test"));
    }
    let mut observed = vec![0.0; k as usize + 1];
    for &c in counts {
        observed[(c as u64).min(k) as usize] += 1.0;
    }
    let mut expected: Vec<f64> = (0..k).map(|j| n * law.pmf(j)).collect();
    expected.push(n * (1.0 - law.cdf(k - 1)));
    let statistic: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = k as usize;
    let p_value = ChiSquared::new(dof as f64).map(|c| c.sf(statistic)).unwrap_or(f64::NAN);
    Ok(ChiSquareTest { statistic, dof, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalyticRegime {
    Strong,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaStar {
    /// `ρ μ(pγ/ρ)`.
    pub value: f64,
    pub ratio: f64,
    /// `r_d`, `+∞` for recurrent dimensions.
    pub threshold: f64,
    pub regime: CatalyticRegime,
}

/// `λ_p* = ρ μ(pγ/ρ)`; independent of `κ` and `ν`.
pub fn lambda_star_probe(d: usize, rho: f64, gamma: f64, p: usize) -> Result<LambdaStar> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rho", "must be positive"));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", "must be finite and nonnegative"));
    }
    let ratio = p as f64 * gamma / rho;
    let green = green_function_origin(d)?;
    let threshold = if green.finite { green.threshold } else { f64::INFINITY };
    let mu = if ratio <= threshold && green.finite { 0.0 } else { mu_of_r(ratio, d, MuMethod::Resolvent)?.mu };
    let value = rho * mu;
    let regime = if value > 0.0 { CatalyticRegime::Strong } else { CatalyticRegime::Weak };
    Ok(LambdaStar { value, ratio, threshold, regime })
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaLimits {
    pub d: usize,
    pub p: usize,
    pub threshold: f64,
    /// `λ_p(0)/p = νγ (pγ/ρ)/(r_d - pγ/ρ)`.
    pub small_kappa_per_p: f64,
    /// `lim κ λ_p(κ)/p`; `None` in `d = 3` without the polaron constant.
    pub large_kappa_scaled: Option<f64>,
    /// `λ_p(0)/p` increases in `p`, so `p ≥ 2` is intermittent for small `κ`.
    pub small_kappa_intermittent: bool,
    /// `d = 3`: the `√p` term separates the orders when the constant is
    /// positive; `d ≥ 4`: the leading term is the same for every order.
    pub large_kappa_intermittent: Option<bool>,
}

/// Closed-form `κ ↓ 0` and `κ → ∞` limits in the weakly catalytic regime.
pub fn lambda_limits(d: usize, nu: f64, gamma: f64, rho: f64, p: usize, polaron: Option<f64>) -> Result<LambdaLimits> {
    if d < 3 {
        return Err(PamError::Regime { ratio: p as f64 * gamma / rho, threshold: f64::INFINITY });
    }
    if p == 0 || !(rho > 0.0) || !(gamma > 0.0) || !(nu >= 0.0) {
        return Err(invalid("params", "need p ≥ 1, rho > 0, gamma > 0, nu ≥ 0"));
    }
    let green = green_function_origin(d)?;
    let r_d = green.threshold;
    let ratio = p as f64 * gamma / rho;
    if ratio >= r_d {
        return Err(PamError::Regime { ratio, threshold: r_d });
    }
    let small = nu * gamma * ratio / (r_d - ratio);
    let large = match d {
        3 => polaron.map(|pc| nu * gamma * gamma / r_d + (p as f64).sqrt() * (nu * gamma * gamma / rho).sqrt() * pc),
        _ => Some(nu * gamma * gamma / r_d),
    };
    let large_int = match d {
        3 => polaron.map(|pc| pc > 0.0 && p >= 2),
        _ => Some(false),
    };
    Ok(LambdaLimits {
        d,
        p,
        threshold: r_d,
        small_kappa_per_p: small,
        large_kappa_scaled: large,
        small_kappa_intermittent: p >= 2,
        large_kappa_intermittent: large_int,
    })
}

/// `λ̂_p(κ)` from the FK route with a bootstrap interval over bundles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaFit {
    pub kappa: f64,
    pub lambda: Interval,
}

pub fn lambda_kappa_scan(
    params: &CatalyticParams,
    p: usize,
    kappas: &[f64],
    t_grid: &[f64],
    paths: usize,
    radius: usize,
    seed: u64,
) -> Result<Vec<KappaFit>> {
    let half = t_grid.last().copied().unwrap_or(0.0) / 2.0;
    let late: Vec<usize> = (0..t_grid.len()).filter(|&k| t_grid[k] >= half).collect();
    if late.len() < 2 {
        return Err(invalid("t_grid", "need two times in the latter half of the horizon"));
    }
    let ts: Vec<f64> = late.iter().map(|&k| t_grid[k]).collect();
    kappas
        .iter()
        .enumerate()
        .map(|(j, &kappa)| {
            let logs = fk_samples(params, kappa, p, t_grid, paths, radius, child_seed(seed, tag::ENSEMBLE, j as u64))?;
            let slope = |idx: Option<&[usize]>| {
                let ys: Vec<f64> = late
                    .iter()
                    .map(|&k| match idx {
                        Some(ix) => log_mean_exp(&ix.iter().map(|&i| logs[k][i]).collect::<Vec<_>>()),
                        None => log_mean_exp(&logs[k]),
                    })
                    .collect();
                linear_fit(&ts, &ys).1
            };
            let est = slope(None);
            let lambda = bootstrap(paths, BOOTSTRAP_RESAMPLES, seed ^ j as u64, est, |ix| slope(Some(ix)));
            Ok(KappaFit { kappa, lambda })
        })
        .collect()
}

/// Decreasing up to the interval half-widths of neighbouring points.
pub fn decreasing_within_ci(fits: &[KappaFit]) -> bool {
    fits.windows(2).all(|w| w[1].lambda.estimate - w[0].lambda.estimate <= w[0].lambda.half_width() + w[1].lambda.half_width())
}

/// Midpoint convexity on consecutive triples, up to the interval half-widths.
pub fn convex_within_ci(fits: &[KappaFit]) -> bool {
    fits.windows(3).all(|w| {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let s = (b.kappa - a.kappa) / (c.kappa - a.kappa);
        let chord = a.lambda.estimate + s * (c.lambda.estimate - a.lambda.estimate);
        b.lambda.estimate <= chord + a.lambda.half_width() + b.lambda.half_width() + c.lambda.half_width()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Watson's constant for the simple cubic lattice: G(0) = W/6 for the
    // unnormalized Laplacian, so r₃ = 6/W.
    const WATSON: f64 = 1.516_386_059_151_978;

    fn unit() -> CatalyticParams {
        CatalyticParams::new(1, 1.0, 1.0, 1.0)
    }

    #[test]
    fn empty_field_when_density_is_zero() {
        let state = CatalystState::equilibrium(CatalyticParams::new(2, 0.0, 1.0, 1.0), 4, 3).unwrap();
        let traj = simulate_catalysts(&state, 2.0, 3).unwrap();
        assert!(traj.events.is_empty());
        for f in traj.snapshots(&[0.0, 1.0, 2.0]).unwrap() {
            assert!(f.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn walker_count_is_conserved() {
        let state = CatalystState::equilibrium(CatalyticParams::new(2, 1.5, 1.0, 0.7), 5, 11).unwrap();
        let traj = simulate_catalysts(&state, 3.0, 11).unwrap();
        assert!(!traj.events.is_empty());
        for t in [0.0, 0.5, 1.7, 3.0] {
            let total: u32 = traj.counts_at(t).iter().sum();
            assert_eq!(total as usize, traj.walker_count());
        }
        assert!(traj.events.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn equilibrium_counts_pass_chi_square() {
        let p = CatalyticParams::new(2, 1.3, 1.0, 1.0);
        let mut counts = Vec::new();
        for seed in 0..6 {
            let state = CatalystState::equilibrium(p, 20, seed).unwrap();
            let traj = simulate_catalysts(&state, 2.0, seed).unwrap();
            counts.extend(traj.counts_at(2.0));
        }
        let test = poisson_chi_square(&counts, p.nu).unwrap();
        assert!(test.passes(1e-3), "{test:?}");
        let skewed: Vec<u32> = counts.iter().map(|c| c / 2).collect();
        assert!(!poisson_chi_square(&skewed, p.nu).unwrap().passes(1e-3));
    }

    #[test]
    fn zero_coupling_keeps_solution_at_one() {
        let p = CatalyticParams::new(1, 1.0, 0.0, 1.0);
        let state = CatalystState::equilibrium(p, 8, 5).unwrap();
        let traj = simulate_catalysts(&state, 1.5, 5).unwrap();
        for snap in evolve_catalytic(&traj, 1.0, &[0.5, 1.5]).unwrap() {
            let c = state.lattice.center_index();
            assert!(snap.log_value(c).abs() < 1e-10);
        }
        for e in fk_moment(&p, 1.0, 2, &[0.5, 1.0], 5, 8, 1).unwrap() {
            assert_eq!(e.mean, 1.0);
            assert_eq!(e.standard_error, 0.0);
        }
    }

    #[test]
    fn immobile_reactant_matches_site_ode() {
        let p = CatalyticParams::new(1, 1.0, 0.8, 1.0);
        let state = CatalystState::equilibrium(p, 6, 21).unwrap();
        let traj = simulate_catalysts(&state, 1.2, 21).unwrap();
        let grid = [0.3, 0.9, 1.2];
        let snaps = evolve_catalytic(&traj, 0.0, &grid).unwrap();
        for (snap, &t) in snaps.iter().zip(&grid) {
            for x in 0..state.lattice.len() {
                // occupation time of site x from the raw event list
                let mut pos = state.walkers.clone();
                let mut here = pos.iter().filter(|&&s| s == x).count() as f64;
                let (mut last, mut occ) = (0.0, 0.0);
                for e in traj.events.iter().take_while(|e| e.t <= t) {
                    occ += here * (e.t - last);
                    last = e.t;
                    if pos[e.walker] == x {
                        here -= 1.0;
                    }
                    pos[e.walker] = e.to;
                    if e.to == x {
                        here += 1.0;
                    }
                }
                occ += here * (t - last);
                let want = p.gamma * occ - p.nu * p.gamma * t;
                assert!((snap.log_value(x) - want).abs() < 1e-8, "x={x} t={t}");
            }
        }
    }

    #[test]
    fn mean_solution_is_at_least_one() {
        let est = direct_moment(&unit(), 1.0, 1, &[0.5, 1.0], 400, 6, 8).unwrap();
        for e in est {
            assert!(e.mean + 3.0 * e.standard_error >= 1.0, "{e:?}");
        }
    }

    #[test]
    fn path_integral_grows_with_time() {
        let lattice = LatticeBox::torus(1, 8).unwrap();
        let grid: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
        for seed in 0..5 {
            let integral = fk_bundle(&unit(), 1.0, 2, &grid, &lattice, seed).unwrap();
            assert!(integral[0] > 0.0);
            assert!(integral.windows(2).all(|w| w[1] >= w[0]), "{integral:?}");
        }
    }

    #[test]
    fn death_rate_shifts_the_moment() {
        let mut p = unit();
        let base = fk_moment(&p, 1.0, 1, &[1.0], 20, 6, 2).unwrap()[0].mean;
        p.death_rate = Some(0.4);
        let shifted = fk_moment(&p, 1.0, 1, &[1.0], 20, 6, 2).unwrap()[0].mean;
        assert!((shifted / base - 0.6f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_star_rate() {
        let s = lambda_star_probe(1, 1.0, 1.0, 1).unwrap();
        assert!((s.value - (5f64.sqrt() - 2.0)).abs() < 1e-8, "{}", s.value);
        assert_eq!(s.regime, CatalyticRegime::Strong);
    }

    #[test]
    fn three_dimensional_weak_catalysis() {
        let s = lambda_star_probe(3, 1.0, 2.0, 1).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.regime, CatalyticRegime::Weak);
        assert!((s.threshold - 6.0 / WATSON).abs() < 1e-6);
    }

    #[test]
    fn small_kappa_limit_in_three_dimensions() {
        let lim = lambda_limits(3, 1.0, 1.0, 1.0, 1, None).unwrap();
        let r3 = 6.0 / WATSON;
        assert!((lim.small_kappa_per_p - 1.0 / (r3 - 1.0)).abs() < 1e-6);
        assert!(lim.large_kappa_scaled.is_none());
        let with = lambda_limits(3, 1.0, 1.0, 1.0, 2, Some(0.3)).unwrap();
        assert_eq!(with.large_kappa_intermittent, Some(true));
    }

    #[test]
    fn large_kappa_limit_is_the_same_for_all_orders() {
        let a = lambda_limits(4, 1.0, 1.0, 1.0, 1, None).unwrap();
        let b = lambda_limits(4, 1.0, 1.0, 1.0, 3, None).unwrap();
        assert_eq!(a.large_kappa_scaled, b.large_kappa_scaled);
        assert_eq!(b.large_kappa_intermittent, Some(false));
        assert!(b.small_kappa_per_p > a.small_kappa_per_p);
    }

    #[test]
    fn strong_regime_is_rejected_by_limits() {
        assert!(matches!(lambda_limits(3, 1.0, 5.0, 1.0, 1, None), Err(PamError::Regime { .. })));
        assert!(matches!(lambda_limits(1, 1.0, 1.0, 1.0, 1, None), Err(PamError::Regime { .. })));
    }

    #[test]
    fn growth_fit_needs_large_moments_for_the_double_log() {
        let ts = [1.0, 2.0, 3.0, 4.0];
        let ms: Vec<f64> = ts.iter().map(|t: &f64| (0.5 * t).exp()).collect();
        let (l, s) = growth_fits(&ts, &ms);
        assert!((l.unwrap() - 0.5).abs() < 1e-12);
        assert!(s.is_none());
        let big: Vec<f64> = ts.iter().map(|t: &f64| (10.0 * (0.3 * t).exp()).exp()).collect();
        assert!((growth_fits(&ts, &big).1.unwrap() - 0.3).abs() < 1e-12);
    }
}
