//! The lattice variational problems behind the double-exponential class:
//! the measure-side problem `inf κS(μ) + ρI(μ)`, its potential-side dual
//! `-sup{λ(V) : Σ e^{V/ρ} ≤ 1}`, the one-dimensional logistic equation, and
//! the associated shape diagnostics.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{invalid, PamError, Result};
use crate::lattice::{restrict_domain, Domain, Field, LatticeBox};
use crate::linalg::{lanczos_top, solve_tridiagonal};
use crate::potentials::GridShape;
use crate::spectral::principal_eigen;

/// Probability measure on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureOnBox {
    probs: Field,
}

impl MeasureOnBox {
    pub fn new(probs: Field) -> Result<Self> {
        if probs.values().iter().any(|p| !(*p >= 0.0)) {
            return Err(invalid("mu", "probabilities must be nonnegative"));
        }
        let s: f64 = probs.values().iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(invalid("mu", format!("must sum to 1, got {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: Field) -> Result<Self> {
        let s: f64 = w.values().iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid("mu", "weights must have positive finite mass"));
        }
        Self::new(w.map(|x| x / s)?)
    }

    pub fn probs(&self) -> &Field {
        &self.probs
    }

    pub fn lattice(&self) -> &LatticeBox {
        self.probs.lattice()
    }
}

/// `S(μ) = Σ_{edges} (√μ(x) - √μ(y))²`, counting edges to the (massless) exterior.
pub fn donsker_varadhan(mu: &MeasureOnBox) -> f64 {
    let b = mu.lattice();
    let d = b.dim();
    let v: Vec<f64> = mu.probs.values().iter().map(|p| p.sqrt()).collect();
    let mut s = 0.0;
    for i in 0..b.len() {
        for (k, n) in b.neighbors(i)[..2 * d].iter().enumerate() {
            match n {
                // each interior edge once: from its lower endpoint along +e_i
                Some(j) if k % 2 == 1 => s += (v[i] - v[*j]).powi(2),
                Some(_) => {}
                None => s += v[i] * v[i],
            }
        }
    }
    s
}

/// `-Σ μ log μ` with `0 log 0 = 0`.
pub fn entropy(mu: &MeasureOnBox) -> f64 {
    -mu.probs.values().iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Optimizer output.
#[derive(Debug, Clone, Serialize)]
pub struct VarSolution {
    pub value: f64,
    /// Minimizing measure (measure side) or maximizing potential (potential side).
    #[serde(skip)]
    pub profile: Field,
    pub radius: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective values along the run (every accepted step).
    pub trace: Vec<f64>,
    /// Share of mass on the outermost layer of the box.
    pub boundary_mass: f64,
    /// `d · χ̂_1` from the tensorized one-dimensional problem, when `d > 1`.
    pub tensorized_value: Option<f64>,
    /// Distinct local optima reached from the start family.
    pub distinct_values: Vec<f64>,
}

pub const BOUNDARY_MASS_LIMIT: f64 = 1e-8;

fn outer_layer(b: &LatticeBox) -> Vec<usize> {
    let r = b.radius() as i64;
    (0..b.len()).filter(|&i| b.offsets(i).iter().any(|c| c.abs() == r)).collect()
}

fn boundary_share(f: &Field) -> f64 {
    let total: f64 = f.values().iter().sum();
    outer_layer(f.lattice()).iter().map(|&i| f.get(i)).sum::<f64>() / total
}

/// `χ_d = inf_μ [κS(μ) + ρI(μ)]` on the zero-Dirichlet box of radius `R`.
/// `rho` may be `f64::INFINITY`.
pub fn chi_d(kappa: f64, rho: f64, d: usize, radius: usize) -> Result<VarSolution> {
    check_params(kappa, rho, d)?;
    let b = LatticeBox::new(d, radius)?;
    let mut sol = if rho == f64::INFINITY {
        let delta = Field::delta(b.clone());
        VarSolution {
            value: 2.0 * d as f64 * kappa,
            boundary_mass: boundary_share(&delta),
            profile: delta,
            radius,
            iterations: 0,
            converged: true,
            trace: vec![],
            tensorized_value: None,
            distinct_values: vec![2.0 * d as f64 * kappa],
        }
    } else if rho == 0.0 {
        // κS alone: the ground state of the Dirichlet Laplacian, spreading with R
        let res = principal_eigen(&Field::constant(b.clone(), 0.0), kappa)?;
        let mu = res.eigenfunction.map(|w| w * w)?;
        VarSolution {
            value: -res.lambda,
            boundary_mass: boundary_share(&mu),
            profile: mu,
            radius,
            iterations: res.iterations,
            converged: true,
            trace: vec![],
            tensorized_value: None,
            distinct_values: vec![-res.lambda],
        }
    } else {
        measure_descent(kappa, rho, &b)?
    };
    if rho > 0.0 && sol.boundary_mass > BOUNDARY_MASS_LIMIT {
        return Err(PamError::BoxTooSmall(format!(
            "boundary mass {:.3e} exceeds {BOUNDARY_MASS_LIMIT:e} at R = {radius}",
            sol.boundary_mass
        )));
    }
    if d > 1 {
        sol.tensorized_value = Some(d as f64 * chi_d(kappa, rho, 1, radius)?.value);
    }
    Ok(sol)
}

fn check_params(kappa: f64, rho: f64, d: usize) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", format!("must be positive, got {kappa}")));
    }
    if !(rho >= 0.0) {
        return Err(invalid("rho", format!("must lie in [0, inf], got {rho}")));
    }
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    Ok(())
}

struct MeasureObjective<'a> {
    b: &'a LatticeBox,
    kappa: f64,
    rho: f64,
}

impl MeasureObjective<'_> {
    /// Objective at normalized log-weights `l`.
    fn value(&self, l: &[f64]) -> f64 {
        let d = self.b.dim();
        let v: Vec<f64> = l.iter().map(|x| (0.5 * x).exp()).collect();
        let mut s = 0.0;
        let mut ent = 0.0;
        for i in 0..l.len() {
            let nb: f64 = self.b.neighbors(i)[..2 * d].iter().flatten().map(|&j| v[j]).sum();
            s += v[i] * (2.0 * d as f64 * v[i] - nb);
            ent -= v[i] * v[i] * l[i];
        }
        self.kappa * s + self.rho * ent
    }

    /// `(∂F/∂μ_x, curvature scale)` per site.
    fn gradient(&self, l: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.b.dim();
        let mut g = vec![0.0; l.len()];
        let mut c = vec![0.0; l.len()];
        for i in 0..l.len() {
            // in log space so that underflowed tails keep a finite ratio
            let ratio: f64 = self.b.neighbors(i)[..2 * d].iter().flatten().map(|&j| (0.5 * (l[j] - l[i])).exp()).sum();
            g[i] = self.kappa * (2.0 * d as f64 - ratio) - self.rho * (l[i] + 1.0);
            c[i] = 0.5 * self.kappa * ratio + self.kappa + self.rho;
        }
        (g, c)
    }
}

fn log_normalize(l: &mut [f64]) {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = l.iter().map(|x| (x - m).exp()).sum();
    let shift = m + s.ln();
    l.iter_mut().for_each(|x| *x -= shift);
}

/// Scaled exponentiated-gradient descent on `μ = e^l` with backtracking.
fn measure_descent(kappa: f64, rho: f64, b: &LatticeBox) -> Result<VarSolution> {
    let obj = MeasureObjective { b, kappa, rho };
    let widths = [0.5, 1.0, 2.0];
    let mut best: Option<VarSolution> = None;
    let mut distinct: Vec<f64> = Vec::new();
    for &sigma in &widths {
        let mut l: Vec<f64> =
            (0..b.len()).map(|i| -b.offsets(i).iter().map(|&c| (c * c) as f64).sum::<f64>() / (2.0 * sigma * sigma)).collect();
        log_normalize(&mut l);
        let mut f = obj.value(&l);
        let mut trace = vec![f];
        let mut tau = 0.5;
        let mut converged = false;
        let mut its = 0;
        let mut quiet = 0;
        while its < 200_000 {
            its += 1;
            let (g, c) = obj.gradient(&l);
            let gbar: f64 = l.iter().zip(&g).map(|(li, gi)| li.exp() * gi).sum();
            let station: f64 = l.iter().zip(&g).map(|(li, gi)| li.exp() * (gi - gbar).powi(2)).sum();
            if station < 1e-26 {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial: Vec<f64> =
                    l.iter().zip(g.iter().zip(&c)).map(|(li, (gi, ci))| li - tau * (gi - gbar) / ci).collect();
                log_normalize(&mut trial);
                let ft = obj.value(&trial);
                if ft <= f + 1e-14 * f.abs() {
                    quiet = if f - ft <= 1e-15 * f.abs().max(1e-300) { quiet + 1 } else { 0 };
                    l = trial;
                    f = ft;
                    trace.push(f);
                    tau = (tau * 1.5).min(1.0);
                    accepted = true;
                    break;
                }
                tau *= 0.5;
            }
            if !accepted {
                // at a minimizer up to roundoff no step can decrease the objective
                let recent = &trace[trace.len().saturating_sub(5)..];
                let spread = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - recent.iter().copied().fold(f64::INFINITY, f64::min);
                if recent.len() == 5 && spread <= 1e-8 * f.abs().max(1.0) {
                    converged = true;
                    break;
                }
                return Err(PamError::Descent(format!(
                    "no descent step from objective {f} after {its} iterations; recent trace {:?}",
                    &trace[trace.len().saturating_sub(5)..]
                )));
            }
            if quiet >= 200 {
                converged = true;
                break;
            }
        }
        let mu = Field::new(b.clone(), l.iter().map(|x| x.exp()).collect())?;
        if !distinct.iter().any(|v| (v - f).abs() <= 1e-8 * (1.0 + f.abs())) {
            distinct.push(f);
        }
        let cand = VarSolution {
            value: f,
            boundary_mass: boundary_share(&mu),
            profile: mu,
            radius: b.radius(),
            iterations: its,
            converged,
            trace,
            tensorized_value: None,
            distinct_values: vec![],
        };
        if best.as_ref().is_none_or(|s| cand.value < s.value) {
            best = Some(cand);
        }
    }
    let mut best = best.expect("nonempty start family");
    distinct.sort_by(f64::total_cmp);
    best.distinct_values = distinct;
    Ok(best)
}

/// Positive solution of `κΔv + 2ρ v log v = 0` on `[-R, R] ∩ Z` (zero outside).
#[derive(Debug, Clone, Serialize)]
pub struct LogisticSolution {
    pub v: Vec<f64>,
    pub residual: f64,
    /// `ℓ²` norms of every distinct solution reached from the start family.
    pub norms: Vec<f64>,
}

/// Damped Newton in `ℓ = log v` from a family of Gaussian starts; returns the
/// solution of minimal `ℓ²` norm.
pub fn logistic_equation_1d(kappa: f64, rho: f64, radius: usize) -> Result<LogisticSolution> {
    if !(kappa > 0.0) || !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rho", "kappa and rho must be positive and finite"));
    }
    let n = 2 * radius + 1;
    let r = radius as f64;
    let mut found: Vec<(f64, Vec<f64>, f64)> = Vec::new();
    let mut last_err = None;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for amp in [1.0f64, 1.3, 2.0] {
        for floor in [0.1, 1.0, 3.0] {
            // decay mimicking the tail balance v(x+1) ≈ 2(ρ/κ)|log v(x)| v(x)
            let mut half = vec![amp.ln()];
            for x in 1..=radius {
                let prev: f64 = half[x - 1];
                half.push(prev - (2.0 + 2.0 * rho / kappa * prev.abs().max(floor)).ln());
            }
            starts.push((0..n).map(|i| half[(i as i64 - radius as i64).unsigned_abs() as usize]).collect());
        }
        for width in [1.0, 3.0] {
            starts.push(
                (0..n)
                    .map(|i| {
                        let x = i as f64 - r;
                        amp.ln() - x * x / (2.0 * width * width)
                    })
                    .collect(),
            );
        }
    }
    for start in starts {
        match logistic_newton(kappa, rho, start) {
            Ok(l) => {
                let v: Vec<f64> = l.iter().map(|x| x.exp()).collect();
                let res = logistic_residual(kappa, rho, &v);
                if res < 1e-8 {
                    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !found.iter().any(|(m, ..)| (m - nrm).abs() < 1e-8 * nrm) {
                        found.push((nrm, v, res));
                    }
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let norms = found.iter().map(|f| f.0).collect();
    match found.into_iter().next() {
        Some((_, v, residual)) => Ok(LogisticSolution { v, residual, norms }),
        None => Err(last_err.unwrap_or(PamError::Descent("no start converged".into()))),
    }
}

/// `‖κΔv + 2ρ v log v‖_∞` with zero exterior.
pub fn logistic_residual(kappa: f64, rho: f64, v: &[f64]) -> f64 {
    let n = v.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = if i + 1 < n { v[i + 1] } else { 0.0 };
            let lv = if v[i] > 0.0 { v[i] * v[i].ln() } else { 0.0 };
            (kappa * (left + right - 2.0 * v[i]) + 2.0 * rho * lv).abs()
        })
        .fold(0.0, f64::max)
}

fn logistic_newton(kappa: f64, rho: f64, mut l: Vec<f64>) -> Result<Vec<f64>> {
    let n = l.len();
    let system = |l: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut g = vec![0.0; n];
        let mut lo = vec![0.0; n];
        let mut di = vec![0.0; n];
        let mut up = vec![0.0; n];
        for i in 0..n {
            let el = if i > 0 { (l[i - 1] - l[i]).exp() } else { 0.0 };
            let er = if i + 1 < n { (l[i + 1] - l[i]).exp() } else { 0.0 };
            g[i] = kappa * (el + er - 2.0) + 2.0 * rho * l[i];
            lo[i] = kappa * el;
            up[i] = kappa * er;
            di[i] = -kappa * (el + er) + 2.0 * rho;
        }
        (g, lo, di, up)
    };
    let merit = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>();
    let mut trace = Vec::new();
    for _ in 0..500 {
        let (g, lo, di, up) = system(&l);
        let m0 = merit(&g);
        trace.push(m0.sqrt());
        if !m0.is_finite() {
            return Err(PamError::Descent("non-finite logistic residual at start".into()));
        }
        if m0.sqrt() < 1e-13 {
            return Ok(l);
        }
        let step = solve_tridiagonal(&lo, &di, &up, &g).ok_or_else(|| PamError::Descent("singular Newton system".into()))?;
        let mut damping = 1.0;
        loop {
            let trial: Vec<f64> = l.iter().zip(&step).map(|(a, s)| a - damping * s).collect();
            let (gt, ..) = system(&trial);
            let mt = merit(&gt);
            if mt.is_finite() && mt < (1.0 - 1e-4 * damping) * m0 {
                l = trial;
                break;
            }
            damping *= 0.5;
            if damping < 1e-10 {
                // stalled at roundoff
                if m0.sqrt() < 1e-9 {
                    return Ok(l);
                }
                return Err(PamError::NoConvergence {
                    what: "logistic Newton",
                    iterations: trace.len(),
                    residual: m0.sqrt(),
                    history: trace,
                });
            }
        }
    }
    let (g, ..) = system(&l);
    Err(PamError::NoConvergence { what: "logistic Newton", iterations: 500, residual: merit(&g).sqrt(), history: trace })
}

/// `I(V) = Σ e^{V/ρ}`, or `|{V > -∞}|` for `ρ = ∞`.
pub fn rate_i(v: &Field, rho: f64) -> Result<f64> {
    if v.values().iter().any(|x| *x > 0.0) {
        return Err(invalid("V", "profile must be nonpositive"));
    }
    if !(rho > 0.0) {
        return Err(invalid("rho", "must be positive"));
    }
    Ok(if rho == f64::INFINITY {
        v.values().iter().filter(|x| **x > f64::NEG_INFINITY).count() as f64
    } else {
        v.values().iter().map(|x| (x / rho).exp()).sum()
    })
}

/// Largest eigenvalue on the whole box for a finite potential, warm-started,
/// with tail entries recomputed from their own rows so that tiny values keep
/// relative accuracy.
fn refined_top_pair(domain: &Domain, kappa: f64, start: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = domain.len();
    let (lambda, mut w) = if n <= 600 {
        let m = crate::spectral::dense_matrix(domain, kappa);
        let eig = nalgebra::SymmetricEigen::new(m);
        let top = (0..n).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).expect("nonempty");
        (eig.eigenvalues[top], eig.eigenvectors.column(top).iter().copied().collect::<Vec<_>>())
    } else {
        let mut op = |x: &[f64], y: &mut [f64]| domain.apply_hamiltonian(kappa, x, y);
        let pair = lanczos_top(&mut op, start, 1e-12, 200_000)?;
        (pair.value, pair.vector)
    };
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }
    let two_d = 2.0 * domain.lattice().dim() as f64;
    let v = domain.values();
    // tail sites ordered from the center outwards
    let lat = domain.lattice();
    let mut tail: Vec<usize> = (0..n).filter(|&i| v[i] < lambda - kappa).collect();
    tail.sort_by_key(|&i| lat.offsets(domain.sites()[i]).iter().map(|c| c.abs()).sum::<i64>());
    for _ in 0..200 {
        let mut change = 0.0f64;
        for &i in &tail {
            let nb: f64 = domain.neighbors(i).iter().map(|&j| w[j]).sum();
            let new = kappa * nb / (lambda + two_d * kappa - v[i]);
            if new > 0.0 {
                change = change.max(((new - w[i]) / new).abs());
            }
            w[i] = new;
        }
        if change < 1e-14 {
            break;
        }
    }
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= nw);
    Ok((lambda, w))
}

/// `z` with `Σ min(1, w²/z) = 1`; `V = min(0, ρ log(w²/z))` is then feasible.
fn kkt_level(w2: &[f64]) -> f64 {
    let total = |z: f64| w2.iter().map(|x| (x / z).min(1.0)).sum::<f64>();
    if w2.iter().filter(|x| **x > 0.0).count() <= 1 {
        return w2.iter().copied().fold(0.0, f64::max);
    }
    let (mut lo, mut hi) = (1e-300f64, w2.iter().sum::<f64>().max(1e-300));
    // total is nonincreasing in z; total(hi) ≤ 1
    for _ in 0..400 {
        let mid = (lo * hi).sqrt();
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    hi
}

fn kkt_update(w: &[f64], rho: f64) -> Vec<f64> {
    let w2: Vec<f64> = w.iter().map(|x| x * x).collect();
    let z = kkt_level(&w2);
    w2.iter().map(|x| (rho * (x / z).ln()).min(0.0)).collect()
}

/// `χ̃_d = -sup{λ(V) : V ≤ 0, I(V) ≤ 1}` on the zero-Dirichlet box of radius `R`.
/// For `ρ = ∞` the supports are enumerated (see [`chi_tilde_infinite`]).
pub fn chi_tilde_d(kappa: f64, rho: f64, d: usize, radius: usize) -> Result<VarSolution> {
    check_params(kappa, rho, d)?;
    if rho == 0.0 {
        return Err(invalid("rho", "must lie in (0, inf]"));
    }
    if rho == f64::INFINITY {
        return chi_tilde_infinite(kappa, d, 3, radius.min(3));
    }
    let b = LatticeBox::new(d, radius)?;
    let sigma = (kappa / rho).sqrt().clamp(0.5, 2.0);
    let mut mu: Vec<f64> = (0..b.len())
        .map(|i| (-b.offsets(i).iter().map(|&c| (c * c) as f64).sum::<f64>() / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= s);
    let mut v: Vec<f64> = mu.iter().map(|m| rho * m.ln()).collect();
    let mut w: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
    let mut lambda = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut its = 0;
    let mut damping = 1.0;
    let mut stable = 0;
    while its < 5_000 {
        its += 1;
        let field = Field::new(b.clone(), v.clone())?;
        let domain = restrict_domain(&field);
        let (lam, wn) = refined_top_pair(&domain, kappa, &w)?;
        if lam < lambda - 1e-12 * (1.0 + lambda.abs()) {
            // the ascent slipped; retreat towards the last iterate
            damping *= 0.5;
            if damping < 1e-6 {
                return Err(PamError::NoConvergence {
                    what: "dual ascent",
                    iterations: its,
                    residual: lambda - lam,
                    history: trace,
                });
            }
        }
        // compared with the previous iterate, not the running maximum
        let step = trace.last().map_or(f64::INFINITY, |p: &f64| (lam - p).abs());
        trace.push(lam);
        lambda = lambda.max(lam);
        w = wn;
        let target = kkt_update(&w, rho);
        let next: Vec<f64> = if damping < 1.0 {
            v.iter()
                .zip(&target)
                .map(|(a, t)| rho * ((1.0 - damping) * (a / rho).exp() + damping * (t / rho).exp()).ln())
                .collect()
        } else {
            target
        };
        let feas: f64 = next.iter().map(|x| (x / rho).exp()).sum();
        if (feas - 1.0).abs() > 1e-8 {
            return Err(PamError::Descent(format!("KKT projection infeasible: I(V) = {feas}")));
        }
        // far tails carry no mass and jitter at roundoff, so only sites with
        // non-negligible mass enter the change
        let dv = v
            .iter()
            .zip(&next)
            .filter(|(_, b)| (*b / rho).exp() > 1e-30)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max);
        v = next;
        stable = if step < 1e-13 * (1.0 + lambda.abs()) { stable + 1 } else { 0 };
        if stable >= 5 && dv < 1e-8 {
            converged = true;
            break;
        }
    }
    let vfield = Field::new(b.clone(), v)?;
    let w2 = Field::new(b.clone(), w.iter().map(|x| x * x).collect())?;
    Ok(VarSolution {
        value: -lambda,
        boundary_mass: boundary_share(&w2),
        profile: vfield,
        radius,
        iterations: its,
        converged,
        trace,
        tensorized_value: if d > 1 { Some(d as f64 * chi_tilde_d(kappa, rho, 1, radius)?.value) } else { None },
        distinct_values: vec![-lambda],
    })
}

/// Connected sets containing the center with at most `k_max` sites.
pub fn connected_supports(b: &LatticeBox, k_max: usize) -> Vec<Vec<usize>> {
    let d = b.dim();
    let mut all: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut layer: BTreeSet<Vec<usize>> = BTreeSet::new();
    layer.insert(vec![b.center_index()]);
    for _ in 1..=k_max {
        let mut next = BTreeSet::new();
        for set in &layer {
            all.insert(set.clone());
            for &s in set {
                for n in b.neighbors(s)[..2 * d].iter().flatten() {
                    if !set.contains(n) {
                        let mut grown = set.clone();
                        grown.push(*n);
                        grown.sort_unstable();
                        next.insert(grown);
                    }
                }
            }
        }
        layer = next;
    }
    all.into_iter().collect()
}

/// `ρ = ∞`: `V ∈ {0, -∞}` with `I(V) = |support| ≤ 1`. Every connected support
/// of size up to `k_max` around the center is examined; only single sites are
/// feasible.
pub fn chi_tilde_infinite(kappa: f64, d: usize, k_max: usize, radius: usize) -> Result<VarSolution> {
    let b = LatticeBox::new(d, radius)?;
    let mut best: Option<(f64, Field)> = None;
    let mut trace = Vec::new();
    let supports = connected_supports(&b, k_max);
    for s in &supports {
        let mut vals = vec![f64::NEG_INFINITY; b.len()];
        s.iter().for_each(|&i| vals[i] = 0.0);
        let v = Field::new(b.clone(), vals)?;
        let lam = principal_eigen(&v, kappa)?.lambda;
        trace.push(lam);
        if rate_i(&v, f64::INFINITY)? <= 1.0 && best.as_ref().is_none_or(|(l, _)| lam > *l) {
            best = Some((lam, v));
        }
    }
    let (lam, v) = best.ok_or(PamError::EmptyDomain)?;
    Ok(VarSolution {
        value: -lam,
        profile: v,
        radius,
        iterations: supports.len(),
        converged: true,
        trace,
        boundary_mass: 0.0,
        tensorized_value: None,
        distinct_values: vec![-lam],
    })
}

/// Maximizer centered at its peak, eigenfunction with `w(0) = 1`, and the
/// radii `r(ε, ρ)`.
#[derive(Debug, Clone, Serialize)]
pub struct OptimalShapes {
    #[serde(skip)]
    pub v_star: Field,
    #[serde(skip)]
    pub w_star: Field,
    pub lambda: f64,
    pub chi_tilde: f64,
    /// `(ε, r(ε, ρ))`.
    pub radii: Vec<(f64, usize)>,
    /// Number of sites attaining the maximum of `V*`.
    pub multiplicity: usize,
}

pub const EPSILON_GRID: [f64; 7] = [0.5, 0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4];

pub fn optimal_shapes(kappa: f64, rho: f64, d: usize, radius: usize) -> Result<OptimalShapes> {
    let sol = chi_tilde_d(kappa, rho, d, radius)?;
    shapes_from(&sol.profile, kappa)
}

/// Shape diagnostics of a maximizing potential.
pub fn shapes_from(v: &Field, kappa: f64) -> Result<OptimalShapes> {
    let v_star = center_shape(v)?;
    let top = v_star.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let multiplicity = v_star.values().iter().filter(|x| (*x - top).abs() <= 1e-9 * (1.0 + top.abs())).count();
    let eig = principal_eigen(&v_star, kappa)?;
    let c = v_star.lattice().center_index();
    let w0 = eig.eigenfunction.get(c);
    let w_star = eig.eigenfunction.map(|x| x / w0)?;
    let radii = EPSILON_GRID.iter().map(|&e| (e, eigen_mass_radius(&w_star, e))).collect();
    Ok(OptimalShapes { v_star, w_star, lambda: eig.lambda, chi_tilde: -eig.lambda, radii, multiplicity })
}

/// Smallest `r` with `‖w‖₂² Σ_{x ∉ B_r} w(x) < ε`.
pub fn eigen_mass_radius(w: &Field, eps: f64) -> usize {
    let b = w.lattice();
    let n2: f64 = w.values().iter().map(|x| x * x).sum();
    let mut by_radius = vec![0.0; b.radius() + 2];
    for i in 0..b.len() {
        let r = b.offsets(i).iter().map(|c| c.unsigned_abs() as usize).max().unwrap_or(0);
        by_radius[r] += w.get(i);
    }
    let mut outside: f64 = by_radius.iter().sum();
    for (r, mass) in by_radius.iter().enumerate() {
        outside -= mass;
        if n2 * outside.max(0.0) < eps {
            return r;
        }
    }
    b.radius()
}

/// Translates a profile so that its (first) maximum sits at the box center;
/// sites shifted in from outside become `-∞`.
pub fn center_shape(v: &Field) -> Result<Field> {
    let b = v.lattice();
    let top = v.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(PamError::EmptyDomain);
    }
    let arg = (0..v.len()).find(|&i| v.get(i) == top).expect("maximum exists");
    let shift = b.offsets(arg);
    Field::from_fn(b.clone(), |x| {
        let src: Vec<i64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
        v.at_offset(&src).unwrap_or(f64::NEG_INFINITY)
    })
}

/// `∫_{Q_R} |φ|^{-γ/(1-γ)}` by the trapezoid rule on the grid of a shape
/// (measure of `{φ ≠ 0}` for `γ = 0`); `+∞` when `φ` vanishes at a grid point
/// and `γ > 0`.
pub fn rate_ir_bounded(phi: &GridShape, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", "must lie in [0, 1)"));
    }
    if phi.values.iter().any(|x| *x > 0.0) {
        return Err(invalid("phi", "shape must be nonpositive"));
    }
    let beta = gamma / (1.0 - gamma);
    let m = phi.points_per_axis;
    let mut total = 0.0;
    for (i, &x) in phi.values.iter().enumerate() {
        let mut weight = phi.step.powi(phi.dim as i32);
        let mut rem = i;
        for _ in 0..phi.dim {
            let k = rem % m;
            rem /= m;
            if k == 0 || k + 1 == m {
                weight *= 0.5;
            }
        }
        let f = if x == 0.0 {
            if gamma == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else if x == f64::NEG_INFINITY {
            0.0
        } else if gamma == 0.0 {
            1.0
        } else {
            (-x).powf(-beta)
        };
        total += weight * f;
    }
    Ok(total)
}

/// Refinement sequence of [`rate_ir_bounded`] for a function on `Q_R`.
#[derive(Debug, Clone, Serialize)]
pub struct IrEstimate {
    pub value: f64,
    pub sequence: Vec<f64>,
    pub divergent: bool,
}

pub fn rate_ir_refined(
    phi: &dyn Fn(&[f64]) -> f64,
    d: usize,
    window: f64,
    gamma: f64,
    step0: f64,
    levels: usize,
) -> Result<IrEstimate> {
    let mut seq = Vec::with_capacity(levels);
    for level in 0..levels {
        let step = step0 / f64::from(1u32 << level);
        let k = (window / step).round() as i64;
        let m = (2 * k + 1) as usize;
        let values = (0..m.pow(d as u32))
            .map(|i| {
                let mut rem = i;
                let mut x = vec![0.0; d];
                for axis in (0..d).rev() {
                    x[axis] = ((rem % m) as i64 - k) as f64 * step;
                    rem /= m;
                }
                phi(&x)
            })
            .collect();
        seq.push(rate_ir_bounded(&GridShape { dim: d, step, points_per_axis: m, values }, gamma)?);
    }
    let n = seq.len();
    let last = seq[n - 1];
    let divergent = !last.is_finite()
        || (n >= 3 && {
            let d1 = (seq[n - 1] - seq[n - 2]).abs();
            let d0 = (seq[n - 2] - seq[n - 3]).abs();
            d1 > 0.9 * d0 && d1 > 1e-6 * last.abs()
        });
    Ok(IrEstimate { value: if divergent { f64::INFINITY } else { last }, sequence: seq, divergent })
}
