//! Principal eigenpairs of `κΔ + V`, the lattice Green function at the origin
//! and the top of the spectrum `μ(r)` of `Δ + rδ_0`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PamError, Result};
use crate::lattice::{restrict_domain, Domain, Field};
use crate::linalg::{dot, lanczos_top, norm};
use crate::special::scaled_bessel_i0;

/// Top eigenpair of `κΔ + V` with zero condition off `{V > -∞}`.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub lambda: f64,
    /// Nonnegative, unit `ℓ²` norm; identically zero on an empty domain.
    pub eigenfunction: Field,
    pub residual: f64,
    pub iterations: usize,
    /// Number of connected components sharing the top eigenvalue.
    pub multiplicity: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_matvecs: usize,
    /// Components up to this size are diagonalized densely.
    pub dense_limit: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_matvecs: 100_000, dense_limit: 400 }
    }
}

pub fn principal_eigen(v: &Field, kappa: f64) -> Result<SpectralResult> {
    principal_eigen_with(v, kappa, EigenOptions::default())
}

pub fn principal_eigen_with(v: &Field, kappa: f64, opts: EigenOptions) -> Result<SpectralResult> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid("kappa", format!("must be positive, got {kappa}")));
    }
    let domain = restrict_domain(v);
    if domain.is_empty() {
        return Ok(SpectralResult {
            lambda: f64::NEG_INFINITY,
            eigenfunction: Field::constant(v.lattice().clone(), 0.0),
            residual: 0.0,
            iterations: 0,
            multiplicity: 0,
        });
    }
    let mut best: Option<(f64, Vec<f64>, f64, Vec<usize>)> = None;
    let mut iterations = 0;
    let mut pairs = Vec::new();
    for comp in domain.components() {
        let sub = domain.subdomain(&comp);
        let (lambda, vec, res, its) = top_pair(&sub, kappa, opts)?;
        iterations += its;
        pairs.push(lambda);
        let better = match &best {
            None => true,
            Some((l, ..)) => lambda > *l + opts.tol * (l.abs() + 1.0),
        };
        if better {
            best = Some((lambda, vec, res, comp));
        }
    }
    let (lambda, vec, residual, comp) = best.expect("at least one component");
    let multiplicity = pairs.iter().filter(|l| (*l - lambda).abs() <= 10.0 * opts.tol * (lambda.abs() + 1.0)).count();
    let mut full = vec![0.0; domain.len()];
    for (k, &i) in comp.iter().enumerate() {
        full[i] = vec[k];
    }
    Ok(SpectralResult { lambda, eigenfunction: domain.scatter(&full, 0.0), residual, iterations, multiplicity })
}

/// Top eigenpair of `κΔ + V` on a connected domain: `(λ, w ≥ 0, residual, work)`.
pub(crate) fn top_pair(domain: &Domain, kappa: f64, opts: EigenOptions) -> Result<(f64, Vec<f64>, f64, usize)> {
    let n = domain.len();
    let mut op = |x: &[f64], y: &mut [f64]| domain.apply_hamiltonian(kappa, x, y);
    let (lambda, mut w, its) = if n <= opts.dense_limit {
        let m = dense_matrix(domain, kappa);
        let eig = SymmetricEigen::new(m);
        let top = (0..n).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).expect("nonempty");
        (eig.eigenvalues[top], eig.eigenvectors.column(top).iter().copied().collect::<Vec<_>>(), 1)
    } else {
        let vmax = domain.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start: Vec<f64> = domain.values().iter().map(|v| 1.0 + (v - vmax).exp()).collect();
        let pair = lanczos_top(&mut op, &start, opts.tol, opts.max_matvecs)?;
        (pair.value, pair.vector, pair.matvecs)
    };
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }
    // roundoff can leave tiny negative entries where the Perron vector is tiny
    w.iter_mut().for_each(|x| *x = x.max(0.0));
    let nw = norm(&w);
    w.iter_mut().for_each(|x| *x /= nw);
    let mut aw = vec![0.0; n];
    op(&w, &mut aw);
    let res = aw.iter().zip(&w).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt();
    Ok((lambda, w, res, its))
}

/// Dense matrix of `κΔ + V` on a domain.
pub fn dense_matrix(domain: &Domain, kappa: f64) -> DMatrix<f64> {
    let n = domain.len();
    let two_d = 2.0 * domain.lattice().dim() as f64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = domain.values()[i] - two_d * kappa;
        for &j in domain.neighbors(i) {
            m[(i, j)] += kappa;
        }
    }
    m
}

/// `⟨(κΔ + V) f, f⟩` for a unit vector `f` supported in `{V > -∞}`.
pub fn rayleigh_quotient(v: &Field, kappa: f64, f: &Field) -> Result<f64> {
    if v.lattice() != f.lattice() {
        return Err(PamError::SizeMismatch { expected: v.len(), found: f.len() });
    }
    let nf = f.dot(f).sqrt();
    if (nf - 1.0).abs() > 1e-8 {
        return Err(invalid("f", format!("must have unit norm, got {nf}")));
    }
    if (0..f.len()).any(|i| f.get(i) != 0.0 && v.get(i) == f64::NEG_INFINITY) {
        return Err(invalid("f", "support must avoid sites where V = -inf"));
    }
    let domain = restrict_domain(v);
    let x = domain.gather(f);
    let mut y = vec![0.0; x.len()];
    domain.apply_hamiltonian(kappa, &x, &mut y);
    Ok(dot(&x, &y))
}

/// `G_d(0)` together with `r_d = 1/G_d(0)`; both infinite/zero for `d ≤ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenOrigin {
    pub d: usize,
    pub value: f64,
    pub threshold: f64,
    /// `false` when the walk is recurrent and the value is `+∞` by convention.
    pub finite: bool,
}

/// Green function of `-Δ` at the origin,
/// `G_d(0) = ∫_0^∞ (e^{-2s} I_0(2s))^d ds`.
pub fn green_function_origin(d: usize) -> Result<GreenOrigin> {
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if d <= 2 {
        return Ok(GreenOrigin { d, value: f64::INFINITY, threshold: 0.0, finite: false });
    }
    let value = resolvent_origin(0.0, d);
    Ok(GreenOrigin { d, value, threshold: 1.0 / value, finite: true })
}

/// Return kernel of the continuous-time walk with rate `2`: `e^{sΔ}(0,0)` in `d = 1`.
fn heat_kernel_1d(s: f64) -> f64 {
    scaled_bessel_i0(2.0 * s)
}

/// Default quadrature step in `log s`.
pub const RESOLVENT_STEP: f64 = 0.01;

/// `R_μ(0,0) = ∫_0^∞ e^{-μs} (e^{sΔ}(0,0)) ds` for `μ ≥ 0` (`μ > 0` if `d ≤ 2`).
pub fn resolvent_origin(mu: f64, d: usize) -> f64 {
    resolvent_origin_with_step(mu, d, RESOLVENT_STEP)
}

/// [`resolvent_origin`] with an explicit trapezoid step in `log s`.
pub fn resolvent_origin_with_step(mu: f64, d: usize, step: f64) -> f64 {
    // trapezoid in y = log s; the integrand is analytic and decays doubly
    // exponentially at both ends once the tail beyond s_end is handled
    let y_lo = -30.0f64;
    let s_asym = 1e6;
    let s_end = if mu > 0.0 { (60.0 / mu).max(s_asym) } else { s_asym };
    let y_hi = s_end.ln();
    let steps = ((y_hi - y_lo) / step).ceil() as usize;
    let h = (y_hi - y_lo) / steps as f64;
    let df = d as f64;
    let integrand = |y: f64| {
        let s = y.exp();
        let g =
            if s < s_asym { heat_kernel_1d(s) } else { (4.0 * std::f64::consts::PI * s).powf(-0.5) * (1.0 + 1.0 / (16.0 * s)) };
        s * (-mu * s).exp() * g.powi(d as i32)
    };
    let mut total = 0.5 * (integrand(y_lo) + integrand(y_hi));
    for k in 1..steps {
        total += integrand(y_lo + k as f64 * h);
    }
    total *= h;
    // below y_lo the integrand is e^y to machine precision
    total += y_lo.exp();
    if mu == 0.0 {
        let a = df / 2.0;
        let c = (4.0 * std::f64::consts::PI).powf(-a);
        total += c * (s_end.powf(1.0 - a) / (a - 1.0) + df / 16.0 * s_end.powf(-a) / a);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMethod {
    Resolvent,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankOneResult {
    pub r: f64,
    pub mu: f64,
    pub d: usize,
    pub method: MuMethod,
    /// Resolvent: `|r R_μ(0,0) - 1|`; box: last Richardson increment.
    pub residual: f64,
}

/// Top of the spectrum of `Δ + rδ_0` on `Z^d`.
pub fn mu_of_r(r: f64, d: usize, method: MuMethod) -> Result<RankOneResult> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid("r", format!("must be finite and nonnegative, got {r}")));
    }
    if d == 0 {
        return Err(invalid("d", "dimension must be at least 1"));
    }
    if r == 0.0 {
        return Ok(RankOneResult { r, mu: 0.0, d, method, residual: 0.0 });
    }
    match method {
        MuMethod::Resolvent => mu_resolvent(r, d),
        MuMethod::Box => mu_box(r, d),
    }
}

/// Both methods; errors when they differ by more than `tol (1 + μ)`.
pub fn mu_cross_checked(r: f64, d: usize, tol: f64) -> Result<RankOneResult> {
    let a = mu_of_r(r, d, MuMethod::Resolvent)?;
    let b = mu_of_r(r, d, MuMethod::Box)?;
    if (a.mu - b.mu).abs() > tol * (1.0 + a.mu.abs()) {
        return Err(PamError::MethodDisagreement { resolvent: a.mu, boxed: b.mu });
    }
    Ok(a)
}

fn mu_resolvent(r: f64, d: usize) -> Result<RankOneResult> {
    if d >= 3 {
        let g = green_function_origin(d)?;
        if r <= g.threshold {
            return Ok(RankOneResult { r, mu: 0.0, d, method: MuMethod::Resolvent, residual: 0.0 });
        }
    }
    // r R_μ - 1 decreases in μ; 1/(μ+2d) ≤ R_μ ≤ 1/μ brackets the root
    let f = |mu: f64| r * resolvent_origin(mu, d) - 1.0;
    let mut lo = (r - 2.0 * d as f64).max(0.0);
    let mut hi = r;
    if lo == 0.0 {
        // R_0 may be infinite; walk down geometrically to a positive point
        let mut probe = hi;
        loop {
            probe *= 0.25;
            if probe < 1e-14 * r {
                lo = 0.0;
                break;
            }
            if f(probe) > 0.0 {
                lo = probe;
                break;
            }
            hi = probe;
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi.max(1e-300) + 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let residual = if mu > 0.0 { f(mu).abs() } else { 0.0 };
    Ok(RankOneResult { r, mu, d, method: MuMethod::Resolvent, residual })
}

/// Exact top eigenvalue of `Δ + rδ_0` on the zero-Dirichlet box `[-R, R]^d`,
/// from the secular equation in the sine eigenbasis of the box Laplacian.
pub fn box_rank_one_top(r: f64, d: usize, radius: usize) -> f64 {
    let n = 2 * radius + 1;
    let np1 = (n + 1) as f64;
    // only odd modes are nonzero at the center
    let modes: Vec<(f64, f64)> = (1..=n)
        .step_by(2)
        .map(|k| {
            let th = k as f64 * std::f64::consts::PI / np1;
            let amp = 2.0 / np1 * (th * (radius + 1) as f64).sin().powi(2);
            (-2.0 * (1.0 - th.cos()), amp)
        })
        .collect();
    let top = modes[0].0 * d as f64;
    let secular = |mu: f64| {
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            let (mut lam, mut amp) = (0.0, 1.0);
            for &i in &idx {
                lam += modes[i].0;
                amp *= modes[i].1;
            }
            acc += amp / (mu - lam);
            let mut axis = 0;
            loop {
                if axis == d {
                    return r * acc - 1.0;
                }
                idx[axis] += 1;
                if idx[axis] < modes.len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    };
    // secular decreases from +∞ at the top box eigenvalue; root lies below top + r
    let mut lo = top;
    let mut hi = top + r;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn mu_box(r: f64, d: usize) -> Result<RankOneResult> {
    let max_radius = match d {
        1 => 1 << 14,
        2 => 512,
        3 => 64,
        _ => 16,
    };
    let mut radius = 8;
    let mut prev_mu = box_rank_one_top(r, d, radius);
    let mut prev_extrap = f64::NAN;
    loop {
        let next_radius = 2 * radius;
        let mu = box_rank_one_top(r, d, next_radius);
        let extrap = mu + (mu - prev_mu) / 3.0;
        let delta = (extrap - prev_extrap).abs();
        if delta <= 1e-10 * (1.0 + extrap.abs()) || next_radius >= max_radius {
            let value = extrap.max(0.0);
            return Ok(RankOneResult { r, mu: value, d, method: MuMethod::Box, residual: delta });
        }
        radius = next_radius;
        prev_mu = mu;
        prev_extrap = extrap;
    }
}
