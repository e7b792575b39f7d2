//! Scaling limits of the cumulant generating function, the four universality
//! classes, and the annealed and quenched length scales.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PamError, Result};
use crate::linalg::{conjugate_gradient, solve_tridiagonal};
use crate::potentials::PotentialSpec;

/// Universality class of the scaling profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UniversalityClass {
    /// Mass on single lattice sites (`η_* = ∞`).
    SingleSites = 1,
    /// Islands of fixed size (`0 < η_* < ∞`).
    FixedIslands = 2,
    /// Islands of slowly growing size (`γ = 1`, `η_* = 0`).
    SlowIslands = 3,
    /// Islands of size `t^{ν}` (`γ < 1`).
    RapidIslands = 4,
}

impl UniversalityClass {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// `H(ty) - yH(t) ≈ η(t) Ĥ(y)` with `η` regularly varying of index `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingProfile {
    pub gamma: f64,
    pub rho: f64,
    pub eta_star: f64,
    pub class: UniversalityClass,
}

impl ScalingProfile {
    pub fn new(gamma: f64, rho: f64, eta_star: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(invalid("rho", format!("must be positive, got {rho}")));
        }
        let class = classify(gamma, eta_star)?;
        Ok(Self { gamma, rho, eta_star, class })
    }

    pub fn hhat(&self, y: f64) -> f64 {
        hhat(y, self.gamma, self.rho)
    }
}

/// `ρ (y - y^γ)/(1 - γ)`, or `ρ y log y` at `γ = 1`.
pub fn hhat(y: f64, gamma: f64, rho: f64) -> f64 {
    if gamma == 1.0 {
        rho * y * y.ln()
    } else {
        rho * (y - y.powf(gamma)) / (1.0 - gamma)
    }
}

pub fn classify(gamma: f64, eta_star: f64) -> Result<UniversalityClass> {
    let bad = || PamError::InconsistentScaling { gamma, eta_star };
    if gamma.is_nan() || eta_star.is_nan() || gamma < 0.0 || eta_star < 0.0 {
        return Err(bad());
    }
    if eta_star == f64::INFINITY {
        return if gamma >= 1.0 { Ok(UniversalityClass::SingleSites) } else { Err(bad()) };
    }
    if eta_star > 0.0 {
        return if gamma == 1.0 { Ok(UniversalityClass::FixedIslands) } else { Err(bad()) };
    }
    if gamma == 1.0 {
        Ok(UniversalityClass::SlowIslands)
    } else if gamma < 1.0 {
        Ok(UniversalityClass::RapidIslands)
    } else {
        Err(bad())
    }
}

/// Closed-form scale function `η(t) = c · t^γ · log(e + t)^β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaSpec {
    pub coefficient: f64,
    pub gamma: f64,
    #[serde(default)]
    pub log_power: f64,
}

impl EtaSpec {
    pub fn power(coefficient: f64, gamma: f64) -> Self {
        Self { coefficient, gamma, log_power: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coefficient * t.powf(self.gamma) * (std::f64::consts::E + t).ln().powf(self.log_power)
    }

    /// `lim η(t)/t`.
    pub fn eta_star(&self) -> f64 {
        if self.gamma < 1.0 {
            0.0
        } else if self.gamma > 1.0 || self.log_power > 0.0 {
            f64::INFINITY
        } else if self.log_power < 0.0 {
            0.0
        } else {
            self.coefficient
        }
    }
}

/// Scale function and profile attached to a potential family.
pub fn profile_for(spec: &PotentialSpec) -> Result<(EtaSpec, ScalingProfile)> {
    spec.validate()?;
    match spec {
        PotentialSpec::DoubleExponential(p) => Ok((EtaSpec::power(1.0, 1.0), ScalingProfile::new(1.0, p.rho, 1.0)?)),
        PotentialSpec::BernoulliTrap(p) if p.p_trap < 1.0 => {
            Ok((EtaSpec::power(1.0, 0.0), ScalingProfile::new(0.0, -(1.0 - p.p_trap).ln(), 0.0)?))
        }
        PotentialSpec::BoundedTail(p) => {
            // Laplace asymptotics of ⟨e^{-tT}⟩: H(t) ≈ -D^{1-γ} β^{-γ} t^γ / (1-γ)
            let beta = p.gamma / (1.0 - p.gamma);
            let rho = p.d.powf(1.0 - p.gamma) * if p.gamma > 0.0 { beta.powf(-p.gamma) } else { 1.0 };
            Ok((EtaSpec::power(1.0, p.gamma), ScalingProfile::new(p.gamma, rho, 0.0)?))
        }
        PotentialSpec::Tabulated(t) => {
            let top =
                t.values.iter().zip(&t.probs).filter(|(_, p)| **p > 0.0).max_by(|a, b| a.0.total_cmp(b.0)).expect("validated");
            if *top.1 >= 1.0 {
                return Err(invalid("potential", "a point mass has no scaling profile"));
            }
            Ok((EtaSpec::power(1.0, 0.0), ScalingProfile::new(0.0, -top.1.ln(), 0.0)?))
        }
        PotentialSpec::BernoulliTrap(_) => Err(invalid("p_trap", "the all-trap law has no scaling profile")),
    }
}

/// Root found by bisection with geometric bracketing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleRoot {
    pub value: f64,
    /// `t α^{-d}` for the annealed scale; the argument `d log t` for the quenched one.
    pub aux: f64,
    pub residual: f64,
}

/// Bisection in `log x` for an increasing `g` with a sign change.
fn increasing_root(what: &'static str, g: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    let (min, max) = (1e-12, 1e12);
    while g(lo) > 0.0 {
        lo /= 2.0;
        if lo < min {
            return Err(PamError::NoBracket { what, lo: min, hi });
        }
    }
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > max {
            return Err(PamError::NoBracket { what, lo, hi: max });
        }
    }
    for _ in 0..200 {
        if hi / lo - 1.0 <= 1e-13 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// The root `α` of `α² η(tα^{-d}) / (tα^{-d}) = 1`.
pub fn alpha_annealed(eta: &dyn Fn(f64) -> f64, d: usize, t: f64) -> Result<ScaleRoot> {
    if !(t > 0.0) || d == 0 {
        return Err(invalid("t", "need t > 0 and d ≥ 1"));
    }
    let df = d as f64;
    let g = |a: f64| {
        let s = t * a.powf(-df);
        (2.0 * a.ln() + eta(s).ln() - s.ln()).clamp(-1e300, 1e300)
    };
    let alpha = increasing_root("annealed scale", g)?;
    let s = t * alpha.powf(-df);
    let residual = (eta(s) / s - alpha.powi(-2)).abs() / alpha.powi(-2);
    Ok(ScaleRoot { value: alpha, aux: s, residual })
}

/// The root `α̃` of `α̃ / α(α̃)² = d log t`.
pub fn alpha_quenched(alpha: &dyn Fn(f64) -> f64, d: usize, t: f64) -> Result<ScaleRoot> {
    if !(t > 1.0) || d == 0 {
        return Err(invalid("t", "need t > 1 and d ≥ 1"));
    }
    let target = d as f64 * t.ln();
    let g = |s: f64| (s.ln() - 2.0 * alpha(s).ln() - target.ln()).clamp(-1e300, 1e300);
    let root = increasing_root("quenched scale", g)?;
    let residual = (root / alpha(root).powi(2) - target).abs() / target;
    Ok(ScaleRoot { value: root, aux: target, residual })
}

/// Quenched scale with the annealed scale built from `η`.
pub fn alpha_quenched_from_eta(eta: &dyn Fn(f64) -> f64, d: usize, t: f64) -> Result<ScaleRoot> {
    let alpha = |s: f64| alpha_annealed(eta, d, s).map(|r| r.value).unwrap_or(f64::NAN);
    alpha_quenched(&alpha, d, t)
}

/// Principal eigenfunction of `κΔ_h - ρ|x|²` on a grid of `[-R, R]^d`
/// compared with the best Gaussian `e^{-a|x|²}`.
#[derive(Debug, Clone, Serialize)]
pub struct Class3Report {
    pub d: usize,
    pub step: f64,
    pub radius: f64,
    pub eigenvalue: f64,
    /// Continuum ground-state exponent `½ √(ρ/κ)`.
    pub continuum_exponent: f64,
    pub fitted_exponent: f64,
    /// `‖w - c e^{-a|x|²}‖ / ‖w‖` at the fitted exponent and amplitude.
    pub gaussian_l2_error: f64,
    /// Share of `‖w‖²` carried by the outermost grid layer.
    pub boundary_mass: f64,
    /// Row-major, axis 0 slowest, unit `ℓ²` norm.
    pub eigenfunction: Vec<f64>,
    pub points_per_axis: usize,
    pub residual: f64,
}

pub const CLASS3_BOUNDARY_LIMIT: f64 = 1e-6;

/// Default window: the Gaussian's square decays by `e^{-30}` at the edge.
pub fn class3_radius(rho: f64, kappa: f64) -> f64 {
    let a = 0.5 * (rho / kappa).sqrt();
    (15.0 / a).sqrt().ceil()
}

pub fn class3_check(rho: f64, kappa: f64, d: usize, step: f64, radius: f64) -> Result<Class3Report> {
    if !(rho > 0.0) || !(kappa > 0.0) {
        return Err(invalid("rho", "rho and kappa must be positive"));
    }
    if !(step > 0.0) || !(radius > step) || d == 0 || d > 3 {
        return Err(invalid("step", "need 0 < step < radius and 1 ≤ d ≤ 3"));
    }
    let k = (radius / step).round() as i64;
    let m = (2 * k + 1) as usize;
    let coords: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
    let total = m.pow(d as u32);
    let c = kappa / (step * step);
    let point = |idx: usize| -> Vec<usize> {
        let mut rem = idx;
        let mut out = vec![0; d];
        for axis in (0..d).rev() {
            out[axis] = rem % m;
            rem /= m;
        }
        out
    };
    let pot: Vec<f64> = (0..total).map(|i| -rho * point(i).iter().map(|&j| coords[j] * coords[j]).sum::<f64>()).collect();
    let strides: Vec<usize> = (0..d).map(|axis| m.pow((d - 1 - axis) as u32)).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for i in 0..total {
            let p = point(i);
            let mut acc = (pot[i] - 2.0 * d as f64 * c) * x[i];
            for axis in 0..d {
                if p[axis] > 0 {
                    acc += c * x[i - strides[axis]];
                }
                if p[axis] + 1 < m {
                    acc += c * x[i + strides[axis]];
                }
            }
            y[i] = acc;
        }
    };
    let a0 = 0.5 * (rho / kappa).sqrt();
    let gauss = |a: f64| -> Vec<f64> {
        (0..total).map(|i| (-a * point(i).iter().map(|&j| coords[j] * coords[j]).sum::<f64>()).exp()).collect()
    };
    let mut w = gauss(a0);
    normalize(&mut w);
    let mut aw = vec![0.0; total];
    apply(&w, &mut aw);
    let rq: f64 = dot(&w, &aw);
    let sigma = rq + 0.2 * (kappa * rho).sqrt();
    // inverse iteration on σ - A, which is positive definite since σ > λ_top
    let mut lambda = rq;
    let mut residual = f64::INFINITY;
    for _ in 0..200 {
        let mut next = w.clone();
        if d == 1 {
            let diag: Vec<f64> = pot.iter().map(|p| sigma - (p - 2.0 * c)).collect();
            let off = vec![-c; total];
            next = solve_tridiagonal(&off, &diag, &off, &w).ok_or(PamError::Descent("singular shifted operator".into()))?;
        } else {
            let mut op = |x: &[f64], y: &mut [f64]| {
                apply(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = sigma * xi - *yi;
                }
            };
            conjugate_gradient(&mut op, &w, &mut next, 1e-12, 100_000)?;
        }
        normalize(&mut next);
        w = next;
        apply(&w, &mut aw);
        lambda = dot(&w, &aw);
        residual = aw.iter().zip(&w).map(|(a, x)| (a - lambda * x).powi(2)).sum::<f64>().sqrt();
        if residual <= 1e-10 * (lambda.abs() + 1.0) {
            break;
        }
    }
    if residual > 1e-6 * (lambda.abs() + 1.0) {
        return Err(PamError::NoConvergence { what: "class-3 inverse iteration", iterations: 200, residual, history: vec![] });
    }
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }
    let boundary_mass: f64 = (0..total).filter(|&i| point(i).iter().any(|&j| j == 0 || j + 1 == m)).map(|i| w[i] * w[i]).sum();
    if boundary_mass > CLASS3_BOUNDARY_LIMIT {
        return Err(PamError::GridTooCoarse { boundary_mass, limit: CLASS3_BOUNDARY_LIMIT });
    }
    let misfit = |a: f64| {
        let mut g = gauss(a);
        normalize(&mut g);
        let proj = dot(&g, &w);
        w.iter().zip(&g).map(|(x, y)| (x - proj * y).powi(2)).sum::<f64>().sqrt()
    };
    let fitted = golden_min(&misfit, (a0 * 0.5).ln(), (a0 * 2.0).ln());
    let gaussian_l2_error = misfit(fitted.exp());
    Ok(Class3Report {
        d,
        step,
        radius: k as f64 * step,
        eigenvalue: lambda,
        continuum_exponent: a0,
        fitted_exponent: fitted.exp(),
        gaussian_l2_error,
        boundary_mass,
        eigenfunction: w,
        points_per_axis: m,
        residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Minimizer of a unimodal function of `log a` by golden-section search.
fn golden_min(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1.exp()), f(x2.exp()));
    for _ in 0..100 {
        if hi - lo < 1e-12 {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1.exp());
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2.exp());
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hhat_values() {
        assert_eq!(hhat(1.0, 0.3, 2.0), 0.0);
        assert_eq!(hhat(1.0, 1.0, 2.0), 0.0);
        assert!((hhat(2.0, 0.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((hhat(2.0, 0.999, 1.0) - 2.0 * 2f64.ln()).abs() < 2e-3);
        for gamma in [0.0, 0.5, 1.0] {
            for y in [0.2, 1.0, 3.0] {
                let h = 1e-3;
                let mid = hhat(y, gamma, 1.3);
                assert!(mid <= 0.5 * (hhat(y - h, gamma, 1.3) + hhat(y + h, gamma, 1.3)) + 1e-15);
            }
        }
    }

    #[test]
    fn classifier_case_list() {
        assert_eq!(classify(1.0, 1.0).unwrap(), UniversalityClass::FixedIslands);
        assert_eq!(classify(0.0, 0.0).unwrap(), UniversalityClass::RapidIslands);
        assert_eq!(classify(2.0, f64::INFINITY).unwrap(), UniversalityClass::SingleSites);
        assert_eq!(classify(1.0, 0.0).unwrap(), UniversalityClass::SlowIslands);
        assert!(classify(0.5, 1.0).is_err());
        assert!(classify(0.5, f64::INFINITY).is_err());
        assert!(classify(1.5, 0.0).is_err());
    }

    #[test]
    fn annealed_scale_power_law() {
        let eta = |s: f64| s.powf(0.0);
        let r = alpha_annealed(&eta, 1, 1e6).unwrap();
        assert!((r.value - 100.0).abs() < 1e-8, "{}", r.value);
        assert!(r.residual < 1e-10);
        let lin = |s: f64| s;
        assert!((alpha_annealed(&lin, 2, 50.0).unwrap().value - 1.0).abs() < 1e-10);
        let four = |s: f64| 4.0 * s;
        assert!((alpha_annealed(&four, 3, 50.0).unwrap().value - 0.5).abs() < 1e-10);
        let (gamma, d) = (0.5, 2usize);
        let nu = (1.0 - gamma) / (d as f64 + 2.0 - d as f64 * gamma);
        let eta = |s: f64| s.powf(gamma);
        for t in [1e3, 1e4] {
            assert!((alpha_annealed(&eta, d, t).unwrap().value / f64::powf(t, nu) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn quenched_scale() {
        let cube = |s: f64| s.powf(1.0 / 3.0);
        let r = alpha_quenched(&cube, 1, 10f64.exp()).unwrap();
        assert!((r.value - 1000.0).abs() < 1e-6);
        let one = |_: f64| 1.0;
        assert!((alpha_quenched(&one, 2, 100.0).unwrap().value - 2.0 * 100f64.ln()).abs() < 1e-9);
        assert!(alpha_quenched(&cube, 1, 50.0).unwrap().value > alpha_quenched(&cube, 1, 10.0).unwrap().value);
    }

    #[test]
    fn bounded_profile_matches_cgf_growth() {
        let spec = PotentialSpec::bounded_tail(1.0, 0.5);
        let (eta, prof) = profile_for(&spec).unwrap();
        let tf = spec.tail_functions().unwrap();
        let t = 1e6;
        let y = 2.0;
        let ratio = (tf.cgf(y * t).unwrap() - y * tf.cgf(t).unwrap()) / eta.eval(t);
        assert!((ratio - prof.hhat(y)).abs() < 0.01 * prof.hhat(y).abs(), "{ratio} vs {}", prof.hhat(y));
    }

    #[test]
    fn harmonic_ground_state_is_gaussian() {
        let rep = class3_check(1.0, 1.0, 1, 1.0 / 64.0, class3_radius(1.0, 1.0)).unwrap();
        assert!(rep.gaussian_l2_error < 1e-3, "{}", rep.gaussian_l2_error);
        assert!((rep.fitted_exponent - 0.5).abs() < 1e-3);
        let m = rep.points_per_axis;
        for i in 0..m {
            assert!((rep.eigenfunction[i] - rep.eigenfunction[m - 1 - i]).abs() < 1e-10);
        }
        assert!(matches!(class3_check(1.0, 1.0, 1, 1.0 / 16.0, 2.0), Err(PamError::GridTooCoarse { .. })));
    }

    #[test]
    fn two_dimensional_ground_state_factorizes() {
        let (h, r) = (0.125, 6.0);
        let one = class3_check(1.0, 1.0, 1, h, r).unwrap();
        let two = class3_check(1.0, 1.0, 2, h, r).unwrap();
        let m = one.points_per_axis;
        let err = (0..m * m)
            .map(|i| (two.eigenfunction[i] - one.eigenfunction[i / m] * one.eigenfunction[i % m]).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}
