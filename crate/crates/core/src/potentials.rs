//! I.i.d. potential families: samplers and analytic tail descriptors.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PamError, Result};
use crate::lattice::{Field, LatticeBox};
use crate::rng::{child_seed, site_key, substream, tag, Rng};
use crate::special::log_laplace_integral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleExponentialParams {
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapParams {
    pub p_trap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundedTailParams {
    #[serde(rename = "D")]
    pub d: f64,
    pub gamma: f64,
}

/// Finite discrete law `P(ξ = values[i]) = probs[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedParams {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Law of `ξ(0)`.
///
/// JSON form: `{"family": "double_exponential", "params": {"rho": 1.0}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `F(r) = 1 - exp(-e^{r/ρ})` on all of `R`.
    DoubleExponential(DoubleExponentialParams),
    /// `ξ = 0` with probability `1 - p`, `-∞` with probability `p`.
    BernoulliTrap(TrapParams),
    /// `ξ = -T` with `P(T ≤ x) = exp(-D x^{-γ/(1-γ)})`; `γ = 0` is the trap law
    /// with `P(ξ = 0) = e^{-D}`.
    BoundedTail(BoundedTailParams),
    Tabulated(TabulatedParams),
}

impl PotentialSpec {
    pub fn double_exponential(rho: f64) -> Self {
        Self::DoubleExponential(DoubleExponentialParams { rho })
    }

    pub fn bernoulli_trap(p_trap: f64) -> Self {
        Self::BernoulliTrap(TrapParams { p_trap })
    }

    pub fn bounded_tail(d: f64, gamma: f64) -> Self {
        Self::BoundedTail(BoundedTailParams { d, gamma })
    }

    /// Point mass at `c`.
    pub fn constant(c: f64) -> Self {
        Self::Tabulated(TabulatedParams { values: vec![c], probs: vec![1.0] })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::DoubleExponential(p) => {
                if !(p.rho > 0.0 && p.rho.is_finite()) {
                    return Err(invalid("rho", format!("must lie in (0, inf), got {}", p.rho)));
                }
            }
            Self::BernoulliTrap(p) => {
                if !(p.p_trap > 0.0 && p.p_trap <= 1.0) {
                    return Err(invalid("p_trap", format!("must lie in (0, 1], got {}", p.p_trap)));
                }
            }
            Self::BoundedTail(p) => {
                if !(p.d > 0.0 && p.d.is_finite()) {
                    return Err(invalid("D", format!("must be positive, got {}", p.d)));
                }
                if !(0.0..1.0).contains(&p.gamma) {
                    return Err(invalid("gamma", format!("must lie in [0, 1), got {}", p.gamma)));
                }
            }
            Self::Tabulated(t) => {
                if t.values.is_empty() || t.values.len() != t.probs.len() {
                    return Err(invalid("probs", "values and probs must be nonempty and equally long"));
                }
                if t.values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("values", "atoms must be finite"));
                }
                if t.probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(invalid("probs", "probabilities must be nonnegative"));
                }
                let s: f64 = t.probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(invalid("probs", format!("must sum to 1, got {s}")));
                }
            }
        }
        Ok(())
    }

    /// Bounded-tail with `γ = 0` collapses to a trap law.
    fn effective(&self) -> Self {
        match self {
            Self::BoundedTail(p) if p.gamma == 0.0 => Self::bernoulli_trap(-(-p.d).exp_m1()),
            other => other.clone(),
        }
    }

    /// One draw of `ξ(0)`.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self.effective() {
            Self::DoubleExponential(p) => {
                let e: f64 = Exp1.sample(rng);
                p.rho * e.ln()
            }
            Self::BernoulliTrap(p) => {
                if rng.random::<f64>() < p.p_trap {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            Self::BoundedTail(p) => {
                let beta = p.gamma / (1.0 - p.gamma);
                let e: f64 = Exp1.sample(rng);
                -(p.d / e).powf(1.0 / beta)
            }
            Self::Tabulated(t) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, pr) in t.values.iter().zip(&t.probs) {
                    acc += pr;
                    if u < acc {
                        return *v;
                    }
                }
                *t.values.last().expect("nonempty")
            }
        }
    }

    /// I.i.d. field on `lattice`. Each site draws from its own substream keyed
    /// by its lattice point, so overlapping boxes share values.
    pub fn sample_field(&self, lattice: &LatticeBox, seed: u64) -> Result<Field> {
        self.validate()?;
        let base = child_seed(seed, tag::FIELD, 0);
        let values = (0..lattice.len()).map(|i| self.sample(&mut substream(base, site_key(&lattice.point(i))))).collect();
        Field::new(lattice.clone(), values)
    }

    pub fn tail_functions(&self) -> Result<TailFunctions> {
        self.validate()?;
        Ok(TailFunctions { spec: self.effective() })
    }

    /// Scale `ρ` of the double-exponential upper tail, when the family has one.
    pub fn rho(&self) -> Option<f64> {
        match self {
            Self::DoubleExponential(p) => Some(p.rho),
            _ => None,
        }
    }
}

/// `F`, `φ = log 1/(1-F)`, its left-continuous inverse `ψ`, and the cumulant
/// generating function `H(t) = log⟨e^{tξ(0)}⟩`.
#[derive(Debug, Clone)]
pub struct TailFunctions {
    spec: PotentialSpec,
}

impl TailFunctions {
    /// `P(ξ(0) ≤ r)`.
    pub fn cdf(&self, r: f64) -> f64 {
        1.0 - self.survival(r)
    }

    /// `P(ξ(0) > r)`.
    pub fn survival(&self, r: f64) -> f64 {
        match &self.spec {
            PotentialSpec::DoubleExponential(p) => (-(r / p.rho).exp()).exp(),
            PotentialSpec::BernoulliTrap(p) => {
                if r < 0.0 {
                    1.0 - p.p_trap
                } else {
                    0.0
                }
            }
            PotentialSpec::BoundedTail(p) => {
                if r >= 0.0 {
                    0.0
                } else {
                    let beta = p.gamma / (1.0 - p.gamma);
                    (-p.d * (-r).powf(-beta)).exp()
                }
            }
            PotentialSpec::Tabulated(t) => t.values.iter().zip(&t.probs).filter(|(v, _)| **v > r).map(|(_, p)| p).sum(),
        }
    }

    /// `φ(r) = log 1/(1 - F(r))`, `+∞` above the essential supremum.
    pub fn phi(&self, r: f64) -> f64 {
        match &self.spec {
            PotentialSpec::DoubleExponential(p) => (r / p.rho).exp(),
            PotentialSpec::BoundedTail(p) if r < 0.0 => {
                let beta = p.gamma / (1.0 - p.gamma);
                let tail = (-p.d * (-r).powf(-beta)).exp();
                -tail.ln_1p_neg()
            }
            _ => {
                let s = self.survival(r);
                if s <= 0.0 {
                    f64::INFINITY
                } else {
                    -s.ln()
                }
            }
        }
    }

    /// `ψ(s) = min{r : φ(r) ≥ s}`, `s > 0`. Closed form for the
    /// double-exponential law, monotone bisection otherwise.
    pub fn psi(&self, s: f64) -> f64 {
        if let PotentialSpec::DoubleExponential(p) = &self.spec {
            return p.rho * s.ln();
        }
        let mut lo = -1.0;
        while self.phi(lo) >= s {
            lo *= 2.0;
            if lo < -1e300 {
                return f64::NEG_INFINITY;
            }
        }
        let mut hi = 1.0;
        while self.phi(hi) < s {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.phi(mid) >= s {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Essential supremum of `ξ(0)`.
    pub fn ess_sup(&self) -> f64 {
        match &self.spec {
            PotentialSpec::DoubleExponential(_) => f64::INFINITY,
            PotentialSpec::BernoulliTrap(p) => {
                if p.p_trap < 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PotentialSpec::BoundedTail(_) => 0.0,
            PotentialSpec::Tabulated(t) => {
                t.values.iter().zip(&t.probs).filter(|(_, p)| **p > 0.0).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    /// `H(t) = log⟨e^{tξ(0)}⟩`.
    pub fn cgf(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        match &self.spec {
            PotentialSpec::DoubleExponential(p) => {
                // ξ = ρ log E with E ~ Exp(1): ⟨e^{tξ}⟩ = ∫ s^{ρt} e^{-s} ds
                let a = p.rho * t + 1.0;
                if a <= 0.0 {
                    return Err(PamError::Divergence { t });
                }
                Ok(log_laplace_integral(|u| a * u - u.exp(), |u| a - u.exp(), |u| -u.exp(), 1e-10))
            }
            PotentialSpec::BernoulliTrap(p) => {
                if t < 0.0 {
                    Err(PamError::Divergence { t })
                } else {
                    Ok((1.0 - p.p_trap).ln())
                }
            }
            PotentialSpec::BoundedTail(p) => {
                if t < 0.0 {
                    return Err(PamError::Divergence { t });
                }
                let beta = p.gamma / (1.0 - p.gamma);
                let c = t * p.d.powf(1.0 / beta);
                Ok(log_laplace_integral(
                    |u| u - u.exp() - c * (-u / beta).exp(),
                    |u| 1.0 - u.exp() + c / beta * (-u / beta).exp(),
                    |u| -u.exp() - c / (beta * beta) * (-u / beta).exp(),
                    1e-10,
                ))
            }
            PotentialSpec::Tabulated(tab) => {
                let logs: Vec<f64> =
                    tab.values.iter().zip(&tab.probs).filter(|(_, p)| **p > 0.0).map(|(v, p)| t * v + p.ln()).collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(m + logs.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
            }
        }
    }
}

trait Ln1pNeg {
    fn ln_1p_neg(self) -> f64;
}

impl Ln1pNeg for f64 {
    /// `log(1 - x)`.
    fn ln_1p_neg(self) -> f64 {
        (-self).ln_1p()
    }
}

/// Finite-`t` ratios `(H(ct) - cH(t))/t` with an extrapolated limit.
#[derive(Debug, Clone, Serialize)]
pub struct HLimitEstimate {
    pub c: f64,
    pub ratios: Vec<(f64, f64)>,
    /// Fit of `L + (a log t + b)/t` through the tail of the sequence.
    pub extrapolated: f64,
    pub converged: bool,
}

impl HLimitEstimate {
    /// The limit, only when the sequence was judged convergent.
    pub fn limit(&self) -> Option<f64> {
        self.converged.then_some(self.extrapolated)
    }
}

/// Estimates `lim (H(ct) - cH(t))/t` along an increasing `t_grid`.
pub fn assumption_h_limit(spec: &PotentialSpec, c: f64, t_grid: &[f64]) -> Result<HLimitEstimate> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(invalid("c", format!("must lie in (0, 1], got {c}")));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(invalid("t_grid", "must be positive and strictly increasing"));
    }
    let tf = spec.tail_functions()?;
    let ratios = t_grid.iter().map(|&t| Ok((t, (tf.cgf(c * t)? - c * tf.cgf(t)?) / t))).collect::<Result<Vec<_>>>()?;
    let last = ratios.last().expect("nonempty").1;
    let tail: Vec<(f64, f64)> = ratios.iter().rev().take(5).rev().copied().collect();
    let extrapolated = if tail.len() >= 3 { fit_limit(&tail) } else { last };
    let diffs: Vec<f64> = ratios.windows(2).map(|w| (w[1].1 - w[0].1).abs()).collect();
    let shrinking = diffs.len() < 2 || diffs.windows(2).rev().take(2).all(|w| w[1] <= w[0] + 1e-12);
    let scale = extrapolated.abs().max(last.abs()).max(1e-3);
    let converged = shrinking && (extrapolated - last).abs() <= 0.05 * scale;
    Ok(HLimitEstimate { c, ratios, extrapolated, converged })
}

/// Least-squares fit of `y = L + a (log t)/t + b/t`; returns `L`.
fn fit_limit(points: &[(f64, f64)]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = points.len();
    let a = DMatrix::from_fn(n, 3, |i, j| {
        let t = points[i].0;
        match j {
            0 => 1.0,
            1 => t.ln() / t,
            _ => 1.0 / t,
        }
    });
    let y = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let svd = a.svd(true, true);
    match svd.solve(&y, 1e-14) {
        Ok(sol) => sol[0],
        Err(_) => points[n - 1].1,
    }
}

/// Maximum of a field and every site attaining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Height {
    pub h: f64,
    pub argmax: Vec<usize>,
}

pub fn max_height(f: &Field) -> Result<Height> {
    let h = f.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if h == f64::NEG_INFINITY {
        return Err(PamError::EmptyDomain);
    }
    let argmax = (0..f.len()).filter(|&i| f.get(i) == h).collect();
    Ok(Height { h, argmax })
}

/// The two finite-`t` normalizations of the height asymptotics:
/// `ψ(d log t)` and `ψ(log |B_t|)` with `|B_t| = (2t+1)^d`.
pub fn height_normalizations(tf: &TailFunctions, d: usize, t: f64) -> (f64, f64) {
    let d = d as f64;
    (tf.psi(d * t.ln()), tf.psi(d * (2.0 * t + 1.0).ln()))
}

/// A function sampled on the grid `{k·step : |k·step| ≤ R}^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridShape {
    pub dim: usize,
    pub step: f64,
    /// Grid points per axis, `2K+1`.
    pub points_per_axis: usize,
    /// Row-major values, axis 0 slowest.
    pub values: Vec<f64>,
}

impl GridShape {
    pub fn coords(&self, index: usize) -> Vec<f64> {
        let k = (self.points_per_axis / 2) as i64;
        let mut rem = index;
        let mut out = vec![0.0; self.dim];
        for axis in (0..self.dim).rev() {
            out[axis] = ((rem % self.points_per_axis) as i64 - k) as f64 * self.step;
            rem /= self.points_per_axis;
        }
        out
    }
}

/// `ξ̄(x) = α² [f(⌊xα⌋) - shift]` on the grid of `[-R, R]^d` with spacing
/// `step`; offsets are taken relative to the field's box center.
pub fn rescale_shift(f: &Field, shift: f64, alpha: f64, window: f64, step: f64) -> Result<GridShape> {
    if !(alpha >= 1.0) {
        return Err(invalid("alpha", format!("must be at least 1, got {alpha}")));
    }
    if !(step > 0.0) || !(window >= 0.0) {
        return Err(invalid("step", "step must be positive and window nonnegative"));
    }
    let dim = f.lattice().dim();
    let k = (window / step + 1e-9).floor() as i64;
    let per_axis = (2 * k + 1) as usize;
    let total = per_axis.pow(dim as u32);
    let mut values = Vec::with_capacity(total);
    let mut off = vec![0i64; dim];
    for idx in 0..total {
        let mut rem = idx;
        for axis in (0..dim).rev() {
            let kk = (rem % per_axis) as i64 - k;
            rem /= per_axis;
            off[axis] = (kk as f64 * step * alpha + 1e-9).floor() as i64;
        }
        let v = f
            .at_offset(&off)
            .filter(|_| f.lattice().contains(&add(&off, f.lattice().center())))
            .ok_or(PamError::WindowOutOfBox { radius: window })?;
        values.push(alpha * alpha * (v - shift));
    }
    Ok(GridShape { dim, step, points_per_axis: per_axis, values })
}

fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
