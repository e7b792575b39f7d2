//! Intermittency diagnostics: Lyapunov tables, annealed and quenched checks,
//! relevant islands and the two-point correlation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, PamError, Result};
use crate::lattice::{Field, LatticeBox};
use crate::potentials::PotentialSpec;
use crate::rng::{child_seed, tag};
use crate::solver::{
    default_radius, evolve, moment_ensemble, torus_of, EvolutionConfig, MomentTable, Snapshot, BOOTSTRAP_RESAMPLES,
};
use crate::stats::{bootstrap, effective_sample_size, linear_fit, log_mean_exp, Interval};
use crate::variational::{chi_d, chi_tilde_d, eigen_mass_radius, OptimalShapes};
use statrs::function::gamma::ln_gamma;

/// Box radius used for the variational constants compared against ensembles.
pub const VARIATIONAL_RADIUS: usize = 12;

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovRow {
    pub p: f64,
    pub t: f64,
    /// `Λ̂_p(t) = log mean û(t,0)^p`.
    pub lambda: Interval,
    pub per_p: f64,
}

/// `Λ̂_p(t)` over a grid of orders and times.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovTable {
    pub rows: Vec<LyapunovRow>,
    pub times: Vec<f64>,
    pub orders: Vec<f64>,
    /// `log û(t,0)` per realization and time, when the table came from an ensemble.
    #[serde(skip)]
    samples: Option<Vec<Vec<f64>>>,
}

impl LyapunovTable {
    pub fn from_moments(m: &MomentTable) -> Self {
        let mut orders: Vec<f64> = Vec::new();
        for r in &m.rows {
            if !orders.contains(&r.p) {
                orders.push(r.p);
            }
        }
        orders.sort_by(f64::total_cmp);
        let rows =
            m.rows.iter().map(|r| LyapunovRow { p: r.p, t: r.t, lambda: r.lambda, per_p: r.lambda.estimate / r.p }).collect();
        Self { rows, times: m.times.clone(), orders, samples: Some(m.log_values.clone()) }
    }

    /// Exact table `Λ_p(t) = f(p, t)` with degenerate intervals.
    pub fn from_fn(orders: &[f64], times: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        let mut orders = orders.to_vec();
        orders.sort_by(f64::total_cmp);
        let mut rows = Vec::new();
        for &t in times {
            for &p in &orders {
                let v = f(p, t);
                rows.push(LyapunovRow { p, t, lambda: Interval::exact(v), per_p: v / p });
            }
        }
        Self { rows, times: times.to_vec(), orders, samples: None }
    }

    pub fn get(&self, p: f64, t: f64) -> Option<&LyapunovRow> {
        self.rows.iter().find(|r| r.p == p && (r.t - t).abs() <= 1e-12 * t.max(1.0))
    }

    /// `Λ̂_p/p` nondecreasing in `p` at every time.
    pub fn holder_ordered(&self) -> bool {
        self.times.iter().all(|&t| {
            let vals: Vec<f64> = self.orders.iter().filter_map(|&p| self.get(p, t)).map(|r| r.per_p).collect();
            vals.windows(2).all(|w| w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()))
        })
    }

    /// Gap test for every adjacent pair of orders.
    pub fn verdicts(&self) -> Vec<GapTest> {
        self.orders.windows(2).filter_map(|w| gap_test(self, w[0], w[1]).ok()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    IntermittentTrend,
    NotIntermittent,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapPoint {
    pub t: f64,
    pub gap: Interval,
}

/// Growth of `g(t) = Λ̂_q/q - Λ̂_p/p` for `p < q`.
#[derive(Debug, Clone, Serialize)]
pub struct GapTest {
    pub lower: f64,
    pub upper: f64,
    pub points: Vec<GapPoint>,
    /// Fitted slope of `g` against `t` with its interval.
    pub slope: Interval,
    pub increasing: bool,
    pub verdict: Verdict,
}

/// `Λ̂_{p-1}/(p-1)` against `Λ̂_p/p`.
pub fn p_intermittency_test(table: &LyapunovTable, p: f64) -> Result<GapTest> {
    if !(p > 1.0) {
        return Err(invalid("p", "needs p > 1"));
    }
    gap_test(table, p - 1.0, p)
}

pub fn gap_test(table: &LyapunovTable, lower: f64, upper: f64) -> Result<GapTest> {
    let times: Vec<f64> =
        table.times.iter().copied().filter(|&t| table.get(lower, t).is_some() && table.get(upper, t).is_some()).collect();
    if times.len() < 4 {
        return Err(PamError::MissingData(format!("orders {lower} and {upper} at four or more times")));
    }
    let gap_of = |t: f64| table.get(upper, t).unwrap().per_p - table.get(lower, t).unwrap().per_p;
    let g: Vec<f64> = times.iter().map(|&t| gap_of(t)).collect();
    let (_, s) = linear_fit(&times, &g);
    let (points, slope) = match &table.samples {
        Some(samples) => {
            let cols: Vec<usize> =
                times.iter().map(|&t| table.times.iter().position(|&u| (u - t).abs() <= 1e-12 * t.max(1.0)).unwrap()).collect();
            let gap_at = |idx: &[usize], k: usize| {
                let mut a = Vec::with_capacity(idx.len());
                let mut b = Vec::with_capacity(idx.len());
                for &i in idx {
                    a.push(upper * samples[i][k]);
                    b.push(lower * samples[i][k]);
                }
                log_mean_exp(&a) / upper - log_mean_exp(&b) / lower
            };
            let n = samples.len();
            let seed = 0x9a9;
            let points = times
                .iter()
                .zip(&cols)
                .zip(&g)
                .map(|((&t, &k), &gk)| GapPoint {
                    t,
                    gap: bootstrap(n, BOOTSTRAP_RESAMPLES, seed ^ k as u64, gk, |idx| gap_at(idx, k)),
                })
                .collect();
            let slope = bootstrap(n, BOOTSTRAP_RESAMPLES, seed, s, |idx| {
                let gs: Vec<f64> = cols.iter().map(|&k| gap_at(idx, k)).collect();
                linear_fit(&times, &gs).1
            });
            (points, slope)
        }
        None => {
            let points: Vec<GapPoint> = times
                .iter()
                .zip(&g)
                .map(|(&t, &gk)| {
                    let hw = table.get(upper, t).unwrap().lambda.half_width() / upper
                        + table.get(lower, t).unwrap().lambda.half_width() / lower;
                    GapPoint { t, gap: Interval { estimate: gk, lo: gk - hw, hi: gk + hw } }
                })
                .collect();
            // 95% half-widths read as 1.96 standard deviations
            let mt = times.iter().sum::<f64>() / times.len() as f64;
            let sxx: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
            let var: f64 =
                times.iter().zip(&points).map(|(t, p)| (t - mt).powi(2) * (p.gap.half_width() / 1.96).powi(2)).sum::<f64>()
                    / (sxx * sxx);
            let hw = 1.96 * var.sqrt();
            (points, Interval { estimate: s, lo: s - hw, hi: s + hw })
        }
    };
    let increasing = g.windows(2).all(|w| w[1] > w[0]);
    let span = times.last().unwrap() - times[0];
    let floor = 1e-10 * (1.0 + g.iter().fold(0.0f64, |a, x| a.max(x.abs()))) / span;
    let hw = slope.half_width();
    let verdict = if s <= floor {
        Verdict::NotIntermittent
    } else if increasing && s - 2.0 * hw > floor {
        Verdict::IntermittentTrend
    } else {
        Verdict::Inconclusive
    };
    Ok(GapTest { lower, upper, points, slope, increasing, verdict })
}

/// `χ̂_d` for the families where the annealed asymptotics are explicit:
/// double-exponential (variational value) and point masses (zero).
pub fn annealed_constant(spec: &PotentialSpec, kappa: f64, d: usize) -> Result<Option<f64>> {
    match spec {
        PotentialSpec::DoubleExponential(p) => Ok(Some(chi_d(kappa, p.rho, d, VARIATIONAL_RADIUS)?.value)),
        PotentialSpec::Tabulated(t) if t.values.len() == 1 => Ok(Some(0.0)),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnealedRow {
    pub t: f64,
    pub lambda: Interval,
    /// `H(pt)`.
    pub cumulant: f64,
    /// `(Λ̂_p(t) - H(pt) + χ̂ p t)/t` with its interval.
    pub difference: Interval,
    /// `H(pt) - 2dκpt ≤ Λ̂_p(t) ≤ H(pt)` up to the interval.
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnealedReport {
    pub p: f64,
    pub chi: f64,
    pub rows: Vec<AnnealedRow>,
    /// `|difference|` smaller at the last time than at the first.
    pub trend_to_zero: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleOptions {
    pub d: usize,
    pub realizations: usize,
    pub seed: u64,
}

/// `(1/t)Λ̂_p(t)` against `(H(pt) - χ̂ p t)/t` on the torus with `û(0,·) = 1`.
pub fn annealed_check(spec: &PotentialSpec, kappa: f64, p: f64, t_grid: &[f64], opts: EnsembleOptions) -> Result<AnnealedReport> {
    let tf = spec.tail_functions()?;
    let chi = annealed_constant(spec, kappa, opts.d)?
        .ok_or_else(|| invalid("spec", "annealed asymptotics need a double-exponential law or a point mass"))?;
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let lattice = torus_of(&LatticeBox::new(opts.d, default_radius(opts.d, kappa, t_max))?);
    let cfg = EvolutionConfig::new(kappa, t_max).with_snapshots(t_grid.to_vec());
    let table = moment_ensemble(spec, &lattice, &cfg, &[p], opts.realizations, opts.seed)?;
    let mut rows = Vec::new();
    for &t in t_grid {
        let row = table.get(p, t).ok_or_else(|| PamError::MissingData(format!("t = {t}")))?;
        let h = tf.cgf(p * t)?;
        let shift = |x: f64| (x - h + chi * p * t) / t;
        rows.push(AnnealedRow {
            t,
            lambda: row.lambda,
            cumulant: h,
            difference: Interval { estimate: shift(row.lambda.estimate), lo: shift(row.lambda.lo), hi: shift(row.lambda.hi) },
            lower_bound: h - 2.0 * opts.d as f64 * kappa * p * t,
            upper_bound: h,
            warning: row.warning.clone(),
        });
    }
    let trend_to_zero = rows.len() >= 2 && rows.last().unwrap().difference.estimate.abs() < rows[0].difference.estimate.abs();
    Ok(AnnealedReport { p, chi, rows, trend_to_zero })
}

/// `log` of an explicit lower bound on `U(t) = E_0 exp ∫ξ(X_s)ds`: the walk
/// runs along the axis-ordered shortest path to `y` during `[0, s]` and stays
/// at `y` afterwards. Jensen on the event gives, with `n = |y|₁`,
/// `-2dκt + n log(κs) - log n! + s·mean(ξ on path) + (t-s)ξ(y)`,
/// maximized in closed form over `s ∈ (0, t]`.
pub fn path_lower_bound(xi: &Field, y: usize, kappa: f64, t: f64) -> f64 {
    let b = xi.lattice();
    let d = b.dim();
    let target = b.offsets(y);
    let mut pos = vec![0i64; d];
    let mut path = vec![xi.at_offset(&pos).unwrap_or(f64::NEG_INFINITY)];
    for axis in 0..d {
        while pos[axis] != target[axis] {
            pos[axis] += target[axis].signum();
            path.push(xi.at_offset(&pos).unwrap_or(f64::NEG_INFINITY));
        }
    }
    let n = path.len() - 1;
    let base = -2.0 * d as f64 * kappa * t;
    let top = xi.get(y);
    if n == 0 {
        return base + t * top;
    }
    let mean = path.iter().sum::<f64>() / path.len() as f64;
    if mean == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s = if top > mean { (n as f64 / (top - mean)).min(t) } else { t };
    base + n as f64 * (kappa * s).ln() - ln_gamma(n as f64 + 1.0) + s * mean + (t - s) * top
}

#[derive(Debug, Clone, Serialize)]
pub struct QuenchedRow {
    pub t: f64,
    /// `(1/t) log U(t)`.
    pub growth: f64,
    /// `max ξ` over `B_t`.
    pub height: f64,
    pub gap: f64,
    /// Explicit path lower bound on `(1/t) log U(t)`.
    pub lower_bound: f64,
    pub boundary_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuenchedReport {
    pub seed: u64,
    /// Radius of the largest box solved on.
    pub box_radius: usize,
    pub domain: QuenchedDomain,
    /// `χ̃_d` when the family is double-exponential.
    pub chi_tilde: Option<f64>,
    pub rows: Vec<QuenchedRow>,
    /// `|gap - χ̃|` smaller at the last time than at the first.
    pub trend_to_zero: Option<bool>,
    /// The realization on the largest box.
    #[serde(skip)]
    pub xi: Option<Field>,
    /// One snapshot per time, each on its own box under [`QuenchedDomain::Reach`].
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
}

/// Mass share on the outer layer above which the box is enlarged.
pub const TRUNCATION_LIMIT: f64 = 1e-8;

/// Where the quenched problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuenchedDomain {
    /// Zero-Dirichlet `B_t` for each `t`: the walk sees only sites where
    /// `ξ ≤ h_t`, so `(1/t) log U(t) ≤ h_t` holds exactly.
    #[default]
    Reach,
    /// One box `B_R ⊇ B_t`, enlarged until the outer layer carries less than
    /// [`TRUNCATION_LIMIT`] of the mass (a proxy for the whole lattice).
    Enlarged,
}

/// One realization with `u(0,·) = δ_0`.
pub fn quenched_check(
    spec: &PotentialSpec,
    kappa: f64,
    d: usize,
    t_grid: &[f64],
    seed: u64,
    domain: QuenchedDomain,
) -> Result<QuenchedReport> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("t_grid", "times must be positive"));
    }
    let t_max = t_grid.iter().copied().fold(0.0, f64::max);
    let chi_tilde = match spec.rho() {
        Some(rho) => Some(chi_tilde_d(kappa, rho, d, VARIATIONAL_RADIUS)?.value),
        None => None,
    };
    // per-site substreams make the field on a smaller box a restriction
    let (xi, snaps) = match domain {
        QuenchedDomain::Reach => {
            let mut snaps = Vec::new();
            for &t in t_grid {
                let lattice = LatticeBox::new(d, t.floor().max(1.0) as usize)?;
                let xi = spec.sample_field(&lattice, seed)?;
                let cfg = EvolutionConfig::new(kappa, t);
                snaps.extend(evolve(&xi, &Field::delta(lattice), &cfg)?);
            }
            let lattice = LatticeBox::new(d, t_max.floor().max(1.0) as usize)?;
            (spec.sample_field(&lattice, seed)?, snaps)
        }
        QuenchedDomain::Enlarged => {
            let mut radius = default_radius(d, kappa, t_max).max(t_max.ceil() as usize);
            loop {
                let lattice = LatticeBox::new(d, radius)?;
                let xi = spec.sample_field(&lattice, seed)?;
                let cfg = EvolutionConfig::new(kappa, t_max).with_snapshots(t_grid.to_vec());
                let snaps = evolve(&xi, &Field::delta(lattice.clone()), &cfg)?;
                let outer = boundary_share(snaps.last().expect("one snapshot per time"));
                if outer <= TRUNCATION_LIMIT {
                    break (xi, snaps);
                }
                if lattice.len() > 4_000_000 {
                    return Err(PamError::BoxTooSmall(format!("boundary mass {outer:e} at radius {radius}")));
                }
                radius = radius * 3 / 2 + 1;
            }
        }
    };
    let mut rows = Vec::new();
    for s in &snaps {
        let b = s.field.lattice();
        let reach = s.t.floor() as i64;
        let inside: Vec<usize> = (0..b.len()).filter(|&i| b.offsets(i).iter().all(|c| c.abs() <= reach)).collect();
        let local = spec.sample_field(b, seed)?;
        let height = inside.iter().map(|&i| local.get(i)).fold(f64::NEG_INFINITY, f64::max);
        let lb = inside
            .iter()
            .filter(|&&i| local.get(i) == height)
            .map(|&i| path_lower_bound(&local, i, kappa, s.t))
            .fold(f64::NEG_INFINITY, f64::max);
        let growth = s.total_mass().log_mass / s.t;
        rows.push(QuenchedRow {
            t: s.t,
            growth,
            height,
            gap: height - growth,
            lower_bound: lb / s.t,
            boundary_mass: boundary_share(s),
        });
    }
    let trend_to_zero = chi_tilde.map(|c| rows.len() >= 2 && (rows.last().unwrap().gap - c).abs() < (rows[0].gap - c).abs());
    Ok(QuenchedReport {
        seed,
        box_radius: xi.lattice().radius(),
        domain,
        chi_tilde,
        rows,
        trend_to_zero,
        xi: Some(xi),
        snapshots: snaps,
    })
}

fn boundary_share(s: &Snapshot) -> f64 {
    let b = s.field.lattice();
    let r = b.radius() as i64;
    let total: f64 = s.field.values().iter().sum();
    let outer: f64 = (0..b.len()).filter(|&i| b.offsets(i).iter().any(|c| c.abs() == r)).map(|i| s.field.get(i)).sum();
    if total > 0.0 {
        outer / total
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IslandParams {
    pub eps: f64,
    /// Islands are `B_r(y)`.
    pub capture_radius: usize,
    /// Window `R` of the shape distances.
    pub window: usize,
    /// Minimal sup-distance between centers.
    pub min_separation: i64,
    pub max_centers: usize,
    /// `h_t`, subtracted from `ξ` in the potential distance.
    pub height: f64,
    pub t: Option<f64>,
}

impl IslandParams {
    /// `r = r(ε)` from the eigenfunction shape, separation `⌈t^0.9⌉`, at most
    /// 50 centers.
    pub fn for_time(t: f64, eps: f64, window: usize, height: f64, shapes: &OptimalShapes) -> Self {
        Self {
            eps,
            capture_radius: eigen_mass_radius(&shapes.w_star, eps),
            window,
            min_separation: t.powf(0.9).ceil() as i64,
            max_centers: 50,
            height,
            t: Some(t),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Island {
    pub center: Vec<i64>,
    pub peak: f64,
    /// Share of `U(t)` in `B_r(center)`.
    pub captured: f64,
    /// `sup_{|z| ≤ R} |ξ(y+z) - h_t - V*(z)|`.
    pub potential_distance: f64,
    /// `sup_{|z| ≤ R} |u(y+z)/u(y) - w*(z)|`.
    pub solution_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IslandReport {
    pub islands: Vec<Island>,
    pub captured_fraction: f64,
    pub min_pairwise_distance: Option<i64>,
    pub count: usize,
    pub target_reached: bool,
    /// `log|Γ*| / log t`.
    pub count_exponent: Option<f64>,
}

impl IslandReport {
    /// The island with the largest peak.
    pub fn best(&self) -> Option<&Island> {
        self.islands.iter().max_by(|a, b| a.peak.total_cmp(&b.peak))
    }
}

/// Greedy mass capture: sites in decreasing order of `u` become centers when
/// they are maximal in their own `B_r` and far enough from earlier centers,
/// until `B_r` around the centers holds `(1-ε)U`.
pub fn extract_islands(xi: &Field, u: &Field, shapes: &OptimalShapes, params: &IslandParams) -> Result<IslandReport> {
    if xi.lattice() != u.lattice() {
        return Err(invalid("u", "potential and solution live on different boxes"));
    }
    if !(params.eps > 0.0 && params.eps < 1.0) {
        return Err(invalid("eps", "must lie in (0, 1)"));
    }
    if params.window > shapes.v_star.lattice().radius() {
        return Err(PamError::WindowOutOfBox { radius: params.window as f64 });
    }
    let b = u.lattice();
    let total: f64 = u.values().iter().sum();
    if !(total > 0.0) {
        return Err(invalid("u", "needs positive total mass"));
    }
    let r = params.capture_radius as i64;
    let d = b.dim();
    let ball = |center: &[i64], radius: i64| -> Vec<usize> {
        cube(d, radius)
            .into_iter()
            .filter_map(|z| b.index_of_offset(&center.iter().zip(&z).map(|(a, c)| a + c).collect::<Vec<_>>()))
            .collect()
    };
    let window = cube(d, params.window as i64);
    let mut order: Vec<usize> = (0..b.len()).filter(|&i| u.get(i) > 0.0).collect();
    order.sort_by(|&a, &c| u.get(c).total_cmp(&u.get(a)));
    let mut covered = vec![false; b.len()];
    let mut captured = 0.0;
    let mut centers: Vec<usize> = Vec::new();
    let mut islands = Vec::new();
    for &y in &order {
        if captured >= (1.0 - params.eps) * total || centers.len() >= params.max_centers {
            break;
        }
        if centers.iter().any(|&c| b.distance(c, y) < params.min_separation) {
            continue;
        }
        let oy = b.offsets(y);
        let own = ball(&oy, r);
        if own.iter().any(|&j| u.get(j) > u.get(y)) {
            continue;
        }
        let mut here = 0.0;
        for &j in &own {
            here += u.get(j);
            if !covered[j] {
                covered[j] = true;
                captured += u.get(j);
            }
        }
        let (mut dv, mut dw) = (0.0f64, 0.0f64);
        for z in &window {
            let p: Vec<i64> = oy.iter().zip(z).map(|(a, c)| a + c).collect();
            let Some(j) = b.index_of_offset(&p) else { continue };
            let v = shapes.v_star.at_offset(z).unwrap_or(f64::NEG_INFINITY);
            let w = shapes.w_star.at_offset(z).unwrap_or(0.0);
            dv = dv.max(field_gap(xi.get(j) - params.height, v));
            dw = dw.max((u.get(j) / u.get(y) - w).abs());
        }
        islands.push(Island {
            center: oy,
            peak: u.get(y),
            captured: here / total,
            potential_distance: dv,
            solution_distance: dw,
        });
        centers.push(y);
    }
    let min_pairwise_distance = centers
        .iter()
        .enumerate()
        .flat_map(|(k, &a)| centers[k + 1..].iter().map(move |&c| (a, c)))
        .map(|(a, c)| b.distance(a, c))
        .min();
    let fraction = (captured / total).clamp(0.0, 1.0);
    Ok(IslandReport {
        count: islands.len(),
        islands,
        captured_fraction: fraction,
        min_pairwise_distance,
        target_reached: fraction >= 1.0 - params.eps,
        count_exponent: params.t.filter(|t| *t > 1.0).map(|t| (centers.len().max(1) as f64).ln() / t.ln()),
    })
}

/// All offsets in `[-r, r]^d`.
fn cube(d: usize, r: i64) -> Vec<Vec<i64>> {
    let side = (2 * r + 1) as usize;
    (0..side.pow(d as u32))
        .map(|k| {
            let mut rem = k;
            (0..d)
                .map(|_| {
                    let c = (rem % side) as i64 - r;
                    rem /= side;
                    c
                })
                .collect()
        })
        .collect()
}

fn field_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Which `ρ` enters the limiting profile `v = μ` of the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationCandidate {
    /// The law's `ρ`.
    Law,
    /// `2ρ`, reading the second moment at argument `2t`.
    Doubled,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationRow {
    pub x: Vec<i64>,
    pub c: Interval,
    /// `Σ v(z)v(z+x) / Σ v(z)²` per candidate.
    pub limits: Vec<(CorrelationCandidate, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub t: f64,
    pub rows: Vec<CorrelationRow>,
    pub ess: f64,
    pub inconclusive: bool,
}

/// `ĉ(t,x) = mean[û(t,0)û(t,x)] / mean[û(t,0)²]` with `û(0,·) = 1` on the torus.
pub fn correlation_profile(
    spec: &PotentialSpec,
    kappa: f64,
    t: f64,
    x_list: &[Vec<i64>],
    opts: EnsembleOptions,
) -> Result<CorrelationReport> {
    if opts.realizations < 2 {
        return Err(invalid("realizations", "need at least two realizations"));
    }
    let d = opts.d;
    if x_list.iter().any(|x| x.len() != d) {
        return Err(invalid("x", "offsets must have the lattice dimension"));
    }
    let lattice = torus_of(&LatticeBox::new(d, default_radius(d, kappa, t))?);
    let cfg = EvolutionConfig::new(kappa, t);
    let idx: Vec<usize> = x_list.iter().map(|x| lattice.index_of_offset(x).expect("torus wraps")).collect();
    let c0 = lattice.center_index();
    let logs: Vec<(f64, Vec<f64>)> = (0..opts.realizations)
        .into_par_iter()
        .map(|i| {
            let xi = spec.sample_field(&lattice, child_seed(opts.seed, tag::ENSEMBLE, i as u64))?;
            let snaps = evolve(&xi, &Field::constant(lattice.clone(), 1.0), &cfg)?;
            let s = &snaps[0];
            Ok((s.log_value(c0), idx.iter().map(|&j| s.log_value(j)).collect()))
        })
        .collect::<Result<_>>()?;
    let second: Vec<f64> = logs.iter().map(|(l0, _)| 2.0 * l0).collect();
    let ess = effective_sample_size(&second);
    let candidates = match spec.rho() {
        Some(rho) => {
            let profile = |r: f64| -> Result<Field> { Ok(chi_d(kappa, r, d, VARIATIONAL_RADIUS)?.profile) };
            vec![(CorrelationCandidate::Law, profile(rho)?), (CorrelationCandidate::Doubled, profile(2.0 * rho)?)]
        }
        None => vec![],
    };
    let mut rows = Vec::new();
    for (k, x) in x_list.iter().enumerate() {
        let cross: Vec<f64> = logs.iter().map(|(l0, lx)| l0 + lx[k]).collect();
        let est = log_mean_exp(&cross) - log_mean_exp(&second);
        let mut a = Vec::with_capacity(cross.len());
        let mut bb = Vec::with_capacity(cross.len());
        let log_c = bootstrap(cross.len(), BOOTSTRAP_RESAMPLES, opts.seed ^ (k as u64) << 24, est, |ix| {
            a.clear();
            bb.clear();
            a.extend(ix.iter().map(|&i| cross[i]));
            bb.extend(ix.iter().map(|&i| second[i]));
            log_mean_exp(&a) - log_mean_exp(&bb)
        });
        let c = if x.iter().all(|v| *v == 0) {
            Interval::exact(1.0)
        } else {
            Interval { estimate: log_c.estimate.exp(), lo: log_c.lo.exp(), hi: log_c.hi.exp() }
        };
        let limits = candidates.iter().map(|(which, v)| (*which, autocorrelation(v, x))).collect();
        rows.push(CorrelationRow { x: x.clone(), c, limits });
    }
    Ok(CorrelationReport { t, rows, ess, inconclusive: ess < 10.0 })
}

/// `Σ_z v(z)v(z+x) / Σ_z v(z)²`, with `v` zero off its box.
pub fn autocorrelation(v: &Field, x: &[i64]) -> f64 {
    let b = v.lattice();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..b.len() {
        let z = b.offsets(i);
        den += v.get(i) * v.get(i);
        let zx: Vec<i64> = z.iter().zip(x).map(|(a, c)| a + c).collect();
        if b.contains(&zx.iter().zip(b.center()).map(|(a, c)| a + c).collect::<Vec<_>>()) {
            num += v.get(i) * v.at_offset(&zx).unwrap_or(0.0);
        }
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_table_has_linear_gap() {
        let tab = LyapunovTable::from_fn(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0, 8.0], |p, t| p * p * t);
        let g = p_intermittency_test(&tab, 2.0).unwrap();
        for pt in &g.points {
            assert!((pt.gap.estimate - pt.t).abs() < 1e-12);
        }
        assert!((g.slope.estimate - 1.0).abs() < 1e-12);
        assert_eq!(g.verdict, Verdict::IntermittentTrend);
        assert!(tab.holder_ordered());
        assert_eq!(tab.verdicts().len(), 2);
    }

    #[test]
    fn linear_table_is_not_intermittent() {
        let tab = LyapunovTable::from_fn(&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0], |p, t| 0.7 * p * t);
        assert_eq!(p_intermittency_test(&tab, 2.0).unwrap().verdict, Verdict::NotIntermittent);
    }

    #[test]
    fn gap_test_needs_four_times() {
        let tab = LyapunovTable::from_fn(&[1.0, 2.0], &[1.0, 2.0, 3.0], |p, t| p * p * t);
        assert!(matches!(p_intermittency_test(&tab, 2.0), Err(PamError::MissingData(_))));
    }

    #[test]
    fn wide_intervals_are_inconclusive() {
        let mut tab = LyapunovTable::from_fn(&[1.0, 2.0], &[1.0, 2.0, 3.0, 4.0], |p, t| p * p * t * 1e-3);
        for r in &mut tab.rows {
            r.lambda.lo -= 10.0;
            r.lambda.hi += 10.0;
        }
        assert_eq!(p_intermittency_test(&tab, 2.0).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn constant_potential_matches_cumulant_exactly() {
        let spec = PotentialSpec::constant(0.3);
        let rep = annealed_check(&spec, 1.0, 2.0, &[0.5, 1.0], EnsembleOptions { d: 1, realizations: 3, seed: 1 }).unwrap();
        assert_eq!(rep.chi, 0.0);
        for r in &rep.rows {
            assert!((r.cumulant - 0.6 * r.t).abs() < 1e-12);
            assert!(r.difference.estimate.abs() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn staying_put_bound_at_the_origin() {
        let b = LatticeBox::new(2, 3).unwrap();
        let xi = Field::from_fn(b.clone(), |x| if x == [0, 0] { 2.0 } else { -1.0 }).unwrap();
        let lb = path_lower_bound(&xi, b.center_index(), 0.5, 3.0);
        assert!((lb - (-2.0 * 2.0 * 0.5 * 3.0 + 3.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn path_bound_below_exact_two_site_value() {
        // two sites, Dirichlet elsewhere: U(t) from the 2x2 generator
        let b = LatticeBox::new(1, 1).unwrap();
        let xi = Field::new(b.clone(), vec![f64::NEG_INFINITY, 0.0, 3.0]).unwrap();
        let (kappa, t) = (1.0, 2.0);
        let snaps = evolve(&xi, &Field::delta(b.clone()), &EvolutionConfig::new(kappa, t)).unwrap();
        let exact = snaps[0].total_mass().log_mass;
        let lb = path_lower_bound(&xi, 2, kappa, t);
        assert!(lb <= exact && lb > exact - 2.0, "{lb} vs {exact}");
    }

    #[test]
    fn quenched_growth_is_sandwiched() {
        let spec = PotentialSpec::double_exponential(2.0);
        let rep = quenched_check(&spec, 1.0, 1, &[2.0, 4.0, 6.0], 3, QuenchedDomain::Reach).unwrap();
        for r in &rep.rows {
            assert!(r.growth <= r.height + 1e-9, "{r:?}");
            assert!(r.growth >= r.lower_bound - 1e-9, "{r:?}");
        }
        assert!(rep.chi_tilde.is_some());
    }

    fn shapes_for(d: usize) -> OptimalShapes {
        crate::variational::optimal_shapes(1.0, 4.0, d, 4).unwrap()
    }

    #[test]
    fn single_spike_is_one_island() {
        let b = LatticeBox::new(1, 20).unwrap();
        let u = Field::from_fn(b.clone(), |x| if x == [3] { 1.0 } else { 0.0 }).unwrap();
        let xi = Field::constant(b, 0.0);
        let shapes = shapes_for(1);
        let p =
            IslandParams { eps: 0.01, capture_radius: 0, window: 1, min_separation: 5, max_centers: 10, height: 0.0, t: None };
        let rep = extract_islands(&xi, &u, &shapes, &p).unwrap();
        assert_eq!(rep.count, 1);
        assert_eq!(rep.islands[0].center, vec![3]);
        assert!((rep.captured_fraction - 1.0).abs() < 1e-15);
        assert!(rep.target_reached);
    }

    #[test]
    fn two_far_spikes_are_two_islands() {
        let b = LatticeBox::new(1, 20).unwrap();
        let u = Field::from_fn(b.clone(), |x| if x == [-15] || x == [15] { 1.0 } else { 1e-6 }).unwrap();
        let xi = Field::constant(b, 0.0);
        let p = IslandParams { eps: 0.1, capture_radius: 1, window: 1, min_separation: 5, max_centers: 10, height: 0.0, t: None };
        let rep = extract_islands(&xi, &u, &shapes_for(1), &p).unwrap();
        assert_eq!(rep.count, 2);
        assert_eq!(rep.min_pairwise_distance, Some(30));
        assert!(rep.captured_fraction >= 0.9);
    }

    #[test]
    fn island_centers_are_local_maxima_and_capture_grows() {
        let spec = PotentialSpec::double_exponential(2.0);
        let b = LatticeBox::new(2, 10).unwrap();
        let u = spec.sample_field(&b, 4).unwrap().map(|x| x.exp()).unwrap();
        let xi = Field::constant(b.clone(), 0.0);
        let p =
            IslandParams { eps: 1e-3, capture_radius: 1, window: 1, min_separation: 3, max_centers: 40, height: 0.0, t: None };
        let rep = extract_islands(&xi, &u, &shapes_for(2), &p).unwrap();
        let mut acc = 0.0;
        for isl in &rep.islands {
            let y = b.index_of_offset(&isl.center).unwrap();
            for j in 0..b.len() {
                if b.distance(j, y) <= 1 {
                    assert!(u.get(j) <= u.get(y));
                }
            }
            acc += isl.captured;
        }
        // union capture never exceeds the sum over islands
        assert!(rep.captured_fraction <= acc + 1e-12);
        assert!((0.0..=1.0).contains(&rep.captured_fraction));
    }

    #[test]
    fn autocorrelation_of_delta_and_constant() {
        let b = LatticeBox::new(1, 3).unwrap();
        let delta = Field::delta(b.clone());
        assert_eq!(autocorrelation(&delta, &[0]), 1.0);
        assert_eq!(autocorrelation(&delta, &[1]), 0.0);
        let flat = Field::constant(b, 1.0);
        assert!((autocorrelation(&flat, &[1]) - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_at_origin_is_one_and_symmetric() {
        let spec = PotentialSpec::double_exponential(1.0);
        let xs = vec![vec![0], vec![1], vec![-1], vec![2]];
        let rep = correlation_profile(&spec, 1.0, 1.0, &xs, EnsembleOptions { d: 1, realizations: 200, seed: 2 }).unwrap();
        assert_eq!(rep.rows[0].c.estimate, 1.0);
        let (a, b) = (&rep.rows[1].c, &rep.rows[2].c);
        assert!(a.lo <= b.hi && b.lo <= a.hi, "{a:?} {b:?}");
        assert_eq!(rep.rows[1].limits.len(), 2);
    }
}
