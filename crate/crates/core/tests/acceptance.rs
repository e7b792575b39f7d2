//! Acceptance suite. Each check prints one `PASS`/`FAIL` line; the process
//! exits nonzero when a check that is expected to hold at desk scale fails.
//! Checks marked `desk_scale_limited` report honestly but do not fail the run.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use pam_core::catalytic::*;
use pam_core::intermittency::*;
use pam_core::lattice::{Field, LatticeBox};
use pam_core::potentials::PotentialSpec;
use pam_core::scaling::{alpha_annealed, alpha_quenched_from_eta, class3_check};
use pam_core::solver::*;
use pam_core::spectral::*;
use pam_core::stats::median;
use pam_core::variational::*;

// G_3(0) = W/6 for the unnormalized Laplacian, Watson's closed form.
const WATSON_3: f64 = 1.516_386_059_151_978;
// G_4(0) = W_4/8, tabulated return-probability constant of the 4d walk.
const WATSON_4: f64 = 1.239_467_121_8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Largest eigenvalue of `κΔ + V` on the finite sites, assembled from the
/// neighbour lists alone.
fn dense_top(v: &Field, kappa: f64) -> f64 {
    let b = v.lattice();
    let d = b.dim();
    let live: Vec<usize> = (0..b.len()).filter(|&i| v.get(i).is_finite()).collect();
    let mut local = vec![usize::MAX; b.len()];
    live.iter().enumerate().for_each(|(k, &i)| local[i] = k);
    let n = live.len();
    let mut m = DMatrix::zeros(n, n);
    for (k, &i) in live.iter().enumerate() {
        m[(k, k)] = v.get(i) - 2.0 * d as f64 * kappa;
        for j in b.neighbors(i)[..2 * d].iter().flatten() {
            if local[*j] != usize::MAX {
                m[(k, local[*j])] += kappa;
            }
        }
    }
    m.symmetric_eigenvalues().max()
}

fn spectral_oracle() -> Outcome {
    let t0 = Instant::now();
    let worst = (0..50u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
            let (d, radius) = match k % 3 {
                0 => (1, rng.random_range(200..450)),
                1 => (2, rng.random_range(10..15)),
                _ => (3, rng.random_range(3..5)),
            };
            let kappa = rng.random_range(0.1..3.0);
            let spec = if k % 5 == 4 {
                PotentialSpec::bernoulli_trap(rng.random_range(0.05..0.3))
            } else {
                PotentialSpec::double_exponential(rng.random_range(0.5..4.0))
            };
            let b = LatticeBox::new(d, radius).unwrap();
            let v = spec.sample_field(&b, k).unwrap();
            let got = principal_eigen(&v, kappa).unwrap().lambda;
            (got - dense_top(&v, kappa)).abs()
        })
        .reduce(|| 0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 60.0, format!("max |dλ| = {worst:.2e} over 50 instances in {secs:.1} s"))
}

fn rank_one_closed_form() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for r in [0.5f64, 1.0, 2.0, 5.0] {
        let exact = (4.0 + r * r).sqrt() - 2.0;
        let a = mu_of_r(r, 1, MuMethod::Resolvent).unwrap().mu;
        let b = mu_of_r(r, 1, MuMethod::Box).unwrap().mu;
        worst.0 = worst.0.max((a - exact).abs());
        worst.1 = worst.1.max((b - exact).abs());
    }
    let star = lambda_star_probe(1, 1.0, 1.0, 1).unwrap().value;
    let star_err = (star - (5f64.sqrt() - 2.0)).abs();
    outcome(
        worst.0 <= 1e-6 && worst.1 <= 1e-4 && star_err <= 1e-8,
        format!("resolvent err {:.1e}, box err {:.1e}, growth rate err {star_err:.1e}", worst.0, worst.1),
    )
}

fn green_threshold() -> Outcome {
    let coarse = resolvent_origin_with_step(0.0, 3, 2.0 * RESOLVENT_STEP);
    let fine = resolvent_origin_with_step(0.0, 3, RESOLVENT_STEP);
    let stable = (coarse - fine).abs() <= 5e-7 * fine;
    let r3 = green_function_origin(3).unwrap().threshold;
    let oracle = (r3 - 6.0 / WATSON_3).abs();
    let extrapolate = |r: f64| {
        let radii = [8usize, 16, 32];
        let mus: Vec<f64> = radii.iter().map(|&n| box_rank_one_top(r, 3, n)).collect();
        (mus[2] + (mus[2] - mus[1]) / 3.0, mus)
    };
    let (below, _) = extrapolate(r3 - 0.1);
    let (_, above_boxes) = extrapolate(r3 + 0.1);
    let above = mu_of_r(r3 + 0.1, 3, MuMethod::Box).unwrap().mu;
    let growing = above_boxes.windows(2).all(|w| w[1] > w[0]);
    outcome(
        stable && oracle < 1e-6 && below < 1e-3 && above > 0.0 && growing,
        format!(
            "G3 {fine:.9} vs step x2 {coarse:.9}; r3 {r3:.7} (closed form err {oracle:.1e}); mu(r3-0.1) ~ {below:.2e}, mu(r3+0.1) = {above:.3e}, boxes {above_boxes:?}"
        ),
    )
}

fn pde_vs_feynman_kac() -> Outcome {
    let t0 = Instant::now();
    let b = LatticeBox::new(1, 4).unwrap();
    let spec = PotentialSpec::double_exponential(1.0);
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let xi = spec.sample_field(&b, seed).unwrap();
        let snap = evolve(&xi, &Field::delta(b.clone()), &EvolutionConfig::new(1.0, 2.0)).unwrap().remove(0);
        let pde_center = snap.log_value_at_center().exp();
        let pde_mass = snap.total_mass().mass;
        for (endpoint, pde) in [(Endpoint::Pinned(vec![0]), pde_center), (Endpoint::Free, pde_mass)] {
            let cfg = WalkConfig { kappa: 1.0, paths: 100_000, seed: 77 + seed, endpoint };
            let mc = feynman_kac(&xi, 2.0, &cfg).unwrap();
            worst = worst.max((mc.estimate - pde).abs() / mc.standard_error);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst <= 3.0 && secs < 120.0, format!("max |MC - PDE|/SE = {worst:.2} over 5 seeds, {secs:.1} s"))
}

fn variational_duality() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for d in [1usize, 2] {
        for rho in [2.0, 8.0] {
            let a = chi_d(1.0, rho, d, 8).unwrap().value;
            let b = chi_tilde_d(1.0, rho, d, 8).unwrap().value;
            let a2 = chi_d(1.0, rho, d, 12).unwrap().value;
            let b2 = chi_tilde_d(1.0, rho, d, 12).unwrap().value;
            let agree = (a - b).abs() / b.abs();
            let stab = (a2 - a).abs().max((b2 - b).abs());
            pass &= agree <= 0.02 && (a2 - b2).abs() / b2.abs() <= 0.02 && stab < 1e-3;
            lines.push(format!("d={d} rho={rho}: {a:.6}/{b:.6} R-shift {stab:.1e}"));
        }
    }
    for d in [1usize, 2, 3] {
        let inf = chi_tilde_infinite(1.0, d, 4, 3).unwrap().value;
        pass &= inf == 2.0 * d as f64;
        lines.push(format!("rho=inf d={d}: {inf}"));
    }
    outcome(pass, lines.join("; "))
}

fn product_structure() -> Outcome {
    let s1 = optimal_shapes(1.0, 8.0, 1, 8).unwrap();
    let s2 = optimal_shapes(1.0, 8.0, 2, 8).unwrap();
    let b = s2.v_star.lattice().clone();
    let err = (0..b.len())
        .map(|i| {
            let x = b.offsets(i);
            let f = s1.v_star.at_offset(&x[..1]).unwrap() + s1.v_star.at_offset(&x[1..]).unwrap();
            (s2.v_star.get(i) - f).abs()
        })
        .fold(0.0f64, f64::max);
    outcome(err <= 1e-3, format!("sup |V* - (f* + f*)| = {err:.2e}"))
}

fn gaussian_shape() -> Outcome {
    let (rho, kappa) = (4.0, 1.0);
    let radius = pam_core::scaling::class3_radius(rho, kappa);
    let errs: Vec<f64> =
        [1usize, 2].iter().map(|&d| class3_check(rho, kappa, d, 1.0 / 64.0, radius).unwrap().gaussian_l2_error).collect();
    outcome(errs.iter().all(|e| *e < 1e-3), format!("relative L2 error d=1 {:.2e}, d=2 {:.2e}", errs[0], errs[1]))
}

fn scale_functions() -> Outcome {
    let ts = [1e3, 1e4, 1e5, 1e6];
    let mut worst = 0.0f64;
    for d in [1usize, 2] {
        for gamma in [0.0, 0.5] {
            let nu = (1.0 - gamma) / (d as f64 + 2.0 - d as f64 * gamma);
            let eta = move |s: f64| s.powf(gamma);
            for &t in &ts {
                let a = alpha_annealed(&eta, d, t).unwrap().value;
                worst = worst.max((a / t.powf(nu) - 1.0).abs());
            }
        }
    }
    let mut worst_q = 0.0f64;
    for &t in &ts {
        let q = alpha_quenched_from_eta(&|_| 1.0, 1, t).unwrap().value;
        worst_q = worst_q.max((q / t.ln().powi(3) - 1.0).abs());
    }
    outcome(worst <= 5e-3 && worst_q <= 5e-3, format!("annealed rel err {worst:.1e}, quenched rel err {worst_q:.1e}"))
}

fn annealed_sandwich() -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for rho in [1.0, 2.0] {
        let rep = annealed_check(
            &PotentialSpec::double_exponential(rho),
            1.0,
            1.0,
            &[0.5, 1.0, 2.0, 3.0, 4.0],
            EnsembleOptions { d: 1, realizations: 1000, seed: 7 },
        )
        .unwrap();
        for r in &rep.rows {
            let ok = r.lower_bound <= r.lambda.estimate && r.lambda.estimate <= r.upper_bound + 3.0 * r.lambda.half_width();
            pass &= ok;
            if !ok {
                lines.push(format!("rho={rho} t={}: {} not in [{}, {}]", r.t, r.lambda.estimate, r.lower_bound, r.upper_bound));
            }
        }
        let last = rep.rows.last().unwrap();
        lines
            .push(format!("rho={rho}: t=4 L1 {:.3} in [{:.3}, {:.3}]", last.lambda.estimate, last.lower_bound, last.upper_bound));
    }
    outcome(pass, lines.join("; "))
}

struct QuenchedRuns {
    rho: f64,
    times: [f64; 4],
    reports: Vec<QuenchedReport>,
}

fn quenched_runs() -> QuenchedRuns {
    let times = [4.0, 8.0, 16.0, 32.0];
    let rho = 8.0;
    let spec = PotentialSpec::double_exponential(rho);
    let reports = (0..20u64)
        .into_par_iter()
        .map(|seed| quenched_check(&spec, 1.0, 1, &times, seed, QuenchedDomain::Reach).unwrap())
        .collect();
    QuenchedRuns { rho, times, reports }
}

fn quenched_trend(q: &QuenchedRuns) -> Outcome {
    let mut outside = 0;
    let mut medians = Vec::new();
    for k in 0..q.times.len() {
        let gaps: Vec<f64> = q.reports.iter().map(|r| r.rows[k].gap).collect();
        outside += gaps.iter().filter(|g| !(**g >= 0.0 && **g <= 2.0)).count();
        medians.push(median(&gaps));
    }
    let drift = (medians[3] - medians[2]).abs() / medians[2].abs();
    outcome(
        outside == 0 && drift < 0.25,
        format!(
            "{outside} of 80 gaps outside [0, 2]; median gaps {medians:.3?}; drift between the two largest t {:.1}%",
            100.0 * drift
        ),
    )
}

fn intermittency_ordering() -> Outcome {
    let times = vec![1.0, 2.0, 3.0, 4.0];
    let mut pass = true;
    let mut lines = Vec::new();
    let ensembles = [
        ("double_exponential rho=1", PotentialSpec::double_exponential(1.0), true),
        ("double_exponential rho=2", PotentialSpec::double_exponential(2.0), true),
        ("bounded_tail D=1 gamma=0.5", PotentialSpec::bounded_tail(1.0, 0.5), false),
    ];
    for (name, spec, trend) in ensembles {
        let lat = torus_of(&LatticeBox::new(1, default_radius(1, 1.0, 4.0)).unwrap());
        let cfg = EvolutionConfig::new(1.0, 4.0).with_snapshots(times.clone());
        let m = moment_ensemble(&spec, &lat, &cfg, &[1.0, 2.0, 3.0], 1000, 11).unwrap();
        let tab = LyapunovTable::from_moments(&m);
        let ordered = tab.holder_ordered();
        pass &= ordered;
        let mut line = format!("{name}: ordered {ordered}");
        if trend {
            let g = p_intermittency_test(&tab, 2.0).unwrap();
            let ok =
                g.verdict == Verdict::IntermittentTrend && g.increasing && g.slope.estimate - 2.0 * g.slope.half_width() > 0.0;
            pass &= ok;
            line += &format!(", gap slope {:.3} [{:.3}, {:.3}] {:?}", g.slope.estimate, g.slope.lo, g.slope.hi, g.verdict);
        }
        lines.push(line);
    }
    outcome(pass, lines.join("; "))
}

fn island_capture(q: &QuenchedRuns) -> Outcome {
    let shapes = optimal_shapes(1.0, q.rho, 1, 12).unwrap();
    let spec = PotentialSpec::double_exponential(q.rho);
    let run = |k: usize, capture: Option<usize>| -> Vec<IslandReport> {
        q.reports
            .par_iter()
            .map(|rep| {
                let s = &rep.snapshots[k];
                let xi = spec.sample_field(s.field.lattice(), rep.seed).unwrap();
                let mut p = IslandParams::for_time(s.t, 0.05, 1, rep.rows[k].height, &shapes);
                if let Some(r) = capture {
                    p.capture_radius = r;
                }
                extract_islands(&xi, &s.field, &shapes, &p).unwrap()
            })
            .collect()
    };
    let mean_dist = |reps: &[IslandReport]| {
        let n = reps.len() as f64;
        let b = |r: &IslandReport| r.best().cloned().unwrap();
        (
            reps.iter().map(|r| b(r).potential_distance).sum::<f64>() / n,
            reps.iter().map(|r| b(r).solution_distance).sum::<f64>() / n,
        )
    };
    let late = run(3, None);
    let early = run(1, None);
    let captured_ok = late.iter().all(|r| r.captured_fraction >= 0.95 && r.count <= 20);
    let min_capture = late.iter().map(|r| r.captured_fraction).fold(1.0, f64::min);
    let (dv8, dw8) = mean_dist(&early);
    let (dv32, dw32) = mean_dist(&late);
    let shapes_ok = dv32 < dv8 && dw32 < dw8;
    let wide = run(3, Some(1));
    let wide_min = wide.iter().map(|r| r.captured_fraction).fold(1.0, f64::min);
    let wide_max_count = wide.iter().map(|r| r.count).max().unwrap_or(0);
    outcome(
        captured_ok && shapes_ok,
        format!(
            "r(0.05) = {}: min capture {min_capture:.3}; shape distance t=8 ({dv8:.3}, {dw8:.3}) vs t=32 ({dv32:.3}, {dw32:.3}); with r = 1: min capture {wide_min:.3}, max count {wide_max_count}",
            eigen_mass_radius(&shapes.w_star, 0.05)
        ),
    )
}

fn catalytic_equilibrium() -> Outcome {
    let prm = CatalyticParams::new(1, 1.0, 1.0, 1.0);
    let counts: Vec<u32> = (0..100u64)
        .into_par_iter()
        .flat_map_iter(|rep| {
            let st = CatalystState::equilibrium(prm, 50, rep).unwrap();
            simulate_catalysts(&st, 5.0, rep).unwrap().counts_at(5.0)
        })
        .collect();
    let chi = poisson_chi_square(&counts, 1.0).unwrap();
    let r = catalytic_radius(1, 1.0, 1.0, 2.0);
    let routes = |p: usize, times: &[f64]| {
        let run = MomentRun { kappa: 1.0, p, realizations: 40_000, paths: 20_000, radius: r, seed: 5 };
        catalytic_moments(&prm, &run, times).unwrap().max_discrepancy()
    };
    let p1 = routes(1, &[0.5, 1.0, 1.5, 2.0]);
    let p2 = routes(2, &[0.5, 1.0, 1.5]);
    let degenerate = [CatalyticParams::new(1, 1.0, 0.0, 1.0), CatalyticParams::new(1, 0.0, 1.0, 1.0)].iter().all(|prm| {
        let st = CatalystState::equilibrium(*prm, 8, 3).unwrap();
        let tr = simulate_catalysts(&st, 2.0, 3).unwrap();
        let snaps = evolve_catalytic(&tr, 1.0, &[1.0, 2.0]).unwrap();
        let direct = snaps.iter().all(|s| (0..s.field.len()).all(|i| s.log_value(i) == 0.0));
        let fk = fk_moment(prm, 1.0, 2, &[1.0, 2.0], 50, 8, 3).unwrap().iter().all(|e| e.mean == 1.0);
        direct && fk
    });
    outcome(
        chi.passes(1e-3) && p1 <= 3.0 && p2 <= 3.0 && degenerate,
        format!(
            "chi-square p = {:.3} on {} sites; route discrepancy p=1 {p1:.2} SE (t <= 2), p=2 {p2:.2} SE (t <= 1.5); degenerate cases exact {degenerate}",
            chi.p_value,
            counts.len()
        ),
    )
}

fn catalytic_limits() -> Outcome {
    let r3 = 6.0 / WATSON_3;
    let small = lambda_limits(3, 1.0, 1.0, 1.0, 1, None).unwrap().small_kappa_per_p;
    let small_err = (small - 1.0 / (r3 - 1.0)).abs();
    let r4 = 8.0 / WATSON_4;
    let large = lambda_limits(4, 1.0, 1.0, 1.0, 1, None).unwrap().large_kappa_scaled.unwrap();
    let large_err = (large - 1.0 / r4).abs();
    let p3 = CatalyticParams::new(3, 1.0, 1.0, 1.0);
    let fits = lambda_kappa_scan(&p3, 1, &[0.1, 0.5, 1.0, 2.0], &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0], 300, 5, 9).unwrap();
    let dec = decreasing_within_ci(&fits);
    let est: Vec<f64> = fits.iter().map(|f| f.lambda.estimate).collect();
    outcome(
        small_err < 1e-6 && large_err < 1e-6 && dec,
        format!("small-kappa err {small_err:.1e}, large-kappa err {large_err:.1e}; fitted rates {est:.3?} decreasing {dec}"),
    )
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let mut hard_failures = 0;
    let mut report = |name: &str, desk_scale_limited: bool, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && desk_scale_limited { " (desk-scale limited, not gating)" } else { "" };
        println!("{tag} {name}{note}: {} [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass && !desk_scale_limited {
            hard_failures += 1;
        }
    };
    report("spectral oracle equivalence", false, &spectral_oracle);
    report("rank-one closed form", false, &rank_one_closed_form);
    report("Green-function threshold", false, &green_threshold);
    report("PDE vs Feynman-Kac", false, &pde_vs_feynman_kac);
    report("variational duality", false, &variational_duality);
    report("product structure", false, &product_structure);
    report("Gaussian ground state", false, &gaussian_shape);
    report("scale functions", false, &scale_functions);
    report("annealed sandwich", false, &annealed_sandwich);
    let q = quenched_runs();
    report("quenched gap trend", true, &|| quenched_trend(&q));
    report("intermittency ordering", false, &intermittency_ordering);
    report("island capture", true, &|| island_capture(&q));
    report("catalytic equilibrium and representation", false, &catalytic_equilibrium);
    report("catalytic limits", false, &catalytic_limits);
    println!("acceptance finished in {:.1} s, {hard_failures} gating failure(s)", t0.elapsed().as_secs_f64());
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
