use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pam_core::lattice::LatticeBox;
use pam_core::potentials::PotentialSpec;
use pam_core::solver::{default_radius, moment_ensemble, torus_of, EvolutionConfig};
use pam_core::spectral::{mu_of_r, MuMethod};

fn pam(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pam")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn pam_env(args: &[&str], cwd: &Path, threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pam")).args(args).current_dir(cwd).env("PAM_THREADS", threads).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_column(path: &Path, name: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn minimal_solve_writes_manifest_snapshots_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(&["solve", "--potential", "double_exponential:rho=1", "--t", "0.5,1", "--out", "run"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["manifest.json", "config.json", "solve.csv", "xi.snap", "u_0.snap", "u_1.snap"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(csv_column(&run.join("solve.csv"), "t"), vec!["0.5", "1.0"]);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "moments",
            "--potential",
            "double_exponential:rho=1",
            "--t",
            "0.5,1",
            "--p",
            "1,2",
            "--n",
            "40",
            "--seed",
            "9",
            "--out",
            out,
        ]
    };
    let a = pam_env(&args("a"), dir.path(), "1");
    let b = pam_env(&args("b"), dir.path(), "3");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    for f in ["moments.csv", "lyapunov.json", "config.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_of_range_gamma_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(&["moments", "--potential", "bounded_tail:D=1,gamma=1.5", "--t", "1", "--out", "bad"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`gamma`"), "{}", stderr(&o));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn config_file_is_validated_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mu.json"), r#"{"command": "mu", "d": 1, "r": [0.5, 2.0]}"#).unwrap();
    let o = pam(&["mu", "--config", "mu.json", "--r", "1", "--out", "m"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_column(&dir.path().join("m/mu.csv"), "r"), vec!["1.0"]);

    fs::write(dir.path().join("typo.json"), r#"{"d": 1, "r": [1.0], "metod": "box"}"#).unwrap();
    let o = pam(&["mu", "--config", "typo.json", "--out", "t"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("metod"), "{}", stderr(&o));

    fs::write(dir.path().join("other.json"), r#"{"command": "solve", "r": [1.0]}"#).unwrap();
    assert_eq!(code(&pam(&["mu", "--config", "other.json"], dir.path())), 2);
}

#[test]
fn tables_match_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(&["mu", "--d", "3", "--r", "5,8", "--out", "m"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = csv_column(&dir.path().join("m/mu.csv"), "mu");
    for (r, cell) in [5.0, 8.0].iter().zip(&got) {
        assert_eq!(cell.parse::<f64>().unwrap(), mu_of_r(*r, 3, MuMethod::Resolvent).unwrap().mu);
    }

    let o = pam(
        &[
            "moments",
            "--potential",
            "double_exponential:rho=2",
            "--t",
            "1",
            "--p",
            "1,2",
            "--n",
            "30",
            "--seed",
            "4",
            "--out",
            "mo",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let spec = PotentialSpec::double_exponential(2.0);
    let lattice = torus_of(&LatticeBox::new(1, default_radius(1, 1.0, 1.0)).unwrap());
    let table = moment_ensemble(&spec, &lattice, &EvolutionConfig::new(1.0, 1.0), &[1.0, 2.0], 30, 4).unwrap();
    let got = csv_column(&dir.path().join("mo/moments.csv"), "lambda");
    let want: Vec<f64> = table.rows.iter().map(|r| r.lambda.estimate).collect();
    assert_eq!(got.iter().map(|c| c.parse::<f64>().unwrap()).collect::<Vec<_>>(), want);
}

#[test]
fn report_merges_concatenates_and_rejects_mixtures() {
    let dir = tempfile::tempdir().unwrap();
    for (seed, out) in [("1", "r1"), ("2", "r2")] {
        let o = pam(
            &[
                "moments",
                "--potential",
                "double_exponential:rho=1",
                "--t",
                "0.5,1",
                "--p",
                "1",
                "--n",
                "20",
                "--seed",
                seed,
                "--out",
                out,
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let o = pam(&["report", "r1", "r2", "--out", "rep"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let seeds = csv_column(&dir.path().join("rep/report.csv"), "seed");
    assert_eq!(seeds, vec!["1", "1", "2", "2"]);
    assert_eq!(csv_column(&dir.path().join("rep/report.csv"), "config_hash").len(), 4);

    let o = pam(&["report", "--kind", "check_quenched", "--out", "empty"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("empty/report.csv")).unwrap();
    assert_eq!(text, "run,seed,config_hash,t,growth,height,gap,lower_bound,boundary_mass\n");

    assert_eq!(code(&pam(&["mu", "--r", "1", "--out", "m"], dir.path())), 0);
    let o = pam(&["report", "r1", "m", "--out", "mixed"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mixed subcommands"), "{}", stderr(&o));

    fs::write(dir.path().join("r2/moments.csv"), "p,t,lambda\n1,1,0.5\n").unwrap();
    let o = pam(&["report", "r1", "r2", "--out", "broken"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lambda_lo"), "{}", stderr(&o));
}

#[test]
fn exit_codes_for_numeric_failure_and_inconclusive_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(
        &["solve", "--potential", "double_exponential:rho=1", "--t", "1", "--stepper", "explicit", "--dt-max", "1", "--out", "x"],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("solve (config"), "{}", stderr(&o));

    let o = pam(
        &["check", "correlation", "--potential", "double_exponential:rho=1", "--t", "1", "--x", "0,1", "--n", "3", "--out", "c"],
        dir.path(),
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(dir.path().join("c/correlation.csv").exists());
}

#[test]
fn islands_read_a_quenched_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = pam(
        &["check", "quenched", "--potential", "double_exponential:rho=2", "--t", "2,4", "--seed", "5", "--out", "q"],
        dir.path(),
    );
    assert!(matches!(code(&o), 0 | 4), "{}", stderr(&o));
    assert!(dir.path().join("q/u_1.snap").exists());
    let o = pam(&["islands", "--run", "q", "--eps", "0.05", "--R", "1", "--out", "isl"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("isl/islands.json")).unwrap()).unwrap();
    assert_eq!(doc["t"], 4.0);
    let frac = doc["report"]["captured_fraction"].as_f64().unwrap();
    assert!(frac > 0.0 && frac <= 1.0 + 1e-12);
}

#[test]
fn eigen_variational_scaling_and_catalytic_run() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&pam(&["solve", "--potential", "double_exponential:rho=1", "--t", "1", "--R", "4", "--out", "s"], dir.path())),
        0
    );
    let o = pam(&["eigen", "--field", "s/xi.snap", "--kappa", "1", "--out", "e"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("e/eigenfunction.snap").exists());

    let o = pam(&["variational", "--rho", "inf", "--which", "chitilde", "--R", "3", "--out", "v"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let value: f64 = csv_column(&dir.path().join("v/variational.csv"), "value")[0].parse().unwrap();
    assert!((value - 2.0).abs() < 1e-10, "{value}");

    let o = pam(&["scaling", "--eta", "coefficient=1,gamma=0.5", "--d", "1", "--t", "1000,1000000", "--out", "sc"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(csv_column(&dir.path().join("sc/scaling.csv"), "class"), vec!["4", "4"]);

    let o = pam(&["catalytic", "--t", "0.5,1", "--n", "20", "--paths", "20", "--L", "6", "--out", "cat"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cat/catalytic.json")).unwrap()).unwrap();
    let star = doc["prediction"]["lambda_star"]["value"].as_f64().unwrap();
    assert!((star - (5f64.sqrt() - 2.0)).abs() < 1e-8);
    assert_eq!(csv_column(&dir.path().join("cat/catalytic.csv"), "route").len(), 4);
}
