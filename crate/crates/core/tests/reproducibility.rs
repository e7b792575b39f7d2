use pam_core::catalytic::{fk_moment, CatalyticParams};
use pam_core::lattice::LatticeBox;
use pam_core::potentials::PotentialSpec;
use pam_core::solver::{default_radius, moment_ensemble, torus_of, EvolutionConfig};

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn moment_ensembles_ignore_thread_count() {
    let spec = PotentialSpec::double_exponential(1.5);
    let lat = torus_of(&LatticeBox::new(1, default_radius(1, 1.0, 2.0)).unwrap());
    let cfg = EvolutionConfig::new(1.0, 2.0).with_snapshots(vec![1.0, 2.0]);
    let run = |n| pool(n).install(|| moment_ensemble(&spec, &lat, &cfg, &[1.0, 2.0], 64, 3).unwrap());
    let (a, b) = (run(1), run(4));
    assert_eq!(a.log_values, b.log_values);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.lambda, y.lambda);
    }
}

#[test]
fn seeds_select_distinct_ensembles() {
    let spec = PotentialSpec::double_exponential(1.0);
    let lat = torus_of(&LatticeBox::new(1, 6).unwrap());
    let cfg = EvolutionConfig::new(1.0, 1.0);
    let a = moment_ensemble(&spec, &lat, &cfg, &[1.0], 16, 1).unwrap();
    let b = moment_ensemble(&spec, &lat, &cfg, &[1.0], 16, 2).unwrap();
    assert_ne!(a.log_values, b.log_values);
}

#[test]
fn catalytic_representation_ignores_thread_count() {
    let prm = CatalyticParams::new(1, 1.0, 1.0, 1.0);
    let run = |n| pool(n).install(|| fk_moment(&prm, 1.0, 1, &[0.5, 1.0], 40, 6, 8).unwrap());
    assert_eq!(run(1), run(3));
}

#[test]
fn fields_depend_on_sites_not_on_the_box() {
    let spec = PotentialSpec::double_exponential(2.0);
    let small = spec.sample_field(&LatticeBox::new(2, 2).unwrap(), 5).unwrap();
    let large = spec.sample_field(&LatticeBox::new(2, 5).unwrap(), 5).unwrap();
    for i in 0..small.len() {
        let x = small.lattice().offsets(i);
        assert_eq!(small.get(i), large.at_offset(&x).unwrap());
    }
}
