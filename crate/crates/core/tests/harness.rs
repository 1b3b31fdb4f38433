mod common;

use std::path::Path;

use common::small_arch;
use pfkit::harness::{
    aggregate_rows, averaged_estimate, ground_truth, nmse, read_rows, report, run_experiment, ExperimentConfig,
    Preset, Reference, ResultRow,
};
use pfkit::numerics::Rng;
use pfkit::pf::{run_filter, Bootstrap};
use pfkit::proposals::Parametrization;
use pfkit::ssm::{build_scenario, simulate, Scenario};
use pfkit::Error;

fn tiny_config(out: &Path, proposals: &[&str]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(Scenario::LinearGaussian);
    cfg.dims = Some(vec![5]);
    cfg.horizons = Some(vec![3]);
    cfg.particles = Some(vec![5, 8]);
    cfg.proposals = Some(proposals.iter().map(|p| p.to_string()).collect());
    cfg.seeds = 2;
    cfg.inner = 3;
    cfg.train.epochs = 2;
    cfg.arch = Some(small_arch(Parametrization::Anchored));
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn minimal_config_takes_the_defaults() {
    let cfg = ExperimentConfig::from_toml("scenario = \"linear-gaussian\"\n").unwrap();
    assert_eq!(cfg.snr_db, 5.0);
    assert!((cfg.threshold_ratio - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!((cfg.seeds, cfg.inner), (20, 100));
    assert_eq!((cfg.train.epochs, cfg.train.lr), (200, 1e-3));
    assert_eq!(cfg.dims(), vec![10]);
    assert_eq!(cfg.horizons(), vec![12]);
    assert_eq!(cfg.particles(), vec![10, 20, 30, 40, 50]);
    let sir = ExperimentConfig::from_toml("scenario = \"sir\"\n").unwrap();
    assert_eq!((sir.dims(), sir.horizons(), sir.particles()), (vec![3], vec![199], vec![300]));
    assert!(!sir.proposals().contains(&"gnn".to_string()));
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "scenario = \"linear-gaussian\"\ndims = [10]\nmeasurement_dim = 7\n",
        "scenario = \"linear-gaussian\"\ncolour = \"red\"\n",
        "scenario = \"linear-gaussian\"\nparticles = []\n",
        "scenario = \"linear-gaussian\"\nproposals = [\"oracle\"]\n",
        "scenario = \"linear-gaussian\"\nthreshold_ratio = 0.0\n",
        "scenario = \"sir\"\nproposals = [\"gnn\"]\n",
        "scenario = \"sir\"\ndims = [4]\n",
        "scenario = \"quantum\"\n",
        "scenario = \"linear-gaussian\"\n[train]\nlr = -1.0\n",
        "scenario = \"linear-gaussian\"\n[train]\nmomentum = 0.5\n",
        "dims = [10]\n",
    ] {
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "accepted:\n{text}");
    }
    let ok = ExperimentConfig::from_toml("scenario = \"linear-gaussian\"\ndims = [10, 25]\nmeasurement_dim = 8\n");
    assert!(ok.is_err());
    assert!(ExperimentConfig::from_toml("scenario = \"linear-gaussian\"\ndims = [10]\nmeasurement_dim = 8\n").is_ok());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = tiny_config(Path::new("somewhere"), &["min-degeneracy", "gnn"]);
    cfg.snr_db = 2.5;
    cfg.seed = 77;
    cfg.apply_preset(Preset::Desk);
    assert_eq!((cfg.seeds, cfg.inner, cfg.train.epochs), (5, 20, 50));
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(pfkit::harness::load_config(&path).unwrap(), cfg);
    assert!("huge".parse::<Preset>().is_err());
}

#[test]
fn result_cardinality_matches_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), &["bootstrap", "min-degeneracy"]);
    let summary = run_experiment(&cfg).unwrap();
    // seeds × proposals × K × {failed_runs, nmse}
    assert_eq!(summary.rows.len(), 2 * 2 * 2 * 2);
    assert_eq!(summary.aggregates.len(), 2 * 2 * 2);
    for a in &summary.aggregates {
        assert_eq!(a.count + a.failed, 2);
    }
    for file in ["results.csv", "aggregate.csv", "config.toml", "metadata.toml", "plot_nmse_vs_K.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    assert_eq!(read_rows(&dir.path().join("results.csv")).unwrap(), summary.rows);

    let mut one = tiny_config(dir.path(), &["bootstrap"]);
    one.seeds = 1;
    one.particles = Some(vec![5]);
    let summary = run_experiment(&one).unwrap();
    let nmse_rows: Vec<_> = summary.aggregates.iter().filter(|a| a.metric == "nmse").collect();
    assert_eq!(nmse_rows.len(), 1);
    assert_eq!(nmse_rows[0].count, 1);
}

#[test]
fn experiments_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let proposals = ["min-degeneracy", "mlp", "gnn"];
    run_experiment(&tiny_config(a.path(), &proposals)).unwrap();
    run_experiment(&tiny_config(b.path(), &proposals)).unwrap();
    for file in ["results.csv", "aggregate.csv", "metadata.toml", "train/mlp_N5_T3_seed1.csv"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let meta = std::fs::read_to_string(a.path().join("metadata.toml")).unwrap();
    assert!(meta.contains("mlp_checksum"));
    assert!(meta.contains("min_degeneracy = \"exact\""));
    assert!(meta.contains("reference = \"kalman\""));
}

#[test]
fn report_rebuilds_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&tiny_config(dir.path(), &["bootstrap"])).unwrap();
    let original = std::fs::read(dir.path().join("aggregate.csv")).unwrap();
    std::fs::remove_file(dir.path().join("aggregate.csv")).unwrap();
    report(dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("aggregate.csv")).unwrap(), original);
    assert!(report(&dir.path().join("nowhere")).is_err());
}

#[test]
fn ground_truth_is_kalman_only_for_linear_gaussian_models() {
    for (scenario, expected) in [
        (Scenario::LinearGaussian, Reference::Kalman),
        (Scenario::NonlinearGaussian, Reference::States),
        (Scenario::LinearExponential, Reference::States),
        (Scenario::LinearUniform, Reference::States),
        (Scenario::Sir, Reference::States),
    ] {
        let model = build_scenario(scenario, 5, 5.0, 1).unwrap();
        let traj = simulate(&model, 3, &mut Rng::new(2));
        let (reference, source) = ground_truth(&model, &traj).unwrap();
        assert_eq!(source, expected, "{scenario}");
        if expected == Reference::States {
            assert_eq!(reference, traj.states);
        } else {
            assert_ne!(reference, traj.states);
        }
    }
}

#[test]
fn surrogate_baseline_is_flagged_in_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), &["min-degeneracy"]);
    cfg.scenario = Scenario::LinearExponential;
    cfg.seeds = 1;
    run_experiment(&cfg).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("metadata.toml")).unwrap();
    assert!(meta.contains("min_degeneracy = \"gaussian-surrogate\""), "{meta}");
    assert!(meta.contains("reference = \"states\""));
}

#[test]
fn inner_averaging_never_increases_the_error() {
    // ‖mean_i e_i − r‖² ≤ mean_i ‖e_i − r‖² for every trajectory.
    let model = build_scenario(Scenario::LinearGaussian, 6, 5.0, 3).unwrap();
    for seed in 0..5 {
        let traj = simulate(&model, 8, &mut Rng::new(seed));
        let (reference, _) = ground_truth(&model, &traj).unwrap();
        let rng = Rng::new(100 + seed);
        let runs = 10;
        let (avg, failed, _) = averaged_estimate(&model, &Bootstrap, &traj.measurements, 20, 1.0 / 3.0, runs, &rng);
        assert_eq!(failed, 0);
        let averaged = nmse(&avg.unwrap(), &reference).unwrap();
        let singles: Vec<f64> = (0..runs)
            .map(|i| {
                let out = run_filter(&model, &Bootstrap, &traj.measurements, 20, 1.0 / 3.0, &rng.substream(i as u64))
                    .unwrap();
                nmse(&out.estimates, &reference).unwrap()
            })
            .collect();
        let mean_single = singles.iter().sum::<f64>() / runs as f64;
        assert!(averaged <= mean_single * (1.0 + 1e-12), "{averaged} > {mean_single}");
    }
}

#[test]
fn failed_rows_are_counted_not_aggregated() {
    let row = |seed: usize, value: f64, failed: bool| ResultRow {
        scenario: "linear-uniform".into(),
        proposal: "mlp".into(),
        n: 5,
        m: 3,
        t: 4,
        k: 10,
        seed,
        metric: "nmse".into(),
        value,
        failed,
    };
    let rows = [row(0, 0.3, false), row(1, f64::NAN, true), row(2, 0.1, false), row(3, 0.2, false)];
    let agg = aggregate_rows(&rows).unwrap();
    assert_eq!(agg.len(), 1);
    assert_eq!((agg[0].count, agg[0].failed), (3, 1));
    assert!((agg[0].median - 0.2).abs() < 1e-15);
    let all_failed = aggregate_rows(&[row(0, f64::NAN, true)]).unwrap();
    assert!(all_failed[0].median.is_nan() && all_failed[0].failed == 1);
}
