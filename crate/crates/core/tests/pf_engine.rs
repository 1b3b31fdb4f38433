mod common;

use pfkit::numerics::{Matrix, Rng};
use pfkit::pf::{
    effective_sample_size, initialize, kalman_filter, multinomial_indices, normalize_weights, resample, run_filter,
    sis_step, Bootstrap, MinDegeneracy, ParticleEnsemble, Proposal,
};
use pfkit::ssm::{build_scenario, scalar_model, simulate, sir_step, ModelSpec, Scenario, SirParams};
use pfkit::Error;
use proptest::prelude::*;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

proptest! {
    #[test]
    fn normalized_weights_are_a_distribution(
        lw in prop::collection::vec(prop_oneof![9 => -50.0..50.0f64, 1 => Just(f64::NEG_INFINITY)], 1..64),
        offset in prop_oneof![Just(0.0), Just(1000.0), Just(-1000.0), -1e4..1e4f64],
    ) {
        prop_assume!(lw.iter().any(|v| v.is_finite()));
        let shifted: Vec<f64> = lw.iter().map(|v| v + offset).collect();
        let w = normalize_weights(&shifted).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
        let w0 = normalize_weights(&lw).unwrap();
        for (a, b) in w.iter().zip(&w0) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let ess = effective_sample_size(&w);
        prop_assert!(ess >= 1.0 - 1e-12 && ess <= lw.len() as f64 + 1e-9, "ess {ess}");
    }

    #[test]
    fn resampling_restores_full_ess(
        lw in prop::collection::vec(-20.0..20.0f64, 1..50),
        seed in any::<u64>(),
    ) {
        let k = lw.len();
        let mut ens = ParticleEnsemble::new(Matrix::zeros(k, 2), Matrix::zeros(k, 1), 3);
        ens.log_weights = lw;
        let w = ens.weights().unwrap();
        let idx = resample(&mut ens, &w, &mut Rng::new(seed));
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(idx.iter().all(|&i| w[i] > 0.0));
        let after = ens.weights().unwrap();
        prop_assert!((effective_sample_size(&after) - k as f64).abs() < 1e-9);
    }
}

#[test]
fn all_impossible_weights_are_degenerate() {
    assert!(matches!(normalize_weights(&[f64::NEG_INFINITY; 4]), Err(Error::Degeneracy { .. })));
    assert!(matches!(normalize_weights(&[0.0, f64::NAN]), Err(Error::Numerical(_))));
}

#[test]
fn multinomial_frequencies_match_weights() {
    let w = [0.1, 0.2, 0.3, 0.4];
    let mut rng = Rng::new(5);
    let mut counts = [0usize; 4];
    let rounds = 50_000;
    for _ in 0..rounds {
        for i in multinomial_indices(&w, &mut rng) {
            counts[i] += 1;
        }
    }
    let total = (rounds * 4) as f64;
    for (c, p) in counts.iter().zip(w) {
        let se = (p * (1.0 - p) / total).sqrt();
        assert!((*c as f64 / total - p).abs() < 5.0 * se, "{counts:?}");
    }
}

#[test]
fn resampling_carries_memory_with_states() {
    let states = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
    let memory = Matrix::from_rows(&[vec![10.0], vec![20.0], vec![30.0]]).unwrap();
    let mut ens = ParticleEnsemble::new(states, memory, 0);
    resample(&mut ens, &[0.0, 0.0, 1.0], &mut Rng::new(1));
    for p in 0..3 {
        assert_eq!((ens.states[(p, 0)], ens.memory[(p, 0)]), (3.0, 30.0));
    }
}

fn gauss_logpdf(r: f64, var: f64) -> f64 {
    -r * r / (2.0 * var) - 0.5 * var.ln() - HALF_LN_2PI
}

#[test]
fn bootstrap_increment_is_the_measurement_likelihood() {
    let model = scalar_model(0.8, 1.5, 0.0, 1.0, 0.4, 0.3).unwrap();
    let mut rng = Rng::new(2);
    let mut ens = initialize(&model, &[0.7], 50, 0, &mut rng);
    let before = ens.log_weights.clone();
    let inc = sis_step(&mut ens, &Bootstrap, &model, &[1.1], &mut rng).unwrap();
    for p in 0..50 {
        let x = ens.states[(p, 0)];
        assert!((inc[p] - gauss_logpdf(1.1 - 1.5 * x, 0.3)).abs() < 1e-12);
        assert!((ens.log_weights[p] - before[p] - inc[p]).abs() < 1e-12);
    }
}

#[test]
fn min_degeneracy_increment_matches_importance_ratio() {
    // For the exact conditional, p(y|x) p(x|x') / π(x) does not depend on x
    // and equals the predictive density p(y|x').
    for model in [
        build_scenario(Scenario::LinearGaussian, 6, 5.0, 3).unwrap(),
        build_scenario(Scenario::NonlinearGaussian, 6, 5.0, 3).unwrap(),
    ] {
        let md = MinDegeneracy::new(&model).unwrap();
        assert!(md.is_exact());
        let mut rng = Rng::new(4);
        let x_prev = common::random_matrix(&mut rng, 8, 6, 2.0);
        let y: Vec<f64> = (0..model.m).map(|_| rng.normal()).collect();
        let draw = md.propose(&model, 1, &x_prev, &Matrix::zeros(8, 0), &y, &mut rng).unwrap();
        let pfkit::pf::Weighting::Increment(inc) = draw.weighting else { panic!("exact proposal gives increments") };
        for p in 0..8 {
            let x = draw.states.row(p);
            let ratio = model.measurement_logpdf(x, &y) + model.transition_logpdf(x_prev.row(p), x) - draw.log_q[p];
            assert!((ratio - inc[p]).abs() < 1e-8, "{ratio} vs {}", inc[p]);
        }
    }
}

#[test]
fn surrogate_min_degeneracy_keeps_gaussian_increments() {
    let model = build_scenario(Scenario::LinearExponential, 5, 5.0, 3).unwrap();
    let md = MinDegeneracy::new(&model).unwrap();
    assert!(!md.is_exact());
    let x_prev = common::random_matrix(&mut Rng::new(2), 3, 5, 1.0);
    let y = [0.1, -0.2, 0.3];
    let draw = md.propose(&model, 1, &x_prev, &Matrix::zeros(3, 0), &y, &mut Rng::new(1)).unwrap();
    let pfkit::pf::Weighting::Increment(inc) = draw.weighting else { panic!("surrogate gives increments") };
    let drift = model.drift_rows(&x_prev);
    for p in 0..3 {
        assert_eq!(inc[p], md.predictive_logpdf(&model, drift.row(p), &y));
    }
    assert_eq!(md.notes(&model), vec![("min_degeneracy".to_string(), "gaussian-surrogate".to_string())]);
}

/// Filtering means of a linear-Gaussian model by conditioning the joint
/// Gaussian of all states and measurements directly.
fn batch_posterior_means(model: &ModelSpec, ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, steps) = (model.n, model.m, ys.len());
    let mut powers = vec![Matrix::identity(n)];
    for t in 1..steps {
        powers.push(model.a.matmul(&powers[t - 1]).unwrap());
    }
    let p0 = Matrix::from_diag(&model.initial.variance);
    let sv2 = model.state_noise.variance;
    // Cov(x_t, x_u) for t ≤ u.
    let cross = |t: usize, u: usize| {
        let mut c = powers[t].matmul(&p0).unwrap().matmul_t(&powers[u]).unwrap();
        for s in 1..=t {
            c = c.add(&powers[t - s].matmul_t(&powers[u - s]).unwrap().scale(sv2)).unwrap();
        }
        c
    };
    let cov_x = |t: usize, u: usize| if t <= u { cross(t, u) } else { cross(u, t).transpose() };
    let means: Vec<Vec<f64>> = (0..steps).map(|t| powers[t].matvec(&model.initial.mean).unwrap()).collect();
    let mut out = Vec::new();
    for t in 0..steps {
        let dim = (t + 1) * m;
        let mut syy = Matrix::zeros(dim, dim);
        let mut sxy = Matrix::zeros(n, dim);
        let mut resid = vec![0.0; dim];
        for a in 0..=t {
            let pred = model.c.matvec(&means[a]).unwrap();
            for i in 0..m {
                resid[a * m + i] = ys[a][i] - pred[i];
            }
            let xy = cov_x(t, a).matmul_t(&model.c).unwrap();
            for i in 0..n {
                for j in 0..m {
                    sxy[(i, a * m + j)] = xy[(i, j)];
                }
            }
            for b in 0..=t {
                let mut block = model.c.matmul(&cov_x(a, b)).unwrap().matmul_t(&model.c).unwrap();
                if a == b {
                    block = block.add_diagonal(model.measurement_noise.variance);
                }
                for i in 0..m {
                    for j in 0..m {
                        syy[(a * m + i, b * m + j)] = block[(i, j)];
                    }
                }
            }
        }
        let gain = syy.solve(&resid).unwrap();
        let shift = sxy.matvec(&gain).unwrap();
        out.push(means[t].iter().zip(shift).map(|(a, b)| a + b).collect());
    }
    out
}

#[test]
fn kalman_matches_batch_conditioning() {
    for (n, seed) in [(4, 1), (6, 2)] {
        let model = build_scenario(Scenario::LinearGaussian, n, 5.0, seed).unwrap();
        let traj = simulate(&model, 6, &mut Rng::new(seed));
        let kf = kalman_filter(&model, &traj.measurements).unwrap();
        let batch = batch_posterior_means(&model, &traj.measurements);
        for (k, b) in kf.iter().zip(&batch) {
            for (x, y) in k.mean.iter().zip(b) {
                assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn bootstrap_filter_tracks_the_kalman_mean() {
    let model = scalar_model(0.9, 1.0, 0.5, 1.0, 0.3, 0.5).unwrap();
    let traj = simulate(&model, 10, &mut Rng::new(7));
    let kf = kalman_filter(&model, &traj.measurements).unwrap();
    let out = run_filter(&model, &Bootstrap, &traj.measurements, 20_000, 1.0 / 3.0, &Rng::new(8)).unwrap();
    for (t, (est, k)) in out.estimates.iter().zip(&kf).enumerate() {
        let sd = k.cov[(0, 0)].sqrt();
        assert!((est[0] - k.mean[0]).abs() < 0.05 * sd, "t={t}: {} vs {}", est[0], k.mean[0]);
    }
}

#[test]
fn filter_diagnostics_are_consistent() {
    let model = build_scenario(Scenario::LinearGaussian, 8, 5.0, 2).unwrap();
    let traj = simulate(&model, 12, &mut Rng::new(3));
    for proposal in [&Bootstrap as &dyn Proposal, &MinDegeneracy::new(&model).unwrap()] {
        let k = 30;
        let out = run_filter(&model, proposal, &traj.measurements, k, 1.0 / 3.0, &Rng::new(4)).unwrap();
        assert_eq!(out.estimates.len(), 13);
        for (ess, res) in out.ess.iter().zip(&out.resampled) {
            assert!(*ess >= 1.0 - 1e-12 && *ess <= k as f64 + 1e-9);
            assert_eq!(*res, *ess < k as f64 / 3.0);
        }
        assert!(out.log_likelihood.is_finite());
        let again = run_filter(&model, proposal, &traj.measurements, k, 1.0 / 3.0, &Rng::new(4)).unwrap();
        assert_eq!(out, again);
    }
}

#[test]
fn impossible_measurement_is_a_degeneracy_error() {
    let model = build_scenario(Scenario::LinearUniform, 5, 5.0, 1).unwrap();
    let mut ys = simulate(&model, 3, &mut Rng::new(1)).measurements;
    ys[2] = vec![1e6; 3];
    let err = run_filter(&model, &Bootstrap, &ys, 50, 1.0 / 3.0, &Rng::new(2)).unwrap_err();
    assert!(matches!(err, Error::Degeneracy { t: 2 }), "{err}");
}

#[test]
fn invalid_filter_arguments() {
    let model = scalar_model(1.0, 1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
    let ys = vec![vec![0.0]];
    assert!(matches!(run_filter(&model, &Bootstrap, &ys, 0, 0.5, &Rng::new(0)), Err(Error::Config(_))));
    assert!(matches!(run_filter(&model, &Bootstrap, &ys, 5, 1.5, &Rng::new(0)), Err(Error::Config(_))));
    let err = run_filter(&model, &Bootstrap, &[vec![0.0], vec![0.0, 1.0]], 5, 0.5, &Rng::new(0)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)), "{err}");
}

#[test]
fn noiseless_sir_conserves_population() {
    let p = SirParams::default();
    let mut x = [997.0, 3.0, 0.0];
    for _ in 0..199 {
        x = sir_step(x, &p, [0.0; 3]);
        assert!((x.iter().sum::<f64>() - 1000.0).abs() <= 1e-9);
    }
    assert!(x[2] > 100.0, "epidemic never spread: {x:?}");
}
