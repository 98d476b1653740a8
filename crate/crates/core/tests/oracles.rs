use nalgebra::DMatrix;
use proptest::prelude::*;

use rc_core::rcmodel::{
    apply_rc_jacobian, drive, fit_output, forecast, rc_jacobian, symmetry_transformed, StateSeries,
};
use rc_core::reservoir::{
    build_adjacency, build_input_matrix, scale_to_spectral_radius, spectral_radius, InputScaling,
};
use rc_core::{HyperParams, Reservoir, Topology};
use rc_validation::*;

fn params(rho: f64, beta: f64, log10_mu: f64, k: usize) -> HyperParams {
    HyperParams {
        rho,
        p_in: 0.7,
        rho_in: 0.6,
        beta,
        log10_mu,
        k,
    }
}

#[test]
fn er_spectral_radius_matches_subspace_iteration() {
    for seed in 0..6 {
        let raw = build_adjacency(Topology::ER, 40, 3, seed).unwrap();
        let (scaled, _) = scale_to_spectral_radius(&raw, 0.9);
        let (radius, residual) = subspace_spectral_radius(&scaled, 5_000);
        assert!(residual < 1e-8, "seed {seed}: subspace not converged ({residual})");
        assert!((radius - 0.9).abs() < 1e-6, "seed {seed}: {radius}");
        assert!((spectral_radius(&raw) - subspace_spectral_radius(&raw, 5_000).0).abs() < 1e-6 * spectral_radius(&raw));
    }
}

#[test]
fn singular_value_input_scaling_matches_power_iteration() {
    for seed in 0..10 {
        let w = build_input_matrix(3, 60, 0.5, 1.3, InputScaling::SingularValue, seed).unwrap();
        assert!((power_singular_value(&w, 2000) - 1.3).abs() < 1e-8);
    }
}

#[test]
fn trained_readout_satisfies_ridge_stationarity() {
    let data = lorenz_data(2000, 4);
    let mut res = Reservoir::build(Topology::ER, 30, 3, params(0.8, 0.4, -3.0, 3), 1).unwrap();
    let states = drive(&res, &data, &vec![0.0; 30]).unwrap();
    rc_core::rcmodel::train(&mut res, &data, 100).unwrap();
    let w = res.w_out.clone().unwrap();
    // Gradient of |U - W R~|^2 + mu |W|^2 vanishes at the fitted readout.
    let m = data.len() - 1 - 100;
    let feats = DMatrix::from_fn(30, m, |i, t| symmetry_transformed(states.state(t + 100))[i]);
    let targets = DMatrix::from_fn(3, m, |i, t| data.row(t + 101)[i]);
    let grad = (&w * &feats - &targets) * feats.transpose() + &w * res.params.mu();
    let scale = (&targets * feats.transpose()).norm();
    assert!(grad.norm() / scale < 1e-9, "{}", grad.norm() / scale);
}

#[test]
fn training_residual_matches_a_second_pass() {
    let data = lorenz_data(3000, 8);
    let mut res = Reservoir::build(Topology::ER, 40, 3, params(0.9, 0.3, -6.0, 2), 5).unwrap();
    let summary = rc_core::rcmodel::train(&mut res, &data, 100).unwrap();
    let states = drive(&res, &data, &vec![0.0; 40]).unwrap();
    let w = res.w_out.as_ref().unwrap();
    let mut sq = 0.0;
    for t in 100..data.len() - 1 {
        let y = w * nalgebra::DVector::from_vec(symmetry_transformed(states.state(t)));
        sq += y.iter().zip(data.row(t + 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let direct = (sq / summary.samples as f64).sqrt();
    assert!(
        (summary.residual_rms - direct).abs() < 1e-6 * direct,
        "{} vs {direct}",
        summary.residual_rms
    );
}

#[test]
fn echo_states_forget_their_initial_condition() {
    let data = lorenz_data(1500, 2);
    let res = Reservoir::build(Topology::ER, 50, 3, params(0.8, 0.3, -4.0, 3), 2).unwrap();
    let a = drive(&res, &data, &vec![0.0; 50]).unwrap();
    let b = drive(&res, &data, &vec![0.7; 50]).unwrap();
    let gap = |t: usize| {
        a.state(t)
            .iter()
            .zip(b.state(t))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    assert!(gap(0) > 0.1);
    assert!(gap(1400) < 1e-10, "{}", gap(1400));
}

#[test]
fn node_relabelling_within_halves_leaves_forecasts_unchanged() {
    let data = lorenz_data(2000, 6);
    let n = 20;
    let mut res = Reservoir::build(Topology::ER, n, 3, params(0.9, 0.5, -5.0, 2), 3).unwrap();
    // Reverse each half; the linear/squared split is preserved.
    let perm: Vec<usize> = (0..n / 2).rev().chain((n / 2..n).rev()).collect();
    let adjacency = DMatrix::from_fn(n, n, |i, j| res.adjacency[(perm[i], perm[j])]);
    let w_in = DMatrix::from_fn(n, 3, |i, j| res.w_in[(perm[i], j)]);
    let mut permuted = Reservoir::from_parts(res.kind, res.params, res.seed, res.scaling, adjacency, w_in, None, None);
    rc_core::rcmodel::train(&mut res, &data, 100).unwrap();
    rc_core::rcmodel::train(&mut permuted, &data, 100).unwrap();
    let r0: Vec<f64> = (0..n).map(|i| 0.05 * i as f64).collect();
    let r0p: Vec<f64> = perm.iter().map(|&p| r0[p]).collect();
    let a = forecast(&res, &r0, 200).unwrap();
    let b = forecast(&permuted, &r0p, 200).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
    }
}

#[test]
fn identical_seeds_give_identical_forecasts() {
    let p = params(0.7, 0.4, -4.0, 3);
    let (a, ra) = trained_lorenz_reservoir(Topology::ER, 30, p, 9);
    let (b, rb) = trained_lorenz_reservoir(Topology::ER, 30, p, 9);
    assert_eq!(ra, rb);
    assert_eq!(forecast(&a, &ra, 300).unwrap(), forecast(&b, &rb, 300).unwrap());
}

fn random_states(n: usize, len: usize, seed: u64) -> StateSeries {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let states = (0..n * len)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    StateSeries {
        dt: 0.01,
        size: n,
        states,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_matches_dense_oracle(n in 2usize..=10, len in 30usize..200, log_mu in -8.0f64..1.0, zero_mu in any::<bool>(), seed in any::<u64>()) {
        let states = random_states(n, len, seed);
        let targets_series = random_states(3, len, seed ^ 0xff);
        let targets = rc_core::dynamics::Trajectory::new(0.0, 0.01, 3, targets_series.states.clone()).unwrap();
        let mu = if zero_mu { 0.0 } else { 10f64.powf(log_mu) };
        let w = fit_output(&states, &targets, mu).unwrap();
        let feats = DMatrix::from_fn(n, len, |i, t| symmetry_transformed(states.state(t))[i]);
        let u = DMatrix::from_fn(3, len, |i, t| targets.row(t)[i]);
        let oracle = dense_ridge(&feats, &u, mu);
        prop_assert!(relative_error(&w, &oracle) < 1e-8, "{}", relative_error(&w, &oracle));
    }

    #[test]
    fn jacobian_matches_finite_differences(n in 4usize..=20, rho in 0.1f64..1.4, beta in 0.05f64..1.0, log_mu in -6.0f64..-1.0, seed in 0u64..1000) {
        let (res, r) = trained_lorenz_reservoir(Topology::ER, n, params(rho, beta, log_mu, 2), seed);
        let exact = rc_jacobian(&res, &r).unwrap();
        let fd = fd_jacobian(&res, &r, 1e-5);
        prop_assert!(relative_error(&fd, &exact) < 1e-6, "{}", relative_error(&fd, &exact));
        let frame = DMatrix::from_fn(n, 3, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        let applied = apply_rc_jacobian(&res, &r, &frame).unwrap();
        prop_assert!(relative_error(&applied, &(&exact * &frame)) < 1e-12);
    }

    #[test]
    fn scaled_adjacency_hits_target_radius(kind_ix in 0usize..5, n in 6usize..40, rho in 0.05f64..1.5, seed in any::<u64>()) {
        let kind = [Topology::ER, Topology::CycleIncluded, Topology::Tree, Topology::SingleCycle, Topology::SingleLine][kind_ix];
        let k = kind.fixed_degree().unwrap_or(3.min(n - 1));
        let raw = build_adjacency(kind, n, k, seed).unwrap();
        let (scaled, _) = scale_to_spectral_radius(&raw, rho);
        let radius = spectral_radius(&scaled);
        if radius > 0.0 {
            prop_assert!((radius - rho).abs() < 1e-9 * rho.max(1.0));
        } else {
            prop_assert!((rc_core::reservoir::largest_singular_value(&scaled) - rho).abs() < 1e-9);
        }
    }
}
