//! Independent numerical oracles shared by the integration and acceptance
//! tests: subspace iteration, power iteration, dense ridge solves and
//! finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};

use rc_core::datapipe::{Normalizer, Representation};
use rc_core::dynamics::{generate, Regime, SystemKind, Trajectory};
use rc_core::rcmodel::{autonomous_step, synchronize, train};
use rc_core::{HyperParams, Reservoir, Topology};

/// Spectral radius by block subspace iteration. The block is widened until
/// it spans an invariant subspace (equal-modulus eigenvalues from periodic
/// components need more than two columns); returns the radius and the
/// invariance residual of the final block.
pub fn subspace_spectral_radius(a: &DMatrix<f64>, iters: usize) -> (f64, f64) {
    let n = a.nrows();
    let mut best = (0.0, f64::INFINITY);
    for p in (2..=n.min(12)).step_by(2) {
        let mut q = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + 0.1 * j as f64);
        q = q.qr().q();
        for _ in 0..iters {
            q = (a * &q).qr().q();
        }
        let h = q.transpose() * a * &q;
        let residual = (a * &q - &q * &h).norm() / a.norm();
        let radius = h.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        best = (radius, residual);
        if residual < 1e-10 {
            break;
        }
    }
    best
}

/// Largest singular value by power iteration on `W^T W`.
pub fn power_singular_value(w: &DMatrix<f64>, iters: usize) -> f64 {
    let wtw = w.transpose() * w;
    let mut v = DVector::from_element(w.ncols(), 1.0).normalize();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let next = &wtw * &v;
        lambda = next.norm();
        v = next / lambda;
    }
    lambda.sqrt()
}

/// `U R^T (R R^T + mu I)^-1` through an explicit inverse, or the
/// pseudo-inverse when `mu = 0`.
pub fn dense_ridge(features: &DMatrix<f64>, targets: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    if mu == 0.0 {
        return targets * features.clone().pseudo_inverse(1e-14).unwrap();
    }
    let n = features.nrows();
    let g = features * features.transpose() + DMatrix::identity(n, n) * mu;
    targets * features.transpose() * g.try_inverse().unwrap()
}

/// Fourth-order central differences of the autonomous map.
pub fn fd_jacobian(res: &Reservoir, r: &[f64], h: f64) -> DMatrix<f64> {
    let n = r.len();
    let shifted = |c: usize, by: f64| {
        let mut x = r.to_vec();
        x[c] += by;
        autonomous_step(res, &mut x).unwrap();
        x
    };
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let (p1, m1, p2, m2) = (shifted(c, h), shifted(c, -h), shifted(c, 2.0 * h), shifted(c, -2.0 * h));
        for i in 0..n {
            j[(i, c)] = (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h);
        }
    }
    j
}

pub fn lorenz_data(steps: usize, seed: u64) -> Trajectory {
    let raw = generate(SystemKind::Lorenz, Regime::Chaotic, 0.01, steps, 2000, seed).unwrap();
    Normalizer::fit(&raw, Representation::DN).unwrap().apply(&raw)
}

/// A trained reservoir and a state on its synchronized trajectory.
pub fn trained_lorenz_reservoir(kind: Topology, size: usize, params: HyperParams, seed: u64) -> (Reservoir, Vec<f64>) {
    let data = lorenz_data(3000, seed);
    let mut res = Reservoir::build(kind, size, 3, params, seed).unwrap();
    train(&mut res, &data, 100).unwrap();
    let rows: Vec<&[f64]> = data.rows().skip(2500).collect();
    let mut r = vec![0.0; size];
    synchronize(&res, &rows, &mut r).unwrap();
    (res, r)
}

pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
