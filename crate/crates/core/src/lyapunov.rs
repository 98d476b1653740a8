//! Lyapunov spectra by evolving an orthonormal tangent frame and
//! re-orthonormalizing it with QR factorizations (Benettin's method).
//!
//! The same driver handles the true flows (variational RK4) and the trained
//! autonomous reservoir map; exponents are reported per unit system time.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step_with_tangent, Flow};
use crate::error::{Error, Result};
use crate::rcmodel::{apply_rc_jacobian, autonomous_step};
use crate::reservoir::Reservoir;

/// A discrete-time map together with its tangent dynamics.
pub trait TangentMap {
    fn dim(&self) -> usize;
    /// System time advanced by one application of the map.
    fn time_step(&self) -> f64;
    /// Advance `state` by one step and push `frame` through the Jacobian
    /// evaluated at the pre-step state.
    fn step(&self, state: &mut [f64], frame: &mut DMatrix<f64>) -> Result<()>;
}

/// The RK4 map of an ODE flow, with exactly differentiated stages.
#[derive(Debug, Clone, Copy)]
pub struct FlowMap {
    pub flow: Flow,
    pub dt: f64,
}

impl TangentMap for FlowMap {
    fn dim(&self) -> usize {
        self.flow.dim()
    }

    fn time_step(&self) -> f64 {
        self.dt
    }

    fn step(&self, state: &mut [f64], frame: &mut DMatrix<f64>) -> Result<()> {
        rk4_step_with_tangent(&self.flow, state, frame, self.dt);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationDiverged { step: 0 });
        }
        Ok(())
    }
}

/// The autonomous (closed-loop) map of a trained reservoir.
#[derive(Debug, Clone, Copy)]
pub struct ReservoirMap<'a> {
    pub reservoir: &'a Reservoir,
    pub dt: f64,
}

impl TangentMap for ReservoirMap<'_> {
    fn dim(&self) -> usize {
        self.reservoir.size()
    }

    fn time_step(&self) -> f64 {
        self.dt
    }

    fn step(&self, state: &mut [f64], frame: &mut DMatrix<f64>) -> Result<()> {
        *frame = apply_rc_jacobian(self.reservoir, state, frame)?;
        autonomous_step(self.reservoir, state)
    }
}

/// A fixed linear map `x -> M x` applied once per `dt`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
    pub dt: f64,
}

impl TangentMap for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn time_step(&self) -> f64 {
        self.dt
    }

    fn step(&self, state: &mut [f64], frame: &mut DMatrix<f64>) -> Result<()> {
        let next = &self.matrix * nalgebra::DVector::from_column_slice(state);
        state.copy_from_slice(next.as_slice());
        *frame = &self.matrix * &*frame;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Descending, per unit time.
    pub exponents: Vec<f64>,
    pub n_steps: usize,
    pub renorm_every: usize,
    pub time_step: f64,
}

impl LyapunovResult {
    pub fn top(&self, n: usize) -> &[f64] {
        &self.exponents[..n.min(self.exponents.len())]
    }
}

/// Estimate the `n_exponents` largest exponents along `n_steps` of the map.
pub fn lyapunov_spectrum<M: TangentMap>(
    map: &M,
    initial_state: &[f64],
    n_steps: usize,
    n_exponents: usize,
    renorm_every: usize,
) -> Result<LyapunovResult> {
    let dim = map.dim();
    if n_exponents == 0 || n_exponents > dim || renorm_every == 0 || n_steps == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= n_exponents <= {dim}, renorm_every >= 1, n_steps >= 1"
        )));
    }
    if initial_state.len() != dim {
        return Err(Error::LengthMismatch(format!(
            "initial state has {} entries, map dimension is {dim}",
            initial_state.len()
        )));
    }
    let mut state = initial_state.to_vec();
    let mut frame = DMatrix::<f64>::identity(dim, n_exponents);
    let mut sums = vec![0.0; n_exponents];
    for step in 1..=n_steps {
        map.step(&mut state, &mut frame)?;
        if step % renorm_every == 0 || step == n_steps {
            let qr = frame.qr();
            let r = qr.r();
            for (i, s) in sums.iter_mut().enumerate() {
                let d = r[(i, i)].abs();
                if !(d > 1e-300) || !d.is_finite() {
                    return Err(Error::FrameCollapse { step });
                }
                *s += d.ln();
            }
            frame = qr.q();
        }
    }
    let total_time = n_steps as f64 * map.time_step();
    let mut exponents: Vec<f64> = sums.iter().map(|s| s / total_time).collect();
    exponents.sort_by(|a, b| b.total_cmp(a));
    Ok(LyapunovResult {
        exponents,
        n_steps,
        renorm_every,
        time_step: map.time_step(),
    })
}
