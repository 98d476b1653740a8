//! Reservoir state evolution, the symmetry-breaking readout transform, ridge
//! training of the readout and the two figures of merit (averaged RMS error
//! and valid time).
//!
//! Time alignment: `drive` consumes input `u(t)` and produces `r(t + dt)`, so
//! the readout `W_out r~(t + dt)` is trained to reproduce `u(t + dt)`. In
//! autonomous mode the readout output replaces the input.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::reservoir::Reservoir;

/// Any |r_i| at or above this value flags divergence.
pub const DIVERGENCE_BOUND: f64 = 10.0;
/// Valid-time threshold on the normalized error.
pub const DEFAULT_VALID_TIME_THRESHOLD: f64 = 0.4;
/// Teacher-forced steps before each forecast start.
pub const DEFAULT_SYNC_STEPS: usize = 100;

const GRAM_CHUNK: usize = 2048;

/// Reservoir states, one per consumed input, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSeries {
    pub dt: f64,
    pub size: usize,
    pub states: Vec<f64>,
}

impl StateSeries {
    pub fn len(&self) -> usize {
        self.states.len() / self.size.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.size..(t + 1) * self.size]
    }
}

/// `r~_i = r_i` for the first `floor(D_r/2)` nodes, `r_i^2` for the rest.
pub fn symmetry_transform(r: &[f64], out: &mut [f64]) {
    let half = r.len() / 2;
    out[..half].copy_from_slice(&r[..half]);
    for (o, v) in out[half..].iter_mut().zip(&r[half..]) {
        *o = v * v;
    }
}

pub fn symmetry_transformed(r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    symmetry_transform(r, &mut out);
    out
}

/// One leaky-tanh update `r <- (1-beta) r + beta tanh(A r + W_in u)`.
#[inline]
pub(crate) fn update(res: &Reservoir, r: &mut [f64], input: &[f64], scratch: &mut [f64]) {
    let d = input.len();
    let beta = res.params.beta;
    for (i, s) in scratch.iter_mut().enumerate() {
        let w = &res.w_in_rows[i * d..(i + 1) * d];
        let drive: f64 = w.iter().zip(input).map(|(a, b)| a * b).sum();
        *s = res.sparse.row_dot(i, r) + drive;
    }
    for (ri, s) in r.iter_mut().zip(scratch.iter()) {
        *ri = (1.0 - beta) * *ri + beta * s.tanh();
    }
}

#[inline]
fn readout(res: &Reservoir, r: &[f64], transformed: &mut [f64], y: &mut [f64]) {
    symmetry_transform(r, transformed);
    let n = r.len();
    for (k, yk) in y.iter_mut().enumerate() {
        let w = &res.w_out_rows[k * n..(k + 1) * n];
        *yk = w.iter().zip(transformed.iter()).map(|(a, b)| a * b).sum();
    }
}

fn check_bounded(r: &[f64], step: usize) -> Result<()> {
    if r.iter().all(|v| v.abs() < DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::ReservoirDiverged {
            step,
            bound: DIVERGENCE_BOUND,
        })
    }
}

fn check_input_dim(res: &Reservoir, inputs: &Trajectory) -> Result<()> {
    if inputs.dim() != res.input_dim() {
        return Err(Error::LengthMismatch(format!(
            "input dimension {} differs from reservoir input dimension {}",
            inputs.dim(),
            res.input_dim()
        )));
    }
    Ok(())
}

/// Teacher-forced evolution; returns one state per input row.
pub fn drive(res: &Reservoir, inputs: &Trajectory, r0: &[f64]) -> Result<StateSeries> {
    check_input_dim(res, inputs)?;
    let n = res.size();
    let mut r = r0.to_vec();
    let mut scratch = vec![0.0; n];
    let mut states = Vec::with_capacity(n * inputs.len());
    for (t, u) in inputs.rows().enumerate() {
        update(res, &mut r, u, &mut scratch);
        check_bounded(&r, t)?;
        states.extend_from_slice(&r);
    }
    Ok(StateSeries {
        dt: inputs.dt,
        size: n,
        states,
    })
}

/// Drive in place through `inputs`, returning the final state.
pub fn synchronize(res: &Reservoir, inputs: &[&[f64]], r: &mut [f64]) -> Result<()> {
    let mut scratch = vec![0.0; r.len()];
    for (t, u) in inputs.iter().enumerate() {
        update(res, r, u, &mut scratch);
        check_bounded(r, t)?;
    }
    Ok(())
}

/// Streaming accumulator of the ridge normal equations
/// `G = sum r~ r~^T`, `C = sum u r~^T`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
    filled: usize,
    target_sq: f64,
    pub samples: usize,
}

impl NormalEquations {
    pub fn new(size: usize, out_dim: usize) -> Self {
        NormalEquations {
            gram: DMatrix::zeros(size, size),
            cross: DMatrix::zeros(out_dim, size),
            features: DMatrix::zeros(size, GRAM_CHUNK),
            targets: DMatrix::zeros(out_dim, GRAM_CHUNK),
            filled: 0,
            target_sq: 0.0,
            samples: 0,
        }
    }

    /// Add one (raw state, target) pair; the state is transformed here.
    pub fn push(&mut self, state: &[f64], target: &[f64]) {
        let col = self.filled;
        {
            let mut f = self.features.column_mut(col);
            let half = state.len() / 2;
            for (i, v) in state.iter().enumerate() {
                f[i] = if i < half { *v } else { v * v };
            }
        }
        self.targets.column_mut(col).copy_from_slice(target);
        self.target_sq += target.iter().map(|v| v * v).sum::<f64>();
        self.filled += 1;
        self.samples += 1;
        if self.filled == GRAM_CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.filled == 0 {
            return;
        }
        let f = self.features.columns(0, self.filled);
        let t = self.targets.columns(0, self.filled);
        let ft = f.transpose();
        self.gram.gemm(1.0, &f, &ft, 1.0);
        self.cross.gemm(1.0, &t, &ft, 1.0);
        self.filled = 0;
    }

    /// `sum |u - W r~|^2 = sum |u|^2 - 2 tr(W C^T) + tr(W G W^T)`, exact up to
    /// round-off, without revisiting the samples.
    pub fn residual_sum_squares(&mut self, w: &DMatrix<f64>) -> f64 {
        self.flush();
        let cross = w.component_mul(&self.cross).sum();
        let quad = (w * &self.gram).component_mul(w).sum();
        (self.target_sq - 2.0 * cross + quad).max(0.0)
    }

    /// `W_out = C (G + mu I)^-1` via a symmetric positive-definite solve.
    pub fn solve(&mut self, mu: f64) -> Result<DMatrix<f64>> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge parameter must be >= 0, got {mu}"
            )));
        }
        self.flush();
        let n = self.gram.nrows();
        let mut system = self.gram.clone();
        for i in 0..n {
            system[(i, i)] += mu;
        }
        let rhs = self.cross.transpose();
        let chol = system.clone().cholesky();
        let solution = match chol {
            Some(c) => {
                let l = c.l();
                let diag: Vec<f64> = l.diagonal().iter().map(|v| v.abs()).collect();
                let (lo, hi) = diag
                    .iter()
                    .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
                if mu == 0.0 && (lo == 0.0 || lo / hi < 1e-10) {
                    return Err(Error::RankDeficient);
                }
                c.solve(&rhs)
            }
            None if mu == 0.0 => return Err(Error::RankDeficient),
            None => {
                // Round-off broke positive definiteness; fall back to an SVD solve.
                let svd = system.svd(true, true);
                svd.solve(&rhs, 1e-14).map_err(|e| Error::Solve(e.to_string()))?
            }
        };
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve("non-finite readout weights".into()));
        }
        Ok(solution.transpose())
    }
}

/// Ridge readout from aligned states and targets.
pub fn fit_output(states: &StateSeries, targets: &Trajectory, mu: f64) -> Result<DMatrix<f64>> {
    if states.len() != targets.len() || states.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} states vs {} targets",
            states.len(),
            targets.len()
        )));
    }
    let mut ne = NormalEquations::new(states.size, targets.dim());
    for (t, u) in targets.rows().enumerate() {
        ne.push(states.state(t), u);
    }
    ne.solve(mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub washout: usize,
    /// Root-mean-square one-step training residual.
    pub residual_rms: f64,
}

/// Teacher-force from `r = 0` over `data`, discard `washout` states and fit
/// the readout so that `W_out r~(t + dt)` reproduces `u(t + dt)`.
pub fn train(res: &mut Reservoir, data: &Trajectory, washout: usize) -> Result<TrainSummary> {
    check_input_dim(res, data)?;
    if data.len() <= washout + 1 {
        return Err(Error::LengthMismatch(format!(
            "training data of length {} does not exceed washout {washout}",
            data.len()
        )));
    }
    let n = res.size();
    let mut ne = NormalEquations::new(n, data.dim());
    let mut r = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for t in 0..data.len() - 1 {
        update(res, &mut r, data.row(t), &mut scratch);
        check_bounded(&r, t)?;
        if t >= washout {
            ne.push(&r, data.row(t + 1));
        }
    }
    let w_out = ne.solve(res.params.mu())?;
    let sq = ne.residual_sum_squares(&w_out);
    res.set_readout(w_out);
    Ok(TrainSummary {
        samples: ne.samples,
        washout,
        residual_rms: (sq / ne.samples as f64).sqrt(),
    })
}

/// Autonomous closed-loop run from `r_start`: returns `n_steps + 1` outputs,
/// the first being `W_out r~(r_start)`.
pub fn forecast(res: &Reservoir, r_start: &[f64], n_steps: usize) -> Result<Trajectory> {
    forecast_with_state(res, r_start, n_steps).map(|(t, _)| t)
}

pub fn forecast_with_state(res: &Reservoir, r_start: &[f64], n_steps: usize) -> Result<(Trajectory, Vec<f64>)> {
    if !res.is_trained() {
        return Err(Error::Untrained);
    }
    let n = res.size();
    let d = res.input_dim();
    let mut r = r_start.to_vec();
    let mut scratch = vec![0.0; n];
    let mut tr = vec![0.0; n];
    let mut y = vec![0.0; d];
    let mut out = Vec::with_capacity((n_steps + 1) * d);
    for step in 0..=n_steps {
        readout(res, &r, &mut tr, &mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::ReservoirDiverged {
                step,
                bound: DIVERGENCE_BOUND,
            });
        }
        out.extend_from_slice(&y);
        if step < n_steps {
            update(res, &mut r, &y, &mut scratch);
            check_bounded(&r, step)?;
        }
    }
    Ok((Trajectory::new(0.0, 1.0, d, out)?, r))
}

/// One step of the autonomous map, in place.
pub fn autonomous_step(res: &Reservoir, r: &mut [f64]) -> Result<()> {
    if !res.is_trained() {
        return Err(Error::Untrained);
    }
    let n = res.size();
    let mut tr = vec![0.0; n];
    let mut y = vec![0.0; res.input_dim()];
    let mut scratch = vec![0.0; n];
    readout(res, r, &mut tr, &mut y);
    update(res, r, &y, &mut scratch);
    Ok(())
}

/// Jacobian of the autonomous map at `r`:
/// `(1-beta) I + beta diag(sech^2(a)) (A + W_in W_out D_f(r))`.
pub fn rc_jacobian(res: &Reservoir, r: &[f64]) -> Result<DMatrix<f64>> {
    let w_out = res.w_out.as_ref().ok_or(Error::Untrained)?;
    let n = res.size();
    let (sech2, df) = jacobian_factors(res, w_out, r);
    let mut w_out_df = w_out.clone();
    for (j, s) in df.iter().enumerate() {
        w_out_df.column_mut(j).scale_mut(*s);
    }
    let mut inner = &res.adjacency + &res.w_in * w_out_df;
    let beta = res.params.beta;
    for i in 0..n {
        inner.row_mut(i).scale_mut(beta * sech2[i]);
        inner[(i, i)] += 1.0 - beta;
    }
    Ok(inner)
}

fn jacobian_factors(res: &Reservoir, w_out: &DMatrix<f64>, r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = res.size();
    let rt = symmetry_transformed(r);
    let y = w_out * nalgebra::DVector::from_column_slice(&rt);
    let mut sech2 = vec![0.0; n];
    let d = res.input_dim();
    for (i, s) in sech2.iter_mut().enumerate() {
        let drive: f64 = (0..d).map(|k| res.w_in_rows[i * d + k] * y[k]).sum();
        let a = res.sparse.row_dot(i, r) + drive;
        let t = a.tanh();
        *s = 1.0 - t * t;
    }
    let half = n / 2;
    let df: Vec<f64> = (0..n).map(|i| if i < half { 1.0 } else { 2.0 * r[i] }).collect();
    (sech2, df)
}

/// `J(r) * frame` without forming `J`; costs `O(D_r^2 d)` per column block.
pub fn apply_rc_jacobian(res: &Reservoir, r: &[f64], frame: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let w_out = res.w_out.as_ref().ok_or(Error::Untrained)?;
    let n = res.size();
    let (sech2, df) = jacobian_factors(res, w_out, r);
    let mut scaled = frame.clone();
    for (i, s) in df.iter().enumerate() {
        scaled.row_mut(i).scale_mut(*s);
    }
    let feedback = &res.w_in * (w_out * scaled);
    let beta = res.params.beta;
    let mut out = DMatrix::zeros(n, frame.ncols());
    for c in 0..frame.ncols() {
        let col = frame.column(c);
        let col = col.as_slice();
        for i in 0..n {
            let inner = res.sparse.row_dot(i, col) + feedback[(i, c)];
            out[(i, c)] = (1.0 - beta) * col[i] + beta * sech2[i] * inner;
        }
    }
    Ok(out)
}

/// Averaged RMS error over `P` start points, each scored over its first
/// `eval_steps` predictions: `eps = sqrt(mean_i eps_i^2)`,
/// `eps_i^2 = mean_t |u(t) - y(t)|^2`.
pub fn eval_epsilon(predictions: &[Trajectory], truths: &[Trajectory], eval_steps: usize) -> Result<f64> {
    Ok(epsilon_parts(predictions, truths, eval_steps)?.0)
}

pub fn epsilon_parts(predictions: &[Trajectory], truths: &[Trajectory], eval_steps: usize) -> Result<(f64, Vec<f64>)> {
    if predictions.is_empty() || predictions.len() != truths.len() || eval_steps == 0 {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} truth segments (eval_steps = {eval_steps})",
            predictions.len(),
            truths.len()
        )));
    }
    let mut per_start = Vec::with_capacity(predictions.len());
    for (p, u) in predictions.iter().zip(truths) {
        if p.len() < eval_steps || u.len() < eval_steps || p.dim() != u.dim() {
            return Err(Error::LengthMismatch(format!(
                "segment shorter than {eval_steps} steps or dimension mismatch"
            )));
        }
        let sq: f64 = (0..eval_steps)
            .map(|t| p.row(t).iter().zip(u.row(t)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        per_start.push((sq / eval_steps as f64).sqrt());
    }
    let mean_sq = per_start.iter().map(|e| e * e).sum::<f64>() / per_start.len() as f64;
    Ok((mean_sq.sqrt(), per_start))
}

/// Number of steps covering the horizon `t_eval`.
pub fn steps_for(t_eval: f64, dt: f64) -> usize {
    ((t_eval / dt) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidTime {
    /// Elapsed time before the normalized error first exceeds the threshold.
    pub time: f64,
    /// True when the threshold was never exceeded within the horizon.
    pub censored: bool,
}

/// First time the normalized error `|u - y| / norm_denominator` exceeds `f`.
pub fn valid_time(
    prediction: &Trajectory,
    truth: &Trajectory,
    dt: f64,
    f: f64,
    norm_denominator: f64,
) -> Result<ValidTime> {
    if !(norm_denominator > 0.0) {
        return Err(Error::DegenerateData("valid-time normalization is zero".into()));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "threshold f must lie in [0, 1], got {f}"
        )));
    }
    let len = prediction.len().min(truth.len());
    for t in 0..len {
        let err = prediction
            .row(t)
            .iter()
            .zip(truth.row(t))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        if err / norm_denominator > f {
            return Ok(ValidTime {
                time: t as f64 * dt,
                censored: false,
            });
        }
    }
    Ok(ValidTime {
        time: len as f64 * dt,
        censored: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub epsilon: f64,
    pub epsilon_per_start: Vec<f64>,
    /// Valid times in reporting units (Lyapunov times for Lorenz).
    pub valid_times: Vec<f64>,
    pub censored: Vec<bool>,
    pub median_valid_time: f64,
    pub starts: Vec<usize>,
    pub p: usize,
    pub t_eval: f64,
    pub f: f64,
    pub horizon: f64,
    pub time_scale: f64,
}

/// How forecasts are scored on a data segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub sync_steps: usize,
    /// Steps in the error window, `T_eval / dt`.
    pub eval_steps: usize,
    /// Autonomous steps used for the valid time.
    pub horizon_steps: usize,
    pub f: f64,
    pub norm_denominator: f64,
    /// Multiplier turning system time into reporting units.
    pub time_scale: f64,
}

/// Synchronize on true data ending at each start, run autonomously and score.
pub fn evaluate(res: &Reservoir, data: &Trajectory, starts: &[usize], s: &EvalSettings) -> Result<ForecastReport> {
    check_input_dim(res, data)?;
    let n_out = s.horizon_steps.max(s.eval_steps);
    let n = res.size();
    let mut predictions = Vec::with_capacity(starts.len());
    let mut truths = Vec::with_capacity(starts.len());
    let mut vts = Vec::with_capacity(starts.len());
    let mut censored = Vec::with_capacity(starts.len());
    for &start in starts {
        if start < s.sync_steps || start + n_out > data.len() {
            return Err(Error::LengthMismatch(format!(
                "start {start} needs {} sync and {n_out} forecast steps in a series of {}",
                s.sync_steps,
                data.len()
            )));
        }
        let mut r = vec![0.0; n];
        let history: Vec<&[f64]> = (start - s.sync_steps..start).map(|t| data.row(t)).collect();
        synchronize(res, &history, &mut r)?;
        let pred = forecast(res, &r, n_out - 1)?;
        let truth = data.slice(start, start + n_out)?;
        let vt = valid_time(&pred, &truth, data.dt, s.f, s.norm_denominator)?;
        vts.push(vt.time * s.time_scale);
        censored.push(vt.censored);
        predictions.push(pred);
        truths.push(truth);
    }
    let (epsilon, per_start) = epsilon_parts(&predictions, &truths, s.eval_steps)?;
    Ok(ForecastReport {
        epsilon,
        epsilon_per_start: per_start,
        median_valid_time: crate::stats::median(&vts),
        valid_times: vts,
        censored,
        starts: starts.to_vec(),
        p: starts.len(),
        t_eval: s.eval_steps as f64 * data.dt,
        f: s.f,
        horizon: n_out as f64 * data.dt * s.time_scale,
        time_scale: s.time_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::{AdjacencyScaling, HyperParams, Topology};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(beta: f64) -> HyperParams {
        HyperParams {
            rho: 0.0,
            p_in: 1.0,
            rho_in: 1.0,
            beta,
            log10_mu: -6.0,
            k: 0,
        }
    }

    fn manual(a: DMatrix<f64>, w_in: DMatrix<f64>, beta: f64) -> Reservoir {
        Reservoir::from_parts(
            Topology::ER,
            params(beta),
            0,
            AdjacencyScaling::SpectralRadius,
            a,
            w_in,
            None,
            None,
        )
    }

    fn series(dim: usize, rows: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::new(
            0.0,
            0.01,
            dim,
            (0..dim * rows).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_reservoir_stays_at_zero() {
        let res = manual(DMatrix::zeros(4, 4), DMatrix::zeros(4, 2), 0.5);
        let s = drive(&res, &series(2, 20, 1), &[0.0; 4]).unwrap();
        assert!(s.states.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_updates_match_hand_computation() {
        let res = manual(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0), 1.0);
        let u = Trajectory::new(0.0, 0.01, 1, vec![0.5; 3]).unwrap();
        let s = drive(&res, &u, &[0.0]).unwrap();
        assert!(s.states.iter().all(|v| (v - 0.5f64.tanh()).abs() < 1e-15));

        let a = 0.7;
        let res = manual(DMatrix::from_element(1, 1, a), DMatrix::zeros(1, 1), 0.5);
        let s = drive(&res, &Trajectory::new(0.0, 0.01, 1, vec![0.0]).unwrap(), &[1.0]).unwrap();
        let oracle = 0.5 * 1.0 + 0.5 * (a * 1.0f64).tanh();
        assert!((s.states[0] - oracle).abs() < 1e-15);
    }

    #[test]
    fn symmetry_transform_cases() {
        assert_eq!(symmetry_transformed(&[0.0; 6]), vec![0.0; 6]);
        assert_eq!(symmetry_transformed(&[1.0, -1.0, 2.0, -2.0]), vec![1.0, -1.0, 4.0, 4.0]);
        // Odd size: floor(5/2) = 2 linear nodes.
        assert_eq!(
            symmetry_transformed(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            vec![1.0, 2.0, 9.0, 16.0, 25.0]
        );
        let r = [0.3, -0.2, 0.5, -0.7];
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        assert_eq!(symmetry_transformed(&r)[2..], symmetry_transformed(&neg)[2..]);
    }

    fn random_states(size: usize, len: usize, seed: u64) -> StateSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StateSeries {
            dt: 0.01,
            size,
            states: (0..size * len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn ridge_shrinks_to_zero_for_huge_mu() {
        let states = random_states(6, 40, 2);
        let targets = series(2, 40, 3);
        let small = fit_output(&states, &targets, 1e-5).unwrap();
        let big = fit_output(&states, &targets, 1e12).unwrap();
        assert!(big.norm() < 1e-6 * small.norm());
    }

    #[test]
    fn exact_recovery_without_regularization() {
        let states = random_states(6, 30, 4);
        let truth = DMatrix::from_fn(2, 6, |i, j| (i as f64 - j as f64) * 0.3 + 0.1);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|t| {
                let f = nalgebra::DVector::from_vec(symmetry_transformed(states.state(t)));
                (&truth * f).iter().copied().collect()
            })
            .collect();
        let targets = Trajectory::from_rows(0.0, 0.01, &rows).unwrap();
        let w = fit_output(&states, &targets, 0.0).unwrap();
        assert!((&w - &truth).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_without_mu() {
        let states = random_states(6, 3, 5);
        let targets = series(2, 3, 6);
        assert!(matches!(fit_output(&states, &targets, 0.0), Err(Error::RankDeficient)));
        assert!(fit_output(&states, &targets, 1e-3).is_ok());
        assert!(matches!(
            fit_output(&states, &series(2, 4, 6), 1e-3),
            Err(Error::LengthMismatch(_))
        ));
    }

    fn trained_run(beta: f64) -> Reservoir {
        let mut res = manual(DMatrix::zeros(4, 4), DMatrix::zeros(4, 2), beta);
        res.set_readout(DMatrix::zeros(2, 4));
        res
    }

    #[test]
    fn forecast_zero_steps_and_geometric_decay() {
        let res = trained_run(0.25);
        let out = forecast(&res, &[1.0, -2.0, 0.5, 0.0], 0).unwrap();
        assert_eq!(out.len(), 1);
        let mut r = vec![1.0, -2.0, 0.5, 0.3];
        let r0 = r.clone();
        for step in 1..=10 {
            autonomous_step(&res, &mut r).unwrap();
            for (a, b) in r.iter().zip(&r0) {
                assert!((a - b * 0.75f64.powi(step)).abs() < 1e-14);
            }
        }
        assert!(matches!(
            forecast(&trained_run(0.5).clone_untrained(), &[0.0; 4], 1),
            Err(Error::Untrained)
        ));
    }

    impl Reservoir {
        fn clone_untrained(&self) -> Reservoir {
            let mut r = self.clone();
            r.w_out = None;
            r
        }
    }

    #[test]
    fn run_jacobian_is_diagonal_decay() {
        let res = trained_run(0.3);
        let j = rc_jacobian(&res, &[0.1, 0.2, -0.3, 0.4]).unwrap();
        assert!((&j - DMatrix::identity(4, 4) * 0.7).amax() < 1e-15);
    }

    #[test]
    fn scalar_jacobian_by_hand() {
        // One node is the linear half only when D_r = 2: use node 0 and a zero second node.
        let w_in = DMatrix::from_row_slice(2, 1, &[1.5, 0.0]);
        let mut res = manual(DMatrix::zeros(2, 2), w_in, 1.0);
        res.set_readout(DMatrix::from_row_slice(1, 2, &[0.8, 0.0]));
        let r = [0.4, 0.0];
        let j = rc_jacobian(&res, &r).unwrap();
        let w = 1.5 * 0.8;
        let sech2 = 1.0 - (w * 0.4f64).tanh().powi(2);
        assert!((j[(0, 0)] - sech2 * w).abs() < 1e-15);
    }

    #[test]
    fn epsilon_closed_forms() {
        let truth = series(3, 50, 7);
        assert_eq!(
            eval_epsilon(std::slice::from_ref(&truth), std::slice::from_ref(&truth), 50).unwrap(),
            0.0
        );
        let mut shifted = truth.clone();
        shifted.values_mut().iter_mut().for_each(|v| *v += 0.2);
        let e = eval_epsilon(&[shifted.clone(), shifted], &[truth.clone(), truth.clone()], 40).unwrap();
        assert!((e - 0.2 * 3f64.sqrt()).abs() < 1e-12);
        assert!(eval_epsilon(std::slice::from_ref(&truth), &[truth.slice(0, 10).unwrap()], 20).is_err());
    }

    #[test]
    fn valid_time_cases() {
        let truth = series(2, 100, 8);
        let v = valid_time(&truth, &truth, 0.01, 0.4, 1.0).unwrap();
        assert!(v.censored && (v.time - 1.0).abs() < 1e-12);
        let mut off = truth.clone();
        off.values_mut()[0] += 1e-3;
        assert_eq!(valid_time(&off, &truth, 0.01, 0.0, 1.0).unwrap().time, 0.0);
        // Step-function error crossing at index 37.
        let mut step = truth.clone();
        for t in 37..100 {
            step.values_mut()[t * 2] += 1.0;
        }
        let v = valid_time(&step, &truth, 0.01, 0.4, 1.0).unwrap();
        assert!(!v.censored && (v.time - 0.37).abs() < 1e-12);
        assert!(valid_time(&step, &truth, 0.01, 0.4, 0.0).is_err());
    }
}
