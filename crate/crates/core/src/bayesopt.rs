//! Gaussian-process Bayesian optimization of reservoir hyperparameters.
//!
//! Inputs are mapped to the unit cube over the free coordinates of the
//! active [`OptRanges`]; the integer in-degree is relaxed to a continuous
//! coordinate and rounded. The surrogate is a GP with an isotropic Matérn-5/2
//! kernel whose length scale and noise ratio are picked by maximizing the
//! marginal likelihood over a small grid (signal variance profiled out).
//! Proposals maximize Expected Improvement over a seeded candidate set of
//! shifted Halton points plus Gaussian perturbations of the incumbents.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::reservoir::{HyperParams, Topology};
use crate::stats::{median, mode};
use crate::task::ForecastTask;

/// Objective floor for a perfect forecast (`log10 0`).
pub const OBJECTIVE_FLOOR: f64 = -12.0;
/// Objective for failed or divergent evaluations, `log10 10`.
pub const OBJECTIVE_PENALTY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RangeLabel {
    R,
    A,
    B,
    Custom,
}

impl fmt::Display for RangeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for RangeLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R" => Ok(RangeLabel::R),
            "A" => Ok(RangeLabel::A),
            "B" => Ok(RangeLabel::B),
            other => Err(Error::InvalidArgument(format!("unknown range set `{other}`"))),
        }
    }
}

/// Search box over the six hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptRanges {
    pub label: RangeLabel,
    pub rho: Interval,
    pub p_in: Interval,
    pub rho_in: Interval,
    pub beta: Interval,
    pub log10_mu: Interval,
    pub k: (usize, usize),
}

impl OptRanges {
    pub const fn r() -> Self {
        OptRanges {
            label: RangeLabel::R,
            rho: Interval::new(0.3, 1.5),
            p_in: Interval::new(0.0, 1.0),
            rho_in: Interval::new(0.3, 1.5),
            beta: Interval::new(0.07, 0.11),
            log10_mu: Interval::new(-5.0, 5.0),
            k: (1, 5),
        }
    }

    pub const fn a() -> Self {
        OptRanges {
            label: RangeLabel::A,
            rho: Interval::new(0.1, 1.5),
            p_in: Interval::new(0.1, 1.0),
            rho_in: Interval::new(0.1, 1.5),
            beta: Interval::new(0.05, 1.0),
            log10_mu: Interval::new(-5.0, 0.0),
            k: (1, 5),
        }
    }

    pub const fn b() -> Self {
        OptRanges {
            label: RangeLabel::B,
            rho: Interval::new(0.0, 1.5),
            p_in: Interval::new(0.0, 1.0),
            rho_in: Interval::new(0.0, 1.5),
            beta: Interval::new(0.05, 1.0),
            log10_mu: Interval::new(-5.0, 0.0),
            k: (1, 5),
        }
    }

    pub fn from_label(label: RangeLabel) -> Result<Self> {
        match label {
            RangeLabel::R => Ok(Self::r()),
            RangeLabel::A => Ok(Self::a()),
            RangeLabel::B => Ok(Self::b()),
            RangeLabel::Custom => Err(Error::InvalidArgument("custom ranges have no preset".into())),
        }
    }

    /// Iteration budget used with each preset.
    pub fn default_iterations(&self) -> usize {
        match self.label {
            RangeLabel::R | RangeLabel::Custom => 100,
            RangeLabel::A => 200,
            RangeLabel::B => 500,
        }
    }

    /// Pin the coordinates a topology does not use: `k` when fixed, and `rho`
    /// for unconnected reservoirs.
    pub fn for_topology(&self, kind: Topology) -> Self {
        let mut r = *self;
        if let Some(k) = kind.fixed_degree() {
            r.k = (k, k);
        }
        if kind == Topology::RUN {
            r.rho = Interval::point(0.0);
        }
        r
    }

    pub fn contains(&self, p: &HyperParams) -> bool {
        self.rho.contains(p.rho)
            && self.p_in.contains(p.p_in)
            && self.rho_in.contains(p.rho_in)
            && self.beta.contains(p.beta)
            && self.log10_mu.contains(p.log10_mu)
            && p.k >= self.k.0
            && p.k <= self.k.1
    }

    fn continuous(&self) -> [Interval; 5] {
        [self.rho, self.p_in, self.rho_in, self.beta, self.log10_mu]
    }

    /// Indices (0..6) of the coordinates that are free to vary.
    pub fn free_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self
            .continuous()
            .iter()
            .enumerate()
            .filter(|(_, iv)| iv.hi > iv.lo)
            .map(|(i, _)| i)
            .collect();
        if self.k.1 > self.k.0 {
            dims.push(5);
        }
        dims
    }

    /// Map a point of the unit cube (free coordinates only) to parameters.
    pub fn to_params(&self, unit: &[f64]) -> HyperParams {
        let mut coords = [0.0; 5];
        for (c, iv) in coords.iter_mut().zip(self.continuous()) {
            *c = iv.lo;
        }
        let mut k = self.k.0;
        for (&dim, &u) in self.free_dims().iter().zip(unit) {
            let u = u.clamp(0.0, 1.0);
            if dim < 5 {
                let iv = self.continuous()[dim];
                coords[dim] = iv.lo + u * (iv.hi - iv.lo);
            } else {
                let width = (self.k.1 - self.k.0 + 1) as f64;
                let relaxed = self.k.0 as f64 - 0.5 + u * width;
                k = (relaxed.round() as usize).clamp(self.k.0, self.k.1);
            }
        }
        HyperParams {
            rho: coords[0],
            p_in: coords[1],
            rho_in: coords[2],
            beta: coords[3],
            log10_mu: coords[4],
            k,
        }
    }

    /// Inverse of [`to_params`]; integers map to the centre of their bin.
    pub fn to_unit(&self, p: &HyperParams) -> Vec<f64> {
        let values = [p.rho, p.p_in, p.rho_in, p.beta, p.log10_mu];
        self.free_dims()
            .iter()
            .map(|&dim| {
                if dim < 5 {
                    let iv = self.continuous()[dim];
                    ((values[dim] - iv.lo) / (iv.hi - iv.lo)).clamp(0.0, 1.0)
                } else {
                    let width = (self.k.1 - self.k.0 + 1) as f64;
                    ((p.k.clamp(self.k.0, self.k.1) - self.k.0) as f64 + 0.5) / width
                }
            })
            .collect()
    }
}

const PRIMES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    inv = out;
    inv
}

/// Halton point `index` (1-based) with a Cranley–Patterson shift.
fn shifted_halton(index: u64, shift: &[f64]) -> Vec<f64> {
    shift
        .iter()
        .enumerate()
        .map(|(d, s)| (radical_inverse(index, PRIMES[d]) + s).fract())
        .collect()
}

fn matern52(dist: f64, length: f64) -> f64 {
    let s = 5f64.sqrt() * dist / length;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// GP regression surrogate on standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    signal_var: f64,
    pub length: f64,
    pub noise: f64,
    pub log_likelihood: f64,
}

impl GaussianProcess {
    /// Fit with length scale and noise ratio chosen by marginal likelihood
    /// over the given grids. `None` when the targets are all identical.
    pub fn fit(x: &[Vec<f64>], y: &[f64], lengths: &[f64], noises: &[f64]) -> Option<Self> {
        let mut best: Option<GaussianProcess> = None;
        for &l in lengths {
            for &g in noises {
                if let Some(gp) = Self::fit_fixed(x, y, l, g) {
                    if best.as_ref().is_none_or(|b| gp.log_likelihood > b.log_likelihood) {
                        best = Some(gp);
                    }
                }
            }
        }
        best
    }

    pub fn fit_fixed(x: &[Vec<f64>], y: &[f64], length: f64, noise: f64) -> Option<Self> {
        let n = y.len();
        if n == 0 || x.len() != n {
            return None;
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let y_std = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(y_std > 1e-12) {
            return None;
        }
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));
        let k = DMatrix::from_fn(n, n, |i, j| {
            matern52(dist(&x[i], &x[j]), length) + if i == j { noise } else { 0.0 }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(&ys);
        let signal_var = (ys.dot(&alpha) / n as f64).max(1e-300);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let log_likelihood = -0.5 * n as f64 * signal_var.ln() - 0.5 * log_det;
        Some(GaussianProcess {
            x: x.to_vec(),
            y_mean,
            y_std,
            alpha,
            chol,
            signal_var,
            length,
            noise,
            log_likelihood,
        })
    }

    /// Predictive mean and standard deviation of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let kstar = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(dist(xi, x), self.length)));
        let mean = kstar.dot(&self.alpha);
        let v = self.chol.solve(&kstar);
        let var = (self.signal_var * (1.0 - kstar.dot(&v))).max(0.0);
        (self.y_mean + self.y_std * mean, self.y_std * var.sqrt())
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` (minimization); never negative.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    let improvement = best - mean;
    if std < 1e-12 {
        return improvement.max(0.0);
    }
    let z = improvement / std;
    (improvement * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesOptConfig {
    /// Quasi-random evaluations before the surrogate is used.
    pub n_init: usize,
    pub n_candidates: usize,
    /// Share of candidates drawn around the best points so far.
    pub local_fraction: f64,
    /// Cap on GP training points (best two thirds plus most recent third).
    pub max_gp_points: usize,
}

impl Default for BayesOptConfig {
    fn default() -> Self {
        BayesOptConfig {
            n_init: 10,
            n_candidates: 1000,
            local_fraction: 0.3,
            max_gp_points: 150,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: HyperParams,
    pub value: f64,
}

fn mix(a: u64, b: u64) -> u64 {
    crate::bench::splitmix64(a ^ crate::bench::splitmix64(b))
}

fn training_subset(history: &[Evaluation], cap: usize) -> Vec<usize> {
    if history.len() <= cap {
        return (0..history.len()).collect();
    }
    let recent = cap / 3;
    let mut chosen: Vec<usize> = (history.len() - recent..history.len()).collect();
    let mut by_value: Vec<usize> = (0..history.len() - recent).collect();
    by_value.sort_by(|&a, &b| history[a].value.total_cmp(&history[b].value).then(a.cmp(&b)));
    chosen.extend(by_value.into_iter().take(cap - recent));
    chosen.sort_unstable();
    chosen
}

/// Next point to evaluate given the full history.
pub fn propose_next(history: &[Evaluation], ranges: &OptRanges, seed: u64, cfg: &BayesOptConfig) -> HyperParams {
    let dims = ranges.free_dims().len();
    if dims == 0 {
        return ranges.to_params(&[]);
    }
    let mut shift_rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dims).map(|_| shift_rng.random()).collect();
    let n = history.len();
    if n < cfg.n_init {
        return ranges.to_params(&shifted_halton(n as u64 + 1, &shift));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, n as u64));
    let subset = training_subset(history, cfg.max_gp_points);
    let x: Vec<Vec<f64>> = subset.iter().map(|&i| ranges.to_unit(&history[i].params)).collect();
    let y: Vec<f64> = subset.iter().map(|&i| history[i].value).collect();
    let scale = (dims as f64).sqrt();
    let lengths: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.8].iter().map(|l| l * scale).collect();
    let Some(gp) = GaussianProcess::fit(&x, &y, &lengths, &[1e-6, 1e-4, 1e-2, 1e-1]) else {
        let u: Vec<f64> = (0..dims).map(|_| rng.random()).collect();
        return ranges.to_params(&u);
    };
    let best = history.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);

    let n_local = (cfg.n_candidates as f64 * cfg.local_fraction).round() as usize;
    let n_global = cfg.n_candidates.saturating_sub(n_local).max(1);
    let qmc_shift: Vec<f64> = (0..dims).map(|_| rng.random()).collect();
    let mut candidates: Vec<Vec<f64>> = (0..n_global as u64)
        .map(|i| shifted_halton(i + 1, &qmc_shift))
        .collect();
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| history[a].value.total_cmp(&history[b].value).then(a.cmp(&b)));
    let anchors: Vec<Vec<f64>> = ranked
        .iter()
        .take(5)
        .map(|&i| ranges.to_unit(&history[i].params))
        .collect();
    for j in 0..n_local {
        let anchor = &anchors[j % anchors.len()];
        let width = if j % 2 == 0 { 0.02 } else { 0.08 };
        candidates.push(
            anchor
                .iter()
                .map(|a| (a + width * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
                .collect(),
        );
    }
    let mut best_idx = 0;
    let mut best_ei = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let (m, s) = gp.predict(c);
        let ei = expected_improvement(m, s, best);
        if ei > best_ei {
            best_ei = ei;
            best_idx = i;
        }
    }
    if !(best_ei > 0.0) {
        best_idx = rng.random_range(0..candidates.len());
    }
    ranges.to_params(&candidates[best_idx])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRun {
    pub ranges: OptRanges,
    pub seed: u64,
    pub n_iterations: usize,
    pub history: Vec<Evaluation>,
    /// Index of the minimum objective in `history`.
    pub best: usize,
}

impl OptRun {
    pub fn best(&self) -> &Evaluation {
        &self.history[self.best]
    }

    pub fn running_min(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::INFINITY, |m, e| {
                *m = m.min(e.value);
                Some(*m)
            })
            .collect()
    }
}

/// Minimize `objective` over `ranges` for `n_iterations` evaluations.
pub fn optimize<F>(
    mut objective: F,
    ranges: &OptRanges,
    n_iterations: usize,
    seed: u64,
    cfg: &BayesOptConfig,
) -> Result<OptRun>
where
    F: FnMut(&HyperParams) -> f64,
{
    if n_iterations < cfg.n_init || n_iterations == 0 {
        return Err(Error::InvalidArgument(format!(
            "n_iterations ({n_iterations}) must be at least n_init ({})",
            cfg.n_init
        )));
    }
    let mut history: Vec<Evaluation> = Vec::with_capacity(n_iterations);
    let mut best = 0;
    for i in 0..n_iterations {
        let params = propose_next(&history, ranges, seed, cfg);
        let value = objective(&params);
        let value = if value.is_finite() { value } else { OBJECTIVE_PENALTY };
        if i == 0 || value < history[best].value {
            best = i;
        }
        history.push(Evaluation { params, value });
    }
    Ok(OptRun {
        ranges: *ranges,
        seed,
        n_iterations,
        history,
        best,
    })
}

/// `log10 eps` of one realization on the validation starts, clamped to
/// `[OBJECTIVE_FLOOR, OBJECTIVE_PENALTY]`; any failure scores the penalty.
pub fn objective(
    params: &HyperParams,
    task: &ForecastTask,
    kind: Topology,
    size: usize,
    reservoir_seed: u64,
    starts: &[usize],
) -> f64 {
    let eval = || -> Result<f64> {
        let res = task.build_and_train(kind, size, *params, reservoir_seed)?;
        Ok(task.evaluate_validation(&res, starts)?.epsilon)
    };
    match eval() {
        Ok(eps) if eps.is_finite() => {
            if eps <= 0.0 {
                OBJECTIVE_FLOOR
            } else {
                eps.log10().clamp(OBJECTIVE_FLOOR, OBJECTIVE_PENALTY)
            }
        }
        _ => OBJECTIVE_PENALTY,
    }
}

/// One optimization run: a fresh reservoir realization and start-point set
/// drawn from `seed`, held fixed for every evaluation of the run.
pub fn optimize_task(
    task: &ForecastTask,
    kind: Topology,
    size: usize,
    ranges: &OptRanges,
    n_iterations: usize,
    seed: u64,
    cfg: &BayesOptConfig,
) -> Result<OptRun> {
    let ranges = ranges.for_topology(kind);
    let reservoir_seed = mix(seed, 0x7265_7365_7276);
    let starts = task.validation_starts(mix(seed, 0x7374_6172_7473));
    optimize(
        |p| objective(p, task, kind, size, reservoir_seed, &starts),
        &ranges,
        n_iterations,
        seed,
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub values: Vec<f64>,
    pub median: f64,
}

impl ParamSummary {
    fn of(values: Vec<f64>) -> Self {
        ParamSummary {
            median: median(&values),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptAggregate {
    pub runs: usize,
    pub rho: ParamSummary,
    pub p_in: ParamSummary,
    pub rho_in: ParamSummary,
    pub beta: ParamSummary,
    pub log10_mu: ParamSummary,
    pub k_values: Vec<usize>,
    pub k_mode: usize,
    pub k_median: f64,
    /// Mode and median of k disagree; the mode is used.
    pub k_mode_differs: bool,
    pub best_values: Vec<f64>,
    /// Medians of the continuous parameters with the modal k.
    pub params: HyperParams,
}

/// Median of each continuous parameter over the runs' bests; mode for k.
pub fn aggregate(runs: &[OptRun]) -> Result<OptAggregate> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "aggregation needs >= 2 runs, got {}",
            runs.len()
        )));
    }
    let bests: Vec<&Evaluation> = runs.iter().map(|r| r.best()).collect();
    let collect = |f: fn(&HyperParams) -> f64| ParamSummary::of(bests.iter().map(|e| f(&e.params)).collect());
    let rho = collect(|p| p.rho);
    let p_in = collect(|p| p.p_in);
    let rho_in = collect(|p| p.rho_in);
    let beta = collect(|p| p.beta);
    let log10_mu = collect(|p| p.log10_mu);
    let k_values: Vec<usize> = bests.iter().map(|e| e.params.k).collect();
    let k_mode = mode(&k_values).expect("non-empty");
    let k_median = median(&k_values.iter().map(|&k| k as f64).collect::<Vec<_>>());
    let params = HyperParams {
        rho: rho.median,
        p_in: p_in.median,
        rho_in: rho_in.median,
        beta: beta.median,
        log10_mu: log10_mu.median,
        k: k_mode,
    };
    Ok(OptAggregate {
        runs: runs.len(),
        k_mode_differs: (k_mode as f64 - k_median).abs() > 1e-9,
        best_values: bests.iter().map(|e| e.value).collect(),
        rho,
        p_in,
        rho_in,
        beta,
        log10_mu,
        k_values,
        k_mode,
        k_median,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn one_dim() -> OptRanges {
        OptRanges {
            label: RangeLabel::Custom,
            rho: Interval::new(0.0, 1.0),
            p_in: Interval::point(1.0),
            rho_in: Interval::point(1.0),
            beta: Interval::point(0.5),
            log10_mu: Interval::point(-5.0),
            k: (1, 1),
        }
    }

    #[test]
    fn presets_match_table() {
        let r = OptRanges::r();
        assert_eq!((r.beta.lo, r.beta.hi), (0.07, 0.11));
        assert_eq!((r.log10_mu.lo, r.log10_mu.hi), (-5.0, 5.0));
        let a = OptRanges::a();
        assert_eq!((a.p_in.lo, a.rho.lo, a.log10_mu.hi), (0.1, 0.1, 0.0));
        let b = OptRanges::b();
        assert_eq!((b.rho.lo, b.rho_in.lo, b.beta.lo, b.k), (0.0, 0.0, 0.05, (1, 5)));
        assert_eq!([r, a, b].map(|x| x.default_iterations()), [100, 200, 500]);
    }

    #[test]
    fn topology_pins_coordinates() {
        let r = OptRanges::b().for_topology(Topology::RUN);
        assert_eq!(r.k, (0, 0));
        assert_eq!(r.free_dims(), vec![1, 2, 3, 4]);
        assert_eq!(OptRanges::r().for_topology(Topology::Tree).free_dims().len(), 5);
        assert_eq!(OptRanges::r().free_dims().len(), 6);
    }

    #[test]
    fn empty_history_proposes_inside_ranges() {
        let ranges = OptRanges::r();
        let p = propose_next(&[], &ranges, 3, &BayesOptConfig::default());
        assert!(ranges.contains(&p));
    }

    #[test]
    fn quadratic_converges_near_minimum() {
        // Grid-search oracle: the minimizer of (x - 0.3)^2 on a 10^4 grid is 0.3.
        let oracle = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .min_by(|a, b| (a - 0.3f64).powi(2).total_cmp(&(b - 0.3f64).powi(2)))
            .unwrap();
        let run = optimize(
            |p| (p.rho - 0.3).powi(2),
            &one_dim(),
            50,
            11,
            &BayesOptConfig::default(),
        )
        .unwrap();
        assert!((run.best().params.rho - oracle).abs() < 0.02, "{:?}", run.best());
    }

    #[test]
    fn random_search_when_budget_equals_n_init() {
        let cfg = BayesOptConfig::default();
        let run = optimize(|p| p.rho, &OptRanges::a(), cfg.n_init, 5, &cfg).unwrap();
        for (i, e) in run.history.iter().enumerate() {
            assert_eq!(e.params, propose_next(&run.history[..i], &OptRanges::a(), 5, &cfg));
        }
        assert!(optimize(|p| p.rho, &OptRanges::a(), 3, 5, &cfg).is_err());
    }

    #[test]
    fn run_is_deterministic_and_best_is_monotone() {
        let f = |p: &HyperParams| (p.rho - 0.7).powi(2) + (p.beta - 0.09).abs() + 0.01 * p.k as f64;
        let cfg = BayesOptConfig {
            n_candidates: 200,
            ..Default::default()
        };
        let a = optimize(f, &OptRanges::r(), 30, 99, &cfg).unwrap();
        let b = optimize(f, &OptRanges::r(), 30, 99, &cfg).unwrap();
        assert_eq!(a, b);
        let mins = a.running_min();
        assert!(mins.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*mins.last().unwrap(), a.best().value);
        assert!(a.history.iter().all(|e| OptRanges::r().contains(&e.params)));
    }

    #[test]
    fn gp_interpolates_with_tiny_noise() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0, (i * i) as f64 / 49.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1]).collect();
        let gp = GaussianProcess::fit_fixed(&x, &y, 0.5, 1e-8).unwrap();
        for (p, v) in x.iter().zip(&y) {
            let (m, s) = gp.predict(p);
            assert!((m - v).abs() < 1e-6, "{m} vs {v}");
            assert!(s < 1e-3);
        }
        assert!(GaussianProcess::fit_fixed(&x, &[1.0; 8], 0.5, 1e-8).is_none());
    }

    #[test]
    fn ei_vanishes_at_sampled_points() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.2), 0.0);
        assert!(expected_improvement(0.5, 0.1, 0.2) > 0.0);
        assert_eq!(expected_improvement(0.1, 0.0, 0.2), 0.1f64.max(0.2 - 0.1));
    }

    proptest! {
        #[test]
        fn ei_is_non_negative(mean in -5.0f64..5.0, std in 0.0f64..3.0, best in -5.0f64..5.0) {
            prop_assert!(expected_improvement(mean, std, best) >= 0.0);
        }

        #[test]
        fn unit_mapping_stays_in_ranges(u in proptest::collection::vec(0.0f64..=1.0, 6)) {
            let ranges = OptRanges::b();
            let p = ranges.to_params(&u);
            prop_assert!(ranges.contains(&p));
            let back = ranges.to_params(&ranges.to_unit(&p));
            prop_assert_eq!(back.k, p.k);
            prop_assert!((back.rho - p.rho).abs() < 1e-12);
        }
    }

    fn run_with_best(params: HyperParams, value: f64) -> OptRun {
        OptRun {
            ranges: OptRanges::r(),
            seed: 0,
            n_iterations: 1,
            history: vec![Evaluation { params, value }],
            best: 0,
        }
    }

    #[test]
    fn aggregate_identical_runs() {
        let p = HyperParams {
            rho: 0.4,
            p_in: 0.6,
            rho_in: 0.5,
            beta: 0.08,
            log10_mu: -4.0,
            k: 2,
        };
        let runs: Vec<OptRun> = (0..20).map(|_| run_with_best(p, -1.5)).collect();
        let agg = aggregate(&runs).unwrap();
        assert_eq!(agg.params, p);
        assert!(!agg.k_mode_differs);
        assert!(aggregate(&runs[..1]).is_err());
    }

    #[test]
    fn aggregate_prefers_k_mode() {
        let ks = [1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 4, 5];
        let runs: Vec<OptRun> = ks
            .iter()
            .map(|&k| {
                run_with_best(
                    HyperParams {
                        rho: 0.3,
                        p_in: 0.5,
                        rho_in: 0.3,
                        beta: 0.08,
                        log10_mu: -5.0,
                        k,
                    },
                    0.0,
                )
            })
            .collect();
        let agg = aggregate(&runs).unwrap();
        assert_eq!(agg.k_mode, 1);
        assert_eq!(agg.k_median, 2.0);
        assert!(agg.k_mode_differs);
        assert_eq!(agg.params.k, 1);
    }

    #[test]
    fn aggregate_medians_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let runs: Vec<OptRun> = (0..21)
            .map(|_| {
                run_with_best(
                    HyperParams {
                        rho: rng.random_range(0.3..1.5),
                        p_in: rng.random(),
                        rho_in: rng.random_range(0.3..1.5),
                        beta: rng.random_range(0.07..0.11),
                        log10_mu: rng.random_range(-5.0..5.0),
                        k: rng.random_range(1..=5),
                    },
                    0.0,
                )
            })
            .collect();
        let agg = aggregate(&runs).unwrap();
        let mut rhos: Vec<f64> = runs.iter().map(|r| r.best().params.rho).collect();
        rhos.sort_by(f64::total_cmp);
        assert_eq!(agg.rho.median, rhos[10]);
        let mut mus: Vec<f64> = runs.iter().map(|r| r.best().params.log10_mu).collect();
        mus.sort_by(f64::total_cmp);
        assert_eq!(agg.log10_mu.median, mus[10]);
    }
}
