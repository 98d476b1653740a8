//! A forecasting task: simulated data for one system/regime, split into a
//! training segment, a validation segment scored by the optimizer and a test
//! segment used for reported figures of merit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{add_noise, rms_norm, NoiseSpec, Normalizer, Representation};
use crate::dynamics::{generate, Regime, SystemKind, Trajectory, DEFAULT_TRANSIENT_STEPS};
use crate::error::{Error, Result};
use crate::rcmodel::{
    evaluate, steps_for, train, EvalSettings, ForecastReport, DEFAULT_SYNC_STEPS, DEFAULT_VALID_TIME_THRESHOLD,
};
use crate::reservoir::{HyperParams, InputScaling, Reservoir, Topology};

/// Largest Lyapunov exponent of the standard Lorenz system; the time unit
/// for every Lorenz regime.
pub const LORENZ_LYAPUNOV: f64 = 0.9056;

/// Error window for Wilson–Cowan data, in system time.
pub const WILSON_COWAN_T_EVAL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub system: SystemKind,
    pub regime: Regime,
    pub representation: Representation,
    #[serde(default)]
    pub input_scaling: InputScaling,
    pub dt: f64,
    pub transient_steps: usize,
    pub train_steps: usize,
    /// Leading training states excluded from the regression.
    pub washout_steps: usize,
    pub sync_steps: usize,
    /// Error window, system time.
    pub t_eval: f64,
    /// Valid-time horizon, system time.
    pub horizon: f64,
    /// Minimum distance between forecast starts, system time.
    pub start_spacing: f64,
    /// Start points per optimizer objective.
    pub opt_starts: usize,
    /// Start points for final evaluation.
    pub eval_starts: usize,
    pub f: f64,
    /// Observational noise on the normalized training data.
    pub noise_std: f64,
    pub data_seed: u64,
}

impl TaskConfig {
    pub fn new(system: SystemKind, regime: Regime) -> TaskConfig {
        let t_eval = match system {
            SystemKind::Lorenz => 1.0 / LORENZ_LYAPUNOV,
            SystemKind::WilsonCowan => WILSON_COWAN_T_EVAL,
        };
        TaskConfig {
            system,
            regime,
            representation: Representation::DN,
            input_scaling: InputScaling::default(),
            dt: system.default_dt(),
            transient_steps: DEFAULT_TRANSIENT_STEPS,
            train_steps: 10_000,
            washout_steps: DEFAULT_SYNC_STEPS,
            sync_steps: DEFAULT_SYNC_STEPS,
            t_eval,
            horizon: default_horizon(system, regime),
            start_spacing: 5.0 * t_eval,
            opt_starts: 20,
            eval_starts: 50,
            f: DEFAULT_VALID_TIME_THRESHOLD,
            noise_std: 0.0,
            data_seed: 0,
        }
    }

    /// Reporting unit multiplier: Lyapunov times for Lorenz, raw time otherwise.
    pub fn time_scale(&self) -> f64 {
        match self.system {
            SystemKind::Lorenz => LORENZ_LYAPUNOV,
            SystemKind::WilsonCowan => 1.0,
        }
    }

    fn spacing_steps(&self) -> usize {
        steps_for(self.start_spacing, self.dt)
    }

    pub fn eval_steps(&self) -> usize {
        steps_for(self.t_eval, self.dt)
    }

    pub fn horizon_steps(&self) -> usize {
        steps_for(self.horizon, self.dt).max(self.eval_steps())
    }

    fn segment_len(&self, starts: usize, forecast_steps: usize) -> usize {
        let spacing = self.spacing_steps();
        self.sync_steps + starts.saturating_sub(1) * (spacing + spacing / 2) + spacing / 2 + forecast_steps + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_steps <= self.washout_steps + 1 {
            return Err(Error::InvalidArgument("train_steps must exceed the washout".into()));
        }
        if self.opt_starts == 0 || self.eval_starts == 0 {
            return Err(Error::InvalidArgument("need at least one forecast start".into()));
        }
        if !(self.dt > 0.0 && self.t_eval > 0.0 && self.horizon > 0.0) {
            return Err(Error::InvalidArgument("dt, t_eval and horizon must be positive".into()));
        }
        self.regime.flow(self.system).map(|_| ())
    }
}

/// Valid-time horizon (system time) long enough for every regime's forecasts.
pub fn default_horizon(system: SystemKind, regime: Regime) -> f64 {
    match (system, regime) {
        (SystemKind::Lorenz, Regime::Chaotic) => 20.0,
        (SystemKind::Lorenz, Regime::Intermittent) => 40.0,
        (SystemKind::Lorenz, _) => 120.0,
        (SystemKind::WilsonCowan, Regime::Chaotic) => 100.0,
        (SystemKind::WilsonCowan, _) => 200.0,
    }
}

#[derive(Debug, Clone)]
pub struct ForecastTask {
    pub config: TaskConfig,
    pub normalizer: Normalizer,
    /// Normalized training data, with observational noise when requested.
    pub train: Trajectory,
    pub validation: Trajectory,
    pub test: Trajectory,
    /// `<|u|^2>^(1/2)` of the clean normalized training data.
    pub norm_denominator: f64,
}

impl ForecastTask {
    pub fn generate(config: TaskConfig) -> Result<ForecastTask> {
        config.validate()?;
        let val_len = config.segment_len(config.opt_starts, config.eval_steps());
        let test_len = config.segment_len(config.eval_starts, config.horizon_steps());
        let total = config.train_steps + val_len + test_len;
        let raw = generate(
            config.system,
            config.regime,
            config.dt,
            total - 1,
            config.transient_steps,
            config.data_seed,
        )?;
        let raw_train = raw.slice(0, config.train_steps)?;
        let normalizer = Normalizer::fit(&raw_train, config.representation)?;
        let clean_train = normalizer.apply(&raw_train);
        let norm_denominator = rms_norm(&clean_train);
        let train = add_noise(
            &clean_train,
            NoiseSpec {
                std: config.noise_std,
                seed: config.data_seed ^ 0x6e6f_6973_6521,
            },
        )?;
        let validation = normalizer.apply(&raw.slice(config.train_steps, config.train_steps + val_len)?);
        let test = normalizer.apply(&raw.slice(config.train_steps + val_len, total)?);
        Ok(ForecastTask {
            config,
            normalizer,
            train,
            validation,
            test,
            norm_denominator,
        })
    }

    /// Starts on a stride of 1.5 spacings with a seeded jitter below half a
    /// spacing, so neighbours are always at least one spacing apart.
    fn starts(&self, count: usize, seed: u64) -> Vec<usize> {
        let spacing = self.config.spacing_steps();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|j| self.config.sync_steps + j * (spacing + spacing / 2) + rng.random_range(0..(spacing / 2).max(1)))
            .collect()
    }

    /// Seeded start points in the validation segment.
    pub fn validation_starts(&self, seed: u64) -> Vec<usize> {
        self.starts(self.config.opt_starts, seed)
    }

    pub fn test_starts(&self) -> Vec<usize> {
        self.starts(self.config.eval_starts, self.config.data_seed.wrapping_add(0x7465_7374))
    }

    pub fn opt_settings(&self) -> EvalSettings {
        EvalSettings {
            sync_steps: self.config.sync_steps,
            eval_steps: self.config.eval_steps(),
            horizon_steps: self.config.eval_steps(),
            f: self.config.f,
            norm_denominator: self.norm_denominator,
            time_scale: self.config.time_scale(),
        }
    }

    pub fn test_settings(&self) -> EvalSettings {
        EvalSettings {
            horizon_steps: self.config.horizon_steps(),
            ..self.opt_settings()
        }
    }

    /// Build one realization and fit its readout on the training segment.
    pub fn build_and_train(&self, kind: Topology, size: usize, params: HyperParams, seed: u64) -> Result<Reservoir> {
        let mut res = Reservoir::build_scaled(kind, size, self.train.dim(), params, self.config.input_scaling, seed)?;
        train(&mut res, &self.train, self.config.washout_steps)?;
        res.normalizer = Some(self.normalizer.clone());
        Ok(res)
    }

    pub fn evaluate_validation(&self, res: &Reservoir, starts: &[usize]) -> Result<ForecastReport> {
        evaluate(res, &self.validation, starts, &self.opt_settings())
    }

    pub fn evaluate_test(&self, res: &Reservoir) -> Result<ForecastReport> {
        evaluate(res, &self.test, &self.test_starts(), &self.test_settings())
    }
}
