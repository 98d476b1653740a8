//! Experiment harness: seeded optimization and evaluation campaigns over
//! topologies, sizes, noise levels and system regimes, with JSON persistence
//! and CSV tables for plotting.
//!
//! Every experiment is a cartesian product of conditions
//! (case x topology x D_r^O x training length x noise x D_r x variant).
//! Hyperparameters are optimized once per (case, topology, D_r^O, training
//! length, noise) and shared by all sizes and variants of that key.
//!
//! Seeds derive from the master seed as
//! `splitmix64(splitmix64(master ^ fnv1a(label)) + index)`:
//! `data/{system}/{regime}` for the simulated data, `optimization/...` for
//! each optimization run and `realization/{topology}` for reservoir draws.
//! Realization seeds ignore size, noise and variant so those comparisons use
//! the same random networks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bayesopt::{aggregate, optimize_task, BayesOptConfig, OptAggregate, OptRanges, OptRun, RangeLabel};
use crate::datapipe::Representation;
use crate::dynamics::{Flow, Regime, SystemKind};
use crate::error::{Error, Result};
use crate::lyapunov::{lyapunov_spectrum, FlowMap, ReservoirMap};
use crate::rcmodel::{autonomous_step, synchronize};
use crate::reservoir::{HyperParams, InputScaling, Topology};
use crate::stats::{gaussian_kde, iqr, median, Kde};
use crate::task::{ForecastTask, TaskConfig};

/// Gaussian KDE bandwidth in log10 epsilon.
pub const KDE_BANDWIDTH: f64 = 0.1;
pub const KDE_POINTS: usize = 201;
/// Epsilon recorded for realizations that fail to build, train or forecast.
pub const FAILURE_EPSILON: f64 = 10.0;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label)).wrapping_add(index))
}

/// Parse JSON, reporting failures with a byte offset.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let (line, column) = (e.line(), e.column());
        Error::Parse {
            offset: byte_offset(text, line, column),
            line,
            column,
            message: e.to_string(),
        }
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TopologyCompare,
    SizeSweep,
    LyapunovHist,
    NoiseSweep,
    RegimeTable,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::TopologyCompare,
        ExperimentKind::SizeSweep,
        ExperimentKind::LyapunovHist,
        ExperimentKind::NoiseSweep,
        ExperimentKind::RegimeTable,
    ];
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::TopologyCompare => "topology_compare",
            ExperimentKind::SizeSweep => "size_sweep",
            ExperimentKind::LyapunovHist => "lyapunov_hist",
            ExperimentKind::NoiseSweep => "noise_sweep",
            ExperimentKind::RegimeTable => "regime_table",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.to_string() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Case {
    pub system: SystemKind,
    pub regime: Regime,
}

impl Case {
    pub fn lorenz_chaotic() -> Case {
        Case {
            system: SystemKind::Lorenz,
            regime: Regime::Chaotic,
        }
    }

    /// The three regimes of each system.
    pub fn all() -> Vec<Case> {
        let lorenz = [Regime::Chaotic, Regime::Intermittent, Regime::Periodic];
        let wc = [Regime::Chaotic, Regime::Quasiperiodic, Regime::Periodic];
        lorenz
            .iter()
            .map(|&regime| Case {
                system: SystemKind::Lorenz,
                regime,
            })
            .chain(wc.iter().map(|&regime| Case {
                system: SystemKind::WilsonCowan,
                regime,
            }))
            .collect()
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.system, self.regime)
    }
}

/// Post-optimization override applied to the aggregated hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Optimized,
    FixedBeta { beta: f64 },
    FixedLog10Mu { log10_mu: f64 },
}

impl Variant {
    pub fn apply(&self, p: HyperParams) -> HyperParams {
        match *self {
            Variant::Optimized => p,
            Variant::FixedBeta { beta } => HyperParams { beta, ..p },
            Variant::FixedLog10Mu { log10_mu } => HyperParams { log10_mu, ..p },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Optimized => f.write_str("optimized"),
            Variant::FixedBeta { beta } => write!(f, "beta={beta}"),
            Variant::FixedLog10Mu { log10_mu } => write!(f, "log10_mu={log10_mu}"),
        }
    }
}

/// Extra variant evaluated next to the optimized parameters, optionally for
/// one topology only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraVariant {
    pub variant: Variant,
    pub topology: Option<Topology>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSettings {
    /// Autonomous steps discarded before the frame is started.
    pub transient_steps: usize,
    pub steps: usize,
    pub renorm_every: usize,
    /// Exponents per reservoir, capped at D_r.
    pub exponents: usize,
    /// Steps for the true-flow reference spectrum.
    pub reference_steps: usize,
}

impl Default for LyapunovSettings {
    fn default() -> Self {
        LyapunovSettings {
            transient_steps: 1_000,
            steps: 20_000,
            renorm_every: 10,
            exponents: 100,
            reference_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub cases: Vec<Case>,
    pub representation: Representation,
    pub input_scaling: InputScaling,
    pub ranges: RangeLabel,
    pub iterations: usize,
    pub topologies: Vec<Topology>,
    /// In-degree pinned for ER reservoirs during optimization.
    pub er_degree: Option<usize>,
    pub dr: Vec<usize>,
    pub dr_opt: Vec<usize>,
    pub train_steps: Vec<usize>,
    /// Training length used by every optimization; `None` optimizes at each
    /// condition's own length.
    pub opt_train_steps: Option<usize>,
    pub realizations: usize,
    pub opt_runs: usize,
    /// Start points per objective evaluation.
    pub opt_starts: usize,
    /// Start points per evaluated realization.
    pub eval_starts: usize,
    pub noise_std: Vec<f64>,
    pub extra_variants: Vec<ExtraVariant>,
    /// Compute reservoir Lyapunov spectra for every realization.
    pub measure_lyapunov: bool,
    pub lyapunov: LyapunovSettings,
    pub bo: BayesOptConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Laptop-scale defaults: 20 realizations, 5 optimization runs.
    pub fn desk(experiment: ExperimentKind) -> ExperimentConfig {
        let connected = vec![
            Topology::ER,
            Topology::CycleIncluded,
            Topology::Tree,
            Topology::SingleCycle,
            Topology::SingleLine,
        ];
        let mut cfg = ExperimentConfig {
            experiment,
            cases: vec![Case::lorenz_chaotic()],
            representation: Representation::DN,
            input_scaling: InputScaling::default(),
            ranges: RangeLabel::B,
            iterations: OptRanges::b().default_iterations(),
            topologies: vec![Topology::ER, Topology::RUN],
            er_degree: None,
            dr: vec![100],
            dr_opt: vec![100],
            train_steps: vec![10_000],
            opt_train_steps: None,
            realizations: 20,
            opt_runs: 5,
            opt_starts: 20,
            eval_starts: 50,
            noise_std: vec![0.0],
            extra_variants: vec![],
            measure_lyapunov: false,
            lyapunov: LyapunovSettings::default(),
            bo: BayesOptConfig::default(),
            seed: 0,
        };
        match experiment {
            ExperimentKind::TopologyCompare => {
                cfg.representation = Representation::EN;
                cfg.ranges = RangeLabel::R;
                cfg.iterations = OptRanges::r().default_iterations();
                cfg.topologies = Topology::ALL.to_vec();
            }
            ExperimentKind::SizeSweep => {
                cfg.topologies = connected;
                cfg.topologies.push(Topology::RUN);
                cfg.dr = (1..=9).map(|i| 50 * i).collect();
                cfg.train_steps = vec![10_000, 100_000];
                cfg.opt_train_steps = Some(10_000);
                cfg.extra_variants = vec![ExtraVariant {
                    variant: Variant::FixedLog10Mu { log10_mu: -4.0 },
                    topology: Some(Topology::RUN),
                }];
            }
            ExperimentKind::LyapunovHist => {
                cfg.topologies = vec![Topology::ER, Topology::CycleIncluded, Topology::RUN];
                cfg.measure_lyapunov = true;
            }
            ExperimentKind::NoiseSweep => {
                cfg.er_degree = Some(2);
                cfg.realizations = 50;
                cfg.noise_std = vec![0.0, 0.001, 0.01, 0.1];
                cfg.extra_variants = vec![ExtraVariant {
                    variant: Variant::FixedBeta { beta: 0.05 },
                    topology: None,
                }];
            }
            ExperimentKind::RegimeTable => {
                cfg.cases = Case::all();
                cfg.train_steps = vec![10_000, 100_000];
                cfg.opt_train_steps = Some(10_000);
            }
        }
        cfg
    }

    /// Full-size campaign: 20 optimization runs per key and the realization
    /// counts of the full campaigns. Expect hours of compute.
    pub fn paper_scale(experiment: ExperimentKind) -> ExperimentConfig {
        let mut cfg = Self::desk(experiment);
        cfg.opt_runs = 20;
        cfg.opt_train_steps = None;
        cfg.realizations = match experiment {
            ExperimentKind::TopologyCompare | ExperimentKind::RegimeTable => 200,
            ExperimentKind::SizeSweep => 100,
            ExperimentKind::LyapunovHist => 20,
            ExperimentKind::NoiseSweep => 50,
        };
        if experiment == ExperimentKind::SizeSweep {
            cfg.dr_opt = vec![100, 300];
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.cases.is_empty() || self.topologies.is_empty() {
            return bad("need at least one case and one topology");
        }
        if self.dr.is_empty() || self.dr_opt.is_empty() || self.train_steps.is_empty() || self.noise_std.is_empty() {
            return bad("dr, dr_opt, train_steps and noise_std must be non-empty");
        }
        if self.dr.iter().chain(&self.dr_opt).any(|&n| n < 2) {
            return bad("reservoir sizes must be >= 2");
        }
        if self.noise_std.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels must be >= 0");
        }
        if self.realizations == 0 {
            return bad("realizations must be >= 1");
        }
        if self.opt_runs < 2 {
            return bad("opt_runs must be >= 2 for median aggregation");
        }
        if self.iterations < self.bo.n_init {
            return bad("iterations must be >= the initial design size");
        }
        if self.er_degree.is_some_and(|k| k == 0) {
            return bad("er_degree must be >= 1");
        }
        for case in &self.cases {
            case.regime.flow(case.system)?;
        }
        OptRanges::from_label(self.ranges).map(|_| ())
    }

    fn task_config(&self, case: Case, train_steps: usize, noise_std: f64) -> TaskConfig {
        let mut t = TaskConfig::new(case.system, case.regime);
        t.representation = self.representation;
        t.input_scaling = self.input_scaling;
        t.train_steps = train_steps;
        t.noise_std = noise_std;
        t.opt_starts = self.opt_starts;
        t.eval_starts = self.eval_starts;
        t.data_seed = derive_seed(self.seed, &format!("data/{case}"), 0);
        t
    }
}

/// Optional overrides mirroring the command-line flags; also the schema of
/// the configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<ExperimentKind>,
    pub system: Option<SystemKind>,
    pub regime: Option<String>,
    pub topology: Option<Vec<Topology>>,
    pub ranges: Option<RangeLabel>,
    pub iterations: Option<usize>,
    pub dr: Option<Vec<usize>>,
    pub dr_opt: Option<Vec<usize>>,
    pub train_steps: Option<Vec<usize>>,
    pub opt_train_steps: Option<usize>,
    pub realizations: Option<usize>,
    pub opt_runs: Option<usize>,
    pub opt_starts: Option<usize>,
    pub eval_starts: Option<usize>,
    pub noise_std: Option<Vec<f64>>,
    pub representation: Option<Representation>,
    pub input_scaling: Option<InputScaling>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub paper_scale: Option<bool>,
}

impl ConfigOverrides {
    /// Later values win.
    pub fn merge(self, later: ConfigOverrides) -> ConfigOverrides {
        macro_rules! pick {
            ($($f:ident),*) => {
                ConfigOverrides { $($f: later.$f.or(self.$f)),* }
            };
        }
        pick!(
            experiment,
            system,
            regime,
            topology,
            ranges,
            iterations,
            dr,
            dr_opt,
            train_steps,
            opt_train_steps,
            realizations,
            opt_runs,
            opt_starts,
            eval_starts,
            noise_std,
            representation,
            input_scaling,
            seed,
            out,
            paper_scale
        )
    }

    /// Defaults for the chosen experiment and scale, with overrides applied.
    pub fn resolve(&self, experiment: ExperimentKind) -> Result<ExperimentConfig> {
        let experiment = self.experiment.unwrap_or(experiment);
        let mut cfg = if self.paper_scale.unwrap_or(false) {
            ExperimentConfig::paper_scale(experiment)
        } else {
            ExperimentConfig::desk(experiment)
        };
        match (self.system, &self.regime) {
            (Some(system), regime) => {
                let regime = Regime::parse(system, regime.as_deref().unwrap_or("chaotic"))?;
                cfg.cases = vec![Case { system, regime }];
            }
            (None, Some(regime)) => {
                let system = cfg.cases[0].system;
                cfg.cases = vec![Case {
                    system,
                    regime: Regime::parse(system, regime)?,
                }];
            }
            (None, None) => {}
        }
        if let Some(ranges) = self.ranges {
            cfg.ranges = ranges;
            cfg.iterations = OptRanges::from_label(ranges)?.default_iterations();
        }
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {
                $(if let Some(v) = &self.$f { cfg.$g = v.clone(); })*
            };
        }
        set!(
            topology => topologies, iterations => iterations, dr => dr, dr_opt => dr_opt,
            train_steps => train_steps, realizations => realizations, opt_runs => opt_runs,
            opt_starts => opt_starts, eval_starts => eval_starts, noise_std => noise_std,
            representation => representation, input_scaling => input_scaling, seed => seed
        );
        if self.opt_train_steps.is_some() {
            cfg.opt_train_steps = self.opt_train_steps;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub case: Case,
    pub topology: Topology,
    pub variant: Variant,
    pub size: usize,
    pub size_opt: usize,
    pub train_steps: usize,
    pub noise_std: f64,
    /// Index into the report's optimizations.
    pub optimization: usize,
    /// Hyperparameters used by every realization of this condition.
    pub params: HyperParams,
}

impl Condition {
    pub fn label(&self) -> String {
        format!(
            "{}|{}|{}|Dr={}|DrO={}|train={}|noise={}",
            self.case, self.topology, self.variant, self.size, self.size_opt, self.train_steps, self.noise_std
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OptimizationKey {
    pub case: Case,
    pub topology: Topology,
    pub size: usize,
    pub train_steps: usize,
    /// Noise standard deviation, as raw bits for exact ordering.
    pub noise_bits: u64,
}

impl OptimizationKey {
    pub fn noise_std(&self) -> f64 {
        f64::from_bits(self.noise_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub key: OptimizationKey,
    pub ranges: OptRanges,
    pub runs: Vec<OptRun>,
    pub aggregate: OptAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub condition: usize,
    pub realization: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub valid_time: f64,
    /// Share of start points whose forecast never crossed the threshold.
    pub censored_fraction: f64,
    /// Descending reservoir Lyapunov exponents, per unit system time.
    pub lyapunov: Vec<f64>,
    pub failure: Option<String>,
}

impl RealizationRecord {
    pub fn log10_epsilon(&self) -> f64 {
        self.epsilon.max(1e-300).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: usize,
    pub n: usize,
    pub failures: usize,
    pub median_epsilon: f64,
    pub median_valid_time: f64,
    pub iqr_log10_epsilon: f64,
    pub iqr_valid_time: f64,
    /// Density of log10 epsilon.
    pub kde: Kde,
    pub lyapunov_median: Vec<f64>,
    pub lyapunov_iqr: Vec<f64>,
}

/// True-flow spectrum drawn as reference lines next to reservoir spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpectrum {
    pub case: Case,
    pub exponents: Vec<f64>,
}

/// Wall-clock figures; never feed any scientific field.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub optimization_seconds: f64,
    pub evaluation_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub conditions: Vec<Condition>,
    pub optimizations: Vec<OptimizationRecord>,
    pub records: Vec<RealizationRecord>,
    pub summaries: Vec<ConditionSummary>,
    pub references: Vec<ReferenceSpectrum>,
    pub timing: Timing,
}

pub fn run_topology_compare(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_as(config, ExperimentKind::TopologyCompare)
}

pub fn run_size_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_as(config, ExperimentKind::SizeSweep)
}

pub fn run_lyapunov_hist(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_as(config, ExperimentKind::LyapunovHist)
}

pub fn run_noise_sweep(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_as(config, ExperimentKind::NoiseSweep)
}

pub fn run_regime_table(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_as(config, ExperimentKind::RegimeTable)
}

fn run_as(config: &ExperimentConfig, kind: ExperimentKind) -> Result<ExperimentReport> {
    if config.experiment != kind {
        return Err(Error::InvalidArgument(format!(
            "config is for {}, not {kind}",
            config.experiment
        )));
    }
    run_experiment(config)
}

type TaskKey = (Case, usize, u64);

/// Run the full campaign described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let base_ranges = OptRanges::from_label(config.ranges)?;

    let mut keys: Vec<OptimizationKey> = Vec::new();
    let mut planned: Vec<(OptimizationKey, Condition)> = Vec::new();
    for &case in &config.cases {
        for &topology in &config.topologies {
            let variants: Vec<Variant> = std::iter::once(Variant::Optimized)
                .chain(
                    config
                        .extra_variants
                        .iter()
                        .filter(|v| v.topology.is_none_or(|t| t == topology))
                        .map(|v| v.variant),
                )
                .collect();
            for &size_opt in &config.dr_opt {
                for &train_steps in &config.train_steps {
                    for &noise_std in &config.noise_std {
                        let key = OptimizationKey {
                            case,
                            topology,
                            size: size_opt,
                            train_steps: config.opt_train_steps.unwrap_or(train_steps),
                            noise_bits: noise_std.to_bits(),
                        };
                        if !keys.contains(&key) {
                            keys.push(key);
                        }
                        for &size in &config.dr {
                            for &variant in &variants {
                                planned.push((
                                    key,
                                    Condition {
                                        case,
                                        topology,
                                        variant,
                                        size,
                                        size_opt,
                                        train_steps,
                                        noise_std,
                                        optimization: 0,
                                        params: HyperParams::default(),
                                    },
                                ));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut task_keys: Vec<TaskKey> = keys.iter().map(|k| (k.case, k.train_steps, k.noise_bits)).collect();
    task_keys.extend(
        planned
            .iter()
            .map(|(_, c)| (c.case, c.train_steps, c.noise_std.to_bits())),
    );
    task_keys.sort();
    task_keys.dedup();
    let tasks: BTreeMap<TaskKey, ForecastTask> = task_keys
        .par_iter()
        .map(|&(case, train, bits)| {
            ForecastTask::generate(config.task_config(case, train, f64::from_bits(bits)))
                .map(|t| ((case, train, bits), t))
        })
        .collect::<Result<_>>()?;

    let opt_started = Instant::now();
    let opt_items: Vec<(usize, usize)> = (0..keys.len())
        .flat_map(|k| (0..config.opt_runs).map(move |r| (k, r)))
        .collect();
    let runs: Vec<OptRun> = opt_items
        .par_iter()
        .map(|&(k, run)| {
            let key = keys[k];
            let task = &tasks[&(key.case, key.train_steps, key.noise_bits)];
            let ranges = key_ranges(&base_ranges, config, key.topology);
            let label = format!(
                "optimization/{}/{}/{}/{}",
                key.case, key.topology, key.size, key.train_steps
            );
            let seed = derive_seed(config.seed, &label, run as u64);
            optimize_task(
                task,
                key.topology,
                key.size,
                &ranges,
                config.iterations,
                seed,
                &config.bo,
            )
        })
        .collect::<Result<_>>()?;
    let mut optimizations = Vec::with_capacity(keys.len());
    for (k, chunk) in runs.chunks(config.opt_runs).enumerate() {
        optimizations.push(OptimizationRecord {
            key: keys[k],
            ranges: key_ranges(&base_ranges, config, keys[k].topology),
            runs: chunk.to_vec(),
            aggregate: aggregate(chunk)?,
        });
    }
    let optimization_seconds = opt_started.elapsed().as_secs_f64();

    let conditions: Vec<Condition> = planned
        .into_iter()
        .map(|(key, mut c)| {
            c.optimization = keys.iter().position(|k| *k == key).expect("planned key");
            let agg = &optimizations[c.optimization].aggregate;
            c.params = c.variant.apply(agg.params);
            c
        })
        .collect();

    let eval_started = Instant::now();
    let items: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..config.realizations).map(move |i| (c, i)))
        .collect();
    let records: Vec<RealizationRecord> = items
        .par_iter()
        .map(|&(ci, i)| {
            let c = &conditions[ci];
            let task = &tasks[&(c.case, c.train_steps, c.noise_std.to_bits())];
            let seed = derive_seed(config.seed, &format!("realization/{}", c.topology), i as u64);
            evaluate_realization(config, task, c, ci, i, seed)
        })
        .collect();
    let evaluation_seconds = eval_started.elapsed().as_secs_f64();

    let summaries = (0..conditions.len())
        .map(|ci| summarize(ci, records.iter().filter(|r| r.condition == ci)))
        .collect();

    let references = if config.measure_lyapunov {
        config
            .cases
            .iter()
            .map(|&case| {
                reference_spectrum(
                    case,
                    &config.lyapunov,
                    derive_seed(config.seed, &format!("data/{case}"), 0),
                )
            })
            .collect::<Result<_>>()?
    } else {
        vec![]
    };

    Ok(ExperimentReport {
        config: config.clone(),
        conditions,
        optimizations,
        records,
        summaries,
        references,
        timing: Timing {
            total_seconds: started.elapsed().as_secs_f64(),
            optimization_seconds,
            evaluation_seconds,
        },
    })
}

fn key_ranges(base: &OptRanges, config: &ExperimentConfig, topology: Topology) -> OptRanges {
    let mut r = base.for_topology(topology);
    if topology == Topology::ER {
        if let Some(k) = config.er_degree {
            r.k = (k, k);
        }
    }
    r
}

fn evaluate_realization(
    config: &ExperimentConfig,
    task: &ForecastTask,
    c: &Condition,
    condition: usize,
    realization: usize,
    seed: u64,
) -> RealizationRecord {
    let measured = || -> Result<(f64, f64, f64, Vec<f64>)> {
        let res = task.build_and_train(c.topology, c.size, c.params, seed)?;
        let report = task.evaluate_test(&res)?;
        let censored = report.censored.iter().filter(|c| **c).count() as f64 / report.censored.len() as f64;
        let lyapunov = if config.measure_lyapunov {
            reservoir_spectrum(&res, task, &config.lyapunov)?
        } else {
            vec![]
        };
        Ok((report.epsilon, report.median_valid_time, censored, lyapunov))
    };
    match measured() {
        Ok((epsilon, valid_time, censored_fraction, lyapunov)) if epsilon.is_finite() => RealizationRecord {
            condition,
            realization,
            seed,
            epsilon,
            valid_time,
            censored_fraction,
            lyapunov,
            failure: None,
        },
        other => RealizationRecord {
            condition,
            realization,
            seed,
            epsilon: FAILURE_EPSILON,
            valid_time: 0.0,
            censored_fraction: 0.0,
            lyapunov: vec![],
            failure: Some(match other {
                Err(e) => e.to_string(),
                Ok(_) => "non-finite error".into(),
            }),
        },
    }
}

/// Spectrum of the trained closed-loop reservoir, started from a state
/// synchronized on the test segment.
pub fn reservoir_spectrum(res: &crate::Reservoir, task: &ForecastTask, s: &LyapunovSettings) -> Result<Vec<f64>> {
    let sync = task.config.sync_steps.min(task.test.len());
    let rows: Vec<&[f64]> = task.test.rows().take(sync).collect();
    let mut r = vec![0.0; res.size()];
    synchronize(res, &rows, &mut r)?;
    for _ in 0..s.transient_steps {
        autonomous_step(res, &mut r)?;
    }
    let map = ReservoirMap {
        reservoir: res,
        dt: task.config.dt,
    };
    let n = s.exponents.min(res.size());
    Ok(lyapunov_spectrum(&map, &r, s.steps, n, s.renorm_every)?.exponents)
}

fn reference_spectrum(case: Case, s: &LyapunovSettings, seed: u64) -> Result<ReferenceSpectrum> {
    let dt = case.system.default_dt();
    let start = crate::dynamics::generate(
        case.system,
        case.regime,
        dt,
        1,
        crate::dynamics::DEFAULT_TRANSIENT_STEPS,
        seed,
    )?;
    let flow: Flow = case.regime.flow(case.system)?;
    let map = FlowMap { flow, dt };
    let exponents = lyapunov_spectrum(&map, start.row(0), s.reference_steps, flow.dim(), 1)?.exponents;
    Ok(ReferenceSpectrum { case, exponents })
}

fn summarize<'a>(condition: usize, records: impl Iterator<Item = &'a RealizationRecord>) -> ConditionSummary {
    let records: Vec<&RealizationRecord> = records.collect();
    let eps: Vec<f64> = records.iter().map(|r| r.epsilon).collect();
    let log_eps: Vec<f64> = records.iter().map(|r| r.log10_epsilon()).collect();
    let tv: Vec<f64> = records.iter().map(|r| r.valid_time).collect();
    let n_exp = records
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| r.lyapunov.len())
        .min()
        .unwrap_or(0);
    let column = |j: usize| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.failure.is_none())
            .map(|r| r.lyapunov[j])
            .collect()
    };
    ConditionSummary {
        condition,
        n: records.len(),
        failures: records.iter().filter(|r| r.failure.is_some()).count(),
        median_epsilon: median(&eps),
        median_valid_time: median(&tv),
        iqr_log10_epsilon: iqr(&log_eps),
        iqr_valid_time: iqr(&tv),
        kde: gaussian_kde(&log_eps, KDE_BANDWIDTH, KDE_POINTS),
        lyapunov_median: (0..n_exp).map(|j| median(&column(j))).collect(),
        lyapunov_iqr: (0..n_exp).map(|j| iqr(&column(j))).collect(),
    }
}

impl ExperimentReport {
    /// The report with wall-clock fields cleared, for reproducibility checks.
    pub fn without_timing(&self) -> ExperimentReport {
        ExperimentReport {
            timing: Timing::default(),
            ..self.clone()
        }
    }

    pub fn summary_for(&self, pred: impl Fn(&Condition) -> bool) -> Vec<(&Condition, &ConditionSummary)> {
        self.conditions
            .iter()
            .zip(&self.summaries)
            .filter(|(c, _)| pred(c))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(format!("serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<ExperimentReport> {
        parse_json(text)
    }

    pub fn load(path: &Path) -> Result<ExperimentReport> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Write `report.json` plus the CSV tables into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        for (name, body) in self.csv_tables() {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    /// CSV tables keyed by file name.
    ///
    /// * `records.csv`: one row per (condition, realization).
    /// * `summary.csv`: one row per condition.
    /// * `kde.csv`: `x,y,group` with x = log10 epsilon, y = density, group = condition.
    /// * `figure.csv`: `x,y,group` medians, x = D_r (size sweep), noise std
    ///   (noise sweep) or condition index, y = median valid time.
    /// * `params.csv`: per-run optimized parameters, for histograms.
    /// * `lyapunov.csv`: `x,y,group` with x = exponent index, y = exponent,
    ///   group = condition/realization; only when spectra were measured.
    pub fn csv_tables(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let cond_cols = |c: &Condition| {
            format!(
                "{},{},{},{},{},{},{},{}",
                c.case.system, c.case.regime, c.topology, c.variant, c.size, c.size_opt, c.train_steps, c.noise_std
            )
        };
        let head = "system,regime,topology,variant,size,size_opt,train_steps,noise_std";

        let mut s =
            format!("condition,{head},realization,seed,epsilon,log10_epsilon,valid_time,censored_fraction,failed\n");
        for r in &self.records {
            s += &format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.condition,
                cond_cols(&self.conditions[r.condition]),
                r.realization,
                r.seed,
                r.epsilon,
                r.log10_epsilon(),
                r.valid_time,
                r.censored_fraction,
                r.failure.is_some()
            );
        }
        out.push(("records.csv", s));

        let mut s =
            format!("condition,{head},n,failures,median_epsilon,median_valid_time,iqr_log10_epsilon,iqr_valid_time\n");
        for (c, m) in self.conditions.iter().zip(&self.summaries) {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                m.condition,
                cond_cols(c),
                m.n,
                m.failures,
                m.median_epsilon,
                m.median_valid_time,
                m.iqr_log10_epsilon,
                m.iqr_valid_time
            );
        }
        out.push(("summary.csv", s));

        let mut s = String::from("x,y,group\n");
        for m in &self.summaries {
            for (x, y) in m.kde.grid.iter().zip(&m.kde.density) {
                s += &format!("{x},{y},{}\n", m.condition);
            }
        }
        out.push(("kde.csv", s));

        let mut s = String::from("x,y,group\n");
        for (i, (c, m)) in self.conditions.iter().zip(&self.summaries).enumerate() {
            let x = match self.config.experiment {
                ExperimentKind::SizeSweep => c.size as f64,
                ExperimentKind::NoiseSweep => c.noise_std,
                _ => i as f64,
            };
            let group = format!(
                "{}|{}|{}|DrO={}|train={}",
                c.case, c.topology, c.variant, c.size_opt, c.train_steps
            );
            s += &format!("{x},{},{group}\n", m.median_valid_time);
        }
        out.push(("figure.csv", s));

        let mut s = String::from("optimization,system,regime,topology,size_opt,train_steps,noise_std,run,rho,p_in,rho_in,beta,log10_mu,k,objective\n");
        for (i, o) in self.optimizations.iter().enumerate() {
            for (j, run) in o.runs.iter().enumerate() {
                let b = run.best();
                s += &format!(
                    "{i},{},{},{},{},{},{},{j},{},{},{},{},{},{},{}\n",
                    o.key.case.system,
                    o.key.case.regime,
                    o.key.topology,
                    o.key.size,
                    o.key.train_steps,
                    o.key.noise_std(),
                    b.params.rho,
                    b.params.p_in,
                    b.params.rho_in,
                    b.params.beta,
                    b.params.log10_mu,
                    b.params.k,
                    b.value
                );
            }
        }
        out.push(("params.csv", s));

        if self.records.iter().any(|r| !r.lyapunov.is_empty()) {
            let mut s = String::from("x,y,group\n");
            for r in &self.records {
                for (j, l) in r.lyapunov.iter().enumerate() {
                    s += &format!("{},{l},{}/{}\n", j + 1, r.condition, r.realization);
                }
            }
            out.push(("lyapunov.csv", s));
        }
        out
    }
}
