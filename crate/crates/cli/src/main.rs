use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rc_core::bayesopt::{aggregate, optimize_task, BayesOptConfig, OptRanges, RangeLabel};
use rc_core::bench::{derive_seed, run_experiment, ConfigOverrides, ExperimentKind};
use rc_core::datapipe::Representation;
use rc_core::dynamics::{generate, Flow, Regime, SystemKind, DEFAULT_TRANSIENT_STEPS};
use rc_core::lyapunov::{lyapunov_spectrum, FlowMap};
use rc_core::rcmodel::{forecast, synchronize, train};
use rc_core::reservoir::InputScaling;
use rc_core::task::{ForecastTask, TaskConfig};
use rc_core::{HyperParams, Reservoir, Topology};

#[derive(Parser)]
#[command(name = "rc-bench", version, about = "Reservoir-computing forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a system and write its trajectory as CSV.
    Simulate {
        #[command(flatten)]
        data: DataArgs,
        /// Recorded steps after the transient.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = DEFAULT_TRANSIENT_STEPS)]
        transient: usize,
    },
    /// Bayesian optimization runs for one topology, aggregated by median.
    Optimize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "ER")]
        topology: Topology,
        #[arg(long, default_value = "B")]
        ranges: RangeLabel,
        #[arg(long, default_value_t = 100)]
        dr: usize,
        /// Defaults to the budget of the chosen range set.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value_t = 5)]
        runs: usize,
    },
    /// Build and train one reservoir and save it to `--out`.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Score a saved (or freshly trained) reservoir on held-out data.
    Forecast {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Directory written by `train`.
        #[arg(long)]
        reservoir: Option<PathBuf>,
    },
    /// Lyapunov spectrum of the true flow, or of a trained reservoir.
    Lyapunov {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        reservoir: Option<PathBuf>,
        /// Train a reservoir with the model flags and measure its autonomous map.
        #[arg(long)]
        rc: bool,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        exponents: usize,
        #[arg(long, default_value_t = 1)]
        renorm_every: usize,
    },
    /// Run one of the experiment campaigns.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long, default_value = "lorenz")]
    system: SystemKind,
    #[arg(long, default_value = "chaotic")]
    regime: String,
    #[arg(long, default_value = "DN")]
    representation: Representation,
    #[arg(long, default_value = "entrywise")]
    input_scaling: InputScaling,
    #[arg(long, default_value_t = 10_000)]
    train_steps: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl DataArgs {
    fn regime(&self) -> anyhow::Result<Regime> {
        Ok(Regime::parse(self.system, &self.regime)?)
    }

    fn task(&self) -> anyhow::Result<ForecastTask> {
        let mut cfg = TaskConfig::new(self.system, self.regime()?);
        cfg.representation = self.representation;
        cfg.input_scaling = self.input_scaling;
        cfg.train_steps = self.train_steps;
        cfg.noise_std = self.noise_std;
        cfg.data_seed = self.seed;
        Ok(ForecastTask::generate(cfg)?)
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "ER")]
    topology: Topology,
    #[arg(long, default_value_t = 100)]
    dr: usize,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 0.8)]
    p_in: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_in: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
    log10_mu: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// JSON file holding `HyperParams` or an optimization aggregate; overrides the flags above.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ModelArgs {
    fn params(&self) -> anyhow::Result<HyperParams> {
        if let Some(path) = &self.params {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = rc_core::bench::parse_json(&text)?;
            let inner = value.get("params").cloned().unwrap_or(value);
            return serde_json::from_value(inner).context("expected HyperParams");
        }
        Ok(HyperParams {
            rho: self.rho,
            p_in: self.p_in,
            rho_in: self.rho_in,
            beta: self.beta,
            log10_mu: self.log10_mu,
            k: self.k,
        })
    }
}

#[derive(Args)]
struct BenchArgs {
    experiment: ExperimentKind,
    /// TOML file keyed by the flag names in snake_case; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<SystemKind>,
    #[arg(long)]
    regime: Option<String>,
    #[arg(long, value_delimiter = ',')]
    topology: Option<Vec<Topology>>,
    #[arg(long)]
    ranges: Option<RangeLabel>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    dr: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    dr_opt: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    train_steps: Option<Vec<usize>>,
    #[arg(long)]
    opt_train_steps: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    opt_runs: Option<usize>,
    #[arg(long)]
    opt_starts: Option<usize>,
    #[arg(long)]
    eval_starts: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    noise_std: Option<Vec<f64>>,
    #[arg(long)]
    representation: Option<Representation>,
    #[arg(long)]
    input_scaling: Option<InputScaling>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    /// 200 realizations and 20 optimization runs; hours of compute.
    #[arg(long)]
    paper_scale: bool,
}

impl BenchArgs {
    fn overrides(&self) -> anyhow::Result<ConfigOverrides> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ConfigOverrides::default(),
        };
        let flags = ConfigOverrides {
            experiment: Some(self.experiment),
            system: self.system,
            regime: self.regime.clone(),
            topology: self.topology.clone(),
            ranges: self.ranges,
            iterations: self.iterations,
            dr: self.dr.clone(),
            dr_opt: self.dr_opt.clone(),
            train_steps: self.train_steps.clone(),
            opt_train_steps: self.opt_train_steps,
            realizations: self.realizations,
            opt_runs: self.opt_runs,
            opt_starts: self.opt_starts,
            eval_starts: self.eval_starts,
            noise_std: self.noise_std.clone(),
            representation: self.representation,
            input_scaling: self.input_scaling,
            seed: self.seed,
            out: self.out.clone(),
            paper_scale: self.paper_scale.then_some(true),
        };
        Ok(file.merge(flags))
    }
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .chain()
                .find_map(|e| e.downcast_ref::<rc_core::Error>())
                .map_or("error", |e| e.kind());
            let report = ErrorReport {
                error: kind.to_string(),
                message: format!("{err:#}"),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("plain strings serialize"));
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(create(path)?, value)?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn trained(data: &DataArgs, model: &ModelArgs, task: &ForecastTask) -> anyhow::Result<Reservoir> {
    let seed = derive_seed(data.seed, "cli/reservoir", 0);
    Ok(task.build_and_train(model.topology, model.dr, model.params()?, seed)?)
}

fn load_or_train(
    data: &DataArgs,
    model: &ModelArgs,
    task: &ForecastTask,
    dir: Option<&Path>,
) -> anyhow::Result<Reservoir> {
    match dir {
        Some(dir) => {
            let res = Reservoir::load_dir(dir)?;
            if !res.is_trained() {
                bail!(rc_core::Error::Untrained);
            }
            if res.input_dim() != task.train.dim() {
                bail!(rc_core::Error::LengthMismatch(format!(
                    "reservoir expects {}-dimensional input, {} has {}",
                    res.input_dim(),
                    data.system,
                    task.train.dim()
                )));
            }
            Ok(res)
        }
        None => trained(data, model, task),
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate { data, steps, transient } => {
            let traj = generate(
                data.system,
                data.regime()?,
                data.system.default_dt(),
                steps,
                transient,
                data.seed,
            )?;
            match &data.out {
                Some(path) => traj.write_csv(std::io::BufWriter::new(create(path)?))?,
                None => traj.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Optimize {
            data,
            topology,
            ranges,
            dr,
            iterations,
            runs,
        } => {
            let task = data.task()?;
            let ranges = OptRanges::from_label(ranges)?;
            let iterations = iterations.unwrap_or(ranges.default_iterations());
            let cfg = BayesOptConfig::default();
            let runs = (0..runs as u64)
                .map(|i| {
                    optimize_task(
                        &task,
                        topology,
                        dr,
                        &ranges,
                        iterations,
                        derive_seed(data.seed, "cli/optimize", i),
                        &cfg,
                    )
                })
                .collect::<rc_core::Result<Vec<_>>>()?;
            let agg = aggregate(&runs)?;
            if let Some(dir) = &data.out {
                write_json(&dir.join("runs.json"), &runs)?;
                write_json(&dir.join("aggregate.json"), &agg)?;
            }
            print_json(&agg)?;
        }
        Command::Train { data, model } => {
            let task = data.task()?;
            let seed = derive_seed(data.seed, "cli/reservoir", 0);
            let mut res = Reservoir::build_scaled(
                model.topology,
                model.dr,
                task.train.dim(),
                model.params()?,
                data.input_scaling,
                seed,
            )?;
            let summary = train(&mut res, &task.train, task.config.washout_steps)?;
            res.normalizer = Some(task.normalizer.clone());
            if let Some(dir) = &data.out {
                res.save_dir(dir)?;
            }
            print_json(&summary)?;
        }
        Command::Forecast { data, model, reservoir } => {
            let task = data.task()?;
            let res = load_or_train(&data, &model, &task, reservoir.as_deref())?;
            let report = task.evaluate_test(&res)?;
            if let Some(dir) = &data.out {
                write_json(&dir.join("forecast_report.json"), &report)?;
                let start = report.starts[0];
                let rows: Vec<&[f64]> = task
                    .test
                    .rows()
                    .skip(start - task.config.sync_steps)
                    .take(task.config.sync_steps)
                    .collect();
                let mut r = vec![0.0; res.size()];
                synchronize(&res, &rows, &mut r)?;
                let pred = forecast(&res, &r, task.config.horizon_steps())?;
                let pred = task.normalizer.invert(&pred);
                pred.write_csv(std::io::BufWriter::new(create(&dir.join("forecast.csv"))?))?;
            }
            print_json(&report)?;
        }
        Command::Lyapunov {
            data,
            model,
            reservoir,
            rc,
            steps,
            exponents,
            renorm_every,
        } => {
            let regime = data.regime()?;
            let result = if reservoir.is_none() && !rc {
                let dt = data.system.default_dt();
                let start = generate(data.system, regime, dt, 1, DEFAULT_TRANSIENT_STEPS, data.seed)?;
                let flow: Flow = regime.flow(data.system)?;
                lyapunov_spectrum(
                    &FlowMap { flow, dt },
                    start.row(0),
                    steps,
                    exponents.min(flow.dim()),
                    renorm_every,
                )?
            } else {
                let task = data.task()?;
                let res = load_or_train(&data, &model, &task, reservoir.as_deref())?;
                let settings = rc_core::bench::LyapunovSettings {
                    steps,
                    exponents,
                    renorm_every,
                    ..Default::default()
                };
                let exps = rc_core::bench::reservoir_spectrum(&res, &task, &settings)?;
                rc_core::lyapunov::LyapunovResult {
                    exponents: exps,
                    n_steps: steps,
                    renorm_every,
                    time_step: task.config.dt,
                }
            };
            if let Some(dir) = &data.out {
                write_json(&dir.join("lyapunov.json"), &result)?;
            }
            print_json(&result)?;
        }
        Command::Bench(args) => {
            let overrides = args.overrides()?;
            let cfg = overrides.resolve(args.experiment)?;
            let report = run_experiment(&cfg)?;
            let out = overrides
                .out
                .clone()
                .unwrap_or_else(|| format!("results/{}", cfg.experiment));
            report.save(Path::new(&out))?;
            let summary: Vec<_> = report
                .conditions
                .iter()
                .zip(&report.summaries)
                .map(|(c, s)| {
                    serde_json::json!({
                        "condition": c.label(),
                        "median_epsilon": s.median_epsilon,
                        "median_valid_time": s.median_valid_time,
                        "failures": s.failures,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "out": out, "conditions": summary, "timing": report.timing }))?;
        }
    }
    Ok(())
}
