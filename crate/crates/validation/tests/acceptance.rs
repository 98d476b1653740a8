//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines print in order. Criteria 4-8 train
//! thousands of reservoirs; expect the whole target to take the better part
//! of an hour on one core. `RC_ACCEPTANCE=1,2,3` selects a subset.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rc_core::bench::{run_experiment, Case, ExperimentConfig, ExperimentKind, ExperimentReport};
use rc_core::dynamics::{generate, Flow, LorenzParams, Regime, SystemKind};
use rc_core::lyapunov::{lyapunov_spectrum, FlowMap};
use rc_core::rcmodel::{fit_output, rc_jacobian, symmetry_transformed, StateSeries};
use rc_core::stats::median;
use rc_core::{HyperParams, Topology};
use rc_validation::*;

type Check = (usize, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn lorenz_spectrum() -> Outcome {
    let start = generate(SystemKind::Lorenz, Regime::Chaotic, 0.01, 1, 10_000, 0).unwrap();
    let map = FlowMap {
        flow: Flow::Lorenz(LorenzParams::default()),
        dt: 0.01,
    };
    let spec = lyapunov_spectrum(&map, start.row(0), 1_000_000, 3, 1).unwrap();
    let e = &spec.exponents;
    let pass = (e[0] - 0.906).abs() <= 0.02 && e[1].abs() <= 0.02 && (e[2] + 14.57).abs() <= 0.3;
    outcome(pass, format!("lambda = ({:.4}, {:.4}, {:.3})", e[0], e[1], e[2]))
}

fn ridge_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..300 {
        let n = rng.random_range(1..=10);
        let len = rng.random_range(n + 5..200);
        let d = rng.random_range(1..=4);
        let mu = if case % 5 == 0 {
            0.0
        } else {
            10f64.powf(rng.random_range(-8.0..2.0))
        };
        let states: Vec<f64> = (0..n * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..d * len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let series = StateSeries {
            dt: 1.0,
            size: n,
            states,
        };
        let targets = rc_core::dynamics::Trajectory::new(0.0, 1.0, d, targets).unwrap();
        let w = fit_output(&series, &targets, mu).unwrap();
        let feats = DMatrix::from_fn(n, len, |i, t| symmetry_transformed(series.state(t))[i]);
        let u = DMatrix::from_fn(d, len, |i, t| targets.row(t)[i]);
        worst = worst.max(relative_error(&w, &dense_ridge(&feats, &u, mu)));
    }
    outcome(worst < 1e-8, format!("300 instances, worst relative error {worst:.2e}"))
}

fn jacobian_fd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for seed in 0..40 {
        let n = rng.random_range(4..=20);
        let kind = [Topology::ER, Topology::CycleIncluded, Topology::Tree, Topology::RUN][seed as usize % 4];
        let k = kind.fixed_degree().unwrap_or(rng.random_range(1..4.min(n)));
        let params = HyperParams {
            rho: rng.random_range(0.1..1.4),
            p_in: rng.random_range(0.3..1.0),
            rho_in: rng.random_range(0.1..1.0),
            beta: rng.random_range(0.05..1.0),
            log10_mu: rng.random_range(-6.0..-1.0),
            k,
        };
        let (res, r) = trained_lorenz_reservoir(kind, n, params, seed);
        let exact = rc_jacobian(&res, &r).unwrap();
        worst = worst.max(relative_error(&fd_jacobian(&res, &r, 1e-5), &exact));
        count += 1;
    }
    outcome(
        worst <= 1e-6,
        format!("{count} reservoirs, worst relative error {worst:.2e}"),
    )
}

fn medians_by_topology(
    report: &ExperimentReport,
    pred: impl Fn(&rc_core::bench::Condition) -> bool,
) -> Vec<(Topology, f64, f64)> {
    report
        .summary_for(pred)
        .into_iter()
        .map(|(c, s)| (c.topology, s.median_epsilon, s.median_valid_time))
        .collect()
}

fn topology_compare() -> Outcome {
    let mut cfg = ExperimentConfig::desk(ExperimentKind::TopologyCompare);
    cfg.topologies = vec![
        Topology::ER,
        Topology::CycleIncluded,
        Topology::Tree,
        Topology::SingleCycle,
        Topology::SingleLine,
    ];
    let report = run_experiment(&cfg).unwrap();
    let rows = medians_by_topology(&report, |_| true);
    let tv_ok = rows.iter().all(|(_, _, tv)| (3.5..=6.0).contains(tv));
    let eps: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let ratio = eps.iter().cloned().fold(0.0, f64::max) / eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let table: Vec<String> = rows
        .iter()
        .map(|(t, e, tv)| format!("{t} eps {e:.4} Tv {tv:.2}"))
        .collect();
    outcome(
        tv_ok && ratio <= 2.0,
        format!("{}; max eps ratio {ratio:.2}", table.join(", ")),
    )
}

fn regime_spot_check() -> Outcome {
    let mut cfg = ExperimentConfig::desk(ExperimentKind::RegimeTable);
    cfg.cases = vec![Case::lorenz_chaotic()];
    cfg.train_steps = vec![10_000];
    let report = run_experiment(&cfg).unwrap();
    let rows = medians_by_topology(&report, |_| true);
    let get = |t: Topology| *rows.iter().find(|r| r.0 == t).unwrap();
    let (_, er_eps, er_tv) = get(Topology::ER);
    let (_, run_eps, run_tv) = get(Topology::RUN);
    let pass = (0.01..=0.05).contains(&er_eps) && (3.5..=8.0).contains(&er_tv) && run_tv >= er_tv - 1.0;
    outcome(
        pass,
        format!(
            "ER eps {er_eps:.4} Tv {er_tv:.2}; RUN eps {run_eps:.4} Tv {run_tv:.2}; RUN >= ER in Tv: {}",
            run_tv >= er_tv
        ),
    )
}

fn noise_reversal() -> Outcome {
    let mut cfg = ExperimentConfig::desk(ExperimentKind::NoiseSweep);
    cfg.extra_variants.clear();
    // Eight optimization keys; a lighter search keeps the check near 15 minutes.
    cfg.opt_runs = 3;
    cfg.iterations = 250;
    let noise = cfg.noise_std.clone();
    let report = run_experiment(&cfg).unwrap();
    let series = |t: Topology| -> Vec<f64> {
        noise
            .iter()
            .map(|n| {
                report.summary_for(|c| c.topology == t && c.noise_std == *n)[0]
                    .1
                    .median_epsilon
            })
            .collect()
    };
    let (er, run) = (series(Topology::ER), series(Topology::RUN));
    let monotone = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let at = |x: f64| noise.iter().position(|n| *n == x).unwrap();
    let pass =
        run[0] <= er[0] && [0.01, 0.1].iter().all(|x| run[at(*x)] >= er[at(*x)]) && monotone(&er) && monotone(&run);
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        pass,
        format!("noise {noise:?}: ER eps [{}], RUN eps [{}]", fmt(&er), fmt(&run)),
    )
}

fn run_lyapunov() -> Outcome {
    let mut cfg = ExperimentConfig::desk(ExperimentKind::LyapunovHist);
    cfg.topologies = vec![Topology::RUN];
    cfg.realizations = 10;
    let report = run_experiment(&cfg).unwrap();
    let spectra: Vec<&Vec<f64>> = report
        .records
        .iter()
        .filter(|r| r.failure.is_none())
        .map(|r| &r.lyapunov)
        .collect();
    if spectra.len() < report.records.len() {
        return outcome(
            false,
            format!(
                "{} of {} realizations failed",
                report.records.len() - spectra.len(),
                report.records.len()
            ),
        );
    }
    let med = |j: usize| median(&spectra.iter().map(|s| s[j]).collect::<Vec<_>>());
    let (l1, l2, l3) = (med(0), med(1), med(2));
    let worst_l4 = spectra.iter().map(|s| s[3]).fold(f64::NEG_INFINITY, f64::max);
    let pass = (0.81..=1.01).contains(&l1)
        && (-0.1..=0.1).contains(&l2)
        && (-17.0..=-12.0).contains(&l3)
        && worst_l4 <= -100.0;
    let beta = report.conditions[0].params.beta;
    outcome(
        pass,
        format!("median lambda = ({l1:.3}, {l2:.3}, {l3:.2}); largest lambda4 {worst_l4:.1}; beta {beta:.3}"),
    )
}

/// At most one descent before the maximum is reached.
fn rises_to_saturation(tv: &[f64]) -> bool {
    let peak = (0..tv.len()).max_by(|a, b| tv[*a].total_cmp(&tv[*b])).unwrap();
    tv[..=peak].windows(2).filter(|w| w[1] < w[0]).count() <= 1
}

fn size_sweep() -> Outcome {
    let mut cfg = ExperimentConfig::desk(ExperimentKind::SizeSweep);
    cfg.topologies = vec![Topology::ER, Topology::Tree, Topology::SingleLine];
    cfg.extra_variants.clear();
    let sizes = cfg.dr.clone();
    let (short, long) = (cfg.train_steps[0], cfg.train_steps[1]);
    let report = run_experiment(&cfg).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for t in &cfg.topologies {
        let tv = |train: usize| -> Vec<f64> {
            sizes
                .iter()
                .map(|d| {
                    report.summary_for(|c| c.topology == *t && c.size == *d && c.train_steps == train)[0]
                        .1
                        .median_valid_time
                })
                .collect()
        };
        let (s, l) = (tv(short), tv(long));
        let peak = sizes[(0..l.len()).max_by(|a, b| l[*a].total_cmp(&l[*b])).unwrap()];
        let ok = rises_to_saturation(&s) && peak <= 150;
        pass &= ok;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
        lines.push(format!(
            "{t}: short [{}] long [{}] long peak at {peak}",
            fmt(&s),
            fmt(&l)
        ));
    }
    outcome(pass, format!("Dr {sizes:?}; {}", lines.join("; ")))
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("RC_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Check; 8] = [
        (1, "Lorenz flow spectrum", lorenz_spectrum),
        (2, "ridge oracle equivalence", ridge_equivalence),
        (3, "reservoir Jacobian vs finite differences", jacobian_fd),
        (4, "topology comparison, EN data, ranges R", topology_compare),
        (5, "chaotic Lorenz spot check, ER vs RUN", regime_spot_check),
        (6, "noise reversal, ER vs RUN", noise_reversal),
        (7, "RUN Lyapunov spectrum", run_lyapunov),
        (8, "reservoir size sweep", size_sweep),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{verdict}] {name}: {} ({:.1} s)",
            result.detail,
            started.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria pass");
}
