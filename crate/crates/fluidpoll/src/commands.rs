//! The four workflows. Each returns its data files in memory; writing them
//! is left to the caller so reruns can be compared byte for byte.

use fluidpoll_core::cost::pe_average_cost;
use fluidpoll_core::des::stats::t_quantile;
use fluidpoll_core::des::{self, MeanEstimate, RatioEstimate, ScaledSystem, SimOptions, SimOutput};
use fluidpoll_core::fluid::{cycle_map, pe_from_params};
use fluidpoll_core::model::{self, ValidationReport};
use fluidpoll_core::rfcp::{self, relaxation_bound_cyclic, solve_rfcp};
use fluidpoll_core::{ControlParams, CostFunction, PeCandidate, RfcpOptions, RfcpSolution, SystemParameters};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ControlSpec, ExperimentConfig, SimulationSpec};
use crate::error::CliError;
use crate::io::{self, OutputFile};

/// Result of a command: data files, a short human-readable report and any
/// warnings about the configuration.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<OutputFile>,
    pub report: String,
    pub warnings: Vec<String>,
}

/// The model objects behind a configuration, with the control resolved.
pub struct Resolved {
    pub params: SystemParameters,
    pub psi: CostFunction,
    pub ctrl: ControlParams,
    pub validation: ValidationReport,
    pub solution: Option<RfcpSolution>,
}

pub fn rfcp_options(cfg: &ExperimentConfig) -> Option<RfcpOptions> {
    match &cfg.control {
        ControlSpec::Optimize {
            multiplicities,
            budget,
            max_evals,
        } => {
            let mut opts = RfcpOptions {
                multiplicities: multiplicities.clone(),
                budget: *budget,
                seed: cfg.seed,
                ..RfcpOptions::default()
            };
            if let Some(m) = max_evals {
                opts.max_evals = *m;
            }
            Some(opts)
        }
        _ => None,
    }
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved, CliError> {
    let params = cfg.system()?;
    let psi = cfg.cost()?;
    model::check_stable(&params)?;
    let (ctrl, solution) = match cfg.fixed_control() {
        Some(ctrl) => (ctrl, None),
        None => {
            let opts = rfcp_options(cfg).expect("optimize mode");
            let sol = solve_rfcp(&params, &psi, &opts)?;
            (ControlParams::new(sol.l, sol.r.clone()), Some(sol))
        }
    };
    let validation = model::validate(&params, &ctrl)?;
    Ok(Resolved {
        params,
        psi,
        ctrl,
        validation,
        solution,
    })
}

/// Conditions under which the scaled costs are not guaranteed to converge.
/// They are reported, never enforced.
pub fn warnings(cfg: &ExperimentConfig, res: &Resolved) -> Vec<String> {
    let mut out = Vec::new();
    if !res.validation.in_compact_set {
        let short: Vec<String> = res
            .validation
            .visit_mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m < 1.0)
            .map(|(k, m)| format!("queue {} ({m})", k + 1))
            .collect();
        out.push(format!(
            "proportions sum to less than 1 at {}; the fluid optimum is only sought over controls where every queue's proportions sum to at least 1",
            short.join(", ")
        ));
    }
    if let Some(sim) = &cfg.simulation {
        let probe = sim.switchover.with_mean(1.0);
        if !probe.light_tailed() {
            out.push(
                "switchover law has no finite moment generating function; convergence of the scaled costs to the fluid cost is not guaranteed"
                    .to_string(),
            );
        }
        let p = res.psi.growth_order();
        if p > 1.0 && !sim.service.with_mean(1.0).bounded_support() && !probe.bounded_support() {
            out.push(format!(
                "cost grows like x^{p}; convergence of the scaled costs needs moments of order above {p} for every service and switchover law"
            ));
        }
    }
    out
}

#[derive(Serialize)]
struct StageState {
    stage: usize,
    queue: usize,
    polling_time: f64,
    q: Vec<f64>,
    busy: f64,
    r: f64,
}

#[derive(Serialize)]
struct PeReport<'a> {
    l: usize,
    r: &'a [f64],
    tau: f64,
    cost: f64,
    spectral_radius: f64,
    rho: f64,
    rho_k: &'a [f64],
    exhaustive: bool,
    in_compact_set: bool,
    stages: Vec<StageState>,
}

fn pe_report<'a>(res: &'a Resolved, pe: &PeCandidate, cost: f64, spectral_radius: f64) -> PeReport<'a> {
    PeReport {
        l: res.ctrl.l,
        r: &res.ctrl.r,
        tau: pe.tau,
        cost,
        spectral_radius,
        rho: res.validation.rho,
        rho_k: &res.validation.rho_k,
        exhaustive: res.ctrl.is_exhaustive(),
        in_compact_set: res.validation.in_compact_set,
        stages: (0..pe.stages.len())
            .map(|i| StageState {
                stage: i + 1,
                queue: pe.stages[i] + 1,
                polling_time: pe.polling_time(i),
                q: pe.polling_state(i).to_vec(),
                busy: pe.busy[i],
                r: res.ctrl.r[i],
            })
            .collect(),
    }
}

/// Periodic equilibrium of the configured control.
pub fn cmd_pe(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let res = resolve(cfg)?;
    let pe = pe_from_params(&res.params, &res.ctrl)?;
    let cost = pe_average_cost(&pe, &res.psi);
    let spectral_radius = cycle_map(&res.params, &res.ctrl)?.spectral_radius()?;
    let report = pe_report(&res, &pe, cost, spectral_radius);
    let text = format!(
        "L = {}, tau = {}, cost = {}, spectral radius = {}{}\n",
        res.ctrl.l,
        pe.tau,
        cost,
        spectral_radius,
        if res.ctrl.is_exhaustive() { ", exhaustive" } else { "" }
    );
    Ok(Outcome {
        files: vec![
            io::pe_csv("pe_breakpoints.csv", cfg, &pe),
            io::json_file("pe.json", cfg, &report),
        ],
        report: text,
        warnings: warnings(cfg, &res),
    })
}

#[derive(Serialize)]
struct OptimizeReport<'a> {
    solution: &'a RfcpSolution,
    /// PE cost of exhaustive service at each multiplicity.
    exhaustive_cost: Vec<(usize, f64)>,
    /// Exhaustive service is known to be optimal for this table and cost.
    exhaustive_optimal: bool,
}

/// Restricted fluid control problem.
pub fn cmd_optimize(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.system()?;
    let psi = cfg.cost()?;
    model::check_stable(&params)?;
    let opts = rfcp_options(cfg).unwrap_or_else(|| RfcpOptions {
        multiplicities: vec![cfg.fixed_control().map_or(1, |c| c.l)],
        seed: cfg.seed,
        ..RfcpOptions::default()
    });
    let sol = solve_rfcp(&params, &psi, &opts)?;
    let exhaustive_cost: Vec<(usize, f64)> = sol
        .per_l
        .iter()
        .map(|p| (p.l, rfcp::pe_cost(&params, &psi, p.l, &vec![1.0; params.stages() * p.l])))
        .collect();
    let exhaustive_optimal = rfcp::exhaustive_shortcut(&params, &psi).is_some();
    let mut text = String::new();
    text.push_str(&format!("best L = {}, cost = {}\n", sol.l, sol.cost));
    text.push_str(&format!(
        "r = [{}]\n",
        sol.r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
    ));
    for (p, (_, ex)) in sol.per_l.iter().zip(&exhaustive_cost) {
        text.push_str(&format!(
            "  L = {}: cost {} (exhaustive {}), {} starts, {} evaluations\n",
            p.l, p.cost, ex, p.starts, p.evaluations
        ));
    }
    match sol.bound {
        Some(b) => text.push_str(&format!("relaxation lower bound at L = {}: {b}\n", sol.l)),
        None => text.push_str("relaxation lower bound: not available for this table or cost\n"),
    }
    if exhaustive_optimal {
        text.push_str("exhaustive service is optimal (cyclic table, separable convex cost)\n");
    }
    let report = OptimizeReport {
        solution: &sol,
        exhaustive_cost,
        exhaustive_optimal,
    };
    Ok(Outcome {
        files: vec![
            io::json_file("solution.json", cfg, &report),
            io::text_file("summary.txt", text.clone()),
        ],
        report: text,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelRow {
    pub stage: usize,
    pub queue: usize,
    pub mean: f64,
    pub se: f64,
    pub target: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub replication: u64,
    pub warmup_cycles: usize,
    pub events: u64,
    pub cost: RatioEstimate,
    pub cycle_length: MeanEstimate,
    pub cycle_length_z: f64,
    pub polling_levels: Vec<LevelRow>,
    pub busy: Vec<LevelRow>,
    pub max_abs_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub n: u64,
    pub estimate: f64,
    /// 95% half-width: batch means for one replication, across
    /// replications otherwise.
    pub half_width: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub replications: Vec<ReplicationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub l: usize,
    pub r: Vec<f64>,
    /// Fluid cost of the control.
    pub c_star: f64,
    pub tau: f64,
    pub scales: Vec<ScaleSummary>,
}

fn summarize_replication(out: &SimOutput, pe: &PeCandidate, replication: u64) -> Result<ReplicationSummary, CliError> {
    let cost = des::long_run_cost(&out.records)?;
    let cycle_length = des::cycle_length_mean(&out.records)?;
    let stats = des::polling_epoch_stats(&out.records, out.n, pe)?;
    let polling_levels = stats
        .levels
        .iter()
        .map(|s| LevelRow {
            stage: s.stage + 1,
            queue: s.queue + 1,
            mean: s.estimate.mean,
            se: s.estimate.se,
            target: s.target,
            z: s.z,
        })
        .collect();
    let busy = stats
        .busy
        .iter()
        .map(|s| LevelRow {
            stage: s.stage + 1,
            queue: pe.stages[s.stage] + 1,
            mean: s.estimate.mean,
            se: s.estimate.se,
            target: s.target,
            z: s.z,
        })
        .collect();
    Ok(ReplicationSummary {
        replication,
        warmup_cycles: out.warmup_cycles,
        events: out.events,
        cost,
        cycle_length,
        cycle_length_z: cycle_length.z(pe.tau),
        polling_levels,
        busy,
        max_abs_z: stats.max_abs_z(),
    })
}

fn pool(reps: &[ReplicationSummary], c_star: f64, n: u64) -> ScaleSummary {
    let (estimate, half_width) = if reps.len() == 1 {
        (reps[0].cost.estimate, reps[0].cost.half_width)
    } else {
        let m = reps.len() as f64;
        let mean = reps.iter().map(|r| r.cost.estimate).sum::<f64>() / m;
        let var = reps.iter().map(|r| (r.cost.estimate - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, t_quantile(0.975, reps.len() - 1) * (var / m).sqrt())
    };
    let gap = estimate - c_star;
    ScaleSummary {
        n,
        estimate,
        half_width,
        gap,
        relative_gap: if c_star != 0.0 { gap / c_star } else { gap },
        replications: reps.to_vec(),
    }
}

struct SimulationRun {
    summary: SimulationSummary,
    /// `(n, replication, output)` in configuration order.
    outputs: Vec<(u64, u64, SimOutput)>,
}

fn simulate_all(cfg: &ExperimentConfig) -> Result<(SimulationRun, Resolved), CliError> {
    let sim: &SimulationSpec = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a simulation block".into()))?;
    let res = resolve(cfg)?;
    let pe = pe_from_params(&res.params, &res.ctrl)?;
    let c_star = pe_average_cost(&pe, &res.psi);
    let base = ScaledSystem::from_families(res.params.clone(), sim.n[0], sim.service, sim.switchover)?;
    let jobs: Vec<(u64, u64)> = sim
        .n
        .iter()
        .flat_map(|&n| (0..sim.replications as u64).map(move |rep| (n, rep)))
        .collect();
    // order of `collect` follows `jobs`, whatever the scheduling
    let outputs: Vec<Result<(u64, u64, SimOutput), CliError>> = jobs
        .par_iter()
        .map(|&(n, rep)| {
            let sys = base.with_scale(n)?;
            let opts = SimOptions {
                warmup: sim.warmup.into(),
                cycles: sim.cycles,
                seed: cfg.seed,
                replication: rep,
                max_events: sim.max_events,
                path_window: None,
            };
            Ok((n, rep, des::run(&sys, &res.ctrl, &res.psi, &opts)?))
        })
        .collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut scales = Vec::with_capacity(sim.n.len());
    for &n in &sim.n {
        let reps = outputs
            .iter()
            .filter(|(m, _, _)| *m == n)
            .map(|(_, rep, out)| summarize_replication(out, &pe, *rep))
            .collect::<Result<Vec<_>, _>>()?;
        scales.push(pool(&reps, c_star, n));
    }
    let summary = SimulationSummary {
        l: res.ctrl.l,
        r: res.ctrl.r.clone(),
        c_star,
        tau: pe.tau,
        scales,
    };
    Ok((SimulationRun { summary, outputs }, res))
}

fn scale_lines(summary: &SimulationSummary) -> String {
    let mut text = format!("fluid cost c* = {}, tau = {}\n", summary.c_star, summary.tau);
    for s in &summary.scales {
        text.push_str(&format!(
            "n = {}: cost {:.6} +/- {:.6}, gap {:+.6} ({:+.3}%)\n",
            s.n,
            s.estimate,
            s.half_width,
            s.gap,
            100.0 * s.relative_gap
        ));
    }
    text
}

/// Binomial-exhaustive simulation at every configured scale.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (run, res) = simulate_all(cfg)?;
    let mut files: Vec<OutputFile> = run
        .outputs
        .iter()
        .map(|(n, rep, out)| {
            io::cycles_csv(
                &format!("cycles_n{n}_rep{rep}.csv"),
                cfg,
                &format!("measured cycles, n = {n}, replication {rep}"),
                &out.records,
            )
        })
        .collect();
    files.push(io::json_file("summary.json", cfg, &run.summary));
    Ok(Outcome {
        files,
        report: scale_lines(&run.summary),
        warnings: warnings(cfg, &res),
    })
}

/// Convergence sweep over the configured scales: one CSV row per `n`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (run, res) = simulate_all(cfg)?;
    let cols: Vec<String> = ["n", "estimate", "half_width", "c_star", "gap", "relative_gap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = run.summary.scales.iter().map(|s| {
        vec![
            s.n.to_string(),
            s.estimate.to_string(),
            s.half_width.to_string(),
            run.summary.c_star.to_string(),
            s.gap.to_string(),
            s.relative_gap.to_string(),
        ]
    });
    let files = vec![
        io::csv_file("sweep.csv", cfg, "scaled long-run cost against the fluid cost", &cols, rows),
        io::json_file("summary.json", cfg, &run.summary),
    ];
    Ok(Outcome {
        files,
        report: scale_lines(&run.summary),
        warnings: warnings(cfg, &res),
    })
}

/// Relaxation bound for the configured system at multiplicity `l`, when
/// the table is cyclic and the cost piecewise linear.
pub fn relaxation_bound(cfg: &ExperimentConfig, l: usize) -> Result<f64, CliError> {
    Ok(relaxation_bound_cyclic(&cfg.system()?, &cfg.cost()?, l)?)
}
