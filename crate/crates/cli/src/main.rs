//! `phaseswap`: import feeders, run power flows, evaluate and optimize phase
//! connections, and run full-day sweeps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use phaseswap::experiment::{build_fit, run_sweep_on, OutcomeData, Scenario, SweepConfig, SweepReport};
use phaseswap::formulations::{EvaluationResult, Evaluator, FormulationKind, VoltageProfile};
use phaseswap::netmodel::{
    build_snapshot, import_european_feeder, write_network_json, write_profiles_csv, CaseSnapshot, ImportOptions,
};
use phaseswap::optimizer::{optimize, Method, SearchStats, Strategy};
use phaseswap::powerflow::{solve_utpf, PhaseAssignment};
use phaseswap::Phase;

#[derive(Parser)]
#[command(
    name = "phaseswap",
    version,
    about = "Phase-connection optimization for unbalanced LV feeders"
)]
struct Cli {
    /// Scenario file (TOML, or JSON when the extension is .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Feeder directory; overrides the scenario file.
    #[arg(long, global = true)]
    feeder: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    /// Every bus at the root voltage.
    Flat,
    /// Power-flow voltages of the as-built plan.
    Utpf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Fixv,
    Linv,
    Lbfm,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Read a feeder directory and write network.json and profiles.csv.
    Import {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the unbalanced power flow of one period.
    Pf {
        #[arg(long)]
        period: usize,
        /// One phase letter per customer; the as-built plan by default.
        #[arg(long)]
        phases: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-bus results of the formulations for one plan.
    Evaluate {
        #[arg(long)]
        period: usize,
        #[arg(long, value_enum, default_value = "all")]
        formulation: FormulationArg,
        /// Fixed voltages used by the fixed-voltage model.
        #[arg(long, value_enum, default_value = "flat")]
        profile: ProfileArg,
        #[arg(long)]
        phases: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Optimize the switchable customers of one period.
    Optimize {
        #[arg(long)]
        period: usize,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        search: Option<Strategy>,
        /// Outer iterations of the fixed-voltage method.
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        eps_v: Option<f64>,
        #[arg(long, value_enum)]
        pv_q: Option<Switch>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run every method over a range of periods.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Half-open range `start:end`.
        #[arg(long)]
        periods: Option<String>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long, value_enum)]
        pv_q: Option<Switch>,
    },
    /// Rebuild the report and accuracy table from stored outcomes.
    Verify {
        /// `outcomes.jsonl` or the sweep directory holding it.
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SweepConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => SweepConfig::default(),
    };
    if let Some(f) = &cli.feeder {
        cfg.feeder = f.clone();
    }
    Ok(cfg)
}

fn parse_phases(text: &str, n: usize) -> Result<PhaseAssignment> {
    let phases = text
        .chars()
        .map(|c| Phase::parse(&c.to_string()).with_context(|| format!("bad phase letter {c:?}")))
        .collect::<Result<Vec<_>>>()?;
    if phases.len() != n {
        bail!("expected {n} phase letters, got {}", phases.len());
    }
    Ok(PhaseAssignment::new(phases))
}

fn plan(snap: &CaseSnapshot, phases: Option<&str>) -> Result<PhaseAssignment> {
    let net = snap.network();
    match phases {
        Some(p) => parse_phases(p, net.customers().len()),
        None => Ok(PhaseAssignment::initial(net)),
    }
}

fn snapshot(scenario: &Scenario, cfg: &SweepConfig, period: usize) -> Result<CaseSnapshot> {
    Ok(build_snapshot(
        &scenario.network,
        &scenario.series,
        period,
        &cfg.scenario_options(),
    )?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_import(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let feeder = import_european_feeder(&cfg.feeder, &ImportOptions::default())?;
    create_dir(out)?;
    write_network_json(&feeder.network, out.join("network.json"))?;
    write_profiles_csv(&feeder.demand, out.join("profiles.csv"))?;
    print_json(&feeder.report)
}

#[derive(Serialize)]
struct PfRow {
    bus_id: String,
    phase: char,
    vm_pu: Option<f64>,
    va_rad: Option<f64>,
    p_pu: Option<f64>,
    q_pu: Option<f64>,
}

#[derive(Serialize)]
struct PfSummary {
    period: usize,
    iterations: usize,
    mismatch: f64,
    unbalance: f64,
    dt_p: [f64; 3],
    dt_q: [f64; 3],
    file: PathBuf,
}

fn cmd_pf(scenario: &Scenario, cfg: &SweepConfig, period: usize, phases: Option<&str>, out: &Path) -> Result<()> {
    let snap = snapshot(scenario, cfg, period)?;
    let asg = plan(&snap, phases)?;
    let sol = solve_utpf(&snap, &asg, None)?;
    let net = snap.network();
    create_dir(out)?;
    let path = out.join(format!("pf_{period}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for (b, v) in sol.voltages.iter().enumerate() {
        for p in Phase::ALL {
            w.serialize(PfRow {
                bus_id: net.buses()[b].id.clone(),
                phase: p.label(),
                vm_pu: Some(v[p].norm()),
                va_rad: Some(v[p].arg()),
                p_pu: None,
                q_pu: None,
            })?;
        }
    }
    for p in Phase::ALL {
        w.serialize(PfRow {
            bus_id: "DT".into(),
            phase: p.label(),
            vm_pu: None,
            va_rad: None,
            p_pu: Some(sol.dt_power[p].re),
            q_pu: Some(sol.dt_power[p].im),
        })?;
    }
    w.flush()?;
    print_json(&PfSummary {
        period,
        iterations: sol.iterations,
        mismatch: sol.mismatch,
        unbalance: sol.unbalance(),
        dt_p: sol.dt_p(),
        dt_q: sol.dt_q(),
        file: path,
    })
}

#[derive(Serialize)]
struct EvalRow<'a> {
    bus: &'a str,
    phase: char,
    vm_pu: f64,
    vneg_pu: f64,
    tau_minus: f64,
    tau_plus: f64,
    omega: f64,
}

#[derive(Serialize)]
struct EvalSummary {
    formulation: String,
    objective: f64,
    unbalance: f64,
    slack_total: f64,
    dt_p: [f64; 3],
    dt_q: [f64; 3],
    linear_residual: Option<f64>,
    file: PathBuf,
}

fn write_evaluation(snap: &CaseSnapshot, r: &EvaluationResult, path: &Path) -> Result<()> {
    let net = snap.network();
    let vm = r.magnitudes();
    let vneg = r.voltages.negative_sequence();
    let mut w = csv::Writer::from_path(path)?;
    for (b, bus) in net.buses().iter().enumerate() {
        for p in Phase::ALL {
            w.serialize(EvalRow {
                bus: &bus.id,
                phase: p.label(),
                vm_pu: vm[b][p.index()],
                vneg_pu: vneg[b],
                tau_minus: r.slacks.tau_minus[b],
                tau_plus: r.slacks.tau_plus[b],
                omega: r.slacks.omega[b],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn linv_evaluator(scenario: &Scenario, cfg: &SweepConfig) -> Result<Evaluator> {
    let range = scenario.period_range(cfg.periods)?;
    let fit = build_fit(scenario, cfg.linv_fit, range, &cfg.scenario_options())?;
    Ok(Evaluator::Linv { fit: Arc::new(fit) })
}

fn cmd_evaluate(
    scenario: &Scenario,
    cfg: &SweepConfig,
    period: usize,
    formulation: FormulationArg,
    profile: ProfileArg,
    phases: Option<&str>,
    out: &Path,
) -> Result<()> {
    let snap = snapshot(scenario, cfg, period)?;
    let asg = plan(&snap, phases)?;
    let kinds = match formulation {
        FormulationArg::Fixv => vec![FormulationKind::Fixv],
        FormulationArg::Linv => vec![FormulationKind::Linv],
        FormulationArg::Lbfm => vec![FormulationKind::Lbfm],
        FormulationArg::All => vec![FormulationKind::Fixv, FormulationKind::Linv, FormulationKind::Lbfm],
    };
    create_dir(out)?;
    let mut summaries = Vec::new();
    for kind in kinds {
        let ev = match kind {
            FormulationKind::Fixv => Evaluator::Fixv {
                profile: Arc::new(match profile {
                    ProfileArg::Flat => VoltageProfile::flat(snap.network()),
                    ProfileArg::Utpf => VoltageProfile::from_solution(&solve_utpf(&snap, &asg, None)?),
                }),
            },
            FormulationKind::Linv => linv_evaluator(scenario, cfg)?,
            FormulationKind::Lbfm => Evaluator::Lbfm,
        };
        let r = ev.evaluate(&snap, &asg, None)?;
        let path = out.join(format!("evaluate_{period}_{kind}.csv"));
        write_evaluation(&snap, &r, &path)?;
        summaries.push(EvalSummary {
            formulation: kind.to_string(),
            objective: r.objective,
            unbalance: r.unbalance,
            slack_total: r.slacks.total(),
            dt_p: r.dt_p,
            dt_q: r.dt_q,
            linear_residual: r.linear_residual,
            file: path,
        });
    }
    print_json(&summaries)
}

#[derive(Serialize)]
struct SlackTotals {
    tau_minus: f64,
    tau_plus: f64,
    rho: f64,
    omega: f64,
}

#[derive(Serialize)]
struct OptimizeFile {
    period: usize,
    minute: u32,
    method: String,
    strategy: Strategy,
    seed: u64,
    unbalance: f64,
    slacks: SlackTotals,
    stats: SearchStats,
    #[serde(flatten)]
    outcome: OutcomeData,
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    scenario: &Scenario,
    mut cfg: SweepConfig,
    period: usize,
    method: Method,
    search: Option<Strategy>,
    k: Option<usize>,
    eps_v: Option<f64>,
    pv_q: Option<Switch>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    if let Some(s) = search {
        cfg.search.strategy = s;
    }
    if let Some(s) = seed {
        cfg.search.seed = s;
    }
    if let Some(e) = eps_v {
        cfg.eps_v = e;
    }
    if let Some(k) = k {
        cfg.k_cold = k;
        cfg.k_warm = k;
    }
    if let Some(q) = pv_q {
        cfg.pv_control = q.on();
        cfg.scenario.pv_control = q.on();
    }
    cfg.validate()?;
    let snap = snapshot(scenario, &cfg, period)?;
    let fit = match method {
        Method::Linv => match linv_evaluator(scenario, &cfg)? {
            Evaluator::Linv { fit } => Some(fit),
            _ => None,
        },
        _ => None,
    };
    let initial = PhaseAssignment::initial(snap.network());
    let pi_initial = solve_utpf(&snap, &initial, None)?.unbalance();
    let o = optimize(&snap, method, &cfg.method_options(method, fit.as_ref()))?;
    let s = &o.evaluation.slacks;
    let file = OptimizeFile {
        period,
        minute: scenario.series.timestamps[period],
        method: method.label().into(),
        strategy: cfg.search.strategy,
        seed: cfg.search.seed,
        unbalance: o.evaluation.unbalance,
        slacks: SlackTotals {
            tau_minus: s.tau_minus.iter().sum(),
            tau_plus: s.tau_plus.iter().sum(),
            rho: s.rho.iter().sum(),
            omega: s.omega.iter().sum(),
        },
        stats: o.stats,
        outcome: OutcomeData::from_outcome(&o, &initial, pi_initial),
    };
    create_dir(out)?;
    let path = out.join(format!("outcome_{period}_{}.json", method.label()));
    fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    println!(
        "{} period {period}: F {:.6} -> {:.6}, verified unbalance {:.6} -> {:.6}, {} moved, {:.3} s",
        method,
        o.initial_evaluation.objective,
        o.objective(),
        pi_initial,
        o.verified.unbalance,
        file.outcome.moved,
        o.runtime_s
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn print_report(report: &SweepReport) {
    println!(
        "{:<10} {:>7} {:>9} {:>12} {:>12} {:>11}",
        "method", "rows", "failures", "mean pi", "reduction %", "runtime s"
    );
    for m in &report.summary.methods {
        println!(
            "{:<10} {:>7} {:>9} {:>12.6} {:>12.2} {:>11.4}",
            m.method, m.periods, m.failures, m.mean_pi_opt, m.reduction_pct, m.mean_runtime_s
        );
    }
    println!();
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>10}",
        "method", "max dV", "p50", "p90", "p99"
    );
    for a in &report.summary.accuracy {
        println!(
            "{:<10} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}",
            a.method, a.max, a.p50, a.p90, a.p99
        );
    }
}

fn parse_range(text: &str) -> Result<[usize; 2]> {
    let (a, b) = text.split_once(':').context("period range must be start:end")?;
    Ok([a.trim().parse()?, b.trim().parse()?])
}

fn cmd_sweep(
    scenario: &Scenario,
    mut cfg: SweepConfig,
    out: Option<PathBuf>,
    threads: Option<usize>,
    periods: Option<String>,
    methods: Option<Vec<Method>>,
    pv_q: Option<Switch>,
) -> Result<ExitCode> {
    if let Some(o) = out {
        cfg.output_dir = Some(o);
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if let Some(p) = periods {
        cfg.periods = Some(parse_range(&p)?);
    }
    if let Some(m) = methods {
        cfg.methods = m;
    }
    if let Some(q) = pv_q {
        cfg.pv_control = q.on();
        cfg.scenario.pv_control = q.on();
    }
    let report = run_sweep_on(scenario, &cfg)?;
    print_report(&report);
    for r in report.rows.iter().filter(|r| !r.is_ok()) {
        eprintln!("period {} {}: {}", r.period, r.method, r.error);
    }
    if let Some(dir) = &cfg.output_dir {
        println!("wrote {}", dir.display());
    }
    Ok(if report.failures() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_verify(outcomes: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let file = if outcomes.is_dir() {
        outcomes.join("outcomes.jsonl")
    } else {
        outcomes.to_path_buf()
    };
    let report = SweepReport::from_outcomes_file(&file)?;
    print_report(&report);
    if let Some(dir) = out {
        report.write(dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(if report.failures() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let load = || -> Result<Scenario> {
        Scenario::load(&cfg.feeder, cfg.resolution_min).with_context(|| format!("loading {}", cfg.feeder.display()))
    };
    match cli.command {
        Command::Import { out } => cmd_import(&cfg, &out)?,
        Command::Pf { period, phases, out } => cmd_pf(&load()?, &cfg, period, phases.as_deref(), &out)?,
        Command::Evaluate {
            period,
            formulation,
            profile,
            phases,
            out,
        } => cmd_evaluate(&load()?, &cfg, period, formulation, profile, phases.as_deref(), &out)?,
        Command::Optimize {
            period,
            method,
            search,
            k,
            eps_v,
            pv_q,
            seed,
            out,
        } => {
            let scenario = load()?;
            cmd_optimize(&scenario, cfg, period, method, search, k, eps_v, pv_q, seed, &out)?
        }
        Command::Sweep {
            out,
            threads,
            periods,
            methods,
            pv_q,
        } => {
            let scenario = load()?;
            return cmd_sweep(&scenario, cfg, out, threads, periods, methods, pv_q);
        }
        Command::Verify { outcomes, out } => return cmd_verify(&outcomes, out.as_deref()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
