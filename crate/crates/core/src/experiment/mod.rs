//! Full-day sweeps over the compared methods and the accuracy report.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    quantile, read_outcomes, verify_accuracy, AccuracyRow, MethodSummary, OutcomeData, OutcomeRecord, Summary,
    SweepReport, SweepRow, INITIAL,
};

use crate::error::{Error, Result};
use crate::formulations::AffineFit;
use crate::netmodel::{
    build_snapshot, import_european_feeder, resample_profiles, DemandSeries, ImportOptions, Network, ScenarioOptions,
};
use crate::optimizer::{optimize, Method, MethodOptions, OptimizationOutcome, SearchOptions, Verified};
use crate::powerflow::{solve_utpf, PhaseAssignment};

/// Sample set the LINV inverse-voltage fit is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitSource {
    /// Polar grid over the voltage limits and angle window.
    Grid,
    /// Power-flow voltages of the as-built plan over the swept periods.
    History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Feeder directory in the European LV test feeder CSV layout.
    pub feeder: PathBuf,
    pub methods: Vec<Method>,
    /// Half-open period range; all periods when absent.
    pub periods: Option<[usize; 2]>,
    pub resolution_min: u32,
    pub pv_control: bool,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for the period fan-out.
    pub threads: usize,
    pub scenario: ScenarioOptions,
    pub search: SearchOptions,
    pub k_cold: usize,
    pub k_warm: usize,
    pub eps_v: f64,
    pub seed_iterations: bool,
    pub linv_fit: FitSource,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            feeder: PathBuf::from("data/european_lv"),
            methods: Method::ALL.to_vec(),
            periods: None,
            resolution_min: 15,
            pv_control: false,
            output_dir: None,
            threads: 8,
            scenario: ScenarioOptions::european_case(),
            search: SearchOptions::default(),
            k_cold: 3,
            k_warm: 1,
            eps_v: 1e-4,
            seed_iterations: true,
            linv_fit: FitSource::History,
        }
    }
}

impl SweepConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`. Relative
    /// paths inside the file are taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<SweepConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = SweepConfig::parse(&text, path.extension().is_some_and(|e| e == "json"))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.feeder.is_relative() {
            cfg.feeder = base.join(&cfg.feeder);
        }
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, json: bool) -> Result<SweepConfig> {
        let cfg: SweepConfig = if json {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        if self.threads == 0 || self.resolution_min == 0 {
            return Err(Error::Config("threads and resolution_min must be positive".into()));
        }
        if self.k_cold == 0 || self.k_warm == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        if let Some([a, b]) = self.periods {
            if a >= b {
                return Err(Error::Config(format!("empty period range {a}..{b}")));
            }
        }
        Ok(())
    }

    pub fn scenario_options(&self) -> ScenarioOptions {
        ScenarioOptions {
            pv_control: self.pv_control || self.scenario.pv_control,
            ..self.scenario.clone()
        }
    }

    pub fn method_options(&self, method: Method, fit: Option<&Arc<AffineFit>>) -> MethodOptions {
        MethodOptions {
            search: self.search.clone(),
            k: Some(match method {
                Method::FixvMw => self.k_warm,
                _ => self.k_cold,
            }),
            eps_v: self.eps_v,
            pv_q: self.pv_control || self.scenario.pv_control,
            fit: fit.cloned(),
            seed_iterations: self.seed_iterations,
        }
    }
}

/// A feeder with its demand series at the sweep resolution.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Arc<Network>,
    pub series: DemandSeries,
}

impl Scenario {
    pub fn load(dir: impl AsRef<Path>, resolution_min: u32) -> Result<Scenario> {
        let feeder = import_european_feeder(dir, &ImportOptions::default())?;
        let series = if feeder.demand.resolution_min == resolution_min {
            feeder.demand
        } else {
            resample_profiles(&feeder.demand, resolution_min)?
        };
        Ok(Scenario {
            network: Arc::new(feeder.network),
            series,
        })
    }

    pub fn period_range(&self, periods: Option<[usize; 2]>) -> Result<std::ops::Range<usize>> {
        let len = self.series.len();
        let [a, b] = periods.unwrap_or([0, len]);
        if b > len {
            return Err(Error::PeriodOutOfRange { period: b - 1, len });
        }
        Ok(a..b)
    }
}

/// Inverse-voltage fit for the sweep.
pub fn build_fit(
    scenario: &Scenario,
    source: FitSource,
    periods: std::ops::Range<usize>,
    opts: &ScenarioOptions,
) -> Result<AffineFit> {
    let net = &scenario.network;
    match source {
        FitSource::Grid => AffineFit::default_for(net),
        FitSource::History => {
            let initial = PhaseAssignment::initial(net);
            let states = periods
                .into_par_iter()
                .map(|p| {
                    let snap = build_snapshot(net, &scenario.series, p, opts)?;
                    Ok(solve_utpf(&snap, &initial, None)?.voltages)
                })
                .collect::<Result<Vec<_>>>()?;
            AffineFit::from_history(net, states.iter().map(|v| (&initial, v.as_slice())))
        }
    }
}

fn record(period: usize, minute: u32, method: &str, result: Result<OutcomeData>) -> OutcomeRecord {
    match result {
        Ok(data) => OutcomeRecord {
            period,
            minute,
            method: method.to_string(),
            error: None,
            result: Some(data),
        },
        Err(e) => OutcomeRecord {
            period,
            minute,
            method: method.to_string(),
            error: Some(e.to_string()),
            result: None,
        },
    }
}

fn run_period(
    scenario: &Scenario,
    cfg: &SweepConfig,
    fit: Option<&Arc<AffineFit>>,
    period: usize,
) -> Vec<OutcomeRecord> {
    let minute = scenario.series.timestamps[period];
    let snap = match build_snapshot(&scenario.network, &scenario.series, period, &cfg.scenario_options()) {
        Ok(s) => s,
        Err(e) => {
            let msg = e.to_string();
            return std::iter::once(INITIAL)
                .chain(cfg.methods.iter().map(|m| m.label()))
                .map(|m| record(period, minute, m, Err(Error::Config(msg.clone()))))
                .collect();
        }
    };
    let initial = PhaseAssignment::initial(&scenario.network);
    let t = std::time::Instant::now();
    let base = solve_utpf(&snap, &initial, None).map(|sol| {
        let verified = Verified::from_solution(&sol, &snap);
        OutcomeData::initial(&initial, verified, t.elapsed().as_secs_f64())
    });
    let pi_initial = base.as_ref().map(|b| b.verified.unbalance).ok();
    let mut out = vec![record(period, minute, INITIAL, base)];
    for &m in &cfg.methods {
        let result = optimize(&snap, m, &cfg.method_options(m, fit))
            .map(|o: OptimizationOutcome| OutcomeData::from_outcome(&o, &initial, pi_initial.unwrap_or(f64::NAN)));
        out.push(record(period, minute, m.label(), result));
    }
    out
}

/// Runs every configured method on every period, verifies each plan with
/// the power flow and writes the report files when an output directory is
/// set. Per-period failures become error rows.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let scenario = Scenario::load(&cfg.feeder, cfg.resolution_min)?;
    run_sweep_on(&scenario, cfg)
}

/// [`run_sweep`] on an already loaded scenario.
pub fn run_sweep_on(scenario: &Scenario, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let range = scenario.period_range(cfg.periods)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<OutcomeRecord> = pool.install(|| -> Result<Vec<OutcomeRecord>> {
        let fit = if cfg.methods.contains(&Method::Linv) {
            Some(Arc::new(build_fit(
                scenario,
                cfg.linv_fit,
                range.clone(),
                &cfg.scenario_options(),
            )?))
        } else {
            None
        };
        let per_period: Vec<Vec<OutcomeRecord>> = range
            .clone()
            .into_par_iter()
            .map(|p| run_period(scenario, cfg, fit.as_ref(), p))
            .collect();
        Ok(per_period.into_iter().flatten().collect())
    })?;
    let report = SweepReport::from_records(records)?;
    if let Some(dir) = &cfg.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}
