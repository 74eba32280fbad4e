use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{OptimizationOutcome, Verified};
use crate::powerflow::PhaseAssignment;

/// Method label of the unoptimized as-built plan.
pub const INITIAL: &str = "initial";

/// Everything kept about one optimized (or as-built) plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeData {
    pub formulation: String,
    /// One phase letter per customer.
    pub phases: String,
    pub q: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub objective_without_q: Option<f64>,
    pub initial_objective: Option<f64>,
    pub slack_total: f64,
    /// Power-flow unbalance of the as-built plan in the same period.
    pub pi_initial: Option<f64>,
    pub moved: usize,
    pub delta_v_trace: Vec<f64>,
    pub converged: bool,
    pub discrete_solves: usize,
    pub candidates: u64,
    pub runtime_s: f64,
    pub verified: Verified,
    /// Voltage magnitudes predicted by the formulation.
    pub formulation_vm: Vec<[f64; 3]>,
}

fn phase_string(a: &PhaseAssignment) -> String {
    a.phases().iter().map(|p| p.label()).collect()
}

impl OutcomeData {
    pub fn initial(asg: &PhaseAssignment, verified: Verified, runtime_s: f64) -> OutcomeData {
        OutcomeData {
            formulation: "utpf".into(),
            phases: phase_string(asg),
            q: None,
            objective: None,
            objective_without_q: None,
            initial_objective: None,
            slack_total: 0.0,
            pi_initial: Some(verified.unbalance),
            moved: 0,
            delta_v_trace: Vec::new(),
            converged: true,
            discrete_solves: 0,
            candidates: 0,
            runtime_s,
            formulation_vm: verified.magnitudes.clone(),
            verified,
        }
    }

    pub fn from_outcome(o: &OptimizationOutcome, initial: &PhaseAssignment, pi_initial: f64) -> OutcomeData {
        OutcomeData {
            formulation: o.formulation.to_string(),
            phases: phase_string(&o.assignment),
            q: o.q.as_ref().map(|q| q.0.clone()),
            objective: Some(o.evaluation.objective),
            objective_without_q: Some(o.objective_without_q),
            initial_objective: Some(o.initial_evaluation.objective),
            slack_total: o.evaluation.slacks.total(),
            pi_initial: pi_initial.is_finite().then_some(pi_initial),
            moved: o
                .assignment
                .phases()
                .iter()
                .zip(initial.phases())
                .filter(|(a, b)| a != b)
                .count(),
            delta_v_trace: o.delta_v_trace.clone(),
            converged: o.converged,
            discrete_solves: o.discrete_solves,
            candidates: o.stats.candidates,
            runtime_s: o.runtime_s,
            verified: o.verified.clone(),
            formulation_vm: o.evaluation.magnitudes(),
        }
    }

    /// `| |V_formulation| - |V_utpf| |` over all buses and phases.
    pub fn delta_v(&self) -> Option<Vec<f64>> {
        let v = &self.verified.magnitudes;
        if self.formulation_vm.is_empty() || self.formulation_vm.len() != v.len() {
            return None;
        }
        Some(
            self.formulation_vm
                .iter()
                .zip(v)
                .flat_map(|(a, b)| (0..3).map(move |p| (a[p] - b[p]).abs()))
                .collect(),
        )
    }
}

/// One period of one method; `error` is set when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub period: usize,
    pub minute: u32,
    pub method: String,
    pub error: Option<String>,
    pub result: Option<OutcomeData>,
}

/// A line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub period: usize,
    pub minute: u32,
    pub method: String,
    pub status: String,
    pub error: String,
    pub pi_initial: Option<f64>,
    pub pi_opt: Option<f64>,
    pub f_initial: Option<f64>,
    pub f_opt: Option<f64>,
    pub vm_min: Option<f64>,
    pub vm_max: Option<f64>,
    pub max_vneg: Option<f64>,
    pub slack_total: Option<f64>,
    pub max_delta_v: Option<f64>,
    pub moved: Option<usize>,
    pub discrete_solves: Option<usize>,
    pub converged: Option<bool>,
    pub candidates: Option<u64>,
    pub runtime_s: Option<f64>,
}

impl SweepRow {
    pub fn from_record(r: &OutcomeRecord) -> SweepRow {
        let d = r.result.as_ref();
        SweepRow {
            period: r.period,
            minute: r.minute,
            method: r.method.clone(),
            status: if r.error.is_none() { "ok" } else { "error" }.into(),
            error: r.error.clone().unwrap_or_default(),
            pi_initial: d.and_then(|d| d.pi_initial),
            pi_opt: d.map(|d| d.verified.unbalance),
            f_initial: d.and_then(|d| d.initial_objective),
            f_opt: d.and_then(|d| d.objective),
            vm_min: d.map(|d| d.verified.vm_min),
            vm_max: d.map(|d| d.verified.vm_max),
            max_vneg: d.map(|d| d.verified.max_vneg),
            slack_total: d.map(|d| d.slack_total),
            max_delta_v: d.and_then(|d| d.delta_v()).map(|v| v.into_iter().fold(0.0, f64::max)),
            moved: d.map(|d| d.moved),
            discrete_solves: d.map(|d| d.discrete_solves),
            converged: d.map(|d| d.converged),
            candidates: d.map(|d| d.candidates),
            runtime_s: d.map(|d| d.runtime_s),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub periods: usize,
    pub failures: usize,
    pub mean_pi_initial: f64,
    pub mean_pi_opt: f64,
    /// `100 (1 - mean(π_opt) / mean(π_initial))` over the successful periods.
    pub reduction_pct: f64,
    pub not_converged: usize,
    pub mean_runtime_s: f64,
    pub max_runtime_s: f64,
}

/// Distribution of the formulation voltage error for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub samples: usize,
    pub max: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    /// `[ΔV, cumulative fraction]` at every percent.
    pub cdf: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub failures: usize,
    pub methods: Vec<MethodSummary>,
    pub accuracy: Vec<AccuracyRow>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn methods_in_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|m| m == n) {
            out.push(n.to_string());
        }
    }
    out
}

impl Summary {
    pub fn from_rows(rows: &[SweepRow], accuracy: Vec<AccuracyRow>) -> Summary {
        let methods = methods_in_order(rows.iter().map(|r| r.method.as_str()))
            .into_iter()
            .map(|m| {
                let all: Vec<&SweepRow> = rows.iter().filter(|r| r.method == m).collect();
                let ok: Vec<&SweepRow> = all
                    .iter()
                    .copied()
                    .filter(|r| r.is_ok() && r.pi_initial.is_some() && r.pi_opt.is_some())
                    .collect();
                let mean_pi_initial = mean(ok.iter().map(|r| r.pi_initial.unwrap()));
                let mean_pi_opt = mean(ok.iter().map(|r| r.pi_opt.unwrap()));
                MethodSummary {
                    method: m,
                    periods: all.len(),
                    failures: all.iter().filter(|r| !r.is_ok()).count(),
                    mean_pi_initial,
                    mean_pi_opt,
                    reduction_pct: 100.0 * (1.0 - mean_pi_opt / mean_pi_initial),
                    not_converged: ok.iter().filter(|r| r.converged == Some(false)).count(),
                    mean_runtime_s: mean(ok.iter().filter_map(|r| r.runtime_s)),
                    max_runtime_s: ok.iter().filter_map(|r| r.runtime_s).fold(0.0, f64::max),
                }
            })
            .collect();
        Summary {
            rows: rows.len(),
            failures: rows.iter().filter(|r| !r.is_ok()).count(),
            methods,
            accuracy,
        }
    }

    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == label)
    }

    pub fn accuracy(&self, label: &str) -> Option<&AccuracyRow> {
        self.accuracy.iter().find(|m| m.method == label)
    }
}

/// Linearly interpolated quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

/// Pools the voltage error of every successful record per method.
pub fn verify_accuracy(records: &[OutcomeRecord]) -> Result<Vec<AccuracyRow>> {
    let mut out = Vec::new();
    for m in methods_in_order(records.iter().map(|r| r.method.as_str())) {
        let mut dv = Vec::new();
        for r in records.iter().filter(|r| r.method == m) {
            if let Some(d) = &r.result {
                let v = d
                    .delta_v()
                    .ok_or_else(|| Error::MissingVerified(format!("{} period {}", r.method, r.period)))?;
                dv.extend(v);
            }
        }
        if dv.is_empty() {
            continue;
        }
        dv.sort_by(f64::total_cmp);
        let cdf = (0..=100)
            .map(|k| {
                let q = k as f64 / 100.0;
                [quantile(&dv, q), q]
            })
            .collect();
        out.push(AccuracyRow {
            method: m,
            samples: dv.len(),
            max: *dv.last().unwrap(),
            p50: quantile(&dv, 0.5),
            p90: quantile(&dv, 0.9),
            p99: quantile(&dv, 0.99),
            cdf,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub records: Vec<OutcomeRecord>,
    pub rows: Vec<SweepRow>,
    pub summary: Summary,
}

#[derive(Serialize)]
struct PiPoint<'a> {
    period: usize,
    minute: u32,
    method: &'a str,
    pi: Option<f64>,
}

#[derive(Serialize)]
struct VmPoint<'a> {
    period: usize,
    minute: u32,
    method: &'a str,
    vm_min: Option<f64>,
    vm_max: Option<f64>,
}

#[derive(Serialize)]
struct VubPoint<'a> {
    period: usize,
    minute: u32,
    method: &'a str,
    max_vneg: Option<f64>,
}

#[derive(Serialize)]
struct CdfPoint<'a> {
    method: &'a str,
    fraction: f64,
    delta_v: f64,
}

fn write_csv<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for it in items {
        w.serialize(it)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

impl SweepReport {
    /// Rows, summary and accuracy table derived from the records alone.
    pub fn from_records(records: Vec<OutcomeRecord>) -> Result<SweepReport> {
        let rows: Vec<SweepRow> = records.iter().map(SweepRow::from_record).collect();
        let accuracy = verify_accuracy(&records)?;
        let summary = Summary::from_rows(&rows, accuracy);
        Ok(SweepReport { records, rows, summary })
    }

    pub fn from_outcomes_file(path: impl AsRef<Path>) -> Result<SweepReport> {
        SweepReport::from_records(read_outcomes(path)?)
    }

    pub fn failures(&self) -> usize {
        self.summary.failures
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn records_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a OutcomeRecord> + 'a {
        self.records.iter().filter(move |r| r.method == method)
    }

    /// Writes `sweep.csv`, `summary.json`, the plot-data CSVs and
    /// `outcomes.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join("sweep.csv"), &self.rows)?;
        let summary_path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&self.summary)?;
        text.push('\n');
        fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
        write_csv(
            &dir.join("plot_pi.csv"),
            self.rows.iter().map(|r| PiPoint {
                period: r.period,
                minute: r.minute,
                method: &r.method,
                pi: r.pi_opt,
            }),
        )?;
        write_csv(
            &dir.join("plot_vm.csv"),
            self.rows.iter().map(|r| VmPoint {
                period: r.period,
                minute: r.minute,
                method: &r.method,
                vm_min: r.vm_min,
                vm_max: r.vm_max,
            }),
        )?;
        write_csv(
            &dir.join("plot_vub.csv"),
            self.rows.iter().map(|r| VubPoint {
                period: r.period,
                minute: r.minute,
                method: &r.method,
                max_vneg: r.max_vneg,
            }),
        )?;
        write_csv(
            &dir.join("accuracy_cdf.csv"),
            self.summary.accuracy.iter().flat_map(|a| {
                a.cdf.iter().map(|&[dv, q]| CdfPoint {
                    method: &a.method,
                    fraction: q,
                    delta_v: dv,
                })
            }),
        )?;
        let path = dir.join("outcomes.jsonl");
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Reads the records written to `outcomes.jsonl`.
pub fn read_outcomes(path: impl AsRef<Path>) -> Result<Vec<OutcomeRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
