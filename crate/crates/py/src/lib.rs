//! Python bindings: load a feeder, solve power flows, evaluate and optimize
//! phase connections, run sweeps.

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use phaseswap::experiment::{self, build_fit, FitSource, OutcomeData, SweepConfig};
use phaseswap::formulations::{AffineFit, Evaluator, VoltageProfile};
use phaseswap::netmodel::{build_snapshot, CaseSnapshot, ScenarioOptions};
use phaseswap::optimizer::{optimize, Method, MethodOptions, Strategy};
use phaseswap::powerflow::{solve_utpf, PhaseAssignment};
use phaseswap::{synthetic, Complex64, Error, Phase};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::MissingFile(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Phase letters (one per customer) into an assignment.
fn parse_plan(text: &str, n: usize) -> Result<PhaseAssignment, String> {
    let phases: Vec<Phase> = text
        .chars()
        .map(|c| Phase::parse(&c.to_string()).ok_or_else(|| format!("bad phase letter {c:?}")))
        .collect::<Result<_, _>>()?;
    if phases.len() != n {
        return Err(format!("expected {n} phase letters, got {}", phases.len()));
    }
    Ok(PhaseAssignment::new(phases))
}

fn plan_string(a: &PhaseAssignment) -> String {
    a.phases().iter().map(|p| p.label()).collect()
}

/// A feeder directory with its demand series.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    inner: experiment::Scenario,
    fit: OnceLock<Arc<AffineFit>>,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (feeder, resolution_min = 15))]
    fn new(feeder: PathBuf, resolution_min: u32) -> PyResult<Self> {
        let inner = experiment::Scenario::load(feeder, resolution_min).map_err(to_py_err)?;
        Ok(PyScenario {
            inner,
            fit: OnceLock::new(),
        })
    }

    #[getter]
    fn n_periods(&self) -> usize {
        self.inner.series.len()
    }

    #[getter]
    fn n_customers(&self) -> usize {
        self.inner.network.customers().len()
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.network.n_buses()
    }

    /// Snapshot of one period with the bundled PV and switch placement.
    #[pyo3(signature = (period, pv_control = false))]
    fn snapshot(&self, period: usize, pv_control: bool) -> PyResult<PySnapshot> {
        let opts = ScenarioOptions {
            pv_control,
            ..ScenarioOptions::european_case()
        };
        let snap = build_snapshot(&self.inner.network, &self.inner.series, period, &opts).map_err(to_py_err)?;
        let fit = match self.fit.get() {
            Some(f) => f.clone(),
            None => {
                let f =
                    build_fit(&self.inner, FitSource::History, 0..self.inner.series.len(), &opts).map_err(to_py_err)?;
                self.fit.get_or_init(|| Arc::new(f)).clone()
            }
        };
        Ok(PySnapshot { inner: snap, fit })
    }
}

/// One period of one feeder in per-unit.
#[pyclass(name = "Snapshot", frozen)]
struct PySnapshot {
    inner: CaseSnapshot,
    fit: Arc<AffineFit>,
}

impl PySnapshot {
    fn plan(&self, phases: Option<&str>) -> PyResult<PhaseAssignment> {
        let net = self.inner.network();
        match phases {
            Some(p) => parse_plan(p, net.customers().len()).map_err(PyValueError::new_err),
            None => Ok(PhaseAssignment::initial(net)),
        }
    }

    fn evaluator(&self, formulation: &str, asg: &PhaseAssignment, profile: &str) -> PyResult<Evaluator> {
        Ok(match formulation {
            "fixv" => Evaluator::Fixv {
                profile: Arc::new(match profile {
                    "flat" => VoltageProfile::flat(self.inner.network()),
                    "utpf" => VoltageProfile::from_solution(&solve_utpf(&self.inner, asg, None).map_err(to_py_err)?),
                    other => return Err(PyValueError::new_err(format!("unknown profile {other:?}"))),
                }),
            },
            "linv" => Evaluator::Linv { fit: self.fit.clone() },
            "lbfm" => Evaluator::Lbfm,
            other => return Err(PyValueError::new_err(format!("unknown formulation {other:?}"))),
        })
    }
}

#[pymethods]
impl PySnapshot {
    #[getter]
    fn period(&self) -> usize {
        self.inner.period()
    }

    /// 1-based indices of the switchable customers.
    #[getter]
    fn adjustable(&self) -> Vec<usize> {
        self.inner.adjustable_customers().iter().map(|c| c + 1).collect()
    }

    fn initial_phases(&self) -> String {
        plan_string(&PhaseAssignment::initial(self.inner.network()))
    }

    /// Unbalanced power flow of a plan (the as-built one by default).
    #[pyo3(signature = (phases = None))]
    fn solve_pf<'py>(&self, py: Python<'py>, phases: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let asg = self.plan(phases)?;
        let sol = solve_utpf(&self.inner, &asg, None).map_err(to_py_err)?;
        let value = serde_json::json!({
            "iterations": sol.iterations,
            "mismatch": sol.mismatch,
            "unbalance": sol.unbalance(),
            "dt_p": sol.dt_p(),
            "dt_q": sol.dt_q(),
            "vm": sol.magnitudes(),
        });
        json_to_py(py, &value)
    }

    /// Objective, unbalance and voltages of a plan under one formulation.
    #[pyo3(signature = (formulation, phases = None, profile = "flat"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        formulation: &str,
        phases: Option<&str>,
        profile: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let asg = self.plan(phases)?;
        let ev = self.evaluator(formulation, &asg, profile)?;
        let r = ev.evaluate(&self.inner, &asg, None).map_err(to_py_err)?;
        let value = serde_json::json!({
            "formulation": r.formulation.to_string(),
            "objective": r.objective,
            "unbalance": r.unbalance,
            "slack_total": r.slacks.total(),
            "dt_p": r.dt_p,
            "dt_q": r.dt_q,
            "vm": r.magnitudes(),
        });
        json_to_py(py, &value)
    }

    /// Runs one method and returns the verified outcome.
    #[pyo3(signature = (method, search = "exhaustive", k = None, pv_q = false, seed = 0))]
    fn optimize<'py>(
        &self,
        py: Python<'py>,
        method: &str,
        search: &str,
        k: Option<usize>,
        pv_q: bool,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let method: Method = method.parse().map_err(to_py_err)?;
        let strategy: Strategy = search.parse().map_err(to_py_err)?;
        let mut opts = MethodOptions {
            k,
            pv_q,
            fit: Some(self.fit.clone()),
            ..Default::default()
        };
        opts.search.strategy = strategy;
        opts.search.seed = seed;
        let initial = PhaseAssignment::initial(self.inner.network());
        let pi0 = solve_utpf(&self.inner, &initial, None).map_err(to_py_err)?.unbalance();
        let o = py.detach(|| optimize(&self.inner, method, &opts)).map_err(to_py_err)?;
        json_to_py(py, &OutcomeData::from_outcome(&o, &initial, pi0))
    }
}

/// Two-bus test feeder with one fixed customer of demand `p + jq` p.u.
#[pyfunction]
fn two_bus(p: f64, q: f64) -> PyResult<PySnapshot> {
    let snap = synthetic::two_bus(Complex64::new(p, q));
    let fit = AffineFit::default_for(snap.network()).map_err(to_py_err)?;
    Ok(PySnapshot {
        inner: snap,
        fit: Arc::new(fit),
    })
}

/// Full sweep; returns the summary (per-method reductions and accuracy).
#[pyfunction]
#[pyo3(signature = (config = None, feeder = None, periods = None, methods = None, threads = None, output_dir = None))]
fn run_sweep<'py>(
    py: Python<'py>,
    config: Option<PathBuf>,
    feeder: Option<PathBuf>,
    periods: Option<(usize, usize)>,
    methods: Option<Vec<String>>,
    threads: Option<usize>,
    output_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(p) => SweepConfig::load(p).map_err(to_py_err)?,
        None => SweepConfig::default(),
    };
    if let Some(f) = feeder {
        cfg.feeder = f;
    }
    if let Some((a, b)) = periods {
        cfg.periods = Some([a, b]);
    }
    if let Some(m) = methods {
        cfg.methods = m
            .iter()
            .map(|s| s.parse::<Method>())
            .collect::<Result<_, _>>()
            .map_err(to_py_err)?;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    let report = py.detach(|| experiment::run_sweep(&cfg)).map_err(to_py_err)?;
    json_to_py(py, &report.summary)
}

#[pymodule]
#[pyo3(name = "phaseswap")]
fn phaseswap_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySnapshot>()?;
    m.add_function(wrap_pyfunction!(two_bus, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_round_trip() {
        let a = parse_plan("abcb", 4).unwrap();
        assert_eq!(plan_string(&a), "abcb");
        assert!(parse_plan("abx", 3).is_err());
        assert!(parse_plan("ab", 3).is_err());
    }
}
