//! Formulation evaluators: given a snapshot and a concrete phase
//! assignment, solve the continuous part of each model and score it.

mod fixv;
mod lbfm;
mod linv;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use fixv::{evaluate_fixv, VoltageProfile};
pub use lbfm::{evaluate_lbfm, lbfm_beta};
pub use linv::{evaluate_linv, fit_inverse_voltage, AffineFit, FitDomain, PhaseFit};

use crate::error::{Error, Result};
use crate::netmodel::{CaseSnapshot, Limits};
use crate::phasor::{chi, Mat3, Phasor3};
use crate::powerflow::{PhaseAssignment, QSettings};

/// `(V_a + χV_b + χ²V_c) / 3` with `χ = e^{-j2π/3}`.
pub fn negative_sequence(v: &Phasor3) -> Complex64 {
    let x = chi();
    (v.0[0] + x * v.0[1] + x * x * v.0[2]) / 3.0
}

/// Largest pairwise gap among the per-phase active and reactive DT flows.
pub fn dt_unbalance(p: [f64; 3], q: [f64; 3]) -> f64 {
    let spread = |x: [f64; 3]| {
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    spread(p).max(spread(q))
}

/// How the lower voltage-magnitude limit is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlackMode {
    /// `|V| >= V_min − τ⁻`.
    Exact,
    /// `X cos δ + Y sin δ >= V_min − τ⁻` with δ the phase's nominal angle.
    Linearized,
}

impl FromStr for SlackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(SlackMode::Exact),
            "linearized" | "linearised" => Ok(SlackMode::Linearized),
            _ => Err(Error::UnknownSlackMode(s.to_string())),
        }
    }
}

/// Minimal nonnegative violations of the voltage, DT-capacity and
/// negative-sequence constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    pub tau_minus: Vec<f64>,
    pub tau_plus: Vec<f64>,
    pub rho: [f64; 3],
    pub omega: Vec<f64>,
}

impl Slacks {
    pub fn zeros(n_buses: usize) -> Slacks {
        Slacks {
            tau_minus: vec![0.0; n_buses],
            tau_plus: vec![0.0; n_buses],
            rho: [0.0; 3],
            omega: vec![0.0; n_buses],
        }
    }

    pub fn total(&self) -> f64 {
        self.tau_minus.iter().sum::<f64>()
            + self.tau_plus.iter().sum::<f64>()
            + self.rho.iter().sum::<f64>()
            + self.omega.iter().sum::<f64>()
    }
}

/// Voltages and DT current of a solved phasor-domain state.
#[derive(Debug, Clone, Copy)]
pub struct PhasorState<'a> {
    pub voltages: &'a [Phasor3],
    pub dt_current: Phasor3,
    /// Nominal angle per phase, used by [`SlackMode::Linearized`].
    pub nominal_angle: [f64; 3],
}

pub fn compute_slacks(state: &PhasorState<'_>, limits: &Limits, mode: SlackMode) -> Slacks {
    let n = state.voltages.len();
    let mut s = Slacks::zeros(n);
    let dirs = state.nominal_angle.map(|d| (d.cos(), d.sin()));
    for (b, v) in state.voltages.iter().enumerate() {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for p in 0..3 {
            let m = v.0[p].norm();
            let lower_measure = match mode {
                SlackMode::Exact => m,
                SlackMode::Linearized => v.0[p].re * dirs[p].0 + v.0[p].im * dirs[p].1,
            };
            lo = lo.max(limits.v_min - lower_measure);
            hi = hi.max(m - limits.v_max);
        }
        s.tau_minus[b] = lo;
        s.tau_plus[b] = hi;
        s.omega[b] = (negative_sequence(v).norm() - limits.nu).max(0.0);
    }
    for p in 0..3 {
        s.rho[p] = (state.dt_current.0[p].norm() - limits.i_max[p]).max(0.0);
    }
    s
}

/// `π + M_b · Σ slacks`.
pub fn objective(unbalance: f64, slacks: &Slacks, m_b: f64) -> f64 {
    unbalance + m_b * slacks.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulationKind {
    Fixv,
    Linv,
    Lbfm,
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormulationKind::Fixv => "fixv",
            FormulationKind::Linv => "linv",
            FormulationKind::Lbfm => "lbfm",
        })
    }
}

/// Bus voltages as phasors, or as the products `v = V V^H` for the
/// lossless branch-flow model.
#[derive(Debug, Clone, PartialEq)]
pub enum VoltageState {
    Phasors(Vec<Phasor3>),
    Products(Vec<Mat3>),
}

impl VoltageState {
    pub fn magnitudes(&self) -> Vec<[f64; 3]> {
        match self {
            VoltageState::Phasors(v) => v.iter().map(|x| x.magnitudes()).collect(),
            VoltageState::Products(v) => v
                .iter()
                .map(|m| [0, 1, 2].map(|p| m[(p, p)].re.max(0.0).sqrt()))
                .collect(),
        }
    }

    /// Negative-sequence magnitude per bus.
    pub fn negative_sequence(&self) -> Vec<f64> {
        match self {
            VoltageState::Phasors(v) => v.iter().map(|x| negative_sequence(x).norm()).collect(),
            VoltageState::Products(v) => v
                .iter()
                .map(|m| lbfm::negative_sequence_product(m).max(0.0).sqrt())
                .collect(),
        }
    }

    pub fn phasors(&self) -> Option<&[Phasor3]> {
        match self {
            VoltageState::Phasors(v) => Some(v),
            VoltageState::Products(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationResult {
    pub formulation: FormulationKind,
    pub voltages: VoltageState,
    pub dt_p: [f64; 3],
    pub dt_q: [f64; 3],
    /// DT current magnitude per phase.
    pub dt_current: [f64; 3],
    pub unbalance: f64,
    pub slacks: Slacks,
    pub objective: f64,
    /// Residual of the assembled linear system, where one is solved.
    pub linear_residual: Option<f64>,
}

impl EvaluationResult {
    pub fn magnitudes(&self) -> Vec<[f64; 3]> {
        self.voltages.magnitudes()
    }
}

/// A formulation together with the data it needs besides the snapshot.
#[derive(Debug, Clone)]
pub enum Evaluator {
    Fixv { profile: Arc<VoltageProfile> },
    Linv { fit: Arc<AffineFit> },
    Lbfm,
}

impl Evaluator {
    pub fn kind(&self) -> FormulationKind {
        match self {
            Evaluator::Fixv { .. } => FormulationKind::Fixv,
            Evaluator::Linv { .. } => FormulationKind::Linv,
            Evaluator::Lbfm => FormulationKind::Lbfm,
        }
    }

    pub fn evaluate(
        &self,
        snap: &CaseSnapshot,
        asg: &PhaseAssignment,
        q: Option<&QSettings>,
    ) -> Result<EvaluationResult> {
        match self {
            Evaluator::Fixv { profile } => evaluate_fixv(snap, asg, profile, q),
            Evaluator::Linv { fit } => evaluate_linv(snap, asg, fit, q),
            Evaluator::Lbfm => evaluate_lbfm(snap, asg, q),
        }
    }

    /// The same evaluator for the cyclically relabelled case.
    pub fn rotated(&self) -> Evaluator {
        match self {
            Evaluator::Fixv { profile } => Evaluator::Fixv {
                profile: Arc::new(profile.rotated()),
            },
            Evaluator::Linv { fit } => Evaluator::Linv {
                fit: Arc::new(fit.rotated()),
            },
            Evaluator::Lbfm => Evaluator::Lbfm,
        }
    }
}
