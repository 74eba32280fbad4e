use std::sync::Arc;
use std::time::Instant;

use crate::error::Result;
use crate::formulations::{Evaluator, VoltageProfile};
use crate::netmodel::CaseSnapshot;
use crate::powerflow::{solve_utpf, PhaseAssignment};

use super::{finish, search_with_q, OptimizationOutcome, SearchOptions, SearchStats};

/// Where the fixed-voltage iteration takes its first profile from.
#[derive(Debug, Clone)]
pub enum StartMode {
    /// Every bus at the root voltage.
    Cold,
    Warm(VoltageProfile),
}

#[derive(Debug, Clone)]
pub struct Algorithm1Options {
    /// Maximum number of discrete solves.
    pub k: usize,
    /// Stop once the largest complex voltage change is at most this.
    pub eps_v: f64,
    pub start: StartMode,
    /// Start each search from the previous iteration's plan.
    pub seed_iterations: bool,
    pub pv_q: bool,
}

impl Algorithm1Options {
    pub fn cold(k: usize) -> Self {
        Algorithm1Options {
            k,
            eps_v: 1e-4,
            start: StartMode::Cold,
            seed_iterations: true,
            pv_q: false,
        }
    }

    pub fn warm(k: usize, profile: VoltageProfile) -> Self {
        Algorithm1Options {
            start: StartMode::Warm(profile),
            ..Self::cold(k)
        }
    }
}

/// Power-flow voltages of the as-built plan.
pub fn warm_profile(snap: &CaseSnapshot) -> Result<VoltageProfile> {
    let sol = solve_utpf(snap, &PhaseAssignment::initial(snap.network()), None)?;
    Ok(VoltageProfile::from_solution(&sol))
}

fn max_change(a: &VoltageProfile, b: &VoltageProfile) -> f64 {
    a.0.iter().zip(&b.0).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}

/// Alternates a discrete search under fixed voltages with a refresh of
/// those voltages from the formulation's own solution.
pub fn fixv_algorithm1(
    snap: &CaseSnapshot,
    a1: &Algorithm1Options,
    search: &SearchOptions,
) -> Result<OptimizationOutcome> {
    let t = Instant::now();
    let initial = PhaseAssignment::initial(snap.network());
    let mut profile = Arc::new(match &a1.start {
        StartMode::Cold => VoltageProfile::flat(snap.network()),
        StartMode::Warm(p) => p.clone(),
    });
    let mut seed = initial.clone();
    let mut trace = Vec::new();
    let mut stats = SearchStats::default();
    let mut last = None;
    let mut dv = f64::INFINITY;
    while dv > a1.eps_v && trace.len() < a1.k.max(1) {
        let ev = Evaluator::Fixv {
            profile: profile.clone(),
        };
        let (asg, q, s, lt) = search_with_q(&ev, snap, &seed, search, a1.pv_q)?;
        stats.add(&s);
        let eval = ev.evaluate(snap, &asg, q.as_ref())?;
        let next = VoltageProfile(eval.voltages.phasors().expect("fixed-voltage phasors").to_vec());
        dv = max_change(&next, &profile);
        trace.push(dv);
        if a1.seed_iterations {
            seed = asg.clone();
        }
        last = Some((ev, asg, q, lt));
        profile = Arc::new(next);
    }
    let (ev, asg, q, lt) = last.expect("at least one iteration");
    let mut out = finish(&ev, snap, &initial, asg, q, search.strategy, stats, lt, t, search.seed)?;
    out.discrete_solves = trace.len();
    out.converged = dv <= a1.eps_v;
    out.delta_v_trace = trace;
    out.runtime_s = t.elapsed().as_secs_f64();
    Ok(out)
}
