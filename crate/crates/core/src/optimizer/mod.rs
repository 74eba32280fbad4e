//! Discrete search over the phases of switchable customers, the
//! fixed-voltage outer iteration and the PV reactive-power extension.

mod algorithm1;
mod engine;
mod pvq;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use algorithm1::{fixv_algorithm1, warm_profile, Algorithm1Options, StartMode};
pub use pvq::{golden_section, optimize_pv_q, optimize_pv_q_from, PvQOptions};

use crate::error::{Error, Result};
use crate::formulations::{AffineFit, EvaluationResult, Evaluator, FormulationKind};
use crate::netmodel::CaseSnapshot;
use crate::phasor::Phase;
use crate::powerflow::{power_balance_residual, solve_utpf, PfSolution, PhaseAssignment, QSettings};

use engine::{AnyEngine, Engine};

/// Two objectives closer than this are treated as equal.
pub const OBJECTIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Exhaustive,
    BranchAndBound,
    LocalSearch,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(Strategy::Exhaustive),
            "bnb" | "branch-and-bound" | "branch_and_bound" => Ok(Strategy::BranchAndBound),
            "local" | "local-search" => Ok(Strategy::LocalSearch),
            _ => Err(Error::Config(format!("unknown search strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Exhaustive => "exhaustive",
            Strategy::BranchAndBound => "bnb",
            Strategy::LocalSearch => "local",
        })
    }
}

/// Which of several equal-objective assignments is returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Smallest assignment in (customer id, phase a<b<c) order.
    Lexicographic,
    /// The starting assignment when it ties the optimum, else lexicographic.
    PreferInitial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub strategy: Strategy,
    pub tie_break: TieBreak,
    /// Largest candidate count exhaustive enumeration will accept.
    pub budget: u128,
    /// Cap on accepted moves per local-search restart.
    pub max_moves: usize,
    /// Local-search starts: the given assignment plus `restarts - 1` random ones.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            strategy: Strategy::Exhaustive,
            tie_break: TieBreak::Lexicographic,
            budget: 3u128.pow(12),
            max_moves: 10_000,
            restarts: 20,
            seed: 0,
        }
    }
}

impl SearchOptions {
    pub fn with_strategy(strategy: Strategy) -> Self {
        SearchOptions {
            strategy,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.max_moves == 0 || self.restarts == 0 {
            return Err(Error::Config("search caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Complete assignments scored.
    pub candidates: u64,
    /// Search-tree nodes visited (including leaves).
    pub nodes: u64,
    /// Subtrees cut by the bound.
    pub pruned: u64,
}

impl SearchStats {
    fn add(&mut self, o: &SearchStats) {
        self.candidates += o.candidates;
        self.nodes += o.nodes;
        self.pruned += o.pruned;
    }
}

/// Power-flow check of an optimized plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verified {
    pub unbalance: f64,
    pub dt_p: [f64; 3],
    pub dt_q: [f64; 3],
    pub vm_min: f64,
    pub vm_max: f64,
    pub max_vneg: f64,
    pub iterations: usize,
    pub mismatch: f64,
    pub conservation_residual: f64,
    pub magnitudes: Vec<[f64; 3]>,
}

impl Verified {
    pub fn from_solution(sol: &PfSolution, snap: &CaseSnapshot) -> Verified {
        let magnitudes = sol.magnitudes();
        let flat = magnitudes.iter().flatten().copied();
        Verified {
            unbalance: sol.unbalance(),
            dt_p: sol.dt_p(),
            dt_q: sol.dt_q(),
            vm_min: flat.clone().fold(f64::INFINITY, f64::min),
            vm_max: flat.fold(0.0, f64::max),
            max_vneg: sol
                .voltages
                .iter()
                .map(|v| crate::formulations::negative_sequence(v).norm())
                .fold(0.0, f64::max),
            iterations: sol.iterations,
            mismatch: sol.mismatch,
            conservation_residual: power_balance_residual(sol, snap),
            magnitudes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationOutcome {
    pub formulation: FormulationKind,
    pub strategy: Strategy,
    pub assignment: PhaseAssignment,
    pub q: Option<QSettings>,
    pub evaluation: EvaluationResult,
    /// Objective of the chosen assignment with no reactive adjustment.
    pub objective_without_q: f64,
    /// The starting assignment under the same evaluator.
    pub initial_evaluation: EvaluationResult,
    /// Voltage change after each outer iteration (one entry per discrete
    /// solve for the fixed-voltage iteration, empty otherwise).
    pub delta_v_trace: Vec<f64>,
    pub converged: bool,
    pub discrete_solves: usize,
    pub stats: SearchStats,
    /// Objective after each accepted local-search move, per restart.
    pub local_trace: Vec<Vec<f64>>,
    pub runtime_s: f64,
    pub seed: u64,
    pub verified: Verified,
}

impl OptimizationOutcome {
    pub fn objective(&self) -> f64 {
        self.evaluation.objective
    }
}

/// Raw result of one discrete search on a fast engine.
#[derive(Debug, Clone)]
pub(crate) struct Discrete {
    pub assignment: PhaseAssignment,
    pub stats: SearchStats,
    pub local_trace: Vec<Vec<f64>>,
}

fn choice_of(snap: &CaseSnapshot, asg: &PhaseAssignment) -> Vec<u8> {
    snap.adjustable_customers()
        .iter()
        .map(|&c| asg.phase(c).index() as u8)
        .collect()
}

fn assignment_of(snap: &CaseSnapshot, base: &PhaseAssignment, choice: &[u8]) -> PhaseAssignment {
    let mut a = base.clone();
    for (&c, &p) in snap.adjustable_customers().iter().zip(choice) {
        a.set(c, Phase::from_index(p as usize));
    }
    a
}

struct Dfs<'a, E: Engine> {
    e: &'a E,
    prune: bool,
    choice: Vec<u8>,
    best: Option<(f64, Vec<u8>)>,
    stats: SearchStats,
}

impl<E: Engine> Dfs<'_, E> {
    fn cutoff(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.0 - OBJECTIVE_TOL)
    }

    fn visit(&mut self, depth: usize, acc: E::Acc) {
        self.stats.nodes += 1;
        if depth == self.e.n() {
            self.stats.candidates += 1;
            if let Some(f) = self.e.leaf(&acc, &self.choice, self.cutoff()) {
                self.best = Some((f, self.choice.clone()));
            }
            return;
        }
        for p in 0..3u8 {
            self.choice[depth] = p;
            let next = self.e.push(&acc, depth, p as usize);
            if self.prune && self.best.is_some() {
                let lb = self.e.bound(&next, depth + 1).unwrap_or(f64::NEG_INFINITY);
                if lb >= self.cutoff() {
                    self.stats.pruned += 1;
                    continue;
                }
            }
            self.visit(depth + 1, next);
        }
    }
}

fn run_tree<E: Engine>(e: &E, prune: bool) -> (Option<(f64, Vec<u8>)>, SearchStats) {
    let mut d = Dfs {
        e,
        prune,
        choice: vec![0; e.n()],
        best: None,
        stats: SearchStats::default(),
    };
    d.visit(0, e.root_acc());
    (d.best, d.stats)
}

fn run_local<E: Engine>(e: &E, start: &[u8], opts: &SearchOptions) -> (Vec<u8>, f64, SearchStats, Vec<Vec<f64>>) {
    let n = e.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = SearchStats::default();
    let mut traces = Vec::with_capacity(opts.restarts);
    let mut best: Option<(f64, Vec<u8>)> = None;
    let eval = |choice: &[u8], cutoff: f64, stats: &mut SearchStats| -> Option<f64> {
        stats.candidates += 1;
        let mut acc = e.root_acc();
        for (d, &p) in choice.iter().enumerate() {
            acc = e.push(&acc, d, p as usize);
        }
        e.leaf(&acc, choice, cutoff)
    };
    for r in 0..opts.restarts {
        let mut cur: Vec<u8> = if r == 0 {
            start.to_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..3u8)).collect()
        };
        let mut f = eval(&cur, f64::INFINITY, &mut stats).unwrap_or(f64::INFINITY);
        let mut trace = vec![f];
        for _ in 0..opts.max_moves {
            let mut mv: Option<(f64, usize, u8)> = None;
            for c in 0..n {
                let keep = cur[c];
                for p in 0..3u8 {
                    if p == keep {
                        continue;
                    }
                    cur[c] = p;
                    let cutoff = mv.map_or(f - OBJECTIVE_TOL, |m| m.0.min(f - OBJECTIVE_TOL));
                    if let Some(g) = eval(&cur, cutoff, &mut stats) {
                        mv = Some((g, c, p));
                    }
                }
                cur[c] = keep;
            }
            match mv {
                Some((g, c, p)) => {
                    cur[c] = p;
                    f = g;
                    trace.push(f);
                }
                None => break,
            }
        }
        stats.nodes += trace.len() as u64;
        traces.push(trace);
        if best.as_ref().is_none_or(|b| f < b.0 - OBJECTIVE_TOL) {
            best = Some((f, cur));
        }
    }
    let (f, c) = best.expect("at least one restart");
    (c, f, stats, traces)
}

/// Runs the configured strategy on the fast engine.
pub(crate) fn discrete_search(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    q: Option<&QSettings>,
    opts: &SearchOptions,
) -> Result<Discrete> {
    opts.validate()?;
    initial.validate(snap)?;
    let n = snap.adjustable_customers().len();
    if opts.strategy == Strategy::Exhaustive {
        let candidates = 3u128.checked_pow(n as u32).unwrap_or(u128::MAX);
        if candidates > opts.budget {
            return Err(Error::BudgetExceeded {
                candidates,
                budget: opts.budget,
            });
        }
    }
    let engine = AnyEngine::build(ev, snap, initial, q)?;
    match &engine {
        AnyEngine::Linear(e) => search_on(e, snap, initial, opts),
        AnyEngine::Linv(e) => search_on(e, snap, initial, opts),
    }
}

fn search_on<E: Engine>(
    e: &E,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
) -> Result<Discrete> {
    let start = choice_of(snap, initial);
    let (choice, stats, local_trace) = match opts.strategy {
        Strategy::Exhaustive | Strategy::BranchAndBound => {
            let prune = opts.strategy == Strategy::BranchAndBound;
            if prune && e.bound(&e.root_acc(), 0).is_none() {
                return Err(Error::NoBound("the inverse-voltage model has no separable bound"));
            }
            let (best, stats) = run_tree(e, prune);
            let mut choice = best.map_or_else(|| start.clone(), |b| b.1);
            if opts.tie_break == TieBreak::PreferInitial && choice != start {
                let fs = e.score(&start);
                if fs <= e.score(&choice) + OBJECTIVE_TOL {
                    choice = start.clone();
                }
            }
            (choice, stats, Vec::new())
        }
        Strategy::LocalSearch => {
            let (c, _, stats, traces) = run_local(e, &start, opts);
            (c, stats, traces)
        }
    };
    Ok(Discrete {
        assignment: assignment_of(snap, initial, &choice),
        stats,
        local_trace,
    })
}

/// Objective of `choice` on the fast engine (for cross-checks against the
/// direct evaluators).
pub fn engine_objective(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    asg: &PhaseAssignment,
    q: Option<&QSettings>,
) -> Result<f64> {
    asg.validate(snap)?;
    let engine = AnyEngine::build(ev, snap, asg, q)?;
    let choice = choice_of(snap, asg);
    Ok(match &engine {
        AnyEngine::Linear(e) => e.score(&choice),
        AnyEngine::Linv(e) => e.score(&choice),
    })
}

/// Buses kept by the fast engine after removing those that can never
/// violate a limit (none are removed for the inverse-voltage model).
pub fn engine_risky_buses(ev: &Evaluator, snap: &CaseSnapshot, q: Option<&QSettings>) -> Result<usize> {
    let asg = PhaseAssignment::initial(snap.network());
    Ok(match AnyEngine::build(ev, snap, &asg, q)? {
        AnyEngine::Linear(e) => e.risky_buses(),
        AnyEngine::Linv(_) => snap.network().n_buses(),
    })
}

/// Direct evaluation, UTPF verification and the anytime guard: when the
/// chosen plan scores worse than the starting plan, the start is returned.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    mut assignment: PhaseAssignment,
    mut q: Option<QSettings>,
    strategy: Strategy,
    stats: SearchStats,
    local_trace: Vec<Vec<f64>>,
    started: Instant,
    seed: u64,
) -> Result<OptimizationOutcome> {
    let initial_evaluation = ev.evaluate(snap, initial, None)?;
    let mut evaluation = ev.evaluate(snap, &assignment, q.as_ref())?;
    if evaluation.objective > initial_evaluation.objective {
        assignment = initial.clone();
        q = None;
        evaluation = initial_evaluation.clone();
    }
    let objective_without_q = match q {
        Some(_) => ev.evaluate(snap, &assignment, None)?.objective,
        None => evaluation.objective,
    };
    let sol = solve_utpf(snap, &assignment, q.as_ref())?;
    Ok(OptimizationOutcome {
        formulation: ev.kind(),
        strategy,
        assignment,
        q,
        evaluation,
        objective_without_q,
        initial_evaluation,
        delta_v_trace: Vec::new(),
        converged: true,
        discrete_solves: 1,
        stats,
        local_trace,
        runtime_s: started.elapsed().as_secs_f64(),
        seed,
        verified: Verified::from_solution(&sol, snap),
    })
}

fn run_strategy(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
) -> Result<OptimizationOutcome> {
    let t = Instant::now();
    let d = discrete_search(ev, snap, initial, None, opts)?;
    finish(
        ev,
        snap,
        initial,
        d.assignment,
        None,
        opts.strategy,
        d.stats,
        d.local_trace,
        t,
        opts.seed,
    )
}

/// Scores all `3^n` assignments of the switchable customers.
pub fn exhaustive(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
) -> Result<OptimizationOutcome> {
    let opts = SearchOptions {
        strategy: Strategy::Exhaustive,
        ..opts.clone()
    };
    run_strategy(ev, snap, initial, &opts)
}

/// Depth-first enumeration that skips subtrees whose DT unbalance bound
/// cannot beat the incumbent. Returns the same plan as [`exhaustive`].
pub fn branch_and_bound(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
) -> Result<OptimizationOutcome> {
    let opts = SearchOptions {
        strategy: Strategy::BranchAndBound,
        ..opts.clone()
    };
    run_strategy(ev, snap, initial, &opts)
}

/// Best-improvement single-customer moves from the given start and from
/// seeded random starts.
pub fn local_search(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
) -> Result<OptimizationOutcome> {
    let opts = SearchOptions {
        strategy: Strategy::LocalSearch,
        ..opts.clone()
    };
    run_strategy(ev, snap, initial, &opts)
}

/// The four compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Linv,
    Lbfm,
    FixvMc,
    FixvMw,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Linv, Method::Lbfm, Method::FixvMc, Method::FixvMw];

    pub fn label(self) -> &'static str {
        match self {
            Method::Linv => "linv",
            Method::Lbfm => "lbfm",
            Method::FixvMc => "fixv-mc",
            Method::FixvMw => "fixv-mw",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linv" => Ok(Method::Linv),
            "lbfm" => Ok(Method::Lbfm),
            "fixv-mc" | "fixvmc" => Ok(Method::FixvMc),
            "fixv-mw" | "fixvmw" => Ok(Method::FixvMw),
            _ => Err(Error::Config(format!("unknown method '{s}'"))),
        }
    }
}

/// Settings shared by [`optimize`] across methods.
#[derive(Debug, Clone)]
pub struct MethodOptions {
    pub search: SearchOptions,
    /// Outer iterations; defaults to 3 for FIXV-MC and 1 for FIXV-MW.
    pub k: Option<usize>,
    pub eps_v: f64,
    /// Optimize PV reactive power together with the phases.
    pub pv_q: bool,
    /// Inverse-voltage fit for LINV; the network default grid when absent.
    pub fit: Option<Arc<AffineFit>>,
    /// Feed each outer iteration's plan into the next search.
    pub seed_iterations: bool,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions {
            search: SearchOptions::default(),
            k: None,
            eps_v: 1e-4,
            pv_q: false,
            fit: None,
            seed_iterations: true,
        }
    }
}

/// Searches the phases of `ev` and, with `pv_q`, alternates with the
/// reactive-power descent until neither step improves F.
pub(crate) fn search_with_q(
    ev: &Evaluator,
    snap: &CaseSnapshot,
    initial: &PhaseAssignment,
    opts: &SearchOptions,
    pv_q: bool,
) -> Result<(PhaseAssignment, Option<QSettings>, SearchStats, Vec<Vec<f64>>)> {
    let d = discrete_search(ev, snap, initial, None, opts)?;
    let mut stats = d.stats;
    let mut asg = d.assignment;
    if !pv_q || !snap.has_q_control() {
        return Ok((asg, None, stats, d.local_trace));
    }
    let mut q = QSettings::zeros(asg.len());
    let mut f = ev.evaluate(snap, &asg, None)?.objective;
    for _ in 0..4 {
        let (q_new, eval) = optimize_pv_q_from(snap, &asg, ev, &q, &PvQOptions::default())?;
        if eval.objective < f - OBJECTIVE_TOL {
            f = eval.objective;
            q = q_new;
        } else {
            break;
        }
        let d = discrete_search(ev, snap, &asg, Some(&q), opts)?;
        stats.add(&d.stats);
        let g = ev.evaluate(snap, &d.assignment, Some(&q))?.objective;
        if g < f - OBJECTIVE_TOL {
            f = g;
            asg = d.assignment;
        } else {
            break;
        }
    }
    Ok((asg, Some(q), stats, d.local_trace))
}

/// Runs one of the four methods on a snapshot from the as-built plan.
pub fn optimize(snap: &CaseSnapshot, method: Method, opts: &MethodOptions) -> Result<OptimizationOutcome> {
    let net = snap.network();
    let initial = PhaseAssignment::initial(net);
    match method {
        Method::Linv | Method::Lbfm => {
            let t = Instant::now();
            let ev = match method {
                Method::Linv => Evaluator::Linv {
                    fit: match &opts.fit {
                        Some(f) => f.clone(),
                        None => Arc::new(AffineFit::default_for(net)?),
                    },
                },
                _ => Evaluator::Lbfm,
            };
            let (asg, q, stats, trace) = search_with_q(&ev, snap, &initial, &opts.search, opts.pv_q)?;
            finish(
                &ev,
                snap,
                &initial,
                asg,
                q,
                opts.search.strategy,
                stats,
                trace,
                t,
                opts.search.seed,
            )
        }
        Method::FixvMc | Method::FixvMw => {
            let start = if method == Method::FixvMc {
                StartMode::Cold
            } else {
                StartMode::Warm(warm_profile(snap)?)
            };
            let a1 = Algorithm1Options {
                k: opts.k.unwrap_or(if method == Method::FixvMc { 3 } else { 1 }),
                eps_v: opts.eps_v,
                start,
                seed_iterations: opts.seed_iterations,
                pv_q: opts.pv_q,
            };
            fixv_algorithm1(snap, &a1, &opts.search)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulations::VoltageProfile;
    use crate::synthetic::{self, RandomCase};
    use num_complex::Complex64;

    fn all_evaluators(snap: &CaseSnapshot) -> Vec<Evaluator> {
        let net = snap.network();
        vec![
            Evaluator::Fixv {
                profile: Arc::new(VoltageProfile::flat(net)),
            },
            Evaluator::Fixv {
                profile: Arc::new(warm_profile(snap).unwrap()),
            },
            Evaluator::Lbfm,
            Evaluator::Linv {
                fit: Arc::new(AffineFit::default_for(net).unwrap()),
            },
        ]
    }

    fn all_choices(n: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|c| {
                    (0..3u8).map(move |p| {
                        let mut d = c.clone();
                        d.push(p);
                        d
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn engine_matches_direct_evaluation() {
        for seed in 0..6 {
            let snap = synthetic::random_snapshot(
                seed,
                RandomCase {
                    adjustable: 3,
                    ..Default::default()
                },
            );
            let initial = PhaseAssignment::initial(snap.network());
            for ev in all_evaluators(&snap) {
                for choice in all_choices(3) {
                    let asg = assignment_of(&snap, &initial, &choice);
                    let direct = ev.evaluate(&snap, &asg, None).unwrap().objective;
                    let fast = engine_objective(&ev, &snap, &asg, None).unwrap();
                    assert!(
                        (direct - fast).abs() <= 1e-10 * direct.abs().max(1.0),
                        "{:?} seed {seed}: {direct} vs {fast}",
                        ev.kind()
                    );
                }
            }
        }
    }

    #[test]
    fn engine_handles_violations() {
        // heavy load pushes voltages below the lower limit
        let mut shape = RandomCase::default();
        shape.adjustable = 4;
        let snap = synthetic::random_snapshot(3, shape);
        let heavy: Vec<Complex64> = snap.demand().iter().map(|s| s * 12.0).collect();
        let snap = CaseSnapshot::new(
            snap.network_arc().clone(),
            0,
            heavy,
            snap.adjustable().to_vec(),
            snap.q_bounds().to_vec(),
        )
        .unwrap();
        let initial = PhaseAssignment::initial(snap.network());
        for ev in all_evaluators(&snap) {
            let direct = ev.evaluate(&snap, &initial, None).unwrap();
            assert!(direct.slacks.total() > 0.0, "{:?}", ev.kind());
            let fast = engine_objective(&ev, &snap, &initial, None).unwrap();
            assert!((direct.objective - fast).abs() <= 1e-9 * direct.objective.abs().max(1.0));
        }
    }

    #[test]
    fn no_switchable_customers_returns_initial() {
        let snap = synthetic::two_bus(Complex64::new(0.01, 0.0));
        let initial = PhaseAssignment::initial(snap.network());
        let opts = SearchOptions::default();
        for ev in all_evaluators(&snap) {
            let e = exhaustive(&ev, &snap, &initial, &opts).unwrap();
            assert_eq!(e.assignment, initial);
            assert_eq!(e.stats.candidates, 1);
            if ev.kind() != FormulationKind::Linv {
                let b = branch_and_bound(&ev, &snap, &initial, &opts).unwrap();
                assert_eq!(b.assignment, initial);
            }
        }
    }

    #[test]
    fn toy_moves_switchable_customer_off_phase_a() {
        let snap = synthetic::two_bus_one_switchable();
        let initial = PhaseAssignment::initial(snap.network());
        for ev in all_evaluators(&snap) {
            let e = exhaustive(&ev, &snap, &initial, &SearchOptions::default()).unwrap();
            assert_eq!(e.stats.candidates, 3);
            // b and c tie by symmetry; the lexicographic rule picks b
            assert_eq!(e.assignment.phase(1), Phase::B, "{:?}", ev.kind());
            assert!(e.objective() < e.initial_evaluation.objective);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let snap = synthetic::random_snapshot(
            1,
            RandomCase {
                adjustable: 5,
                ..Default::default()
            },
        );
        let initial = PhaseAssignment::initial(snap.network());
        let opts = SearchOptions {
            budget: 100,
            ..Default::default()
        };
        assert!(matches!(
            exhaustive(&Evaluator::Lbfm, &snap, &initial, &opts),
            Err(Error::BudgetExceeded {
                candidates: 243,
                budget: 100
            })
        ));
    }

    #[test]
    fn linv_has_no_bound() {
        let snap = synthetic::two_bus_one_switchable();
        let initial = PhaseAssignment::initial(snap.network());
        let ev = Evaluator::Linv {
            fit: Arc::new(AffineFit::default_for(snap.network()).unwrap()),
        };
        assert!(matches!(
            branch_and_bound(&ev, &snap, &initial, &SearchOptions::default()),
            Err(Error::NoBound(_))
        ));
    }

    #[test]
    fn local_search_from_optimum_stays() {
        let snap = synthetic::random_snapshot(
            5,
            RandomCase {
                adjustable: 4,
                ..Default::default()
            },
        );
        let initial = PhaseAssignment::initial(snap.network());
        let ev = Evaluator::Lbfm;
        let opt = exhaustive(&ev, &snap, &initial, &SearchOptions::default()).unwrap();
        let opts = SearchOptions {
            restarts: 1,
            ..Default::default()
        };
        let ls = local_search(&ev, &snap, &opt.assignment, &opts).unwrap();
        assert_eq!(ls.assignment, opt.assignment);
        assert_eq!(ls.local_trace[0].len(), 1);
    }

    #[test]
    fn prefer_initial_keeps_tied_start() {
        let snap = synthetic::two_bus_one_switchable();
        let mut start = PhaseAssignment::initial(snap.network());
        start.set(1, Phase::C);
        let opts = SearchOptions {
            tie_break: TieBreak::PreferInitial,
            ..Default::default()
        };
        let e = exhaustive(&Evaluator::Lbfm, &snap, &start, &opts).unwrap();
        assert_eq!(e.assignment.phase(1), Phase::C);
    }
}
