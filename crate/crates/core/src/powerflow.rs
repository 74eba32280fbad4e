//! Exact unbalanced three-phase power flow on a radial feeder with
//! constant-PQ customers (backward current sweep, forward voltage sweep).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulations::dt_unbalance;
use crate::netmodel::{CaseSnapshot, Network};
use crate::phasor::{Phase, Phasor3};

/// Phase connection of every customer (the one-hot indicator per customer).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhaseAssignment(Vec<Phase>);

impl PhaseAssignment {
    pub fn new(phases: Vec<Phase>) -> Self {
        PhaseAssignment(phases)
    }

    /// The initial (as-built) connection of every customer.
    pub fn initial(net: &Network) -> Self {
        PhaseAssignment(net.customers().iter().map(|c| c.initial_phase).collect())
    }

    /// Builds an assignment from 0/1 indicator triples, rejecting any
    /// customer whose indicators do not sum to one.
    pub fn from_indicators(ind: &[[u8; 3]]) -> Result<Self> {
        ind.iter()
            .enumerate()
            .map(|(c, e)| {
                if e.iter().any(|&x| x > 1) || e.iter().map(|&x| x as u32).sum::<u32>() != 1 {
                    Err(Error::InvalidAssignment(format!(
                        "customer {} indicators {:?} are not one-hot",
                        c + 1,
                        e
                    )))
                } else {
                    Ok(Phase::from_index(e.iter().position(|&x| x == 1).unwrap()))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(PhaseAssignment)
    }

    pub fn indicators(&self) -> Vec<[u8; 3]> {
        self.0
            .iter()
            .map(|p| {
                let mut e = [0u8; 3];
                e[p.index()] = 1;
                e
            })
            .collect()
    }

    pub fn phases(&self) -> &[Phase] {
        &self.0
    }

    pub fn phase(&self, customer: usize) -> Phase {
        self.0[customer]
    }

    pub fn set(&mut self, customer: usize, phase: Phase) {
        self.0[customer] = phase;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rotated(&self) -> Self {
        PhaseAssignment(self.0.iter().map(|p| p.rotate()).collect())
    }

    /// Checks length and that every fixed customer stays on its initial phase.
    pub fn validate(&self, snap: &CaseSnapshot) -> Result<()> {
        let customers = snap.network().customers();
        if self.0.len() != customers.len() {
            return Err(Error::InvalidAssignment(format!(
                "{} entries for {} customers",
                self.0.len(),
                customers.len()
            )));
        }
        for (c, cust) in customers.iter().enumerate() {
            if !snap.adjustable()[c] && self.0[c] != cust.initial_phase {
                return Err(Error::InvalidAssignment(format!(
                    "fixed customer {} moved from phase {} to {}",
                    cust.index, cust.initial_phase, self.0[c]
                )));
            }
        }
        Ok(())
    }
}

/// Reactive-power adjustment per customer in p.u. (added to the nominal Q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSettings(pub Vec<f64>);

impl QSettings {
    pub fn zeros(n: usize) -> Self {
        QSettings(vec![0.0; n])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&q| q == 0.0)
    }
}

/// Net demand after applying optional reactive adjustments.
pub fn effective_demand(snap: &CaseSnapshot, q: Option<&QSettings>) -> Vec<Complex64> {
    let mut s = snap.demand().to_vec();
    if let Some(q) = q {
        for (si, dq) in s.iter_mut().zip(&q.0) {
            si.im += dq;
        }
    }
    s
}

/// Current drawn by a constant-PQ customer: `conj(s)/conj(v)` on its phase.
pub fn customer_current(s: Complex64, v: Complex64, phase: Phase) -> Result<Phasor3> {
    if s == Complex64::new(0.0, 0.0) {
        return Ok(Phasor3::ZERO);
    }
    if v.norm() == 0.0 {
        return Err(Error::ZeroVoltage {
            bus: "?".into(),
            phase: phase.label(),
        });
    }
    Ok(Phasor3::on_phase(phase, s.conj() / v.conj()))
}

#[derive(Debug, Clone, Copy)]
pub struct PfOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub collapse_guard: f64,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            collapse_guard: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub voltages: Vec<Phasor3>,
    /// Current of every line, flowing away from the root.
    pub line_currents: Vec<Phasor3>,
    /// Complex power per phase through the DT branch.
    pub dt_power: Phasor3,
    pub iterations: usize,
    pub mismatch: f64,
    pub mismatch_history: Vec<f64>,
    /// Net demand per customer used for this solve (p.u.).
    pub demand: Vec<Complex64>,
}

impl PfSolution {
    pub fn dt_p(&self) -> [f64; 3] {
        self.dt_power.re()
    }

    pub fn dt_q(&self) -> [f64; 3] {
        self.dt_power.im()
    }

    pub fn unbalance(&self) -> f64 {
        dt_unbalance(self.dt_p(), self.dt_q())
    }

    pub fn magnitudes(&self) -> Vec<[f64; 3]> {
        self.voltages.iter().map(|v| v.magnitudes()).collect()
    }
}

/// Sums customer currents into line currents, leaves first.
pub(crate) fn backward_sweep(net: &Network, injections: &[Phasor3]) -> Vec<Phasor3> {
    let topo = net.topology();
    let mut through = injections.to_vec();
    let mut line_i = vec![Phasor3::ZERO; net.lines().len()];
    for &b in topo.order.iter().rev() {
        if let (Some(p), Some(li)) = (topo.parent[b], topo.parent_line[b]) {
            line_i[li] = through[b];
            let t = through[b];
            through[p] = through[p] + t;
        }
    }
    line_i
}

/// Ohm's law from the root outwards.
pub(crate) fn forward_sweep(net: &Network, root_v: Phasor3, line_i: &[Phasor3]) -> Vec<Phasor3> {
    let topo = net.topology();
    let mut v = vec![root_v; net.n_buses()];
    for &b in topo.order.iter().skip(1) {
        let li = topo.parent_line[b].unwrap();
        let line = &net.lines()[li];
        v[b] = v[line.from] - Phasor3::mul_mat(&line.impedance, &line_i[li]);
    }
    v
}

fn injections(
    net: &Network,
    asg: &PhaseAssignment,
    demand: &[Complex64],
    v: &[Phasor3],
) -> Result<(Vec<Phasor3>, Vec<Complex64>)> {
    let mut inj = vec![Phasor3::ZERO; net.n_buses()];
    let mut per_customer = Vec::with_capacity(demand.len());
    for (c, cust) in net.customers().iter().enumerate() {
        let ph = asg.phase(c);
        let i = customer_current(demand[c], v[cust.bus][ph], ph).map_err(|_| Error::ZeroVoltage {
            bus: net.buses()[cust.bus].id.clone(),
            phase: ph.label(),
        })?;
        per_customer.push(i[ph]);
        inj[cust.bus] = inj[cust.bus] + i;
    }
    Ok((inj, per_customer))
}

pub fn solve_utpf(snap: &CaseSnapshot, asg: &PhaseAssignment, q: Option<&QSettings>) -> Result<PfSolution> {
    solve_utpf_with(snap, asg, q, &PfOptions::default())
}

pub fn solve_utpf_with(
    snap: &CaseSnapshot,
    asg: &PhaseAssignment,
    q: Option<&QSettings>,
    opts: &PfOptions,
) -> Result<PfSolution> {
    asg.validate(snap)?;
    let net = snap.network();
    let demand = effective_demand(snap, q);
    let v0 = net.root_voltage();
    let mut v = vec![v0; net.n_buses()];
    let (mut inj, mut cur) = injections(net, asg, &demand, &v)?;
    let mut history = Vec::new();
    for it in 1..=opts.max_iterations {
        let line_i = backward_sweep(net, &inj);
        let v_new = forward_sweep(net, v0, &line_i);
        for (b, vb) in v_new.iter().enumerate() {
            let m = vb.magnitudes().into_iter().fold(f64::INFINITY, f64::min);
            if !(m >= opts.collapse_guard) {
                return Err(Error::VoltageCollapse {
                    bus: net.buses()[b].id.clone(),
                    magnitude: m,
                });
            }
        }
        let (inj_new, cur_new) = injections(net, asg, &demand, &v_new)?;
        let mismatch = cur
            .iter()
            .zip(&cur_new)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        history.push(mismatch);
        v = v_new;
        if mismatch <= opts.tolerance {
            let dt = net.dt_line();
            let mut dt_power = Phasor3::ZERO;
            for p in Phase::ALL {
                dt_power[p] = v0[p] * line_i[dt][p].conj();
            }
            if balance_residual(net, &v, &line_i, &dt_power, &demand) <= opts.tolerance {
                return Ok(PfSolution {
                    voltages: v,
                    line_currents: line_i,
                    dt_power,
                    iterations: it,
                    mismatch,
                    mismatch_history: history,
                    demand,
                });
            }
        }
        inj = inj_new;
        cur = cur_new;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        mismatch: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// `|Σ DT injection − Σ customer demand − Σ line losses|` in p.u.
pub fn power_balance_residual(sol: &PfSolution, snap: &CaseSnapshot) -> f64 {
    balance_residual(
        snap.network(),
        &sol.voltages,
        &sol.line_currents,
        &sol.dt_power,
        &sol.demand,
    )
}

fn balance_residual(net: &Network, v: &[Phasor3], line_i: &[Phasor3], dt_power: &Phasor3, demand: &[Complex64]) -> f64 {
    let injected: Complex64 = dt_power.0.iter().sum();
    let demand: Complex64 = demand.iter().sum();
    let mut losses = Complex64::new(0.0, 0.0);
    for (li, line) in net.lines().iter().enumerate() {
        let drop = v[line.from] - v[line.to];
        for p in Phase::ALL {
            losses += drop[p] * line_i[li][p].conj();
        }
    }
    (injected - demand - losses).norm()
}

/// Largest per-line Ohm's-law residual `|V_from − V_to − Z I|`.
pub fn ohm_residual(sol: &PfSolution, net: &Network) -> f64 {
    net.lines()
        .iter()
        .enumerate()
        .map(|(li, l)| {
            let lhs = sol.voltages[l.from] - sol.voltages[l.to];
            lhs.max_abs_diff(&Phasor3::mul_mat(&l.impedance, &sol.line_currents[li]))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_demand_gives_zero_current() {
        let i = customer_current(c(0.0, 0.0), c(1.05, 0.0), Phase::A).unwrap();
        assert_eq!(i, Phasor3::ZERO);
    }

    #[test]
    fn customer_current_hand_computed() {
        // (0.01 - j0.005) / 1.05
        let i = customer_current(c(0.01, 0.005), c(1.05, 0.0), Phase::A).unwrap();
        assert!((i[Phase::A] - c(0.009_523_809_523_809_525, -0.004_761_904_761_904_762)).norm() < 1e-15);
        assert_eq!(i[Phase::B], c(0.0, 0.0));
        assert_eq!(i[Phase::C], c(0.0, 0.0));
        let i1 = customer_current(c(0.01, 0.005), c(1.0, 0.0), Phase::A).unwrap();
        assert!((i1[Phase::A] - c(0.01, -0.005)).norm() < 1e-15);
    }

    #[test]
    fn zero_voltage_is_singular() {
        assert!(matches!(
            customer_current(c(0.01, 0.0), c(0.0, 0.0), Phase::B),
            Err(Error::ZeroVoltage { .. })
        ));
    }

    #[test]
    fn indicators_must_be_one_hot() {
        assert!(PhaseAssignment::from_indicators(&[[1, 0, 0], [0, 1, 1]]).is_err());
        assert!(PhaseAssignment::from_indicators(&[[0, 0, 0]]).is_err());
        let a = PhaseAssignment::from_indicators(&[[0, 0, 1]]).unwrap();
        assert_eq!(a.phases(), &[Phase::C]);
        assert_eq!(a.indicators(), vec![[0, 0, 1]]);
    }

    #[test]
    fn zero_load_is_flat() {
        let snap = synthetic::two_bus(c(0.0, 0.0));
        let asg = PhaseAssignment::initial(snap.network());
        let sol = solve_utpf(&snap, &asg, None).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.mismatch, 0.0);
        for v in &sol.voltages {
            assert_eq!(*v, snap.network().root_voltage());
        }
        assert_eq!(power_balance_residual(&sol, &snap), 0.0);
    }

    /// Independent Gauss-Seidel iteration on the scalar two-bus equation
    /// V = V0 − z·conj(s)/conj(V).
    fn gauss_seidel_two_bus(v0: Complex64, z: Complex64, s: Complex64) -> Complex64 {
        let mut v = v0;
        for _ in 0..200 {
            v = v0 - z * s.conj() / v.conj();
        }
        v
    }

    #[test]
    fn two_bus_matches_gauss_seidel() {
        let s = c(0.01, 0.005);
        let snap = synthetic::two_bus(s);
        let asg = PhaseAssignment::initial(snap.network());
        let sol = solve_utpf(&snap, &asg, None).unwrap();
        let first_sweep = c(1.05, 0.0) - c(0.1, 0.05) * c(0.009_523_809_523_809_525, -0.004_761_904_761_904_762);
        assert!((first_sweep - c(1.048_809_523_809_524, 0.0)).norm() < 1e-12);
        let va = sol.voltages[1][Phase::A];
        assert!((va - first_sweep).norm() < 1e-4);
        let gs = gauss_seidel_two_bus(c(1.05, 0.0), c(0.1, 0.05), s);
        assert!((va - gs).norm() < 1e-9);
        assert!(ohm_residual(&sol, snap.network()) <= 1e-12);
    }

    #[test]
    fn symmetric_loading_gives_equal_magnitudes() {
        let snap = synthetic::balanced_three_customers(c(0.02, 0.006));
        let asg = PhaseAssignment::initial(snap.network());
        let sol = solve_utpf(&snap, &asg, None).unwrap();
        for v in &sol.voltages {
            let m = v.magnitudes();
            assert!((m[0] - m[1]).abs() < 1e-12 && (m[1] - m[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbed_voltage_breaks_balance() {
        let snap = synthetic::two_bus(c(0.05, 0.01));
        let asg = PhaseAssignment::initial(snap.network());
        let mut sol = solve_utpf(&snap, &asg, None).unwrap();
        assert!(power_balance_residual(&sol, &snap) <= 1e-8);
        sol.voltages[1][Phase::A] += c(0.01, 0.0);
        assert!(power_balance_residual(&sol, &snap) > 1e-4);
    }

    #[test]
    fn collapse_is_reported() {
        let snap = synthetic::two_bus(c(8.0, 2.0));
        let asg = PhaseAssignment::initial(snap.network());
        assert!(matches!(
            solve_utpf(&snap, &asg, None),
            Err(Error::VoltageCollapse { .. }) | Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn fixed_customer_move_is_rejected() {
        let snap = synthetic::two_bus(c(0.01, 0.0));
        let asg = PhaseAssignment::new(vec![Phase::B]);
        assert!(matches!(
            solve_utpf(&snap, &asg, None),
            Err(Error::InvalidAssignment(_))
        ));
    }
}
