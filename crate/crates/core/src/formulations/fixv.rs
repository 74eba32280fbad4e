use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::netmodel::CaseSnapshot;
use crate::phasor::{Phase, Phasor3};
use crate::powerflow::{backward_sweep, effective_demand, forward_sweep, PfSolution, PhaseAssignment, QSettings};

use super::{
    compute_slacks, dt_unbalance, objective, EvaluationResult, FormulationKind, PhasorState, SlackMode, VoltageState,
};

/// Bus voltages held fixed while customer currents are computed.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile(pub Vec<Phasor3>);

impl VoltageProfile {
    /// The root voltage at every bus.
    pub fn flat(net: &crate::netmodel::Network) -> Self {
        VoltageProfile(vec![net.root_voltage(); net.n_buses()])
    }

    pub fn from_solution(sol: &PfSolution) -> Self {
        VoltageProfile(sol.voltages.clone())
    }

    pub fn rotated(&self) -> Self {
        VoltageProfile(self.0.iter().map(|v| v.rotate()).collect())
    }

    /// Largest per-phase magnitude change between two profiles.
    pub fn max_magnitude_change(&self, other: &VoltageProfile) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .flat_map(|(a, b)| (0..3).map(move |p| (a.0[p].norm() - b.0[p].norm()).abs()))
            .fold(0.0, f64::max)
    }
}

/// Nominal angle of each phase of the root voltage.
pub(crate) fn nominal_angles(v0: &Phasor3) -> [f64; 3] {
    v0.0.map(|c| c.arg())
}

/// Customer currents evaluated at the fixed profile, then one backward and
/// one forward sweep.
pub fn evaluate_fixv(
    snap: &CaseSnapshot,
    asg: &PhaseAssignment,
    profile: &VoltageProfile,
    q: Option<&QSettings>,
) -> Result<EvaluationResult> {
    asg.validate(snap)?;
    let net = snap.network();
    if profile.0.len() != net.n_buses() {
        return Err(Error::Config(format!(
            "voltage profile has {} buses, network has {}",
            profile.0.len(),
            net.n_buses()
        )));
    }
    let demand = effective_demand(snap, q);
    let mut inj = vec![Phasor3::ZERO; net.n_buses()];
    for (c, cust) in net.customers().iter().enumerate() {
        let ph = asg.phase(c);
        let v = profile.0[cust.bus][ph];
        if v.norm() == 0.0 {
            return Err(Error::ZeroVoltage {
                bus: net.buses()[cust.bus].id.clone(),
                phase: ph.label(),
            });
        }
        if demand[c] != Complex64::new(0.0, 0.0) {
            inj[cust.bus][ph] += demand[c].conj() / v.conj();
        }
    }
    let line_i = backward_sweep(net, &inj);
    let v0 = net.root_voltage();
    let voltages = forward_sweep(net, v0, &line_i);
    let dt_i = line_i[net.dt_line()];
    let mut dt_s = Phasor3::ZERO;
    for p in Phase::ALL {
        dt_s[p] = v0[p] * dt_i[p].conj();
    }
    let state = PhasorState {
        voltages: &voltages,
        dt_current: dt_i,
        nominal_angle: nominal_angles(&v0),
    };
    let slacks = compute_slacks(&state, net.limits(), SlackMode::Exact);
    let unbalance = dt_unbalance(dt_s.re(), dt_s.im());
    Ok(EvaluationResult {
        formulation: FormulationKind::Fixv,
        objective: objective(unbalance, &slacks, net.limits().m_b),
        dt_current: dt_i.magnitudes(),
        dt_p: dt_s.re(),
        dt_q: dt_s.im(),
        unbalance,
        slacks,
        voltages: VoltageState::Phasors(voltages),
        linear_residual: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_bus_single_pass() {
        let snap = synthetic::two_bus(c(0.01, 0.005));
        let asg = PhaseAssignment::initial(snap.network());
        let r = evaluate_fixv(&snap, &asg, &VoltageProfile::flat(snap.network()), None).unwrap();
        let i = c(0.009_523_809_523_809_525, -0.004_761_904_761_904_762);
        let VoltageState::Phasors(v) = &r.voltages else {
            panic!()
        };
        assert!((v[1][Phase::A] - (c(1.05, 0.0) - c(0.1, 0.05) * i)).norm() < 1e-15);
        assert!((v[1][Phase::A] - c(1.048_809_523_809_524, 0.0)).norm() < 1e-12);
        // DT power on phase a equals the demand since V0 is the fixed voltage
        assert!((r.dt_p[0] - 0.01).abs() < 1e-15);
        assert!((r.dt_q[0] - 0.005).abs() < 1e-15);
        assert!((r.unbalance - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_profile_is_rejected() {
        let snap = synthetic::two_bus(c(0.01, 0.0));
        let asg = PhaseAssignment::initial(snap.network());
        let mut prof = VoltageProfile::flat(snap.network());
        prof.0[1] = Phasor3::ZERO;
        assert!(matches!(
            evaluate_fixv(&snap, &asg, &prof, None),
            Err(Error::ZeroVoltage { .. })
        ));
    }

    #[test]
    fn zero_demand_is_flat_and_balanced() {
        let snap = synthetic::two_bus(c(0.0, 0.0));
        let asg = PhaseAssignment::initial(snap.network());
        let r = evaluate_fixv(&snap, &asg, &VoltageProfile::flat(snap.network()), None).unwrap();
        assert_eq!(r.unbalance, 0.0);
        assert_eq!(r.slacks.total(), 0.0);
        assert_eq!(r.objective, 0.0);
    }
}
