use num_complex::Complex64;

use crate::error::Result;
use crate::netmodel::CaseSnapshot;
use crate::phasor::{chi, Mat3, Phasor3};
use crate::powerflow::{effective_demand, PhaseAssignment, QSettings};

use super::{dt_unbalance, objective, EvaluationResult, FormulationKind, Slacks, VoltageState};

/// `[1, χ², χ; χ, 1, χ²; χ², χ, 1]`, the outer product of `[1, χ, χ²]`
/// with its conjugate.
pub fn lbfm_beta() -> Mat3 {
    let x = chi();
    let a = [Complex64::new(1.0, 0.0), x, x * x];
    Mat3::from_fn(|r, c| a[r] * a[c].conj())
}

fn outer(v: &Phasor3) -> Mat3 {
    Mat3::from_fn(|r, c| v.0[r] * v.0[c].conj())
}

/// Squared negative-sequence magnitude implied by a voltage product:
/// `a v a^H / 9` with `a = [1, χ, χ²]`.
pub(crate) fn negative_sequence_product(v: &Mat3) -> f64 {
    let x = chi();
    let a = [Complex64::new(1.0, 0.0), x, x * x];
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            acc += a[r] * v[(r, c)] * a[c].conj();
        }
    }
    acc.re / 9.0
}

/// Lossless branch-flow evaluation: line flows are sums of downstream
/// demand and `v = V V^H` propagates linearly from the root.
pub fn evaluate_lbfm(snap: &CaseSnapshot, asg: &PhaseAssignment, q: Option<&QSettings>) -> Result<EvaluationResult> {
    asg.validate(snap)?;
    let net = snap.network();
    let topo = net.topology();
    let demand = effective_demand(snap, q);

    let mut through = vec![Phasor3::ZERO; net.n_buses()];
    for (c, cust) in net.customers().iter().enumerate() {
        through[cust.bus][asg.phase(c)] += demand[c];
    }
    let mut line_s = vec![Phasor3::ZERO; net.lines().len()];
    for &b in topo.order.iter().rev() {
        if let (Some(p), Some(li)) = (topo.parent[b], topo.parent_line[b]) {
            line_s[li] = through[b];
            let t = through[b];
            through[p] = through[p] + t;
        }
    }

    let beta = lbfm_beta();
    let v0 = net.root_voltage();
    let mut v = vec![outer(&v0); net.n_buses()];
    for &b in topo.order.iter().skip(1) {
        let li = topo.parent_line[b].unwrap();
        let line = &net.lines()[li];
        let m = Mat3::from_fn(|r, c| beta[(r, c)] * line_s[li].0[c]);
        let drop = m * line.impedance.adjoint() + line.impedance * m.adjoint();
        v[b] = v[line.from] - drop;
    }

    let limits = net.limits();
    let mut slacks = Slacks::zeros(net.n_buses());
    let (lo2, hi2, nu2) = (limits.v_min.powi(2), limits.v_max.powi(2), limits.nu.powi(2));
    for (b, vb) in v.iter().enumerate() {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for p in 0..3 {
            let d = vb[(p, p)].re;
            lo = lo.max(lo2 - d);
            hi = hi.max(d - hi2);
        }
        slacks.tau_minus[b] = lo;
        slacks.tau_plus[b] = hi;
        slacks.omega[b] = (negative_sequence_product(vb) - nu2).max(0.0);
    }
    let dt_s = line_s[net.dt_line()];
    let mut dt_current = [0.0; 3];
    for p in 0..3 {
        dt_current[p] = dt_s.0[p].norm() / v0.0[p].norm();
        slacks.rho[p] = (dt_current[p] - limits.i_max[p]).max(0.0);
    }
    let unbalance = dt_unbalance(dt_s.re(), dt_s.im());
    Ok(EvaluationResult {
        formulation: FormulationKind::Lbfm,
        objective: objective(unbalance, &slacks, limits.m_b),
        dt_p: dt_s.re(),
        dt_q: dt_s.im(),
        dt_current,
        unbalance,
        slacks,
        voltages: VoltageState::Products(v),
        linear_residual: None,
    })
}
