//! Incremental candidate scoring for the discrete search.
//!
//! With the phase of every fixed customer known, the FIXV and LBFM states
//! are affine in the per-customer choices, so each candidate is a base state
//! plus one precomputed contribution per switchable customer. LINV couples
//! the customers through the fitted inverse voltage; there the fixed
//! customers are eliminated once and each candidate solves a small system in
//! the switchable customers only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::formulations::{
    dt_unbalance, lbfm_beta, negative_sequence, AffineFit, Evaluator, SlackMode, VoltageProfile,
};
use crate::netmodel::{CaseSnapshot, Limits, Network};
use crate::phasor::{chi, Mat3, Phase, Phasor3};
use crate::powerflow::{backward_sweep, effective_demand, forward_sweep, PhaseAssignment, QSettings};

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);

/// Margin used when deciding that a bus can never violate a limit.
const SAFE_MARGIN: f64 = 1e-9;

/// A scorer over choice vectors (one phase index per switchable customer).
pub(crate) trait Engine {
    /// Running state carried down the search tree.
    type Acc: Clone;
    fn n(&self) -> usize;
    fn root_acc(&self) -> Self::Acc;
    fn push(&self, acc: &Self::Acc, depth: usize, phase: usize) -> Self::Acc;
    /// Lower bound on F over all completions of a prefix of length `depth`.
    fn bound(&self, acc: &Self::Acc, depth: usize) -> Option<f64>;
    /// F of a complete choice, or `None` once it is known to be `>= cutoff`
    /// (or the candidate has no solution).
    fn leaf(&self, acc: &Self::Acc, choice: &[u8], cutoff: f64) -> Option<f64>;

    fn score(&self, choice: &[u8]) -> f64 {
        let mut acc = self.root_acc();
        for (d, &p) in choice.iter().enumerate() {
            acc = self.push(&acc, d, p as usize);
        }
        self.leaf(&acc, choice, f64::INFINITY).unwrap_or(f64::INFINITY)
    }
}

/// For every bus, the deepest common ancestor with `target`.
fn common_ancestors(net: &Network, target: usize) -> Vec<usize> {
    let topo = net.topology();
    let mut on_path = vec![false; net.n_buses()];
    let mut b = target;
    on_path[b] = true;
    while let Some(p) = topo.parent[b] {
        b = p;
        on_path[b] = true;
    }
    let mut anc = vec![net.root(); net.n_buses()];
    for &b in &topo.order {
        anc[b] = if on_path[b] {
            b
        } else {
            anc[topo.parent[b].expect("root is on every path")]
        };
    }
    anc
}

fn dt_terms(s: &[C; 3], v0: &Phasor3, limits: &Limits) -> (f64, f64) {
    let pi = dt_unbalance(s.map(|x| x.re), s.map(|x| x.im));
    let mut rho = 0.0;
    for p in 0..3 {
        rho += (s[p].norm() / v0.0[p].norm() - limits.i_max[p]).max(0.0);
    }
    (pi, rho)
}

#[derive(Debug, Clone, Copy)]
enum BusModel {
    /// Rectangular phasors `[Xa, Ya, Xb, Yb, Xc, Yc]`.
    Phasor { mode: SlackMode, dirs: [(f64, f64); 3] },
    /// `[v_aa, v_bb, v_cc, v⁻, 0, 0]` in squared units.
    Product,
}

fn phasor_of(st: &[f64; 6]) -> Phasor3 {
    Phasor3::new(C::new(st[0], st[1]), C::new(st[2], st[3]), C::new(st[4], st[5]))
}

impl BusModel {
    fn slack(&self, st: &[f64; 6], l: &Limits) -> f64 {
        match *self {
            BusModel::Phasor { mode, dirs } => {
                let mut lo = 0.0f64;
                let mut hi = 0.0f64;
                for p in 0..3 {
                    let (x, y) = (st[2 * p], st[2 * p + 1]);
                    let m = x.hypot(y);
                    let low = match mode {
                        SlackMode::Exact => m,
                        SlackMode::Linearized => x * dirs[p].0 + y * dirs[p].1,
                    };
                    lo = lo.max(l.v_min - low);
                    hi = hi.max(m - l.v_max);
                }
                let om = (negative_sequence(&phasor_of(st)).norm() - l.nu).max(0.0);
                lo + hi + om
            }
            BusModel::Product => {
                let (lo2, hi2) = (l.v_min * l.v_min, l.v_max * l.v_max);
                let mut lo = 0.0f64;
                let mut hi = 0.0f64;
                for p in 0..3 {
                    lo = lo.max(lo2 - st[p]);
                    hi = hi.max(st[p] - hi2);
                }
                lo + hi + (st[3] - l.nu * l.nu).max(0.0)
            }
        }
    }

    /// True when no state within `radius` of `centre` can violate a limit.
    fn is_safe(&self, centre: &[f64; 6], radius: &[f64; 4], l: &Limits) -> bool {
        match *self {
            BusModel::Phasor { mode, dirs } => {
                for p in 0..3 {
                    let (x, y) = (centre[2 * p], centre[2 * p + 1]);
                    let m = x.hypot(y);
                    let low = match mode {
                        SlackMode::Exact => m,
                        SlackMode::Linearized => x * dirs[p].0 + y * dirs[p].1,
                    };
                    if low - radius[p] <= l.v_min + SAFE_MARGIN || m + radius[p] >= l.v_max - SAFE_MARGIN {
                        return false;
                    }
                }
                negative_sequence(&phasor_of(centre)).norm() + radius[3] < l.nu - SAFE_MARGIN
            }
            BusModel::Product => {
                let (lo2, hi2) = (l.v_min * l.v_min, l.v_max * l.v_max);
                (0..3).all(|p| centre[p] - radius[p] > lo2 + SAFE_MARGIN && centre[p] + radius[p] < hi2 - SAFE_MARGIN)
                    && centre[3] + radius[3] < l.nu * l.nu - SAFE_MARGIN
            }
        }
    }

    /// Per-component deviation measure used by [`BusModel::is_safe`].
    fn deviation(&self, d: &[f64; 6]) -> [f64; 4] {
        match self {
            BusModel::Phasor { .. } => {
                let v = phasor_of(d);
                [
                    d[0].hypot(d[1]),
                    d[2].hypot(d[3]),
                    d[4].hypot(d[5]),
                    negative_sequence(&v).norm(),
                ]
            }
            BusModel::Product => [d[0].abs(), d[1].abs(), d[2].abs(), d[3].abs()],
        }
    }
}

/// Engine for the FIXV and LBFM models (superposition of contributions).
pub(crate) struct LinearEngine {
    model: BusModel,
    limits: Limits,
    v0: Phasor3,
    n: usize,
    dt_base: [C; 3],
    /// `[customer][phase]` contribution to the DT complex power.
    dt_delta: Vec<[[C; 3]; 3]>,
    /// Suffix sums of the largest change each remaining customer can make
    /// to each of the six DT gaps (three pairs, P and Q).
    gap_slack: Vec<[f64; 6]>,
    /// Buses that may violate a limit for some candidate.
    n_risky: usize,
    base: Vec<[f64; 6]>,
    /// Indexed `(customer * 3 + phase) * n_risky + bus`.
    delta: Vec<[f64; 6]>,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn gap_change(contrib: &[[C; 3]; 3]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (k, &(a, b)) in PAIRS.iter().enumerate() {
        let mut mp = 0.0f64;
        let mut mq = 0.0f64;
        for s in contrib {
            let d = s[a] - s[b];
            mp = mp.max(d.re.abs());
            mq = mq.max(d.im.abs());
        }
        out[k] = mp;
        out[3 + k] = mq;
    }
    out
}

impl LinearEngine {
    fn build(
        snap: &CaseSnapshot,
        asg: &PhaseAssignment,
        demand: &[C],
        model: BusModel,
        contribution: impl Fn(usize, Phase, &[usize]) -> Result<([C; 3], Vec<[f64; 6]>)>,
        base_state: Vec<[f64; 6]>,
    ) -> Result<LinearEngine> {
        let net = snap.network();
        let adj = snap.adjustable_customers();
        let nb = net.n_buses();
        let mut dt_base = [ZERO; 3];
        let mut base = base_state;
        for (c, cust) in net.customers().iter().enumerate() {
            if snap.adjustable()[c] || demand[c] == ZERO {
                continue;
            }
            let anc = common_ancestors(net, cust.bus);
            let (dt, st) = contribution(c, asg.phase(c), &anc)?;
            for p in 0..3 {
                dt_base[p] += dt[p];
            }
            for b in 0..nb {
                for i in 0..6 {
                    base[b][i] += st[b][i];
                }
            }
        }
        let mut dt_delta = Vec::with_capacity(adj.len());
        let mut full: Vec<[Vec<[f64; 6]>; 3]> = Vec::with_capacity(adj.len());
        for &c in &adj {
            if demand[c] == ZERO {
                dt_delta.push([[ZERO; 3]; 3]);
                full.push([vec![[0.0; 6]; nb], vec![[0.0; 6]; nb], vec![[0.0; 6]; nb]]);
                continue;
            }
            let anc = common_ancestors(net, net.customers()[c].bus);
            let mut dts = [[ZERO; 3]; 3];
            let mut sts: [Vec<[f64; 6]>; 3] = Default::default();
            for p in Phase::ALL {
                let (dt, st) = contribution(c, p, &anc)?;
                dts[p.index()] = dt;
                sts[p.index()] = st;
            }
            dt_delta.push(dts);
            full.push(sts);
        }

        // keep only buses whose reachable states come near a limit
        let limits = *net.limits();
        let mut risky = Vec::new();
        for b in 0..nb {
            let mut centre = base[b];
            let mut radius = [0.0; 4];
            for sts in &full {
                let mut mean = [0.0; 6];
                for st in sts {
                    for i in 0..6 {
                        mean[i] += st[b][i] / 3.0;
                    }
                }
                let mut worst = [0.0f64; 4];
                for st in sts {
                    let mut d = [0.0; 6];
                    for i in 0..6 {
                        d[i] = st[b][i] - mean[i];
                    }
                    let dev = model.deviation(&d);
                    for k in 0..4 {
                        worst[k] = worst[k].max(dev[k]);
                    }
                }
                for i in 0..6 {
                    centre[i] += mean[i];
                }
                for k in 0..4 {
                    radius[k] += worst[k];
                }
            }
            if !model.is_safe(&centre, &radius, &limits) {
                risky.push(b);
            }
        }
        let n_risky = risky.len();
        let mut delta = Vec::with_capacity(adj.len() * 3 * n_risky);
        for sts in &full {
            for st in sts {
                delta.extend(risky.iter().map(|&b| st[b]));
            }
        }
        let base: Vec<[f64; 6]> = risky.iter().map(|&b| base[b]).collect();

        let n = adj.len();
        let mut gap_slack = vec![[0.0; 6]; n + 1];
        for d in (0..n).rev() {
            let g = gap_change(&dt_delta[d]);
            for k in 0..6 {
                gap_slack[d][k] = gap_slack[d + 1][k] + g[k];
            }
        }
        Ok(LinearEngine {
            model,
            limits,
            v0: net.root_voltage(),
            n,
            dt_base,
            dt_delta,
            gap_slack,
            n_risky,
            base,
            delta,
        })
    }

    pub(crate) fn fixv(
        snap: &CaseSnapshot,
        asg: &PhaseAssignment,
        profile: &VoltageProfile,
        q: Option<&QSettings>,
    ) -> Result<LinearEngine> {
        let net = snap.network();
        if profile.0.len() != net.n_buses() {
            return Err(Error::Config("voltage profile does not match the network".into()));
        }
        let demand = effective_demand(snap, q);
        let v0 = net.root_voltage();
        let contribution = |c: usize, p: Phase, anc: &[usize]| -> Result<([C; 3], Vec<[f64; 6]>)> {
            let bus = net.customers()[c].bus;
            let vf = profile.0[bus][p];
            if vf.norm() == 0.0 {
                return Err(Error::ZeroVoltage {
                    bus: net.buses()[bus].id.clone(),
                    phase: p.label(),
                });
            }
            let i = demand[c].conj() / vf.conj();
            let mut dt = [ZERO; 3];
            dt[p.index()] = v0[p] * i.conj();
            let st = anc
                .iter()
                .map(|&a| {
                    let z = net.path_impedance(a);
                    let mut s = [0.0; 6];
                    for r in 0..3 {
                        let dv = -z[(r, p.index())] * i;
                        s[2 * r] = dv.re;
                        s[2 * r + 1] = dv.im;
                    }
                    s
                })
                .collect();
            Ok((dt, st))
        };
        let base = vec![
            {
                let mut s = [0.0; 6];
                for r in 0..3 {
                    s[2 * r] = v0.0[r].re;
                    s[2 * r + 1] = v0.0[r].im;
                }
                s
            };
            net.n_buses()
        ];
        let dirs = v0.0.map(|c| (c.arg().cos(), c.arg().sin()));
        LinearEngine::build(
            snap,
            asg,
            &demand,
            BusModel::Phasor {
                mode: SlackMode::Exact,
                dirs,
            },
            contribution,
            base,
        )
    }

    pub(crate) fn lbfm(snap: &CaseSnapshot, asg: &PhaseAssignment, q: Option<&QSettings>) -> Result<LinearEngine> {
        let net = snap.network();
        let demand = effective_demand(snap, q);
        let beta = lbfm_beta();
        let contribution = |c: usize, p: Phase, anc: &[usize]| -> Result<([C; 3], Vec<[f64; 6]>)> {
            let s = demand[c];
            let mut dt = [ZERO; 3];
            dt[p.index()] = s;
            let k = p.index();
            let st = anc
                .iter()
                .map(|&a| {
                    let z = net.path_impedance(a);
                    let mut out = [0.0; 6];
                    for r in 0..3 {
                        out[r] = -2.0 * (beta[(r, k)] * s * z[(r, k)].conj()).re;
                    }
                    out
                })
                .collect();
            Ok((dt, st))
        };
        let v0 = net.root_voltage();
        let x = chi();
        let a = [C::new(1.0, 0.0), x, x * x];
        let v0v0: Mat3 = Mat3::from_fn(|r, c| v0.0[r] * v0.0[c].conj());
        let mut neg = C::new(0.0, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                neg += a[r] * v0v0[(r, c)] * a[c].conj();
            }
        }
        let root = [
            v0v0[(0, 0)].re,
            v0v0[(1, 1)].re,
            v0v0[(2, 2)].re,
            neg.re / 9.0,
            0.0,
            0.0,
        ];
        LinearEngine::build(
            snap,
            asg,
            &demand,
            BusModel::Product,
            contribution,
            vec![root; net.n_buses()],
        )
    }

    pub(crate) fn risky_buses(&self) -> usize {
        self.n_risky
    }
}

impl Engine for LinearEngine {
    type Acc = [C; 3];

    fn n(&self) -> usize {
        self.n
    }

    fn root_acc(&self) -> [C; 3] {
        self.dt_base
    }

    fn push(&self, acc: &[C; 3], depth: usize, phase: usize) -> [C; 3] {
        let d = &self.dt_delta[depth][phase];
        [acc[0] + d[0], acc[1] + d[1], acc[2] + d[2]]
    }

    fn bound(&self, acc: &[C; 3], depth: usize) -> Option<f64> {
        let rest = &self.gap_slack[depth];
        let mut lb = 0.0f64;
        for (k, &(a, b)) in PAIRS.iter().enumerate() {
            let d = acc[a] - acc[b];
            lb = lb.max(d.re.abs() - rest[k]).max(d.im.abs() - rest[3 + k]);
        }
        Some(lb)
    }

    fn leaf(&self, acc: &[C; 3], choice: &[u8], cutoff: f64) -> Option<f64> {
        let (pi, rho) = dt_terms(acc, &self.v0, &self.limits);
        let m_b = self.limits.m_b;
        let mut slack = rho;
        if pi + m_b * slack >= cutoff {
            return None;
        }
        let r = self.n_risky;
        for b in 0..r {
            let mut st = self.base[b];
            for (c, &p) in choice.iter().enumerate() {
                let d = &self.delta[(c * 3 + p as usize) * r + b];
                for i in 0..6 {
                    st[i] += d[i];
                }
            }
            let s = self.model.slack(&st, &self.limits);
            if s > 0.0 {
                slack += s;
                if pi + m_b * slack >= cutoff {
                    return None;
                }
            }
        }
        Some(pi + m_b * slack)
    }
}

fn realify(z: C) -> [[f64; 2]; 2] {
    [[z.re, -z.im], [z.im, z.re]]
}

fn mul22(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut o = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            o[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    o
}

fn mulv(a: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// `I = conj(s) g(u)` as a real map: `ι = L u + m`.
fn current_map(s: C, fit: &AffineFit, p: Phase) -> ([[f64; 2]; 2], [f64; 2]) {
    let (alpha, gamma, d) = fit.phases[p.index()].complex_coefficients();
    let a = s.conj() * alpha;
    let g = s.conj() * gamma;
    let m = s.conj() * d;
    ([[a.re, g.re], [a.im, g.im]], [m.re, m.im])
}

struct LinvChoice {
    l: [[f64; 2]; 2],
    m: [f64; 2],
    /// `u_c` offset from the eliminated fixed customers.
    e: [f64; 2],
    /// DT current response per phase to `ι_c` (real, imaginary parts).
    dt: [Phasor3; 2],
    /// Bus voltage response to `ι_c`, indexed by bus.
    bus: Vec<[Phasor3; 2]>,
}

/// Engine for the affine inverse-voltage model.
pub(crate) struct LinvEngine {
    limits: Limits,
    v0: Phasor3,
    dirs: [(f64, f64); 3],
    n: usize,
    /// Position of each switchable customer among the active ones.
    active_slot: Vec<Option<usize>>,
    n_active: usize,
    choices: Vec<[LinvChoice; 3]>,
    /// `G L` and `G m` for every ordered pair of active switchable
    /// customers and phases, indexed `((i * 3 + p) * n_active + j) * 3 + q`.
    gl: Vec<[[f64; 2]; 2]>,
    gm: Vec<[f64; 2]>,
    dt_base: Phasor3,
    v_base: Vec<Phasor3>,
}

impl LinvEngine {
    pub(crate) fn new(
        snap: &CaseSnapshot,
        asg: &PhaseAssignment,
        fit: &AffineFit,
        q: Option<&QSettings>,
    ) -> Result<LinvEngine> {
        let net = snap.network();
        let nb = net.n_buses();
        let demand = effective_demand(snap, q);
        let v0 = net.root_voltage();
        let adj = snap.adjustable_customers();
        let cust = net.customers();
        let fixed: Vec<usize> = (0..cust.len())
            .filter(|&c| !snap.adjustable()[c] && demand[c] != ZERO)
            .collect();
        let nf = fixed.len();
        let zc = |a: usize, pa: Phase, b: usize, pb: Phase| -> C {
            net.common_path_impedance(cust[a].bus, cust[b].bus)[(pa.index(), pb.index())]
        };

        // K = I + Z_FF L_F and its factorisation
        let maps: Vec<([[f64; 2]; 2], [f64; 2])> = fixed
            .iter()
            .map(|&j| current_map(demand[j], fit, asg.phase(j)))
            .collect();
        let mut k = DMatrix::<f64>::identity(2 * nf, 2 * nf);
        let mut rhs0 = DVector::<f64>::zeros(2 * nf);
        for (r, &j) in fixed.iter().enumerate() {
            let pj = asg.phase(j);
            let mut b = v0[pj];
            for (col, &kk) in fixed.iter().enumerate() {
                let z = zc(j, pj, kk, asg.phase(kk));
                let blk = mul22(&realify(z), &maps[col].0);
                for a in 0..2 {
                    for c in 0..2 {
                        k[(2 * r + a, 2 * col + c)] += blk[a][c];
                    }
                }
                b -= z * C::new(maps[col].1[0], maps[col].1[1]);
            }
            rhs0[2 * r] = b.re;
            rhs0[2 * r + 1] = b.im;
        }
        let lu = k.lu();
        let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
            if nf == 0 {
                return Ok(DVector::zeros(0));
            }
            lu.solve(rhs).ok_or(Error::SingularSystem {
                condition: f64::INFINITY,
            })
        };
        let u_f0 = solve(&rhs0)?;
        let iota = |r: usize, u: &DVector<f64>| -> [f64; 2] {
            let (l, m) = &maps[r];
            let v = mulv(l, [u[2 * r], u[2 * r + 1]]);
            [v[0] + m[0], v[1] + m[1]]
        };
        let i_f0: Vec<[f64; 2]> = (0..nf).map(|r| iota(r, &u_f0)).collect();

        // voltages and DT current with every switchable customer removed
        let mut inj = vec![Phasor3::ZERO; nb];
        for (r, &j) in fixed.iter().enumerate() {
            inj[cust[j].bus][asg.phase(j)] += C::new(i_f0[r][0], i_f0[r][1]);
        }
        let line_i = backward_sweep(net, &inj);
        let v_base = forward_sweep(net, v0, &line_i);
        let dt_base = line_i[net.dt_line()];

        let n = adj.len();
        let mut active_slot = vec![None; n];
        let mut active = Vec::new();
        for (i, &c) in adj.iter().enumerate() {
            if demand[c] != ZERO {
                active_slot[i] = Some(active.len());
                active.push(c);
            }
        }
        let na = active.len();

        // per switchable customer and phase: elimination response M = L_F Q
        let mut choices: Vec<[LinvChoice; 3]> = Vec::with_capacity(na);
        let mut m_resp: Vec<[Vec<[[f64; 2]; 2]>; 3]> = Vec::with_capacity(na);
        for &c in &active {
            let mut per_phase: Vec<LinvChoice> = Vec::with_capacity(3);
            let mut resp: [Vec<[[f64; 2]; 2]>; 3] = Default::default();
            for p in Phase::ALL {
                let mut zcol = DMatrix::<f64>::zeros(2 * nf, 2);
                for (r, &j) in fixed.iter().enumerate() {
                    let z = realify(zc(j, asg.phase(j), c, p));
                    for a in 0..2 {
                        for b in 0..2 {
                            zcol[(2 * r + a, b)] = z[a][b];
                        }
                    }
                }
                let qm = if nf == 0 {
                    DMatrix::zeros(0, 2)
                } else {
                    lu.solve(&zcol).ok_or(Error::SingularSystem {
                        condition: f64::INFINITY,
                    })?
                };
                let mj: Vec<[[f64; 2]; 2]> = (0..nf)
                    .map(|r| {
                        let qb = [
                            [qm[(2 * r, 0)], qm[(2 * r, 1)]],
                            [qm[(2 * r + 1, 0)], qm[(2 * r + 1, 1)]],
                        ];
                        mul22(&maps[r].0, &qb)
                    })
                    .collect();
                let (l, m) = current_map(demand[c], fit, p);
                let mut e = v0[p];
                for (r, &j) in fixed.iter().enumerate() {
                    e -= zc(c, p, j, asg.phase(j)) * C::new(i_f0[r][0], i_f0[r][1]);
                }
                // responses to the two components of ι_c
                let mut dt = [Phasor3::ZERO; 2];
                let mut bus = vec![[Phasor3::ZERO; 2]; nb];
                for t in 0..2 {
                    let mut inj = vec![Phasor3::ZERO; nb];
                    for (r, &j) in fixed.iter().enumerate() {
                        inj[cust[j].bus][asg.phase(j)] -= C::new(mj[r][0][t], mj[r][1][t]);
                    }
                    inj[cust[c].bus][p] += if t == 0 { C::new(1.0, 0.0) } else { C::new(0.0, 1.0) };
                    let li = backward_sweep(net, &inj);
                    let dv = forward_sweep(net, Phasor3::ZERO, &li);
                    dt[t] = li[net.dt_line()];
                    for b in 0..nb {
                        bus[b][t] = dv[b];
                    }
                }
                per_phase.push(LinvChoice {
                    l,
                    m,
                    e: [e.re, e.im],
                    dt,
                    bus,
                });
                resp[p.index()] = mj;
            }
            let arr: [LinvChoice; 3] = per_phase.try_into().ok().expect("three phases");
            choices.push(arr);
            m_resp.push(resp);
        }
        let mut gl = vec![[[0.0; 2]; 2]; na * 3 * na * 3];
        let mut gm = vec![[0.0; 2]; na * 3 * na * 3];
        for i in 0..na {
            for p in Phase::ALL {
                for j in 0..na {
                    for qp in Phase::ALL {
                        let mut g = [[0.0; 2]; 2];
                        for (r, &f) in fixed.iter().enumerate() {
                            let zr = realify(zc(active[i], p, f, asg.phase(f)));
                            let blk = mul22(&zr, &m_resp[j][qp.index()][r]);
                            for a in 0..2 {
                                for b in 0..2 {
                                    g[a][b] += blk[a][b];
                                }
                            }
                        }
                        let direct = realify(zc(active[i], p, active[j], qp));
                        for a in 0..2 {
                            for b in 0..2 {
                                g[a][b] -= direct[a][b];
                            }
                        }
                        let ch = &choices[j][qp.index()];
                        let idx = ((i * 3 + p.index()) * na + j) * 3 + qp.index();
                        gl[idx] = mul22(&g, &ch.l);
                        gm[idx] = mulv(&g, ch.m);
                    }
                }
            }
        }
        Ok(LinvEngine {
            limits: *net.limits(),
            v0,
            dirs: v0.0.map(|c| (c.arg().cos(), c.arg().sin())),
            n,
            active_slot,
            n_active: na,
            choices,
            gl,
            gm,
            dt_base,
            v_base,
        })
    }
}

impl Engine for LinvEngine {
    type Acc = ();

    fn n(&self) -> usize {
        self.n
    }

    fn root_acc(&self) {}

    fn push(&self, _: &(), _: usize, _: usize) {}

    fn bound(&self, _: &(), _: usize) -> Option<f64> {
        None
    }

    fn leaf(&self, _: &(), choice: &[u8], cutoff: f64) -> Option<f64> {
        let na = self.n_active;
        let mut ph = Vec::with_capacity(na);
        for (i, &p) in choice.iter().enumerate() {
            if self.active_slot[i].is_some() {
                ph.push(p as usize);
            }
        }
        let mut iota = vec![[0.0; 2]; na];
        if na > 0 {
            let mut a = DMatrix::<f64>::identity(2 * na, 2 * na);
            let mut rhs = DVector::<f64>::zeros(2 * na);
            for i in 0..na {
                let ci = &self.choices[i][ph[i]];
                let mut b = ci.e;
                for j in 0..na {
                    let idx = ((i * 3 + ph[i]) * na + j) * 3 + ph[j];
                    let g = &self.gl[idx];
                    for r in 0..2 {
                        for c in 0..2 {
                            a[(2 * i + r, 2 * j + c)] -= g[r][c];
                        }
                    }
                    b[0] += self.gm[idx][0];
                    b[1] += self.gm[idx][1];
                }
                rhs[2 * i] = b[0];
                rhs[2 * i + 1] = b[1];
            }
            let u = a.lu().solve(&rhs)?;
            for i in 0..na {
                let ci = &self.choices[i][ph[i]];
                let v = mulv(&ci.l, [u[2 * i], u[2 * i + 1]]);
                iota[i] = [v[0] + ci.m[0], v[1] + ci.m[1]];
            }
        }
        let mut dt = self.dt_base;
        for i in 0..na {
            let ci = &self.choices[i][ph[i]];
            for p in 0..3 {
                dt.0[p] += ci.dt[0].0[p] * iota[i][0] + ci.dt[1].0[p] * iota[i][1];
            }
        }
        let mut s = [ZERO; 3];
        for p in 0..3 {
            s[p] = self.v0.0[p] * dt.0[p].conj();
        }
        let (pi, rho) = dt_terms(&s, &self.v0, &self.limits);
        let m_b = self.limits.m_b;
        let mut slack = rho;
        if pi + m_b * slack >= cutoff {
            return None;
        }
        let model = BusModel::Phasor {
            mode: SlackMode::Linearized,
            dirs: self.dirs,
        };
        for (b, vb) in self.v_base.iter().enumerate() {
            let mut v = *vb;
            for i in 0..na {
                let r = &self.choices[i][ph[i]].bus[b];
                for p in 0..3 {
                    v.0[p] += r[0].0[p] * iota[i][0] + r[1].0[p] * iota[i][1];
                }
            }
            let st = [v.0[0].re, v.0[0].im, v.0[1].re, v.0[1].im, v.0[2].re, v.0[2].im];
            let sl = model.slack(&st, &self.limits);
            if sl > 0.0 {
                slack += sl;
                if pi + m_b * slack >= cutoff {
                    return None;
                }
            }
        }
        Some(pi + m_b * slack)
    }
}

/// Engine for any evaluator, as a sum type so the search can be generic.
pub(crate) enum AnyEngine {
    Linear(LinearEngine),
    Linv(LinvEngine),
}

impl AnyEngine {
    pub(crate) fn build(
        ev: &Evaluator,
        snap: &CaseSnapshot,
        asg: &PhaseAssignment,
        q: Option<&QSettings>,
    ) -> Result<AnyEngine> {
        Ok(match ev {
            Evaluator::Fixv { profile } => AnyEngine::Linear(LinearEngine::fixv(snap, asg, profile, q)?),
            Evaluator::Lbfm => AnyEngine::Linear(LinearEngine::lbfm(snap, asg, q)?),
            Evaluator::Linv { fit } => AnyEngine::Linv(LinvEngine::new(snap, asg, fit, q)?),
        })
    }
}
