//! Small deterministic and random radial cases for tests and examples.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netmodel::{
    impedance_from_sequence, Bases, Bus, CaseSnapshot, Customer, Limits, Line, Network, NetworkParts,
};
use crate::phasor::{Mat3, Phase, Phasor3};

fn diag(z: Complex64) -> Mat3 {
    Mat3::from_diagonal_element(z)
}

fn bus(id: &str) -> Bus {
    Bus {
        id: id.to_string(),
        coords: None,
    }
}

fn line(name: &str, from: usize, to: usize, z: Mat3) -> Line {
    Line {
        name: name.to_string(),
        from,
        to,
        impedance: z,
        code: None,
        length_m: None,
    }
}

fn customer(index: usize, bus: usize, phase: Phase) -> Customer {
    Customer {
        index,
        name: format!("LOAD{index}"),
        bus,
        initial_phase: phase,
    }
}

fn network(buses: Vec<Bus>, lines: Vec<Line>, customers: Vec<Customer>) -> Arc<Network> {
    Arc::new(
        Network::new(NetworkParts {
            buses,
            lines,
            customers,
            root: 0,
            root_voltage: Phasor3::balanced(1.05, 0.0),
            limits: Limits::default(),
            bases: Bases::default(),
        })
        .expect("fixture network is valid"),
    )
}

fn fixed_snapshot(net: Arc<Network>, demand: Vec<Complex64>) -> CaseSnapshot {
    let n = demand.len();
    CaseSnapshot::new(net, 0, demand, vec![false; n], vec![(0.0, 0.0); n]).expect("fixture snapshot is valid")
}

/// Root and one load bus joined by `Z = diag(0.1 + j0.05)` p.u.; one fixed
/// customer with demand `s` on phase a; `V0 = 1.05∠0` balanced.
pub fn two_bus(s: Complex64) -> CaseSnapshot {
    let net = network(
        vec![bus("1"), bus("2")],
        vec![line("L1", 0, 1, diag(Complex64::new(0.1, 0.05)))],
        vec![customer(1, 1, Phase::A)],
    );
    fixed_snapshot(net, vec![s])
}

/// Same two-bus feeder with three fixed customers of demand `s`, one per phase.
pub fn balanced_three_customers(s: Complex64) -> CaseSnapshot {
    let net = network(
        vec![bus("1"), bus("2")],
        vec![line("L1", 0, 1, diag(Complex64::new(0.1, 0.05)))],
        vec![
            customer(1, 1, Phase::A),
            customer(2, 1, Phase::B),
            customer(3, 1, Phase::C),
        ],
    );
    fixed_snapshot(net, vec![s; 3])
}

/// Two-bus feeder with a fixed 0.05 p.u. load and a switchable 0.02 p.u.
/// load, both initially on phase a.
pub fn two_bus_one_switchable() -> CaseSnapshot {
    let net = network(
        vec![bus("1"), bus("2")],
        vec![line("L1", 0, 1, diag(Complex64::new(0.1, 0.05)))],
        vec![customer(1, 1, Phase::A), customer(2, 1, Phase::A)],
    );
    CaseSnapshot::new(
        net,
        0,
        vec![Complex64::new(0.05, 0.01), Complex64::new(0.02, 0.005)],
        vec![false, true],
        vec![(0.0, 0.0); 2],
    )
    .unwrap()
}

/// Shape of a random radial case.
#[derive(Debug, Clone, Copy)]
pub struct RandomCase {
    pub buses: usize,
    pub customers: usize,
    pub adjustable: usize,
    /// Customers (taken after the adjustable ones) given reactive bounds.
    pub q_controlled: usize,
}

impl Default for RandomCase {
    fn default() -> Self {
        RandomCase {
            buses: 12,
            customers: 14,
            adjustable: 5,
            q_controlled: 0,
        }
    }
}

/// A random radial feeder and snapshot. The root has a single child; other
/// buses attach to a random earlier bus. Demands include some export.
pub fn random_snapshot(seed: u64, shape: RandomCase) -> CaseSnapshot {
    assert!(shape.buses >= 2 && shape.adjustable + shape.q_controlled <= shape.customers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses: Vec<Bus> = (0..shape.buses).map(|i| bus(&format!("{}", i + 1))).collect();
    let mut lines = Vec::with_capacity(shape.buses - 1);
    for b in 1..shape.buses {
        let parent = if b == 1 { 0 } else { rng.random_range(1..b) };
        let scale = if b == 1 { 0.2 } else { rng.random_range(0.3..1.5) };
        let z1 = Complex64::new(0.02 * scale, 0.008 * scale);
        let z0 = Complex64::new(0.05 * scale, 0.02 * scale);
        lines.push(line(&format!("L{b}"), parent, b, impedance_from_sequence(z1, z0)));
    }
    let customers: Vec<Customer> = (0..shape.customers)
        .map(|c| {
            let b = rng.random_range(1..shape.buses);
            customer(c + 1, b, Phase::from_index(rng.random_range(0..3)))
        })
        .collect();
    let demand: Vec<Complex64> = (0..shape.customers)
        .map(|_| {
            let p = rng.random_range(-0.02..0.06);
            let q = rng.random_range(0.0..0.015);
            Complex64::new(p, q)
        })
        .collect();
    let mut adjustable = vec![false; shape.customers];
    let mut q_bounds = vec![(0.0, 0.0); shape.customers];
    for flag in adjustable.iter_mut().take(shape.adjustable) {
        *flag = true;
    }
    for qb in q_bounds.iter_mut().skip(shape.adjustable).take(shape.q_controlled) {
        let w = rng.random_range(0.002..0.01);
        *qb = (-w, w);
    }
    CaseSnapshot::new(network(buses, lines, customers), 0, demand, adjustable, q_bounds).unwrap()
}
