//! Feeder topology, per-unit conversion, demand profiles and per-period snapshots.

mod export;
mod import;
mod profiles;
mod snapshot;
mod topology;

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use export::{network_to_json, write_network_json, write_profiles_csv};
pub use import::{import_european_feeder, ImportOptions, ImportReport, ImportedFeeder};
pub use profiles::{resample_profiles, DemandSeries};
pub use snapshot::{build_snapshot, pv_output_fraction, CaseSnapshot, ScenarioOptions, PV_PROFILE_VERSION};
pub use topology::{validate_radial, TopologyReport};

use crate::error::{Error, Result};
use crate::phasor::{rotate_mat, Mat3, Phase, Phasor3};

/// Per-unit bases. Powers are per phase, expressed on `s_base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    /// Line-to-neutral voltage base in volts.
    pub v_base: f64,
    /// Power base in volt-amperes.
    pub s_base: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            v_base: 240.0,
            s_base: 100_000.0,
        }
    }
}

impl Bases {
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn volts_to_pu(&self, volts: f64) -> f64 {
        volts / self.v_base
    }

    pub fn pu_to_volts(&self, pu: f64) -> f64 {
        pu * self.v_base
    }

    pub fn ohms_to_pu(&self, ohms: Complex64) -> Complex64 {
        ohms / self.z_base()
    }

    pub fn watts_to_pu(&self, watts: f64) -> f64 {
        watts / self.s_base
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.s_base / 1000.0
    }
}

/// Operating limits and penalty weight shared by all formulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_min: f64,
    pub v_max: f64,
    /// Negative-sequence voltage limit in p.u.
    pub nu: f64,
    /// DT branch current limit per phase in p.u.
    pub i_max: [f64; 3],
    pub m_b: f64,
    /// Half-width of the per-phase angle window (radians) used by the
    /// linearized lower voltage bound and the inverse-voltage fit.
    pub angle_window: f64,
}

impl Default for Limits {
    fn default() -> Self {
        // 200 kVA transformer split evenly over three phases at 1 p.u. voltage
        let i_max = 200_000.0 / 3.0 / Bases::default().s_base;
        Limits {
            v_min: 0.94,
            v_max: 1.10,
            nu: 0.01,
            i_max: [i_max; 3],
            m_b: 500.0,
            angle_window: 10f64.to_radians(),
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidNetwork(m.to_string()));
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return bad("limits require 0 < V_min < V_max");
        }
        if !(self.nu > 0.0) {
            return bad("negative-sequence limit must be positive");
        }
        if !(self.m_b > 0.0) {
            return bad("penalty weight must be positive");
        }
        if self.i_max.iter().any(|&i| !(i > 0.0)) {
            return bad("DT current limit must be positive");
        }
        if !(self.angle_window > 0.0) {
            return bad("angle window must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub coords: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub from: usize,
    pub to: usize,
    /// Series impedance in p.u.
    pub impedance: Mat3,
    pub code: Option<String>,
    pub length_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    /// 1-based customer index (load order in the source data).
    pub index: usize,
    pub name: String,
    pub bus: usize,
    pub initial_phase: Phase,
}

/// Raw parts of a network, validated by [`Network::new`].
#[derive(Debug, Clone)]
pub struct NetworkParts {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub customers: Vec<Customer>,
    pub root: usize,
    pub root_voltage: Phasor3,
    pub limits: Limits,
    pub bases: Bases,
}

/// A validated radial feeder. Lines are oriented away from the root.
#[derive(Debug, Clone)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    customers: Vec<Customer>,
    root: usize,
    root_voltage: Phasor3,
    limits: Limits,
    bases: Bases,
    topo: TopologyReport,
    /// Sum of line impedances on the root→bus path.
    path_impedance: Vec<Mat3>,
    customers_at_bus: Vec<Vec<usize>>,
}

fn is_symmetric(z: &Mat3) -> bool {
    let scale = z.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    (0..3).all(|r| (0..3).all(|c| (z[(r, c)] - z[(c, r)]).norm() <= 1e-12 * scale))
}

impl Network {
    pub fn new(parts: NetworkParts) -> Result<Network> {
        let NetworkParts {
            buses,
            mut lines,
            customers,
            root,
            root_voltage,
            limits,
            bases,
        } = parts;
        limits.validate()?;
        if root >= buses.len() {
            return Err(Error::InvalidNetwork(format!("root index {root} out of range")));
        }
        if !root_voltage.is_finite() || root_voltage.magnitudes().iter().any(|&m| m <= 0.0) {
            return Err(Error::InvalidNetwork("root voltage must be finite and nonzero".into()));
        }
        for line in &lines {
            if line.from >= buses.len() || line.to >= buses.len() {
                return Err(Error::DanglingBus {
                    line: line.name.clone(),
                    bus: line.from.max(line.to).to_string(),
                });
            }
            if !is_symmetric(&line.impedance) {
                return Err(Error::NonSymmetricImpedance(line.name.clone()));
            }
        }
        for c in &customers {
            if c.bus >= buses.len() {
                return Err(Error::DanglingCustomer {
                    customer: c.name.clone(),
                    bus: c.bus.to_string(),
                });
            }
        }
        let topo = validate_radial(&buses, &lines, root, &customers)?;
        for (li, line) in lines.iter_mut().enumerate() {
            let child = topo.line_child[li];
            if line.to != child {
                std::mem::swap(&mut line.from, &mut line.to);
            }
        }
        let mut path_impedance = vec![Mat3::zeros(); buses.len()];
        for &b in topo.order.iter().skip(1) {
            let li = topo.parent_line[b].expect("non-root bus has a parent line");
            path_impedance[b] = path_impedance[lines[li].from] + lines[li].impedance;
        }
        let mut customers_at_bus = vec![Vec::new(); buses.len()];
        for (ci, c) in customers.iter().enumerate() {
            customers_at_bus[c.bus].push(ci);
        }
        Ok(Network {
            buses,
            lines,
            customers,
            root,
            root_voltage,
            limits,
            bases,
            topo,
            path_impedance,
            customers_at_bus,
        })
    }

    pub fn parts(&self) -> NetworkParts {
        NetworkParts {
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            customers: self.customers.clone(),
            root: self.root,
            root_voltage: self.root_voltage,
            limits: self.limits,
            bases: self.bases,
        }
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn customers(&self) -> &[Customer] {
        &self.customers
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_voltage(&self) -> Phasor3 {
        self.root_voltage
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn bases(&self) -> &Bases {
        &self.bases
    }

    pub fn topology(&self) -> &TopologyReport {
        &self.topo
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// The line leaving the root (the distribution transformer branch).
    pub fn dt_line(&self) -> usize {
        self.topo.dt_line
    }

    pub fn customers_at_bus(&self, bus: usize) -> &[usize] {
        &self.customers_at_bus[bus]
    }

    pub fn path_impedance(&self, bus: usize) -> &Mat3 {
        &self.path_impedance[bus]
    }

    /// Impedance of the path shared by root→`a` and root→`b`.
    pub fn common_path_impedance(&self, a: usize, b: usize) -> &Mat3 {
        &self.path_impedance[self.topo.lowest_common_ancestor(a, b)]
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus_lookup(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    pub fn with_limits(&self, limits: Limits) -> Result<Network> {
        let mut parts = self.parts();
        parts.limits = limits;
        Network::new(parts)
    }

    pub fn with_root_voltage(&self, v0: Phasor3) -> Result<Network> {
        let mut parts = self.parts();
        parts.root_voltage = v0;
        Network::new(parts)
    }

    /// Cyclic phase relabel (a→b→c→a) of the root voltage, impedances and
    /// initial customer phases. Per-phase limits rotate with them.
    pub fn rotated(&self) -> Network {
        let mut parts = self.parts();
        parts.root_voltage = self.root_voltage.rotate();
        for line in &mut parts.lines {
            line.impedance = rotate_mat(&line.impedance);
        }
        for c in &mut parts.customers {
            c.initial_phase = c.initial_phase.rotate();
        }
        let i = self.limits.i_max;
        parts.limits.i_max = [i[2], i[0], i[1]];
        Network::new(parts).expect("rotation preserves validity")
    }
}

/// Phase-frame impedance of a transposed line from sequence impedances.
pub fn impedance_from_sequence(z1: Complex64, z0: Complex64) -> Mat3 {
    let zs = (2.0 * z1 + z0) / 3.0;
    let zm = (z0 - z1) / 3.0;
    Mat3::from_fn(|r, c| if r == c { zs } else { zm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_unit_round_trip() {
        let b = Bases::default();
        for v in [0.0, 1.0, 230.0, 240.0, 253.7, 416.0] {
            let back = b.pu_to_volts(b.volts_to_pu(v));
            assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
        assert!((b.z_base() - 0.576).abs() < 1e-15);
    }

    #[test]
    fn default_dt_rating_is_two_pu() {
        let l = Limits::default();
        let total: f64 = l.i_max.iter().sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sequence_impedance_is_symmetric() {
        let z = impedance_from_sequence(Complex64::new(0.3, 0.07), Complex64::new(1.2, 0.09));
        assert!(is_symmetric(&z));
        // positive-sequence impedance recovered from the phase frame
        let z1 = z[(0, 0)] - z[(0, 1)];
        assert!((z1 - Complex64::new(0.3, 0.07)).norm() < 1e-15);
    }
}
