use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::phasor::Mat3;

use super::{Bases, DemandSeries, Limits, Network};

type C = [f64; 2];

#[derive(Serialize)]
struct BusJson<'a> {
    id: &'a str,
    x: Option<f64>,
    y: Option<f64>,
}

#[derive(Serialize)]
struct LineJson<'a> {
    name: &'a str,
    from: &'a str,
    to: &'a str,
    code: Option<&'a str>,
    length_m: Option<f64>,
    z_pu: [[C; 3]; 3],
}

#[derive(Serialize)]
struct CustomerJson<'a> {
    index: usize,
    name: &'a str,
    bus: &'a str,
    phase: char,
}

#[derive(Serialize)]
struct NetworkJson<'a> {
    root: &'a str,
    root_voltage_pu: [C; 3],
    bases: Bases,
    limits: Limits,
    buses: Vec<BusJson<'a>>,
    lines: Vec<LineJson<'a>>,
    customers: Vec<CustomerJson<'a>>,
}

fn mat(z: &Mat3) -> [[C; 3]; 3] {
    let mut out = [[[0.0; 2]; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = [z[(r, c)].re, z[(r, c)].im];
        }
    }
    out
}

/// Canonical JSON form of a network (stable field and record order).
pub fn network_to_json(net: &Network) -> Result<String> {
    let id = |b: usize| net.buses()[b].id.as_str();
    let v0 = net.root_voltage();
    let doc = NetworkJson {
        root: id(net.root()),
        root_voltage_pu: v0.0.map(|c| [c.re, c.im]),
        bases: *net.bases(),
        limits: *net.limits(),
        buses: net
            .buses()
            .iter()
            .map(|b| BusJson {
                id: &b.id,
                x: b.coords.map(|c| c.0),
                y: b.coords.map(|c| c.1),
            })
            .collect(),
        lines: net
            .lines()
            .iter()
            .map(|l| LineJson {
                name: &l.name,
                from: id(l.from),
                to: id(l.to),
                code: l.code.as_deref(),
                length_m: l.length_m,
                z_pu: mat(&l.impedance),
            })
            .collect(),
        customers: net
            .customers()
            .iter()
            .map(|c| CustomerJson {
                index: c.index,
                name: &c.name,
                bus: id(c.bus),
                phase: c.initial_phase.label(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn write_network_json(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, network_to_json(net)?).map_err(|e| Error::io(path, e))
}

/// Writes `period,customer_id,p_kw,q_kvar` rows, period-major.
pub fn write_profiles_csv(series: &DemandSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["period", "customer_id", "p_kw", "q_kvar"])?;
    for t in 0..series.len() {
        for (c, s) in series.samples.iter().enumerate() {
            let (p, q) = s[t];
            w.write_record([
                t.to_string(),
                (c + 1).to_string(),
                format!("{}", p / 1000.0),
                format!("{}", q / 1000.0),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
