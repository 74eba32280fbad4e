use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::phasor::{Phase, Phasor3};

use super::{impedance_from_sequence, Bases, Bus, Customer, DemandSeries, Limits, Line, Network, NetworkParts};

#[derive(Debug, Clone)]
pub struct ImportOptions {
    pub bases: Bases,
    pub limits: Limits,
    pub root_voltage: Phasor3,
    /// Root bus id; by default the only bus without an incoming line.
    pub root: Option<String>,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            bases: Bases::default(),
            limits: Limits::default(),
            root_voltage: Phasor3::balanced(1.05, 0.0),
            root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportReport {
    pub buses: usize,
    pub lines: usize,
    pub line_codes: usize,
    pub customers: usize,
    pub load_shapes: usize,
    pub samples_per_customer: usize,
    pub resolution_min: u32,
    pub root: String,
}

/// A table whose header row starts with `first_col`; any title lines above it are skipped.
struct Table {
    file: String,
    columns: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(dir: &Path, name: &str, first_col: &str) -> Result<Table> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let start = text
            .lines()
            .position(|l| {
                l.split(',')
                    .next()
                    .is_some_and(|f| f.trim().eq_ignore_ascii_case(first_col))
            })
            .ok_or_else(|| Error::Parse {
                file: name.into(),
                record: "header".into(),
                message: format!("no header row starting with {first_col:?}"),
            })?;
        let body: String = text.lines().skip(start).collect::<Vec<_>>().join("\n");
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let columns = rdr
            .headers()?
            .iter()
            .enumerate()
            .map(|(i, h)| (h.to_ascii_lowercase(), i))
            .collect();
        let rows = rdr
            .records()
            .filter(|r| r.as_ref().map_or(true, |r| r.iter().any(|f| !f.is_empty())))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Table {
            file: name.into(),
            columns,
            rows,
        })
    }

    fn get<'a>(&self, row: &'a csv::StringRecord, col: &str) -> Result<&'a str> {
        let idx = self
            .columns
            .get(&col.to_ascii_lowercase())
            .ok_or_else(|| Error::Parse {
                file: self.file.clone(),
                record: "header".into(),
                message: format!("missing column {col:?}"),
            })?;
        Ok(row.get(*idx).unwrap_or(""))
    }

    fn num(&self, row: &csv::StringRecord, col: &str) -> Result<f64> {
        let raw = self.get(row, col)?;
        raw.parse::<f64>().map_err(|_| Error::Parse {
            file: self.file.clone(),
            record: row.get(0).unwrap_or("?").to_string(),
            message: format!("column {col:?}: cannot parse {raw:?} as a number"),
        })
    }
}

fn length_factor_km(unit: &str) -> Option<f64> {
    match unit.to_ascii_lowercase().as_str() {
        "km" => Some(1.0),
        "m" => Some(1e-3),
        "ft" => Some(0.3048e-3),
        "mi" => Some(1.609344),
        _ => None,
    }
}

fn parse_minutes(s: &str) -> Option<u32> {
    let mut it = s.split(':');
    let h: u32 = it.next()?.trim().parse().ok()?;
    let m: u32 = it.next()?.trim().parse().ok()?;
    Some(h * 60 + m)
}

/// Result of reading a feeder directory.
#[derive(Debug, Clone)]
pub struct ImportedFeeder {
    pub network: Network,
    pub demand: DemandSeries,
    pub report: ImportReport,
}

/// Reads a feeder laid out like the European LV test feeder CSV release:
/// `LineCodes.csv`, `Lines.csv`, `Loads.csv`, `LoadShapes.csv`,
/// `Buscoords.csv` and the per-shape profiles under `Load Profiles/`.
pub fn import_european_feeder(dir: impl AsRef<Path>, opts: &ImportOptions) -> Result<ImportedFeeder> {
    let dir = dir.as_ref();
    let coords = Table::read(dir, "Buscoords.csv", "Busname")?;
    let codes = Table::read(dir, "LineCodes.csv", "Name")?;
    let lines_t = Table::read(dir, "Lines.csv", "Name")?;
    let loads_t = Table::read(dir, "Loads.csv", "Name")?;
    let shapes_t = Table::read(dir, "LoadShapes.csv", "Name")?;

    let mut buses = Vec::new();
    let mut bus_idx: HashMap<String, usize> = HashMap::new();
    for row in &coords.rows {
        let id = coords.get(row, "Busname")?.to_string();
        let xy = (coords.num(row, "x")?, coords.num(row, "y")?);
        bus_idx.insert(id.clone(), buses.len());
        buses.push(Bus { id, coords: Some(xy) });
    }

    let mut code_z = HashMap::new();
    for row in &codes.rows {
        let name = codes.get(row, "Name")?.to_string();
        let unit = codes.get(row, "Units")?;
        let per_km = length_factor_km(unit).ok_or_else(|| Error::Parse {
            file: codes.file.clone(),
            record: name.clone(),
            message: format!("unknown length unit {unit:?}"),
        })?;
        let z1 = Complex64::new(codes.num(row, "R1")?, codes.num(row, "X1")?) / per_km;
        let z0 = Complex64::new(codes.num(row, "R0")?, codes.num(row, "X0")?) / per_km;
        code_z.insert(name, impedance_from_sequence(z1, z0));
    }

    let mut lines = Vec::new();
    let mut has_incoming = vec![false; buses.len()];
    for row in &lines_t.rows {
        let name = lines_t.get(row, "Name")?.to_string();
        let mut ends = [0usize; 2];
        for (k, col) in ["Bus1", "Bus2"].iter().enumerate() {
            let id = lines_t.get(row, col)?;
            ends[k] = *bus_idx.get(id).ok_or_else(|| Error::DanglingBus {
                line: name.clone(),
                bus: id.to_string(),
            })?;
        }
        let code = lines_t.get(row, "LineCode")?.to_string();
        let z_km = code_z.get(&code).ok_or_else(|| Error::Parse {
            file: lines_t.file.clone(),
            record: name.clone(),
            message: format!("unknown line code {code:?}"),
        })?;
        let unit = lines_t.get(row, "Units")?;
        let km = length_factor_km(unit).ok_or_else(|| Error::Parse {
            file: lines_t.file.clone(),
            record: name.clone(),
            message: format!("unknown length unit {unit:?}"),
        })?;
        let length = lines_t.num(row, "Length")?;
        let z_ohm = z_km * Complex64::new(length * km, 0.0);
        has_incoming[ends[1]] = true;
        lines.push(Line {
            name,
            from: ends[0],
            to: ends[1],
            impedance: z_ohm.map(|z| opts.bases.ohms_to_pu(z)),
            code: Some(code),
            length_m: Some(length * km * 1000.0),
        });
    }

    let root = match &opts.root {
        Some(id) => *bus_idx
            .get(id)
            .ok_or_else(|| Error::InvalidNetwork(format!("root bus {id} not defined")))?,
        None => {
            let candidates: Vec<usize> = (0..buses.len()).filter(|&b| !has_incoming[b]).collect();
            if candidates.len() != 1 {
                return Err(Error::InvalidNetwork(format!(
                    "cannot infer the root bus: {} buses have no incoming line",
                    candidates.len()
                )));
            }
            candidates[0]
        }
    };

    // load shapes
    let mut shape_files = HashMap::new();
    for row in &shapes_t.rows {
        let name = shapes_t.get(row, "Name")?.to_ascii_lowercase();
        let file = shapes_t.get(row, "File")?.to_string();
        let minterval = shapes_t.num(row, "minterval")?;
        let actual = shapes_t
            .get(row, "useactual")
            .map(|s| s.eq_ignore_ascii_case("true"))
            .unwrap_or(true);
        shape_files.insert(name, (file, minterval, actual));
    }
    let profile_dir: PathBuf = if dir.join("Load Profiles").is_dir() {
        dir.join("Load Profiles")
    } else {
        dir.to_path_buf()
    };

    let mut customers = Vec::new();
    let mut samples = Vec::new();
    let mut timestamps: Option<Vec<u32>> = None;
    let mut resolution = None;
    for (k, row) in loads_t.rows.iter().enumerate() {
        let name = loads_t.get(row, "Name")?.to_string();
        let bus_id = loads_t.get(row, "Bus")?;
        let bus = *bus_idx.get(bus_id).ok_or_else(|| Error::DanglingCustomer {
            customer: name.clone(),
            bus: bus_id.to_string(),
        })?;
        let phase_raw = loads_t.get(row, "phases")?;
        let phase = Phase::parse(phase_raw).ok_or_else(|| Error::Parse {
            file: loads_t.file.clone(),
            record: name.clone(),
            message: format!("unsupported phase {phase_raw:?}"),
        })?;
        let kw = loads_t.num(row, "kW")?;
        let pf = loads_t.num(row, "PF")?;
        if !(pf > 0.0 && pf <= 1.0) {
            return Err(Error::Parse {
                file: loads_t.file.clone(),
                record: name,
                message: format!("power factor {pf} outside (0, 1]"),
            });
        }
        let q_ratio = (1.0 / (pf * pf) - 1.0).max(0.0).sqrt();
        let shape = loads_t.get(row, "Yearly")?.to_ascii_lowercase();
        let (file, minterval, actual) = shape_files.get(&shape).ok_or_else(|| Error::Parse {
            file: loads_t.file.clone(),
            record: name.clone(),
            message: format!("unknown load shape {shape:?}"),
        })?;
        let prof = Table::read(&profile_dir, file, "time")?;
        let mut ts = Vec::with_capacity(prof.rows.len());
        let mut s = Vec::with_capacity(prof.rows.len());
        for r in &prof.rows {
            let t = prof.get(r, "time")?;
            ts.push(parse_minutes(t).ok_or_else(|| Error::Parse {
                file: file.clone(),
                record: t.to_string(),
                message: "time must be HH:MM[:SS]".into(),
            })?);
            let mult = prof.num(r, "mult")?;
            let p_kw = if *actual { mult } else { mult * kw };
            s.push((p_kw * 1000.0, p_kw * 1000.0 * q_ratio));
        }
        match &timestamps {
            None => {
                timestamps = Some(ts);
                resolution = Some(*minterval as u32);
            }
            Some(prev) if *prev != ts || resolution != Some(*minterval as u32) => {
                return Err(Error::Parse {
                    file: file.clone(),
                    record: name,
                    message: "load shape time axis differs from the first shape".into(),
                });
            }
            _ => {}
        }
        samples.push(s);
        customers.push(Customer {
            index: k + 1,
            name,
            bus,
            initial_phase: phase,
        });
    }

    let n_lines = lines.len();
    let network = Network::new(NetworkParts {
        buses,
        lines,
        customers,
        root,
        root_voltage: opts.root_voltage,
        limits: opts.limits,
        bases: opts.bases,
    })?;
    let demand = DemandSeries::new(timestamps.unwrap_or_default(), resolution.unwrap_or(1), samples)?;
    let report = ImportReport {
        buses: network.n_buses(),
        lines: n_lines,
        line_codes: code_z.len(),
        customers: network.customers().len(),
        load_shapes: shape_files.len(),
        samples_per_customer: demand.len(),
        resolution_min: demand.resolution_min,
        root: network.buses()[root].id.clone(),
    };
    Ok(ImportedFeeder {
        network,
        demand,
        report,
    })
}
