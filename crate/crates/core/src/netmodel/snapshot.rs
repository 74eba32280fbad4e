use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DemandSeries, Network};

/// Identifier of the bundled PV generation curve.
pub const PV_PROFILE_VERSION: &str = "halfcos-0600-1800-v1";

/// Clear-sky PV output as a fraction of rated capacity at `minute` after
/// midnight: a half-cosine bell from 06:00 to 18:00 peaking at noon.
pub fn pv_output_fraction(minute: f64) -> f64 {
    let h = minute / 60.0;
    if (6.0..=18.0).contains(&h) {
        (std::f64::consts::PI * (h - 12.0) / 12.0).cos().max(0.0)
    } else {
        0.0
    }
}

/// Mean of the one-minute PV samples inside a window.
fn pv_window_fraction(start_min: u32, resolution_min: u32) -> f64 {
    let n = resolution_min.max(1);
    (0..n).map(|m| pv_output_fraction((start_min + m) as f64)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioOptions {
    /// 1-based indices of customers with rooftop PV.
    pub pv_customers: Vec<usize>,
    pub pv_capacity_kw: f64,
    /// 1-based indices of customers fitted with a phase-switching device.
    pub psd_customers: Vec<usize>,
    /// Enables reactive-power control of the PV inverters.
    pub pv_control: bool,
    /// Reactive adjustment range as a fraction of PV capacity.
    pub q_range_fraction: f64,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions {
            pv_customers: Vec::new(),
            pv_capacity_kw: 7.0,
            psd_customers: Vec::new(),
            pv_control: false,
            q_range_fraction: 0.05,
        }
    }
}

impl ScenarioOptions {
    /// Ten PV customers and ten switchable customers on the European LV feeder.
    pub fn european_case() -> Self {
        ScenarioOptions {
            pv_customers: vec![5, 9, 15, 18, 20, 26, 30, 37, 45, 50],
            psd_customers: vec![2, 8, 23, 24, 29, 32, 33, 35, 38, 53],
            ..Default::default()
        }
    }
}

/// One period of one feeder in per-unit. Immutable once built.
#[derive(Debug, Clone)]
pub struct CaseSnapshot {
    network: Arc<Network>,
    period: usize,
    demand: Vec<Complex64>,
    adjustable: Vec<bool>,
    q_bounds: Vec<(f64, f64)>,
}

impl CaseSnapshot {
    pub fn new(
        network: Arc<Network>,
        period: usize,
        demand: Vec<Complex64>,
        adjustable: Vec<bool>,
        q_bounds: Vec<(f64, f64)>,
    ) -> Result<CaseSnapshot> {
        let n = network.customers().len();
        if demand.len() != n || adjustable.len() != n || q_bounds.len() != n {
            return Err(Error::Config(format!(
                "snapshot vectors must have one entry per customer ({n})"
            )));
        }
        if demand.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::Config("non-finite demand".into()));
        }
        if q_bounds.iter().any(|&(lo, hi)| !(lo <= 0.0 && 0.0 <= hi)) {
            return Err(Error::Config("reactive bounds must satisfy Q_min <= 0 <= Q_max".into()));
        }
        Ok(CaseSnapshot {
            network,
            period,
            demand,
            adjustable,
            q_bounds,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_arc(&self) -> &Arc<Network> {
        &self.network
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Net demand per customer in p.u. (P + jQ, export negative).
    pub fn demand(&self) -> &[Complex64] {
        &self.demand
    }

    pub fn adjustable(&self) -> &[bool] {
        &self.adjustable
    }

    pub fn adjustable_customers(&self) -> Vec<usize> {
        (0..self.adjustable.len()).filter(|&c| self.adjustable[c]).collect()
    }

    pub fn q_bounds(&self) -> &[(f64, f64)] {
        &self.q_bounds
    }

    pub fn has_q_control(&self) -> bool {
        self.q_bounds.iter().any(|&(lo, hi)| hi - lo > 0.0)
    }

    /// Same case with the phases of the network relabelled cyclically.
    pub fn rotated(&self) -> CaseSnapshot {
        CaseSnapshot {
            network: Arc::new(self.network.rotated()),
            ..self.clone()
        }
    }

    pub fn with_network(&self, network: Arc<Network>) -> Result<CaseSnapshot> {
        CaseSnapshot::new(
            network,
            self.period,
            self.demand.clone(),
            self.adjustable.clone(),
            self.q_bounds.clone(),
        )
    }

    pub fn with_adjustable(&self, adjustable: Vec<bool>) -> Result<CaseSnapshot> {
        CaseSnapshot::new(
            self.network.clone(),
            self.period,
            self.demand.clone(),
            adjustable,
            self.q_bounds.clone(),
        )
    }

    pub fn with_q_bounds(&self, q_bounds: Vec<(f64, f64)>) -> Result<CaseSnapshot> {
        CaseSnapshot::new(
            self.network.clone(),
            self.period,
            self.demand.clone(),
            self.adjustable.clone(),
            q_bounds,
        )
    }
}

/// Builds the per-unit snapshot of `period`: PV output is subtracted from
/// the demand of PV customers, PSD customers become adjustable, and PV
/// customers get reactive bounds when PV control is enabled.
pub fn build_snapshot(
    network: &Arc<Network>,
    series: &DemandSeries,
    period: usize,
    opts: &ScenarioOptions,
) -> Result<CaseSnapshot> {
    let n = network.customers().len();
    if series.n_customers() != n {
        return Err(Error::Config(format!(
            "demand series has {} customers, network has {n}",
            series.n_customers()
        )));
    }
    if period >= series.len() {
        return Err(Error::PeriodOutOfRange {
            period,
            len: series.len(),
        });
    }
    for &c in opts.pv_customers.iter().chain(&opts.psd_customers) {
        if c == 0 || c > n {
            return Err(Error::UnknownCustomer(c));
        }
    }
    let bases = network.bases();
    let pv_frac = pv_window_fraction(series.timestamps[period], series.resolution_min);
    let pv_kw = opts.pv_capacity_kw * pv_frac;

    let mut demand: Vec<Complex64> = series
        .samples
        .iter()
        .map(|s| {
            let (p, q) = s[period];
            Complex64::new(bases.watts_to_pu(p), bases.watts_to_pu(q))
        })
        .collect();
    let mut adjustable = vec![false; n];
    let mut q_bounds = vec![(0.0, 0.0); n];
    for &c in &opts.pv_customers {
        demand[c - 1].re -= bases.watts_to_pu(pv_kw * 1000.0);
        if opts.pv_control {
            let q = bases.watts_to_pu(opts.pv_capacity_kw * 1000.0 * opts.q_range_fraction);
            q_bounds[c - 1] = (-q, q);
        }
    }
    for &c in &opts.psd_customers {
        adjustable[c - 1] = true;
    }
    CaseSnapshot::new(network.clone(), period, demand, adjustable, q_bounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pv_curve_shape() {
        assert_eq!(pv_output_fraction(5.0 * 60.0), 0.0);
        assert!((pv_output_fraction(12.0 * 60.0) - 1.0).abs() < 1e-15);
        assert!(pv_output_fraction(6.0 * 60.0).abs() < 1e-15);
        assert!((pv_output_fraction(9.0 * 60.0) - pv_output_fraction(15.0 * 60.0)).abs() < 1e-15);
        assert_eq!(pv_output_fraction(19.0 * 60.0), 0.0);
    }
}
