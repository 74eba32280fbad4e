use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Net demand samples per customer, sharing one time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSeries {
    /// Sample start times in minutes after midnight.
    pub timestamps: Vec<u32>,
    pub resolution_min: u32,
    /// `samples[customer][t] = (P watts, Q vars)`; negative P is export.
    pub samples: Vec<Vec<(f64, f64)>>,
}

impl DemandSeries {
    pub fn new(timestamps: Vec<u32>, resolution_min: u32, samples: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if resolution_min == 0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        for (c, s) in samples.iter().enumerate() {
            if s.len() != timestamps.len() {
                return Err(Error::Config(format!(
                    "customer {} has {} samples, expected {}",
                    c + 1,
                    s.len(),
                    timestamps.len()
                )));
            }
            if s.iter().any(|(p, q)| !p.is_finite() || !q.is_finite()) {
                return Err(Error::Config(format!("customer {} has non-finite samples", c + 1)));
            }
        }
        Ok(DemandSeries {
            timestamps,
            resolution_min,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_customers(&self) -> usize {
        self.samples.len()
    }
}

/// Averages consecutive windows of `target_min / resolution_min` samples.
///
/// A trailing partial window is dropped.
pub fn resample_profiles(series: &DemandSeries, target_min: u32) -> Result<DemandSeries> {
    if target_min == 0 || target_min % series.resolution_min != 0 {
        return Err(Error::Resolution {
            target: target_min,
            source_res: series.resolution_min,
        });
    }
    let w = (target_min / series.resolution_min) as usize;
    let n_out = series.len() / w;
    let timestamps = (0..n_out).map(|k| series.timestamps[k * w]).collect();
    let samples = series
        .samples
        .iter()
        .map(|s| {
            s.chunks_exact(w)
                .map(|win| {
                    let (p, q) = win.iter().fold((0.0, 0.0), |(ap, aq), &(p, q)| (ap + p, aq + q));
                    (p / w as f64, q / w as f64)
                })
                .collect()
        })
        .collect();
    Ok(DemandSeries {
        timestamps,
        resolution_min: target_min,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minute_series(values: Vec<f64>) -> DemandSeries {
        let n = values.len();
        DemandSeries::new(
            (0..n as u32).collect(),
            1,
            vec![values.into_iter().map(|p| (p, 0.3 * p)).collect()],
        )
        .unwrap()
    }

    #[test]
    fn constant_signal_is_preserved() {
        let s = resample_profiles(&minute_series(vec![2000.0; 15]), 15).unwrap();
        assert_eq!(s.samples[0], vec![(2000.0, 600.0)]);
    }

    #[test]
    fn one_day_gives_96_periods() {
        let s = resample_profiles(&minute_series(vec![1.0; 1440]), 15).unwrap();
        assert_eq!(s.len(), 96);
        assert_eq!(s.timestamps[1], 15);
    }

    #[test]
    fn ramp_averages_to_midpoint() {
        let ramp = (0..15).map(|k| 1000.0 * k as f64).collect();
        let s = resample_profiles(&minute_series(ramp), 15).unwrap();
        assert!((s.samples[0][0].0 - 7000.0).abs() < 1e-9);
    }

    #[test]
    fn non_multiple_resolution_is_rejected() {
        let s = resample_profiles(&minute_series(vec![1.0; 30]), 15).unwrap();
        assert!(matches!(resample_profiles(&s, 20), Err(Error::Resolution { .. })));
    }

    proptest! {
        #[test]
        fn energy_is_preserved(values in proptest::collection::vec(-7000.0f64..7000.0, 60)) {
            let total: f64 = values.iter().sum();
            let s = resample_profiles(&minute_series(values), 15).unwrap();
            let out: f64 = s.samples[0].iter().map(|x| x.0 * 15.0).sum();
            prop_assert!((out - total).abs() <= 1e-9 * total.abs().max(1.0));
        }
    }
}
