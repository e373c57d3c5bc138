use serde::{Deserialize, Serialize};

use super::run::StepRecord;
use crate::error::{Error, Result};
use crate::estimator::GateReason;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    /// Records after the burn-in window that enter the RMSE.
    pub scored: usize,
    pub burn_in: f64,
    /// RMS of `e = |p_true - p_est|`.
    pub estimation_rmse: f64,
    pub estimation_rmse_axis: [f64; 3],
    /// RMS of `e_t = |p_true - p_cmd|`.
    pub tracking_rmse: f64,
    pub tracking_rmse_axis: [f64; 3],
    pub accepted: usize,
    pub rejected_dynamics: usize,
    pub rejected_chi2: usize,
    pub diverged: bool,
}

/// Root mean square of a sequence; NaN when empty.
pub fn rmse(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

/// RMSE and counts over `records`, skipping those before `burn_in` seconds.
/// If the whole log lies inside the burn-in, every record is scored.
pub fn metrics(records: &[StepRecord], burn_in: f64, diverged: bool) -> Result<Summary> {
    let first = records.first().ok_or(Error::EmptyLog)?;
    let t0 = first.t;
    let mut scored: Vec<&StepRecord> = records.iter().filter(|r| r.t - t0 >= burn_in).collect();
    if scored.is_empty() {
        scored = records.iter().collect();
    }
    let est: Vec<_> = scored.iter().map(|r| r.truth() - r.estimate()).collect();
    let trk: Vec<_> = scored.iter().map(|r| r.truth() - r.commanded()).collect();
    let axis = |errs: &[nalgebra::Vector3<f64>]| [0, 1, 2].map(|k| rmse(errs.iter().map(|e| e[k])));
    let count = |reason| records.iter().filter(|r| r.reason == reason).count();
    Ok(Summary {
        records: records.len(),
        scored: scored.len(),
        burn_in,
        estimation_rmse: rmse(est.iter().map(|e| e.norm())),
        estimation_rmse_axis: axis(&est),
        tracking_rmse: rmse(trk.iter().map(|e| e.norm())),
        tracking_rmse_axis: axis(&trk),
        accepted: count(GateReason::Accepted),
        rejected_dynamics: count(GateReason::RejectedDynamics),
        rejected_chi2: count(GateReason::RejectedChi2),
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RangingMode;

    pub(crate) fn record(t: f64, est: [f64; 3], truth: [f64; 3]) -> StepRecord {
        StepRecord {
            t,
            mode: RangingMode::Twr,
            i: 0,
            j: None,
            raw: 0.0,
            compensated: 0.0,
            y_tilde: 0.0,
            s: 1.0,
            reason: GateReason::Accepted,
            est_x: est[0],
            est_y: est[1],
            est_z: est[2],
            true_x: truth[0],
            true_y: truth[1],
            true_z: truth[2],
            cmd_x: truth[0],
            cmd_y: truth[1],
            cmd_z: truth[2],
            outlier: false,
        }
    }

    #[test]
    fn constant_offset_gives_that_rmse() {
        let recs: Vec<_> = (0..100)
            .map(|k| record(k as f64 * 0.1, [1.1, 2.0, 3.0], [1.0, 2.0, 3.0]))
            .collect();
        let s = metrics(&recs, 1.0, false).unwrap();
        assert!((s.estimation_rmse - 0.1).abs() < 1e-12);
        assert_eq!(s.tracking_rmse, 0.0);
        assert_eq!(s.scored, 90);
    }

    #[test]
    fn zero_error_log() {
        let recs: Vec<_> = (0..10).map(|k| record(k as f64, [1.0; 3], [1.0; 3])).collect();
        assert_eq!(metrics(&recs, 0.0, false).unwrap().estimation_rmse, 0.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(metrics(&[], 0.0, false).is_err());
    }
}
