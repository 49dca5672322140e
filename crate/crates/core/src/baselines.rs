//! Point-estimate comparison policies and correction-factor calibration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{fit_curve, invert_curve_seeded, CurveError, CurveFamily, FitConfig, FitInit, RegressionSet};
use crate::planner::ProblemSpec;
use crate::simulator::{run_collection, Oracle, Policy, SimConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("no correction factor up to {headroom} meets every target: {reason}")]
    CalibrationImpossible { headroom: f64, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Settings shared by the regression baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionBaseline {
    pub family: CurveFamily,
    pub fit: FitConfig,
    pub init: FitInit,
    /// Inversion bound as a multiple of the largest regression size.
    pub q_cap_factor: f64,
}

impl Default for RegressionBaseline {
    fn default() -> Self {
        Self {
            family: CurveFamily::PowerLaw,
            fit: FitConfig::default(),
            init: FitInit::Profiled,
            q_cap_factor: 100.0,
        }
    }
}

/// A point estimate and the amount a round should hold after collecting.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRequest {
    /// `None` when the fitted curve never reaches the target below the cap.
    pub estimate: Option<Vec<f64>>,
    /// `max(estimate, current)`, or `current` when unreachable.
    pub request: Vec<f64>,
}

/// Fit once and invert at `target`.
pub fn regression_point_policy(
    data: &RegressionSet,
    target: f64,
    costs: &[f64],
    current: &[f64],
    cfg: &RegressionBaseline,
    tie_seed: u64,
) -> Result<PointRequest, BaselineError> {
    if current.len() != data.source_count() {
        return Err(BaselineError::InvalidArgument("current amount has the wrong dimension".into()));
    }
    let init = cfg.init.resolve(cfg.family, data);
    let fit = fit_curve(cfg.family, data, &init, &cfg.fit)?;
    if !fit.converged {
        log::debug!("regression baseline fit did not converge; using best parameters");
    }
    let cap: Vec<f64> = {
        let maxes = data.max_sizes();
        let overall = maxes.iter().cloned().fold(0.0, f64::max);
        maxes
            .iter()
            .map(|m| cfg.q_cap_factor * if *m > 0.0 { *m } else { overall })
            .collect()
    };
    let inv = invert_curve_seeded(&fit.model, target, costs, &cap, tie_seed)?;
    Ok(match inv.sizes() {
        Some(q) => PointRequest {
            estimate: Some(q.to_vec()),
            request: q.iter().zip(current).map(|(a, b)| a.max(*b)).collect(),
        },
        None => PointRequest {
            estimate: None,
            request: current.to_vec(),
        },
    })
}

/// [`regression_point_policy`] aimed at `target + tau`.
pub fn corrected_policy(
    data: &RegressionSet,
    target: f64,
    costs: &[f64],
    current: &[f64],
    cfg: &RegressionBaseline,
    tau: f64,
    tie_seed: u64,
) -> Result<PointRequest, BaselineError> {
    if !(tau >= 0.0) {
        return Err(BaselineError::InvalidArgument(format!("tau must be non-negative, got {tau}")));
    }
    regression_point_policy(data, target + tau, costs, current, cfg, tie_seed)
}

/// A calibrated score offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionFactor {
    pub tau: f64,
    pub calibrated_on: String,
}

pub const TAU_STEP: f64 = 0.25;

/// Smallest `tau` on a 0.25 grid for which the corrected policy meets every
/// target of `targets` within the horizon of `template` on `oracle`.
///
/// The search stops at the oracle's headroom, its best score minus the
/// smallest target.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_tau(
    oracle: &Oracle,
    oracle_name: &str,
    cfg: &RegressionBaseline,
    targets: &[f64],
    template: &ProblemSpec,
    sim: &SimConfig,
    seed: u64,
) -> Result<CorrectionFactor, BaselineError> {
    if targets.is_empty() {
        return Err(BaselineError::InvalidArgument("target grid is empty".into()));
    }
    let top = oracle.max_score();
    let lowest = targets.iter().cloned().fold(f64::INFINITY, f64::min);
    let headroom = (top - lowest).max(0.0);
    if let Some(t) = targets.iter().find(|t| **t > top) {
        return Err(BaselineError::CalibrationImpossible {
            headroom,
            reason: format!("target {t} exceeds the oracle maximum {top}"),
        });
    }
    let steps = (headroom / TAU_STEP).floor() as usize;
    for k in 0..=steps {
        let tau = k as f64 * TAU_STEP;
        let policy = Policy::RegressionCorrected {
            tau,
            baseline: cfg.clone(),
        };
        let all_met = targets.par_iter().all(|&target| {
            let mut spec = template.clone();
            spec.target = target;
            run_collection(&spec, oracle, &policy, sim, seed).met_target
        });
        if all_met {
            return Ok(CorrectionFactor {
                tau,
                calibrated_on: oracle_name.to_string(),
            });
        }
    }
    Err(BaselineError::CalibrationImpossible {
        headroom,
        reason: "every candidate left some target unmet".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveSample;
    use crate::simulator::GroundTruthCurve1D;
    use proptest::prelude::*;

    fn sqrt_data() -> RegressionSet {
        RegressionSet::with_doubling_weights(
            (1..=8).map(|i| CurveSample::scalar(i as f64 * 5.0, (i as f64 * 5.0).sqrt())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn point_estimate_on_exact_power_law() {
        let r = regression_point_policy(&sqrt_data(), 10.0, &[1.0], &[40.0], &RegressionBaseline::default(), 0).unwrap();
        assert!((r.estimate.unwrap()[0] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn request_never_drops_below_current() {
        let r = regression_point_policy(&sqrt_data(), 3.0, &[1.0], &[40.0], &RegressionBaseline::default(), 0).unwrap();
        assert!(r.estimate.unwrap()[0] < 40.0);
        assert_eq!(r.request, vec![40.0]);
    }

    #[test]
    fn correction_shifts_the_target() {
        let cfg = RegressionBaseline::default();
        let r = corrected_policy(&sqrt_data(), 10.0, &[1.0], &[40.0], &cfg, 2.0, 0).unwrap();
        assert!((r.estimate.unwrap()[0] - 144.0).abs() < 1e-6);
        let a = corrected_policy(&sqrt_data(), 10.0, &[1.0], &[40.0], &cfg, 0.0, 0).unwrap();
        let b = regression_point_policy(&sqrt_data(), 10.0, &[1.0], &[40.0], &cfg, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bounded_family_becomes_unreachable() {
        let data = RegressionSet::with_doubling_weights(
            (1..=8).map(|i| CurveSample::scalar(i as f64 * 10.0, 20.0 + i as f64)).collect(),
        )
        .unwrap();
        let cfg = RegressionBaseline {
            family: CurveFamily::Arctan,
            ..RegressionBaseline::default()
        };
        let r = corrected_policy(&data, 25.0, &[1.0], &[80.0], &cfg, 1e4, 0).unwrap();
        assert_eq!(r.estimate, None);
        assert_eq!(r.request, vec![80.0]);
    }

    fn sqrt_oracle() -> Oracle {
        // Knots on every multiple of 20, so measured points lie exactly on √q.
        let knots = (1..=1000).map(|i| {
            let q = 20.0 * i as f64;
            (q, q.sqrt())
        });
        Oracle::Curve(GroundTruthCurve1D::new(knots.collect()).unwrap())
    }

    #[test]
    fn exact_family_needs_no_correction() {
        let template = ProblemSpec::new(0.0, vec![1.0], 1e7, 1, vec![400.0]).unwrap();
        let f = calibrate_tau(&sqrt_oracle(), "sqrt", &RegressionBaseline::default(), &[30.0, 40.0, 60.0], &template, &SimConfig::default(), 3)
            .unwrap();
        assert_eq!(f.tau, 0.0);
        assert_eq!(f.calibrated_on, "sqrt");
    }

    #[test]
    fn target_above_oracle_is_impossible() {
        let template = ProblemSpec::new(0.0, vec![1.0], 1e7, 1, vec![400.0]).unwrap();
        let err = calibrate_tau(&sqrt_oracle(), "sqrt", &RegressionBaseline::default(), &[30.0, 500.0], &template, &SimConfig::default(), 3);
        assert!(matches!(err, Err(BaselineError::CalibrationImpossible { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn requests_grow_with_target_and_tau(t1 in 5.0f64..30.0, dt in 0.0f64..10.0, tau in 0.0f64..5.0) {
            let cfg = RegressionBaseline::default();
            let data = sqrt_data();
            let a = regression_point_policy(&data, t1, &[1.0], &[0.0], &cfg, 0).unwrap().request[0];
            let b = regression_point_policy(&data, t1 + dt, &[1.0], &[0.0], &cfg, 0).unwrap().request[0];
            let c = corrected_policy(&data, t1, &[1.0], &[0.0], &cfg, tau, 0).unwrap().request[0];
            prop_assert!(b >= a * (1.0 - 1e-12));
            prop_assert!(c >= a * (1.0 - 1e-12));
        }
    }
}
