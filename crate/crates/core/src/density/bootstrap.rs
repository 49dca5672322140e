use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DensityError;
use crate::curves::{fit_curve, invert_curve_seeded, CurveFamily, FitConfig, FitInit, Inversion, RegressionSet};
use crate::rng::{stream, substream};

/// What to do with a resample whose fit does not converge or whose curve
/// never reaches the target below the cap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorPolicy {
    Drop,
    #[default]
    CapAtBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    pub family: CurveFamily,
    /// Per-source censoring bound. `None` means 100 times the largest size
    /// in the regression set.
    pub q_cap: Option<Vec<f64>>,
    pub censor_policy: CensorPolicy,
    pub fit: FitConfig,
    pub init: FitInit,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64, family: CurveFamily) -> Result<Self, DensityError> {
        let cfg = Self {
            resamples,
            seed,
            family,
            q_cap: None,
            censor_policy: CensorPolicy::default(),
            fit: FitConfig::default(),
            init: FitInit::Profiled,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DensityError> {
        if self.resamples < 2 {
            return Err(DensityError::InvalidConfig(format!(
                "need at least 2 bootstrap resamples, got {}",
                self.resamples
            )));
        }
        if let Some(cap) = &self.q_cap {
            if cap.len() != self.family.source_count() {
                return Err(DensityError::Dimension {
                    expected: self.family.source_count(),
                    got: cap.len(),
                });
            }
            if cap.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(DensityError::InvalidConfig("q_cap must be positive".into()));
            }
        }
        Ok(())
    }

    fn cap_for(&self, data: &RegressionSet) -> Vec<f64> {
        self.q_cap.clone().unwrap_or_else(|| {
            let maxes = data.max_sizes();
            let overall = maxes.iter().cloned().fold(0.0, f64::max);
            maxes
                .iter()
                .map(|m| 100.0 * if *m > 0.0 { *m } else { overall })
                .collect()
        })
    }
}

/// Surviving bootstrap estimates, in resample order.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub estimates: Vec<Vec<f64>>,
    /// Resamples that were capped or dropped.
    pub censored: usize,
    /// Of those, how many were censored because the fit did not converge.
    pub non_converged: usize,
}

enum Draw {
    Estimate(Vec<f64>),
    Censored { non_converged: bool },
}

fn one_resample(
    data: &RegressionSet,
    target: f64,
    costs: &[f64],
    cap: &[f64],
    cfg: &BootstrapConfig,
    b: usize,
) -> Result<Draw, DensityError> {
    let mut rng = substream(cfg.seed, stream::BOOTSTRAP, b as u64);
    let n = data.len();
    let picked: Vec<_> = (0..n)
        .map(|_| data.samples()[rng.random_range(0..n)].clone())
        .collect();
    let Ok(resampled) = RegressionSet::with_doubling_weights(picked) else {
        return Ok(Draw::Censored { non_converged: false });
    };
    let init = cfg.init.resolve(cfg.family, &resampled);
    let fit = match fit_curve(cfg.family, &resampled, &init, &cfg.fit) {
        Ok(fit) => fit,
        Err(e) => {
            log::debug!("resample {b}: fit failed: {e}");
            return Ok(Draw::Censored { non_converged: true });
        }
    };
    if !fit.converged {
        return Ok(Draw::Censored { non_converged: true });
    }
    let tie_seed = substream(cfg.seed, stream::TIE_BREAK, b as u64).next_u64();
    Ok(match invert_curve_seeded(&fit.model, target, costs, cap, tie_seed)? {
        Inversion::Reached { sizes, .. } => Draw::Estimate(sizes),
        Inversion::Unreachable => Draw::Censored { non_converged: false },
    })
}

/// Fit and invert `cfg.resamples` bootstrap resamples of `data`.
///
/// Resample `b` draws from its own random stream, so the result does not
/// depend on how many threads run the loop.
pub fn bootstrap_requirements(
    data: &RegressionSet,
    target: f64,
    costs: &[f64],
    cfg: &BootstrapConfig,
) -> Result<BootstrapOutcome, DensityError> {
    cfg.validate()?;
    if data.source_count() != cfg.family.source_count() {
        return Err(DensityError::Dimension {
            expected: cfg.family.source_count(),
            got: data.source_count(),
        });
    }
    if !target.is_finite() {
        return Err(DensityError::InvalidConfig("target must be finite".into()));
    }
    let cap = cfg.cap_for(data);
    let draws: Vec<Draw> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| one_resample(data, target, costs, &cap, cfg, b))
        .collect::<Result<_, _>>()?;
    let mut out = BootstrapOutcome {
        estimates: Vec::with_capacity(draws.len()),
        censored: 0,
        non_converged: 0,
    };
    for d in draws {
        match d {
            Draw::Estimate(q) => out.estimates.push(q),
            Draw::Censored { non_converged } => {
                out.censored += 1;
                out.non_converged += usize::from(non_converged);
                if cfg.censor_policy == CensorPolicy::CapAtBound {
                    out.estimates.push(cap.clone());
                }
            }
        }
    }
    if out.estimates.is_empty() {
        return Err(DensityError::AllCensored {
            resamples: cfg.resamples,
        });
    }
    if out.censored > 0 {
        log::debug!(
            "{} of {} resamples censored ({} non-converged)",
            out.censored,
            cfg.resamples,
            out.non_converged
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveSample;

    fn sqrt_curve() -> RegressionSet {
        RegressionSet::with_doubling_weights(
            (1..=8).map(|i| CurveSample::scalar(i as f64 * 5.0, (i as f64 * 5.0).sqrt())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_power_law_gives_identical_estimates() {
        let cfg = BootstrapConfig::new(10, 5, CurveFamily::PowerLaw).unwrap();
        let out = bootstrap_requirements(&sqrt_curve(), 10.0, &[1.0], &cfg).unwrap();
        assert_eq!(out.estimates.len(), 10);
        for e in &out.estimates {
            assert!((e[0] - 100.0).abs() < 1e-6, "{e:?}");
        }
    }

    #[test]
    fn single_resample_rejected() {
        assert!(BootstrapConfig::new(1, 0, CurveFamily::PowerLaw).is_err());
    }

    #[test]
    fn unreachable_targets_are_censored() {
        let data = RegressionSet::with_doubling_weights(
            (1..=8).map(|i| CurveSample::scalar(i as f64 * 10.0, 20.0 + i as f64)).collect(),
        )
        .unwrap();
        let mut cfg = BootstrapConfig::new(5, 1, CurveFamily::Arctan).unwrap();
        cfg.censor_policy = CensorPolicy::Drop;
        assert!(matches!(
            bootstrap_requirements(&data, 1e4, &[1.0], &cfg),
            Err(DensityError::AllCensored { resamples: 5 })
        ));
        cfg.censor_policy = CensorPolicy::CapAtBound;
        let out = bootstrap_requirements(&data, 1e4, &[1.0], &cfg).unwrap();
        assert_eq!(out.censored, 5);
        assert!(out.estimates.iter().all(|e| e == &vec![8000.0]));
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let data = RegressionSet::with_doubling_weights(
            (1..=10)
                .map(|i| {
                    let q = 100.0 * i as f64;
                    CurveSample::scalar(q, 10.0 * q.ln() + ((i * 7) % 5) as f64 * 0.3)
                })
                .collect(),
        )
        .unwrap();
        let cfg = BootstrapConfig::new(40, 99, CurveFamily::PowerLaw).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap_requirements(&data, 75.0, &[1.0], &cfg).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
