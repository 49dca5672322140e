//! Ground-truth learning curves and the multi-round collection loop.
//!
//! A run starts from `q0`, and in every round builds a regression set from
//! sub-sampled measurements, asks a policy for the next cumulative amount,
//! pays for the increment and observes the oracle's score. It stops as soon
//! as the target is met, and pays the penalty if the horizon ends first.

mod metrics;
mod oracle;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{corrected_policy, regression_point_policy, RegressionBaseline};
use crate::curves::{CurveFamily, CurveSample, FitConfig, FitInit, RegressionSet};
use crate::density::{
    bootstrap_requirements, fit_gmm, fit_kde, log_bandwidth_grid, BootstrapConfig, CensorPolicy, RequirementDistribution,
};
use crate::planner::{solve_plan, ProblemSpec, SolverConfig};
use crate::rng::{derive_seed, stream, substream};

pub use metrics::{aggregate_metrics, cost_ratio, points_ratio, MetricsReport};
pub use oracle::{true_requirement, GroundTruthCurve1D, GroundTruthSurface2D, Oracle, SurfaceValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid oracle: {0}")]
    InvalidOracle(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Settings of the learn-optimize-collect policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocConfig {
    pub resamples: usize,
    pub family: CurveFamily,
    pub censor_policy: CensorPolicy,
    /// Censoring bound as a multiple of the largest regression size.
    pub q_cap_factor: f64,
    pub fit: FitConfig,
    pub init: FitInit,
    pub bandwidths: Vec<f64>,
    pub gmm_components: Vec<usize>,
    pub solver: SolverConfig,
}

impl Default for LocConfig {
    fn default() -> Self {
        Self {
            resamples: 500,
            family: CurveFamily::PowerLaw,
            censor_policy: CensorPolicy::CapAtBound,
            q_cap_factor: 100.0,
            fit: FitConfig::default(),
            init: FitInit::Profiled,
            bandwidths: log_bandwidth_grid(200.0, 4000.0, 20),
            gmm_components: (4..=10).collect(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Loc(LocConfig),
    RegressionPoint(RegressionBaseline),
    RegressionCorrected { tau: f64, baseline: RegressionBaseline },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Loc(_) => "loc",
            Self::RegressionPoint(_) => "regression",
            Self::RegressionCorrected { .. } => "corrected",
        }
    }

    fn family(&self) -> CurveFamily {
        match self {
            Self::Loc(c) => c.family,
            Self::RegressionPoint(b) | Self::RegressionCorrected { baseline: b, .. } => b.family,
        }
    }
}

/// Simulation settings independent of the policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of sub-sampled fractions `r/R` measured per round.
    pub subsets: usize,
    /// Standard deviation of Gaussian noise added to observed scores.
    pub noise_sd: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            subsets: 10,
            noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Full schedule the policy proposed this round (LOC only).
    pub plan: Option<Vec<Vec<f64>>>,
    /// Policy's point estimate of the requirement, if it made one.
    pub estimate: Option<Vec<f64>>,
    pub q: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub spec: ProblemSpec,
    pub seed: u64,
    /// Score observed at `q0`.
    pub initial_score: f64,
    pub trajectory: Vec<RoundRecord>,
    /// Last round executed; 0 when the target was met at `q0`.
    pub terminated_round: usize,
    pub met_target: bool,
    pub total_paid: f64,
    /// `None` when the oracle never reaches the target.
    pub d_star_true: Option<Vec<f64>>,
    /// Error that ended the run early, if any.
    pub policy_error: Option<String>,
}

impl RunRecord {
    pub fn final_amount(&self) -> &[f64] {
        self.trajectory.last().map_or(&self.spec.q0, |r| &r.q)
    }

    /// Collection cost plus the penalty when the target was missed.
    pub fn recompute_paid(&self) -> f64 {
        let collected: f64 = self
            .spec
            .costs
            .iter()
            .zip(self.final_amount())
            .zip(&self.spec.q0)
            .map(|((c, q), q0)| c * (q - q0))
            .sum();
        collected + if self.met_target { 0.0 } else { self.spec.penalty }
    }
}

/// Measured scores keyed by exact size vector, so a re-measured point gives
/// the same (possibly noisy) value.
struct Observer<'a> {
    oracle: &'a Oracle,
    noise: Option<Normal<f64>>,
    seed: u64,
    seen: Vec<(Vec<f64>, f64)>,
}

impl Observer<'_> {
    fn observe(&mut self, q: &[f64]) -> f64 {
        if let Some((_, v)) = self.seen.iter().find(|(p, _)| p == q) {
            return *v;
        }
        let mut v = self.oracle.eval(q);
        if let Some(n) = &self.noise {
            let mut rng = substream(self.seed, stream::NOISE, self.seen.len() as u64);
            v += n.sample(&mut rng);
        }
        self.seen.push((q.to_vec(), v));
        v
    }

    fn regression_set(&self) -> RegressionSet {
        let samples = self
            .seen
            .iter()
            .filter(|(q, _)| q.iter().sum::<f64>() > 0.0)
            .map(|(q, v)| CurveSample::new(q.clone(), *v))
            .collect();
        RegressionSet::with_doubling_weights(samples).expect("regression set has a positive size")
    }
}

struct Decision {
    next: Vec<f64>,
    plan: Option<Vec<Vec<f64>>>,
    estimate: Option<Vec<f64>>,
}

fn loc_decision(
    cfg: &LocConfig,
    data: &RegressionSet,
    spec: &ProblemSpec,
    seed: u64,
    round: usize,
) -> Result<Decision, String> {
    let current = spec.current().to_vec();
    let baseline = RegressionBaseline {
        family: cfg.family,
        fit: cfg.fit,
        init: cfg.init.clone(),
        q_cap_factor: cfg.q_cap_factor,
    };
    let tie = derive_seed(seed, stream::TIE_BREAK, round as u64);
    let point = regression_point_policy(data, spec.target, &spec.costs, &current, &baseline, tie)
        .map_err(|e| e.to_string())?;
    let cap: Vec<f64> = data.max_sizes().iter().map(|m| m * cfg.q_cap_factor).collect();
    let boot = BootstrapConfig {
        resamples: cfg.resamples,
        seed: derive_seed(seed, stream::BOOTSTRAP, round as u64),
        family: cfg.family,
        q_cap: cap.iter().all(|c| *c > 0.0).then_some(cap),
        censor_policy: cfg.censor_policy,
        fit: cfg.fit,
        init: cfg.init.clone(),
    };
    let draws = bootstrap_requirements(data, spec.target, &spec.costs, &boot).map_err(|e| e.to_string())?;
    let dist: RequirementDistribution = if spec.dimension() == 1 {
        let xs: Vec<f64> = draws.estimates.iter().map(|e| e[0]).collect();
        if xs.len() < 2 {
            return Err(format!("only {} bootstrap estimates survived", xs.len()));
        }
        fit_kde(&xs, &cfg.bandwidths)
    } else {
        fit_gmm(
            &draws.estimates,
            &cfg.gmm_components,
            derive_seed(seed, stream::GMM_INIT, round as u64),
        )
    }
    .map_err(|e| e.to_string())?;
    let solved = solve_plan(spec, &dist, &cfg.solver, point.estimate.as_deref()).map_err(|e| e.to_string())?;
    let next = solved.rounded.schedule()[spec.frozen_prefix.len()].clone();
    Ok(Decision {
        next,
        plan: Some(solved.rounded.schedule().to_vec()),
        estimate: point.estimate,
    })
}

fn baseline_decision(
    baseline: &RegressionBaseline,
    tau: f64,
    data: &RegressionSet,
    spec: &ProblemSpec,
    seed: u64,
    round: usize,
) -> Result<Decision, String> {
    let current = spec.current();
    let tie = derive_seed(seed, stream::TIE_BREAK, round as u64);
    let r = corrected_policy(data, spec.target, &spec.costs, current, baseline, tau, tie).map_err(|e| e.to_string())?;
    let next = r.request.iter().zip(current).map(|(q, c)| q.ceil().max(*c)).collect();
    Ok(Decision {
        next,
        plan: None,
        estimate: r.estimate,
    })
}

/// Execute one collection run of `policy` against `oracle`.
pub fn run_collection(spec: &ProblemSpec, oracle: &Oracle, policy: &Policy, sim: &SimConfig, seed: u64) -> RunRecord {
    let d_star_true = true_requirement(oracle, spec.target, &spec.costs, derive_seed(seed, stream::TIE_BREAK, u64::MAX));
    let mut observer = Observer {
        oracle,
        noise: (sim.noise_sd > 0.0).then(|| Normal::new(0.0, sim.noise_sd).expect("finite noise level")),
        seed,
        seen: Vec::new(),
    };
    let mut record = RunRecord {
        policy: policy.name().to_string(),
        spec: spec.clone(),
        seed,
        initial_score: 0.0,
        trajectory: Vec::new(),
        terminated_round: 0,
        met_target: false,
        total_paid: 0.0,
        d_star_true,
        policy_error: None,
    };
    let bad_input = spec.validate().err().map(|e| e.to_string()).or_else(|| {
        (oracle.dimension() != spec.dimension() || policy.family().source_count() != spec.dimension())
            .then(|| "policy, oracle and problem dimensions differ".to_string())
    });
    if let Some(e) = bad_input {
        record.policy_error = Some(e);
        record.total_paid = spec.penalty;
        return record;
    }
    record.initial_score = observer.observe(&spec.q0);
    if record.initial_score >= spec.target {
        record.met_target = true;
        return record;
    }
    let mut realized: Vec<Vec<f64>> = Vec::new();
    for round in 1..=spec.horizon {
        let current = realized.last().unwrap_or(&spec.q0).clone();
        for r in 1..=sim.subsets {
            let frac = r as f64 / sim.subsets as f64;
            let q: Vec<f64> = current.iter().map(|v| v * frac).collect();
            observer.observe(&q);
        }
        let data = observer.regression_set();
        let mut round_spec = spec.clone();
        round_spec.frozen_prefix = realized.clone();
        let decision = match policy {
            Policy::Loc(cfg) => loc_decision(cfg, &data, &round_spec, seed, round),
            Policy::RegressionPoint(b) => baseline_decision(b, 0.0, &data, &round_spec, seed, round),
            Policy::RegressionCorrected { tau, baseline } => {
                baseline_decision(baseline, *tau, &data, &round_spec, seed, round)
            }
        };
        let decision = match decision {
            Ok(d) => d,
            Err(e) => {
                log::warn!("policy {} failed in round {round}: {e}", policy.name());
                record.policy_error = Some(e);
                break;
            }
        };
        let score = observer.observe(&decision.next);
        record.trajectory.push(RoundRecord {
            round,
            plan: decision.plan,
            estimate: decision.estimate,
            q: decision.next.clone(),
            score,
        });
        record.terminated_round = round;
        realized.push(decision.next);
        if score >= spec.target {
            record.met_target = true;
            break;
        }
    }
    record.total_paid = record.recompute_paid();
    record
}
