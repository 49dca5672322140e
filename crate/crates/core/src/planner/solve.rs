use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fixed_survival, gradient_with_fixed, reformulated_objective, schedule_from_params, softplus_inverse, CollectionPlan,
    PlannerError, ProblemSpec,
};
use crate::density::RequirementCdf;

/// First-order update rule for one grid trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    MomentumGd { beta: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub methods: Vec<Method>,
    pub learning_rates: Vec<f64>,
    pub max_steps: usize,
    /// Stop a trial after this many steps without a new best objective.
    pub patience: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            methods: vec![
                Method::MomentumGd { beta: 0.9 },
                Method::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                },
            ],
            learning_rates: (0..=10).map(|k| 0.005 * 10f64.powf(k as f64 / 2.0)).collect(),
            max_steps: 1000,
            patience: 200,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.methods.is_empty() || self.learning_rates.is_empty() {
            return Err(PlannerError::InvalidConfig("optimizer grid must be non-empty".into()));
        }
        if self.learning_rates.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(PlannerError::InvalidConfig("learning rates must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(PlannerError::InvalidConfig("max_steps must be at least 1".into()));
        }
        for m in &self.methods {
            let ok = match *m {
                Method::MomentumGd { beta } => (0.0..1.0).contains(&beta),
                Method::Adam { beta1, beta2 } => (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2),
            };
            if !ok {
                return Err(PlannerError::InvalidConfig(format!("bad momentum parameters in {m:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: Method,
    pub learning_rate: f64,
    pub best_objective: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub initial_objective: f64,
    pub trials: Vec<TrialSummary>,
    /// Index into `trials` of the selected trial; `None` with `no_improvement`.
    pub chosen: Option<usize>,
    /// No trial beat the initialization, which is returned instead.
    pub no_improvement: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvedPlan {
    /// Best continuous plan found.
    pub plan: CollectionPlan,
    pub objective: f64,
    /// `plan` rounded up to whole samples, kept non-decreasing.
    pub rounded: CollectionPlan,
    pub rounded_objective: f64,
    pub diagnostics: SolveDiagnostics,
}

fn run_trial(
    spec: &ProblemSpec,
    dist: &dyn RequirementCdf,
    x0: &[f64],
    method: Method,
    lr: f64,
    cfg: &SolverConfig,
) -> (f64, Vec<f64>, usize) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best = (f64::INFINITY, x.clone());
    let mut stale = 0;
    let mut steps = 0;
    let fixed = fixed_survival(spec, dist);
    for step in 1..=cfg.max_steps {
        steps = step;
        let (f, g) = gradient_with_fixed(spec, dist, &x, &fixed);
        if f < best.0 {
            best = (f, x.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        if !f.is_finite() || g.iter().any(|gi| !gi.is_finite()) || stale >= cfg.patience {
            break;
        }
        match method {
            Method::MomentumGd { beta } => {
                for i in 0..n {
                    m[i] = beta * m[i] + g[i];
                    x[i] -= lr * m[i];
                }
            }
            Method::Adam { beta1, beta2 } => {
                let c1 = 1.0 - beta1.powi(step as i32);
                let c2 = 1.0 - beta2.powi(step as i32);
                for i in 0..n {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
    if steps == cfg.max_steps {
        let f = reformulated_objective(spec, dist, &x);
        if f < best.0 {
            best = (f, x);
        }
    }
    (best.0, best.1, steps)
}

/// Initial softplus parameters: the first free increment reaches `anchor`
/// and later increments are `1/(s+1)` fractions of it.
fn initial_params(spec: &ProblemSpec, anchor: &[f64]) -> Vec<f64> {
    let current = spec.current();
    let first: Vec<f64> = anchor
        .iter()
        .zip(current)
        .map(|(a, c)| {
            let floor = 1e-3 * a.abs().max(c.abs()).max(1e-6);
            (a - c).max(floor)
        })
        .collect();
    let mut x = Vec::with_capacity(spec.free_rounds() * first.len());
    for s in 0..spec.free_rounds() {
        x.extend(first.iter().map(|d| softplus_inverse(d / (s + 1) as f64)));
    }
    x
}

fn round_up(spec: &ProblemSpec, schedule: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = spec.frozen_prefix.len();
    let mut out = spec.frozen_prefix.clone();
    let mut prev = spec.current().to_vec();
    for q in &schedule[m..] {
        let next: Vec<f64> = q.iter().zip(&prev).map(|(a, p)| a.ceil().max(*p)).collect();
        out.push(next.clone());
        prev = next;
    }
    out
}

/// Minimize the expected cost over the free rounds of `spec`.
///
/// Every (method, learning rate) pair of the grid runs from the same start;
/// the trial with the lowest objective wins, ties going to the smaller
/// learning rate. `anchor` is the point estimate used for initialization;
/// without one the distribution's center is used.
pub fn solve_plan(
    spec: &ProblemSpec,
    dist: &dyn RequirementCdf,
    cfg: &SolverConfig,
    anchor: Option<&[f64]>,
) -> Result<SolvedPlan, PlannerError> {
    spec.validate()?;
    cfg.validate()?;
    if dist.dimension() != spec.dimension() {
        return Err(PlannerError::Dimension {
            expected: spec.dimension(),
            got: dist.dimension(),
        });
    }
    let anchor = match anchor {
        Some(a) if a.len() == spec.dimension() && a.iter().all(|v| v.is_finite()) => a.to_vec(),
        Some(a) => {
            return Err(PlannerError::Dimension {
                expected: spec.dimension(),
                got: a.len(),
            })
        }
        None => dist.center(),
    };
    let x0 = initial_params(spec, &anchor);
    let f0 = reformulated_objective(spec, dist, &x0);
    let grid: Vec<(Method, f64)> = cfg
        .methods
        .iter()
        .flat_map(|m| cfg.learning_rates.iter().map(move |lr| (*m, *lr)))
        .collect();
    let results: Vec<(f64, Vec<f64>, usize)> = grid
        .par_iter()
        .map(|(m, lr)| run_trial(spec, dist, &x0, *m, *lr, cfg))
        .collect();
    let chosen = (0..grid.len())
        .filter(|&i| results[i].0.is_finite())
        .min_by(|&a, &b| {
            results[a]
                .0
                .total_cmp(&results[b].0)
                .then(grid[a].1.total_cmp(&grid[b].1))
                .then(a.cmp(&b))
        });
    let trials = grid
        .iter()
        .zip(&results)
        .map(|((m, lr), (f, _, steps))| TrialSummary {
            method: *m,
            learning_rate: *lr,
            best_objective: *f,
            steps: *steps,
        })
        .collect();
    let (x, objective, chosen, no_improvement) = match chosen {
        Some(i) if results[i].0 < f0 => (results[i].1.clone(), results[i].0, Some(i), false),
        _ => (x0, f0, None, true),
    };
    if no_improvement {
        log::debug!("no optimizer trial improved on the initial plan");
    }
    let schedule = schedule_from_params(spec, &x);
    let rounded = round_up(spec, &schedule);
    let plan = CollectionPlan::new(schedule, spec)?;
    let rounded = CollectionPlan::new(rounded, spec)?;
    let rounded_objective = super::expected_cost(&rounded, spec, dist);
    Ok(SolvedPlan {
        plan,
        objective,
        rounded,
        rounded_objective,
        diagnostics: SolveDiagnostics {
            initial_objective: f0,
            trials,
            chosen,
            no_improvement,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::test_support::Exponential;

    fn exp_spec(c: f64, p: f64, t: usize) -> ProblemSpec {
        ProblemSpec::new(0.0, vec![c], p, t, vec![0.0]).unwrap()
    }

    #[test]
    fn one_round_exponential_matches_closed_form() {
        let d = Exponential { dim: 1, rate: 1.0 };
        let out = solve_plan(&exp_spec(1.0, 10.0, 1), &d, &SolverConfig::default(), None).unwrap();
        let q1 = out.plan.final_amount()[0];
        assert!((q1 - 10f64.ln()).abs() < 1e-3, "{q1}");
        assert!(!out.diagnostics.no_improvement);
        assert_eq!(out.rounded.final_amount()[0], 3.0);
    }

    #[test]
    fn tiny_penalty_collapses_plan() {
        let d = Exponential { dim: 1, rate: 1.0 };
        let out = solve_plan(&exp_spec(1.0, 1e-6, 3), &d, &SolverConfig::default(), Some(&[2.0])).unwrap();
        for q in out.plan.schedule() {
            assert!(q[0] < 1e-3, "{q:?}");
        }
    }

    #[test]
    fn larger_penalty_collects_more() {
        let d = Exponential { dim: 1, rate: 1.0 };
        let cfg = SolverConfig::default();
        let mut last = 0.0;
        for p in [5.0, 50.0, 500.0, 5000.0] {
            let out = solve_plan(&exp_spec(1.0, p, 3), &d, &cfg, None).unwrap();
            let q_t = out.plan.final_amount()[0];
            assert!(q_t >= last - 1e-6, "P={p}: {q_t} < {last}");
            last = q_t;
        }
    }

    #[test]
    fn rescaling_cost_and_penalty_keeps_the_plan() {
        let d = Exponential { dim: 1, rate: 0.5 };
        let cfg = SolverConfig::default();
        let a = solve_plan(&exp_spec(1.0, 100.0, 2), &d, &cfg, None).unwrap();
        let b = solve_plan(&exp_spec(3.0, 300.0, 2), &d, &cfg, None).unwrap();
        for (qa, qb) in a.plan.schedule().iter().zip(b.plan.schedule()) {
            assert!((qa[0] - qb[0]).abs() < 1e-2 * qa[0].max(1.0), "{qa:?} vs {qb:?}");
        }
    }

    #[test]
    fn plans_are_monotone_and_rounding_goes_up() {
        let d = Exponential { dim: 2, rate: 0.1 };
        let spec = ProblemSpec::new(0.0, vec![1.0, 2.0], 1e3, 3, vec![1.0, 1.0]).unwrap();
        let out = solve_plan(&spec, &d, &SolverConfig::default(), None).unwrap();
        let mut prev = spec.q0.clone();
        for (q, r) in out.plan.schedule().iter().zip(out.rounded.schedule()) {
            for j in 0..2 {
                assert!(q[j] >= prev[j]);
                assert!(r[j] >= q[j] && r[j] == r[j].ceil());
            }
            prev = q.clone();
        }
    }

    #[test]
    fn no_improvement_returns_initialization() {
        let d = Exponential { dim: 1, rate: 1.0 };
        // Every step overshoots far past the optimum.
        let cfg = SolverConfig {
            learning_rates: vec![1e6],
            max_steps: 5,
            ..SolverConfig::default()
        };
        let out = solve_plan(&exp_spec(1.0, 10.0, 1), &d, &cfg, Some(&[1.0])).unwrap();
        assert!(out.diagnostics.no_improvement);
        assert!((out.plan.final_amount()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_grid() {
        let d = Exponential { dim: 1, rate: 1.0 };
        let cfg = SolverConfig {
            learning_rates: vec![],
            ..SolverConfig::default()
        };
        assert!(solve_plan(&exp_spec(1.0, 10.0, 1), &d, &cfg, None).is_err());
    }
}
