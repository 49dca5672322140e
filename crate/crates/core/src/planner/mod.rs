//! Expected-cost objective over multi-round collection plans and its solvers.
//!
//! A plan `q_1 ≤ … ≤ q_T` pays `cᵀ(q_t − q_{t−1})` for each round that starts
//! below the requirement and a penalty `P` if the last round still falls
//! short. Its expectation under a requirement distribution `F` is
//! `Σ_t cᵀ(q_t − q_{t−1})(1 − F(q_{t−1})) + P(1 − F(q_T))`.

mod analytic;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::RequirementCdf;

pub use analytic::{analytic_one_round, OneRound};
pub use solve::{solve_plan, Method, SolveDiagnostics, SolvedPlan, SolverConfig, TrialSummary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// One planning problem. `frozen_prefix` holds the rounds already executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub target: f64,
    pub costs: Vec<f64>,
    pub penalty: f64,
    pub horizon: usize,
    pub q0: Vec<f64>,
    #[serde(default)]
    pub frozen_prefix: Vec<Vec<f64>>,
}

fn is_monotone_from(start: &[f64], steps: &[Vec<f64>]) -> bool {
    let mut prev = start;
    for q in steps {
        if q.len() != start.len() || q.iter().zip(prev).any(|(a, b)| !(a >= b) || !a.is_finite()) {
            return false;
        }
        prev = q;
    }
    true
}

impl ProblemSpec {
    pub fn new(target: f64, costs: Vec<f64>, penalty: f64, horizon: usize, q0: Vec<f64>) -> Result<Self, PlannerError> {
        let spec = Self {
            target,
            costs,
            penalty,
            horizon,
            q0,
            frozen_prefix: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidSpec(m.into()));
        if self.costs.is_empty() || self.costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return bad("costs must be positive");
        }
        if self.q0.len() != self.costs.len() {
            return Err(PlannerError::Dimension {
                expected: self.costs.len(),
                got: self.q0.len(),
            });
        }
        if self.q0.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
            return bad("q0 must be non-negative");
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return bad("penalty must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !self.target.is_finite() {
            return bad("target must be finite");
        }
        if self.frozen_prefix.len() >= self.horizon {
            return bad("frozen prefix must leave at least one free round");
        }
        if !is_monotone_from(&self.q0, &self.frozen_prefix) {
            return bad("frozen prefix must be non-decreasing from q0");
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.costs.len()
    }

    /// The last fixed amount: the end of the frozen prefix, or `q0`.
    pub fn current(&self) -> &[f64] {
        self.frozen_prefix.last().unwrap_or(&self.q0)
    }

    pub fn free_rounds(&self) -> usize {
        self.horizon - self.frozen_prefix.len()
    }
}

/// Cumulative amounts `q_1..q_T`, non-decreasing from `q0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionPlan {
    schedule: Vec<Vec<f64>>,
}

impl CollectionPlan {
    pub fn new(schedule: Vec<Vec<f64>>, spec: &ProblemSpec) -> Result<Self, PlannerError> {
        if schedule.len() != spec.horizon {
            return Err(PlannerError::InvalidPlan(format!(
                "expected {} rounds, got {}",
                spec.horizon,
                schedule.len()
            )));
        }
        if !is_monotone_from(&spec.q0, &schedule) {
            return Err(PlannerError::InvalidPlan("schedule must be non-decreasing from q0".into()));
        }
        if schedule[..spec.frozen_prefix.len()] != spec.frozen_prefix[..] {
            return Err(PlannerError::InvalidPlan("schedule must start with the frozen prefix".into()));
        }
        Ok(Self { schedule })
    }

    pub fn schedule(&self) -> &[Vec<f64>] {
        &self.schedule
    }

    pub fn final_amount(&self) -> &[f64] {
        &self.schedule[self.schedule.len() - 1]
    }
}

fn increment_cost(costs: &[f64], from: &[f64], to: &[f64]) -> f64 {
    costs.iter().zip(from).zip(to).map(|((c, a), b)| c * (b - a)).sum()
}

/// Whether `q` has not yet reached `d_star` in every coordinate.
fn short_of(q: &[f64], d_star: &[f64]) -> bool {
    q.iter().zip(d_star).any(|(a, b)| a < b)
}

/// Loss actually paid by `plan` when the requirement is `d_star`.
pub fn realized_loss(plan: &CollectionPlan, spec: &ProblemSpec, d_star: &[f64]) -> f64 {
    let mut prev = spec.q0.as_slice();
    let mut total = 0.0;
    for q in plan.schedule() {
        if short_of(prev, d_star) {
            total += increment_cost(&spec.costs, prev, q);
        }
        prev = q;
    }
    if short_of(prev, d_star) {
        total += spec.penalty;
    }
    total
}

/// Objective over `q0, q_1, …, q_T`. Shared by every evaluation path.
pub(crate) fn objective_over(points: &[&[f64]], costs: &[f64], penalty: f64, dist: &dyn RequirementCdf) -> f64 {
    objective_with(points, costs, penalty, |i| dist.survival(points[i]))
}

/// Objective with `survival(i)` supplying `S(points[i])`.
fn objective_with(points: &[&[f64]], costs: &[f64], penalty: f64, mut survival: impl FnMut(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for (i, w) in points.windows(2).enumerate() {
        let inc = increment_cost(costs, w[0], w[1]);
        if inc != 0.0 {
            total += inc * survival(i);
        }
    }
    total + penalty * survival(points.len() - 1)
}

/// Expected loss of `plan` when the requirement follows `dist`.
pub fn expected_cost(plan: &CollectionPlan, spec: &ProblemSpec, dist: &dyn RequirementCdf) -> f64 {
    let mut points: Vec<&[f64]> = Vec::with_capacity(plan.schedule().len() + 1);
    points.push(&spec.q0);
    points.extend(plan.schedule().iter().map(Vec::as_slice));
    objective_over(&points, &spec.costs, spec.penalty, dist)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `d > 0`: `ln(e^d − 1)`.
pub fn softplus_inverse(d: f64) -> f64 {
    d + (-(-d).exp_m1()).ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rebuild the full schedule from the frozen prefix and free softplus
/// parameters laid out round-major (`free_rounds × K`).
pub(crate) fn schedule_from_params(spec: &ProblemSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let k = spec.dimension();
    let mut schedule = spec.frozen_prefix.clone();
    let mut prev = spec.current().to_vec();
    for chunk in x.chunks(k) {
        let next: Vec<f64> = prev.iter().zip(chunk).map(|(p, xi)| p + softplus(*xi)).collect();
        schedule.push(next.clone());
        prev = next;
    }
    schedule
}

/// Objective of the unconstrained reformulation at softplus parameters `x`.
pub fn reformulated_objective(spec: &ProblemSpec, dist: &dyn RequirementCdf, x: &[f64]) -> f64 {
    let schedule = schedule_from_params(spec, x);
    let mut points: Vec<&[f64]> = Vec::with_capacity(schedule.len() + 1);
    points.push(&spec.q0);
    points.extend(schedule.iter().map(Vec::as_slice));
    objective_over(&points, &spec.costs, spec.penalty, dist)
}

/// Objective and its gradient with respect to the free softplus parameters.
pub fn reformulated_gradient(spec: &ProblemSpec, dist: &dyn RequirementCdf, x: &[f64]) -> (f64, Vec<f64>) {
    gradient_with_fixed(spec, dist, x, &fixed_survival(spec, dist))
}

/// Survival at `q0` and at every frozen round; constant during a solve.
pub(crate) fn fixed_survival(spec: &ProblemSpec, dist: &dyn RequirementCdf) -> Vec<f64> {
    std::iter::once(&spec.q0)
        .chain(&spec.frozen_prefix)
        .map(|q| dist.survival(q))
        .collect()
}

pub(crate) fn gradient_with_fixed(
    spec: &ProblemSpec,
    dist: &dyn RequirementCdf,
    x: &[f64],
    fixed: &[f64],
) -> (f64, Vec<f64>) {
    let k = spec.dimension();
    let m = spec.frozen_prefix.len();
    let schedule = schedule_from_params(spec, x);
    let mut points: Vec<&[f64]> = Vec::with_capacity(schedule.len() + 1);
    points.push(&spec.q0);
    points.extend(schedule.iter().map(Vec::as_slice));
    let mut cached: Vec<Option<f64>> = fixed.iter().map(|s| Some(*s)).collect();
    cached.resize(points.len(), None);
    let mut survival_at = |i: usize| *cached[i].get_or_insert_with(|| dist.survival(points[i]));
    let value = objective_with(&points, &spec.costs, spec.penalty, &mut survival_at);
    let t_max = spec.horizon;
    // Free round r (1-based, r > m) moves q_r..q_T. Its gradient is
    // c S(q_{r-1}) - Σ_{s=r}^{T-1} cᵀd_{s+1} ∇F(q_s) - P ∇F(q_T).
    let survival: Vec<f64> = (m..t_max).map(survival_at).collect();
    let grad_f: Vec<Vec<f64>> = (m + 1..=t_max).map(|s| dist.cdf_gradient(points[s])).collect();
    let step_cost: Vec<f64> = (m + 1..=t_max)
        .map(|s| increment_cost(&spec.costs, points[s - 1], points[s]))
        .collect();
    let mut tail = vec![0.0; k];
    let last = &grad_f[grad_f.len() - 1];
    for j in 0..k {
        tail[j] = -spec.penalty * last[j];
    }
    let mut grad = vec![0.0; x.len()];
    for r in (m + 1..=t_max).rev() {
        // tail holds the terms for s = r..T at this point; add s = r now.
        if r < t_max {
            let gf = &grad_f[r - m - 1];
            let next_cost = step_cost[r - m];
            for j in 0..k {
                tail[j] -= next_cost * gf[j];
            }
        }
        let s_prev = survival[r - 1 - m];
        for j in 0..k {
            let idx = (r - m - 1) * k + j;
            grad[idx] = (spec.costs[j] * s_prev + tail[j]) * sigmoid(x[idx]);
        }
    }
    (value, grad)
}

/// Softplus parameters reproducing the free part of `plan`.
/// Zero increments map to `-inf` and are clamped to a very negative value.
pub fn params_from_plan(plan: &CollectionPlan, spec: &ProblemSpec) -> Vec<f64> {
    let m = spec.frozen_prefix.len();
    let mut prev = spec.current();
    let mut x = Vec::new();
    for q in &plan.schedule()[m..] {
        for (a, b) in q.iter().zip(prev) {
            let d = a - b;
            x.push(if d > 0.0 { softplus_inverse(d) } else { -745.0 });
        }
        prev = q;
    }
    x
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// `F(q) = 1 − e^{−q}` on `q ≥ 0`, with a product extension to several coordinates.
    pub struct Exponential {
        pub dim: usize,
        pub rate: f64,
    }

    impl RequirementCdf for Exponential {
        fn dimension(&self) -> usize {
            self.dim
        }
        fn pdf(&self, q: &[f64]) -> f64 {
            q.iter()
                .map(|x| if *x < 0.0 { 0.0 } else { self.rate * (-self.rate * x).exp() })
                .product()
        }
        fn cdf(&self, q: &[f64]) -> f64 {
            q.iter().map(|x| if *x < 0.0 { 0.0 } else { -(-self.rate * x).exp_m1() }).product()
        }
        fn survival(&self, q: &[f64]) -> f64 {
            if self.dim == 1 {
                if q[0] < 0.0 {
                    1.0
                } else {
                    (-self.rate * q[0]).exp()
                }
            } else {
                1.0 - self.cdf(q)
            }
        }
        fn cdf_gradient(&self, q: &[f64]) -> Vec<f64> {
            (0..self.dim)
                .map(|j| {
                    q.iter()
                        .enumerate()
                        .map(|(i, x)| {
                            if *x < 0.0 {
                                0.0
                            } else if i == j {
                                self.rate * (-self.rate * x).exp()
                            } else {
                                -(-self.rate * x).exp_m1()
                            }
                        })
                        .product()
                })
                .collect()
        }
        fn support_bracket(&self) -> (f64, f64) {
            (0.0, 40.0 / self.rate)
        }
        fn center(&self) -> Vec<f64> {
            vec![std::f64::consts::LN_2 / self.rate; self.dim]
        }
    }

    /// Uniform on `[0, 1]`.
    pub struct Uniform;

    impl RequirementCdf for Uniform {
        fn dimension(&self) -> usize {
            1
        }
        fn pdf(&self, q: &[f64]) -> f64 {
            if (0.0..=1.0).contains(&q[0]) {
                1.0
            } else {
                0.0
            }
        }
        fn cdf(&self, q: &[f64]) -> f64 {
            q[0].clamp(0.0, 1.0)
        }
        fn cdf_gradient(&self, q: &[f64]) -> Vec<f64> {
            vec![self.pdf(q)]
        }
        fn support_bracket(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn center(&self) -> Vec<f64> {
            vec![0.5]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::density::{fit_gmm, GmmComponent, Kde, RequirementDistribution};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn spec1(c: f64, p: f64, t: usize, q0: f64) -> ProblemSpec {
        ProblemSpec::new(10.0, vec![c], p, t, vec![q0]).unwrap()
    }

    fn plan(spec: &ProblemSpec, qs: &[f64]) -> CollectionPlan {
        CollectionPlan::new(qs.iter().map(|q| vec![*q]).collect(), spec).unwrap()
    }

    /// Loss from the recursive definition: each round's cost is paid only
    /// while every earlier round fell short.
    fn recursive_loss(plan: &CollectionPlan, spec: &ProblemSpec, d_star: &[f64]) -> f64 {
        fn go(t: usize, prev: &[f64], plan: &CollectionPlan, spec: &ProblemSpec, d: &[f64]) -> f64 {
            if !short_of(prev, d) {
                return 0.0;
            }
            if t == plan.schedule().len() {
                return spec.penalty;
            }
            let q = &plan.schedule()[t];
            increment_cost(&spec.costs, prev, q) + go(t + 1, q, plan, spec, d)
        }
        go(0, &spec.q0, plan, spec, d_star)
    }

    #[test]
    fn realized_loss_examples() {
        let spec = ProblemSpec::new(0.0, vec![1.0], 5.0, 2, vec![0.0]).unwrap();
        let p = plan(&spec, &[3.0, 7.0]);
        assert_eq!(realized_loss(&p, &spec, &[5.0]), 7.0);
        assert_eq!(recursive_loss(&p, &spec, &[5.0]), 7.0);
        let stay = plan(&spec, &[0.0, 0.0]);
        assert_eq!(realized_loss(&stay, &spec, &[0.0]), 0.0);
        assert_eq!(realized_loss(&p, &spec, &[8.0]), 12.0);
    }

    #[test]
    fn expected_cost_with_uniform_requirement() {
        let spec = ProblemSpec::new(0.0, vec![1.0], 2.0, 1, vec![0.0]).unwrap();
        let p = plan(&spec, &[0.5]);
        assert!((expected_cost(&p, &spec, &Uniform) - 1.5).abs() < 1e-15);
        // Monte-Carlo oracle over U(0,1).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let l = realized_loss(&p, &spec, &[rng.random::<f64>()]);
            s += l;
            s2 += l * l;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.5).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn expected_cost_limits() {
        let far = RequirementDistribution::from_kde(Kde::new(vec![1e9], 1.0).unwrap());
        let spec = spec1(2.0, 7.0, 3, 1.0);
        let p = plan(&spec, &[2.0, 4.0, 9.0]);
        assert!((expected_cost(&p, &spec, &far) - (2.0 * 8.0 + 7.0)).abs() < 1e-12);
        let flat = plan(&spec, &[1.0, 1.0, 1.0]);
        let d = Exponential { dim: 1, rate: 1.0 };
        assert!((expected_cost(&flat, &spec, &d) - 7.0 * (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        for i in 0..=600 {
            let x = -30.0 + 0.1 * i as f64;
            assert!((softplus_inverse(softplus(x)) - x).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn plan_validation() {
        let spec = spec1(1.0, 1.0, 2, 5.0);
        assert!(CollectionPlan::new(vec![vec![4.0], vec![6.0]], &spec).is_err());
        assert!(CollectionPlan::new(vec![vec![7.0], vec![6.0]], &spec).is_err());
        assert!(CollectionPlan::new(vec![vec![7.0]], &spec).is_err());
        assert!(ProblemSpec::new(1.0, vec![1.0], 0.0, 1, vec![0.0]).is_err());
        assert!(ProblemSpec::new(1.0, vec![1.0], 1.0, 0, vec![0.0]).is_err());
    }

    #[test]
    fn frozen_terms_have_zero_gradient_but_count_in_value() {
        let mut spec = spec1(1.0, 10.0, 3, 0.0);
        spec.frozen_prefix = vec![vec![0.5]];
        spec.validate().unwrap();
        let d = Exponential { dim: 1, rate: 1.0 };
        let x = [0.3, -0.2];
        let (v, g) = reformulated_gradient(&spec, &d, &x);
        assert_eq!(g.len(), 2);
        let full = plan(&spec, &[0.5, 0.5 + softplus(0.3), 0.5 + softplus(0.3) + softplus(-0.2)]);
        assert_eq!(v, expected_cost(&full, &spec, &d));
    }

    fn gmm2() -> RequirementDistribution {
        RequirementDistribution::from_components(vec![
            GmmComponent {
                weight: 0.4,
                mean: vec![3.0, 5.0],
                variance: vec![1.0, 2.0],
            },
            GmmComponent {
                weight: 0.6,
                mean: vec![6.0, 2.0],
                variance: vec![0.5, 1.5],
            },
        ])
        .unwrap()
    }

    fn check_gradient(spec: &ProblemSpec, dist: &dyn RequirementCdf, x: &[f64]) {
        let (_, g) = reformulated_gradient(spec, dist, x);
        for i in 0..x.len() {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let num = (reformulated_objective(spec, dist, &xp) - reformulated_objective(spec, dist, &xm)) / (2.0 * h);
            let scale = g[i].abs().max(num.abs()).max(1e-3);
            assert!((g[i] - num).abs() <= 1e-5 * scale, "i={i} analytic {} numeric {num}", g[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_matches_recursion(qs in prop::collection::vec(0.0f64..5.0, 1..6), d in 0.0f64..20.0,
                                         q0 in 0.0f64..3.0) {
            let mut acc = q0;
            let sched: Vec<f64> = qs.iter().map(|s| { acc += s; acc }).collect();
            let spec = spec1(1.5, 40.0, sched.len(), q0);
            let p = plan(&spec, &sched);
            let (a, b) = (realized_loss(&p, &spec, &[d]), recursive_loss(&p, &spec, &[d]));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
        }

        #[test]
        fn reformulation_is_the_same_arithmetic(xs in prop::collection::vec(-5.0f64..5.0, 1..6)) {
            let spec = spec1(1.0, 25.0, xs.len(), 0.2);
            let d = Exponential { dim: 1, rate: 0.7 };
            let sched = schedule_from_params(&spec, &xs);
            let p = CollectionPlan::new(sched, &spec).unwrap();
            let a = expected_cost(&p, &spec, &d);
            let b = reformulated_objective(&spec, &d, &params_from_plan(&p, &spec));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn kde_gradient_matches_differences(xs in prop::collection::vec(-2.0f64..3.0, 1..=5)) {
            let kde = RequirementDistribution::from_kde(Kde::new(vec![2.0, 3.5, 4.0, 7.0], 0.8).unwrap());
            let spec = spec1(1.0, 50.0, xs.len(), 0.5);
            check_gradient(&spec, &kde, &xs);
        }

        #[test]
        fn gmm_gradient_matches_differences(xs in prop::collection::vec(-2.0f64..2.0, 2..=10)) {
            let n = xs.len() / 2 * 2;
            let spec = ProblemSpec::new(0.0, vec![1.0, 2.0], 80.0, n / 2, vec![1.0, 0.5]).unwrap();
            check_gradient(&spec, &gmm2(), &xs[..n]);
        }
    }

    #[test]
    fn fitted_gmm_backend_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..200).map(|i| {
            let base = if i % 2 == 0 { 3.0 } else { 8.0 };
            vec![base + rng.random::<f64>(), 10.0 - base + rng.random::<f64>()]
        }).collect();
        let d = fit_gmm(&pts, &[1, 2, 3], 1).unwrap();
        let spec = ProblemSpec::new(0.0, vec![1.0, 1.0], 30.0, 3, vec![0.0, 0.0]).unwrap();
        check_gradient(&spec, &d, &[1.0, 0.5, 0.2, -0.3, 0.7, 0.1]);
    }
}
