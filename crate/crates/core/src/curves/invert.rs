use rand::Rng;

use super::{power_term, CurveError, CurveFamily, RegressionModel};
use crate::rng::{stream, substream};

/// Outcome of inverting a fitted curve at a target score.
#[derive(Debug, Clone, PartialEq)]
pub enum Inversion {
    /// Cheapest size vector reaching the target. `non_monotone` is set when
    /// the curve decreases somewhere on the searched range.
    Reached { sizes: Vec<f64>, non_monotone: bool },
    /// No size vector inside the box reaches the target.
    Unreachable,
}

impl Inversion {
    pub fn sizes(&self) -> Option<&[f64]> {
        match self {
            Self::Reached { sizes, .. } => Some(sizes),
            Self::Unreachable => None,
        }
    }

    pub fn is_reached(&self) -> bool {
        matches!(self, Self::Reached { .. })
    }
}

const SCAN_POINTS: usize = 256;
const BISECTION_REL_TOL: f64 = 1e-9;

/// Smallest-cost size vector `q ∈ [0, q_max]` with `v̂(q) ≥ target`.
///
/// Equal-cost ties between candidate solutions are broken with tie seed 0;
/// see [`invert_curve_seeded`].
pub fn invert_curve(
    model: &RegressionModel,
    target: f64,
    costs: &[f64],
    q_max: &[f64],
) -> Result<Inversion, CurveError> {
    invert_curve_seeded(model, target, costs, q_max, 0)
}

/// [`invert_curve`] with an explicit seed for choosing among equal-cost
/// candidates in the multi-source search.
pub fn invert_curve_seeded(
    model: &RegressionModel,
    target: f64,
    costs: &[f64],
    q_max: &[f64],
    tie_seed: u64,
) -> Result<Inversion, CurveError> {
    let k = model.source_count();
    if costs.len() != k {
        return Err(CurveError::Dimension {
            expected: k,
            got: costs.len(),
        });
    }
    if q_max.len() != k {
        return Err(CurveError::Dimension {
            expected: k,
            got: q_max.len(),
        });
    }
    if !target.is_finite() {
        return Err(CurveError::InvalidArgument("target must be finite".into()));
    }
    if costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(CurveError::InvalidArgument("costs must be positive".into()));
    }
    if q_max.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
        return Err(CurveError::InvalidArgument("q_max must be positive".into()));
    }
    match model.family() {
        CurveFamily::PowerLaw => Ok(invert_power_law(model.theta(), target, q_max[0])),
        CurveFamily::AdditivePowerLaw(_) => Ok(invert_additive(model.theta(), target, costs, q_max, tie_seed)),
        family => Ok(invert_by_bisection(
            |q| family.eval_raw(model.theta(), &[q]),
            target,
            q_max[0],
        )),
    }
}

fn reached(q: f64, non_monotone: bool) -> Inversion {
    Inversion::Reached {
        sizes: vec![q],
        non_monotone,
    }
}

/// Closed-form inversion of `θ0 q^θ1 + θ2`.
fn invert_power_law(theta: &[f64], target: f64, q_max: f64) -> Inversion {
    let (a, b, bias) = (theta[0], theta[1], theta[2]);
    let eval = |q: f64| power_term(a, b, q).map(|v| v + bias);
    if a == 0.0 || b == 0.0 {
        // Constant curve.
        let level = if a == 0.0 { bias } else { a + bias };
        return if level >= target {
            reached(0.0, false)
        } else {
            Inversion::Unreachable
        };
    }
    let increasing = a * b > 0.0;
    if !increasing {
        // Decreasing: the smallest amount is the infimum of the feasible set.
        let start = if b > 0.0 { Some(bias) } else { None };
        return match start {
            Some(v0) if v0 >= target => reached(0.0, true),
            Some(_) => Inversion::Unreachable,
            // a > 0, b < 0: unbounded above near zero.
            None => reached(0.0, true),
        };
    }
    if b > 0.0 && bias >= target {
        return reached(0.0, false);
    }
    let ratio = (target - bias) / a;
    if ratio <= 0.0 {
        // a < 0, b < 0 with the target at or above the asymptote.
        return Inversion::Unreachable;
    }
    let mut q = ratio.powf(1.0 / b);
    if !q.is_finite() || q > q_max {
        return Inversion::Unreachable;
    }
    // Guard against round-off leaving the closed form a hair short.
    let mut guard = 0;
    while eval(q).is_none_or(|v| v < target) && guard < 64 {
        q = (q * (1.0 + 4.0 * f64::EPSILON)).max(f64::MIN_POSITIVE);
        guard += 1;
    }
    if q > q_max {
        return Inversion::Unreachable;
    }
    reached(q, false)
}

/// Scan a log-spaced bracket grid on `[0, q_max]` for the first point
/// reaching the target, then bisect to a relative width of 1e-9.
pub(crate) fn invert_by_bisection<F>(eval: F, target: f64, q_max: f64) -> Inversion
where
    F: Fn(f64) -> Option<f64>,
{
    let mut grid = Vec::with_capacity(SCAN_POINTS + 1);
    grid.push(0.0);
    let lo_exp = (q_max * 1e-12).ln();
    let hi_exp = q_max.ln();
    for i in 0..SCAN_POINTS {
        let t = i as f64 / (SCAN_POINTS - 1) as f64;
        grid.push((lo_exp + t * (hi_exp - lo_exp)).exp());
    }
    *grid.last_mut().expect("grid is non-empty") = q_max;

    let values: Vec<Option<f64>> = grid.iter().map(|&q| eval(q)).collect();
    let mut non_monotone = false;
    let mut prev: Option<f64> = None;
    for v in values.iter().flatten() {
        if let Some(p) = prev {
            if *v < p - 1e-12 * p.abs().max(1.0) {
                non_monotone = true;
            }
        }
        prev = Some(*v);
    }
    let Some(first) = values.iter().position(|v| v.is_some_and(|v| v >= target)) else {
        return Inversion::Unreachable;
    };
    if first == 0 {
        return reached(0.0, non_monotone);
    }
    let (mut lo, mut hi) = (grid[first - 1], grid[first]);
    for _ in 0..200 {
        if hi - lo <= BISECTION_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eval(mid).is_some_and(|v| v >= target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    reached(hi, non_monotone)
}

/// Per-source term `a q^b` of the additive model.
#[derive(Debug, Clone, Copy)]
struct Term {
    a: f64,
    b: f64,
    lo: f64,
    hi: f64,
    cost: f64,
}

impl Term {
    fn value(&self, q: f64) -> f64 {
        power_term(self.a, self.b, q).unwrap_or(f64::NEG_INFINITY)
    }

    fn sup(&self) -> f64 {
        self.value(self.lo).max(self.value(self.hi))
    }

    /// Minimizer of `cost q - λ a q^b` on `[lo, hi]`.
    fn best_response(&self, lambda: f64) -> f64 {
        let objective = |q: f64| self.cost * q - lambda * self.value(q);
        let mut candidates = vec![self.lo, self.hi];
        let ab = self.a * self.b;
        if ab > 0.0 && self.b != 1.0 {
            let q = (self.cost / (lambda * ab)).powf(1.0 / (self.b - 1.0));
            if q.is_finite() && q > self.lo && q < self.hi {
                candidates.push(q);
            }
        }
        candidates
            .into_iter()
            .map(|q| (objective(q), q))
            .filter(|(v, _)| !v.is_nan())
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
            .map_or(self.hi, |(_, q)| q)
    }
}

/// Multi-source inversion of the additive power law.
///
/// The problem `min cᵀq s.t. v̂(q) ≥ target` is separable, so for a
/// multiplier λ each source solves `min c_k q_k - λ g_k(q_k)` in closed form
/// and λ is bisected until the target is just met. The result is polished by
/// coordinate bisection and compared with single-source solutions, which
/// cover the non-concave cases where the multiplier path jumps.
fn invert_additive(theta: &[f64], target: f64, costs: &[f64], q_max: &[f64], tie_seed: u64) -> Inversion {
    let k = costs.len();
    let bias = theta[2 * k];
    let terms: Vec<Term> = (0..k)
        .map(|j| {
            let b = theta[2 * j + 1];
            let lo = if b < 0.0 && theta[2 * j] != 0.0 { q_max[j] * 1e-12 } else { 0.0 };
            Term {
                a: theta[2 * j],
                b,
                lo,
                hi: q_max[j],
                cost: costs[j],
            }
        })
        .collect();
    let value = |q: &[f64]| bias + terms.iter().zip(q).map(|(t, &x)| t.value(x)).sum::<f64>();
    let cost = |q: &[f64]| costs.iter().zip(q).map(|(c, x)| c * x).sum::<f64>();
    let feasible = |q: &[f64]| value(q) >= target;

    let sup = bias + terms.iter().map(Term::sup).sum::<f64>();
    if !(sup >= target) {
        return Inversion::Unreachable;
    }
    let lows: Vec<f64> = terms.iter().map(|t| t.lo).collect();
    let non_monotone = terms.iter().any(|t| t.a * t.b < 0.0);
    if feasible(&lows) {
        return Inversion::Reached {
            sizes: lows,
            non_monotone,
        };
    }

    let respond = |lambda: f64| -> Vec<f64> { terms.iter().map(|t| t.best_response(lambda)).collect() };
    let mut candidates: Vec<Vec<f64>> = Vec::new();

    // Multiplier path.
    let mut hi = 1.0f64;
    let mut found = false;
    for _ in 0..600 {
        if feasible(&respond(hi)) {
            found = true;
            break;
        }
        hi *= 4.0;
        if !hi.is_finite() {
            break;
        }
    }
    if found {
        let mut lo = hi;
        while lo > 1e-300 && feasible(&respond(lo)) {
            lo /= 4.0;
        }
        if !feasible(&respond(lo)) {
            let (mut l, mut h) = (lo.ln(), hi.ln());
            for _ in 0..200 {
                let mid = 0.5 * (l + h);
                if feasible(&respond(mid.exp())) {
                    h = mid;
                } else {
                    l = mid;
                }
            }
            hi = h.exp();
        }
        let mut q = respond(hi);
        polish(&mut q, &lows, &feasible);
        candidates.push(q);
    }

    // Single-source solutions with the others at their lower bounds.
    for j in 0..k {
        let mut q = lows.clone();
        q[j] = terms[j].hi;
        if feasible(&q) {
            polish(&mut q, &lows, &feasible);
            candidates.push(q);
        }
    }

    // Every candidate is feasible; the full box always is.
    if candidates.is_empty() {
        candidates.push(q_max.to_vec());
    }
    let best = candidates
        .iter()
        .map(|q| cost(q))
        .fold(f64::INFINITY, f64::min);
    let ties: Vec<&Vec<f64>> = candidates
        .iter()
        .filter(|q| cost(q) <= best + 1e-12 * best.abs().max(1.0))
        .collect();
    let pick = if ties.len() > 1 {
        // Distinct minimizers only.
        let mut distinct: Vec<&Vec<f64>> = Vec::new();
        for q in ties {
            if !distinct.iter().any(|d| {
                d.iter()
                    .zip(q.iter())
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
            }) {
                distinct.push(q);
            }
        }
        let mut rng = substream(tie_seed, stream::TIE_BREAK, 0);
        distinct[rng.random_range(0..distinct.len())].clone()
    } else {
        ties[0].clone()
    };
    Inversion::Reached {
        sizes: pick,
        non_monotone,
    }
}

/// Lower each coordinate in turn as far as feasibility allows.
fn polish<F>(q: &mut [f64], lows: &[f64], feasible: &F)
where
    F: Fn(&[f64]) -> bool,
{
    for j in 0..q.len() {
        let mut hi = q[j];
        let mut lo = lows[j];
        let mut probe = q.to_vec();
        probe[j] = lo;
        if feasible(&probe) {
            q[j] = lo;
            continue;
        }
        for _ in 0..200 {
            if hi - lo <= BISECTION_REL_TOL * hi.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            probe[j] = mid;
            if feasible(&probe) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        q[j] = hi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::eval_curve;

    fn model(family: CurveFamily, theta: &[f64]) -> RegressionModel {
        RegressionModel::new(family, theta.to_vec()).unwrap()
    }

    #[test]
    fn power_law_closed_form() {
        let m = model(CurveFamily::PowerLaw, &[1.0, 0.5, 0.0]);
        let inv = invert_curve(&m, 10.0, &[1.0], &[1e9]).unwrap();
        let q = inv.sizes().unwrap()[0];
        assert!((q - 100.0).abs() <= 1e-9 * 100.0);
        assert!(eval_curve(&m, &[q]).unwrap() >= 10.0);
    }

    #[test]
    fn power_law_respects_cap_and_asymptote() {
        let m = model(CurveFamily::PowerLaw, &[1.0, 0.5, 0.0]);
        assert_eq!(invert_curve(&m, 10.0, &[1.0], &[99.0]).unwrap(), Inversion::Unreachable);
        // Saturating form -a q^-b + c never exceeds c.
        let m = model(CurveFamily::PowerLaw, &[-50.0, -0.5, 80.0]);
        assert_eq!(invert_curve(&m, 80.0, &[1.0], &[1e12]).unwrap(), Inversion::Unreachable);
        let q = invert_curve(&m, 75.0, &[1.0], &[1e12]).unwrap().sizes().unwrap()[0];
        assert!((q - 100.0).abs() < 1e-6);
        // Already above target at zero.
        let m = model(CurveFamily::PowerLaw, &[1.0, 0.5, 20.0]);
        assert_eq!(invert_curve(&m, 10.0, &[1.0], &[1e3]).unwrap().sizes().unwrap(), &[0.0]);
    }

    #[test]
    fn decreasing_power_law_is_flagged() {
        let m = model(CurveFamily::PowerLaw, &[-1.0, 0.5, 50.0]);
        match invert_curve(&m, 10.0, &[1.0], &[1e3]).unwrap() {
            Inversion::Reached { non_monotone, .. } => assert!(non_monotone),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arctan_is_bounded() {
        let m = model(CurveFamily::Arctan, &[0.01, 0.0, 5.0]);
        assert_eq!(invert_curve(&m, 105.5, &[1.0], &[1e12]).unwrap(), Inversion::Unreachable);
        let q = invert_curve(&m, 55.0, &[1.0], &[1e12]).unwrap().sizes().unwrap()[0];
        // (200/π) atan(x) = 50  =>  x = tan(π/4) = 1  =>  q = 1 / (0.01 π / 2)
        let want = 1.0 / (0.01 * std::f64::consts::FRAC_PI_2);
        assert!((q - want).abs() <= 1e-8 * want);
    }

    #[test]
    fn logarithmic_bisection_is_tight() {
        let m = model(CurveFamily::Logarithmic, &[8.0, 1.0, 2.0]);
        let target = 40.0;
        let q = invert_curve(&m, target, &[1.0], &[1e9]).unwrap().sizes().unwrap()[0];
        let want = ((target - 2.0) / 8.0f64).exp() - 1.0;
        assert!((q - want).abs() <= 2e-9 * want);
        assert!(eval_curve(&m, &[q]).unwrap() >= target);
    }

    /// Brute-force grid over [0, 20]² at step 0.01.
    fn grid_oracle(m: &RegressionModel, target: f64, costs: &[f64]) -> (f64, Vec<f64>) {
        let mut best = (f64::INFINITY, vec![]);
        for i in 0..=2000 {
            for j in 0..=2000 {
                let q = [i as f64 * 0.01, j as f64 * 0.01];
                if eval_curve(m, &q).unwrap() >= target - 1e-12 {
                    let c = costs[0] * q[0] + costs[1] * q[1];
                    if c < best.0 {
                        best = (c, q.to_vec());
                    }
                }
            }
        }
        best
    }

    #[test]
    fn additive_matches_grid_oracle() {
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 0.5, 1.0, 0.5, 0.0]);
        let (oracle_cost, oracle_q) = grid_oracle(&m, 4.0, &[1.0, 1.0]);
        assert!((oracle_cost - 8.0).abs() < 1e-9);
        assert_eq!(oracle_q, vec![4.0, 4.0]);
        let q = invert_curve(&m, 4.0, &[1.0, 1.0], &[1e6, 1e6]).unwrap();
        let q = q.sizes().unwrap();
        assert!((q[0] - 4.0).abs() < 1e-6 && (q[1] - 4.0).abs() < 1e-6, "{q:?}");
    }

    #[test]
    fn additive_asymmetric_costs_match_grid_oracle() {
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 0.5, 2.0, 0.5, 0.5]);
        let costs = [1.0, 3.0];
        let (oracle_cost, _) = grid_oracle(&m, 6.0, &costs);
        let q = invert_curve(&m, 6.0, &costs, &[20.0, 20.0]).unwrap();
        let q = q.sizes().unwrap();
        let cost = costs[0] * q[0] + costs[1] * q[1];
        assert!(eval_curve(&m, q).unwrap() >= 6.0 - 1e-9);
        assert!(cost <= oracle_cost + 1e-9);
        assert!(cost >= oracle_cost - 0.05, "cost={cost} oracle={oracle_cost}");
    }

    #[test]
    fn additive_convex_terms_use_a_single_source() {
        // Convex terms: the cheapest way is to spend everything on one source.
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 2.0, 1.0, 2.0, 0.0]);
        let (oracle_cost, _) = grid_oracle(&m, 16.0, &[1.0, 2.0]);
        let q = invert_curve(&m, 16.0, &[1.0, 2.0], &[20.0, 20.0]).unwrap();
        let q = q.sizes().unwrap();
        let cost = q[0] + 2.0 * q[1];
        assert!((cost - oracle_cost).abs() < 0.02, "cost={cost} oracle={oracle_cost} q={q:?}");
    }

    #[test]
    fn additive_tie_break_is_seeded() {
        // Linear terms with equal cost ratios: both single-source corners tie.
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 1.0, 1.0, 1.0, 0.0]);
        let picks: Vec<Vec<f64>> = (0..16)
            .map(|seed| {
                invert_curve_seeded(&m, 10.0, &[1.0, 1.0], &[20.0, 20.0], seed)
                    .unwrap()
                    .sizes()
                    .unwrap()
                    .to_vec()
            })
            .collect();
        for q in &picks {
            assert!((q[0] + q[1] - 10.0).abs() < 1e-6);
        }
        let again = invert_curve_seeded(&m, 10.0, &[1.0, 1.0], &[20.0, 20.0], 3).unwrap();
        assert_eq!(again.sizes().unwrap(), picks[3].as_slice());
    }

    #[test]
    fn additive_unreachable() {
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(
            invert_curve(&m, 100.0, &[1.0, 1.0], &[100.0, 100.0]).unwrap(),
            Inversion::Unreachable
        );
    }

    #[test]
    fn argument_validation() {
        let m = model(CurveFamily::PowerLaw, &[1.0, 0.5, 0.0]);
        assert!(invert_curve(&m, 1.0, &[0.0], &[1.0]).is_err());
        assert!(invert_curve(&m, 1.0, &[1.0], &[0.0]).is_err());
        assert!(invert_curve(&m, f64::NAN, &[1.0], &[1.0]).is_err());
        assert!(invert_curve(&m, 1.0, &[1.0, 1.0], &[1.0]).is_err());
    }
}
