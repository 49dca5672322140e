use super::{PlannerError, ProblemSpec};
use crate::density::RequirementCdf;

const SCAN_POINTS: usize = 512;

/// Closed-form solution of a one-round, one-source problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneRound {
    /// Collect up to the `1 − epsilon` quantile.
    Interior { q1: f64, epsilon: f64 },
    /// Collecting nothing is optimal.
    Boundary { q0: f64 },
}

/// Smallest `q ≥ lo` with `survival(q) ≤ eps`, by safeguarded Newton steps.
fn upper_quantile(dist: &dyn RequirementCdf, eps: f64, mut lo: f64) -> f64 {
    let (_, top) = dist.support_bracket();
    let mut hi = top.max(lo + 1.0);
    let mut width = (hi - lo).max(1.0);
    while dist.survival(&[hi]) > eps {
        lo = hi;
        hi += width;
        width *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let s = dist.survival(&[q]);
        if s > eps {
            lo = q;
        } else {
            hi = q;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1e-300) || (s - eps).abs() <= 1e-13 * eps {
            break;
        }
        let f = dist.pdf(&[q]);
        let newton = q + (s - eps) / f;
        q = if f > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    hi.min(q.max(lo))
}

/// Root of `pdf(q) − level` between `a` and `b` (signs differ at the ends).
fn bisect_density(dist: &dyn RequirementCdf, level: f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = dist.pdf(&[a]) - level;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (b - a).abs() <= 1e-14 * mid.abs().max(1e-300) {
            break;
        }
        let gm = dist.pdf(&[mid]) - level;
        if (gm < 0.0) == (ga < 0.0) {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Optimal single-round amount for one source.
///
/// Solves `f(q) = c(1 − F(q0))/P` over the admissible quantiles, keeps the
/// root with the lowest objective, and accepts it only if it beats staying
/// at `q0` (the secant condition). The factor `1 − F(q0)` comes from the
/// expected-cost objective and is 1 whenever the distribution has no mass
/// below `q0`.
pub fn analytic_one_round(spec: &ProblemSpec, dist: &dyn RequirementCdf) -> Result<OneRound, PlannerError> {
    spec.validate()?;
    if spec.dimension() != 1 || dist.dimension() != 1 {
        return Err(PlannerError::Dimension {
            expected: 1,
            got: spec.dimension().max(dist.dimension()),
        });
    }
    if spec.horizon != 1 {
        return Err(PlannerError::InvalidSpec("analytic solution needs a single round".into()));
    }
    let q0 = spec.q0[0];
    let s0 = dist.survival(&[q0]);
    if s0 <= 0.0 {
        return Ok(OneRound::Boundary { q0 });
    }
    let c_eff = spec.costs[0] * s0;
    let level = c_eff / spec.penalty;
    let objective = |q: f64| c_eff * (q - q0) + spec.penalty * dist.survival(&[q]);

    // Scan ε from s0 down to s0·1e-12, i.e. q increasing from q0.
    let (a, b) = (s0.ln(), (s0 * 1e-12).ln());
    let mut qs = Vec::with_capacity(SCAN_POINTS);
    let mut prev = q0;
    for i in 0..SCAN_POINTS {
        let eps = (a + (b - a) * i as f64 / (SCAN_POINTS - 1) as f64).exp();
        let q = if i == 0 { q0 } else { upper_quantile(dist, eps, prev) };
        qs.push(q);
        prev = q;
    }
    let gs: Vec<f64> = qs.iter().map(|q| dist.pdf(&[*q]) - level).collect();
    if gs.iter().all(|g| *g == -level) {
        return Err(PlannerError::AssumptionViolated(
            "density vanishes over the whole search range".into(),
        ));
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..SCAN_POINTS - 1 {
        let (g0, g1) = (gs[i], gs[i + 1]);
        let root = if g0 == 0.0 {
            Some(qs[i])
        } else if (g0 < 0.0) != (g1 < 0.0) && g1 != 0.0 {
            Some(bisect_density(dist, level, qs[i], qs[i + 1]))
        } else {
            None
        };
        if let Some(q) = root {
            let j = objective(q);
            if best.is_none_or(|(bj, _)| j < bj) {
                best = Some((j, q));
            }
        }
    }
    let Some((_, q1)) = best else {
        return Ok(OneRound::Boundary { q0 });
    };
    if q1 <= q0 {
        return Ok(OneRound::Boundary { q0 });
    }
    let secant = (s0 - dist.survival(&[q1])) / (q1 - q0);
    if level <= secant {
        Ok(OneRound::Interior {
            q1,
            epsilon: dist.survival(&[q1]),
        })
    } else {
        Ok(OneRound::Boundary { q0 })
    }
}
