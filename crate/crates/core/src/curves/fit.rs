use serde::{Deserialize, Serialize};

use super::{CurveError, CurveFamily, RegressionModel, RegressionSet};
use crate::linalg;

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the loss by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop once the infinity norm of the loss gradient is at most this.
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
    pub damping_factor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_factor: 10.0,
        }
    }
}

/// Result of a least-squares fit.
///
/// A fit that runs out of iterations is still returned, with `converged`
/// cleared and the best parameters seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub model: RegressionModel,
    pub converged: bool,
    pub iterations: usize,
    pub loss: f64,
}

const MAX_DAMPING: f64 = 1e16;

fn loss_at(family: CurveFamily, theta: &[f64], data: &RegressionSet) -> Option<f64> {
    let mut acc = 0.0;
    for s in data.samples() {
        let r = s.score - family.eval_raw(theta, &s.sizes)?;
        acc += s.weight * r * r;
    }
    acc.is_finite().then_some(acc)
}

/// Weighted sum of squared residuals `Σ w_i (score_i - v̂(q_i))²`.
pub fn weighted_loss(model: &RegressionModel, data: &RegressionSet) -> Result<f64, CurveError> {
    check_dims(model.family(), data)?;
    loss_at(model.family(), model.theta(), data).ok_or_else(|| domain_error(model.family(), data))
}

fn domain_error(family: CurveFamily, data: &RegressionSet) -> CurveError {
    CurveError::Domain {
        family,
        q: data.samples().last().map(|s| s.sizes.clone()).unwrap_or_default(),
    }
}

fn check_dims(family: CurveFamily, data: &RegressionSet) -> Result<(), CurveError> {
    if family.source_count() != data.source_count() {
        return Err(CurveError::Dimension {
            expected: family.source_count(),
            got: data.source_count(),
        });
    }
    Ok(())
}

/// Residuals and the central-difference Jacobian of the model predictions.
///
/// Falls back to a one-sided difference when one side of the stencil leaves
/// the family's domain.
fn residuals_and_jacobian(
    family: CurveFamily,
    theta: &[f64],
    data: &RegressionSet,
) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = theta.len();
    let samples = data.samples();
    let base: Vec<f64> = samples
        .iter()
        .map(|s| family.eval_raw(theta, &s.sizes))
        .collect::<Option<_>>()?;
    let resid = samples.iter().zip(&base).map(|(s, v)| s.score - v).collect();
    if !matches!(family, CurveFamily::AlgebraicRoot) {
        let jac = samples
            .iter()
            .map(|s| family.param_gradient(theta, &s.sizes))
            .collect::<Option<_>>()?;
        return Some((resid, jac));
    }
    let mut jac = vec![vec![0.0; p]; samples.len()];
    let mut plus = theta.to_vec();
    let mut minus = theta.to_vec();
    for j in 0..p {
        let h = 1e-6 * theta[j].abs().max(1.0);
        plus[j] = theta[j] + h;
        minus[j] = theta[j] - h;
        for (i, s) in samples.iter().enumerate() {
            let up = family.eval_raw(&plus, &s.sizes);
            let down = family.eval_raw(&minus, &s.sizes);
            jac[i][j] = match (up, down) {
                (Some(u), Some(d)) => (u - d) / (2.0 * h),
                (Some(u), None) => (u - base[i]) / h,
                (None, Some(d)) => (base[i] - d) / h,
                (None, None) => return None,
            };
        }
        plus[j] = theta[j];
        minus[j] = theta[j];
    }
    Some((resid, jac))
}

/// `Jᵀ W J` and `Jᵀ W r`.
fn normal_equations(data: &RegressionSet, resid: &[f64], jac: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = jac.first().map_or(0, Vec::len);
    let mut a = vec![vec![0.0; p]; p];
    let mut g = vec![0.0; p];
    for ((s, r), row) in data.samples().iter().zip(resid).zip(jac) {
        for j in 0..p {
            g[j] += s.weight * row[j] * r;
            for k in j..p {
                a[j][k] += s.weight * row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[j][k] = a[k][j];
        }
    }
    (a, g)
}

/// Gradient of [`weighted_loss`] with respect to the parameters, computed
/// from the Jacobian of the predictions.
pub fn loss_gradient(model: &RegressionModel, data: &RegressionSet) -> Result<Vec<f64>, CurveError> {
    check_dims(model.family(), data)?;
    let (resid, jac) = residuals_and_jacobian(model.family(), model.theta(), data)
        .ok_or_else(|| domain_error(model.family(), data))?;
    let (_, g) = normal_equations(data, &resid, &jac);
    Ok(g.into_iter().map(|v| -2.0 * v).collect())
}

/// Fit `family` to `data` by weighted Levenberg-Marquardt starting at `init`.
pub fn fit_curve(
    family: CurveFamily,
    data: &RegressionSet,
    init: &[f64],
    config: &FitConfig,
) -> Result<Fit, CurveError> {
    check_dims(family, data)?;
    if init.len() != family.parameter_count() {
        return Err(CurveError::ParameterCount {
            family,
            expected: family.parameter_count(),
            got: init.len(),
        });
    }
    let mut theta = init.to_vec();
    let mut loss = loss_at(family, &theta, data).ok_or_else(|| domain_error(family, data))?;
    let mut damping = config.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        iterations += 1;
        if loss == 0.0 {
            converged = true;
            break;
        }
        let Some((resid, jac)) = residuals_and_jacobian(family, &theta, data) else {
            // The current point is valid but its stencil is not; nothing to step along.
            break;
        };
        let (a, g) = normal_equations(data, &resid, &jac);
        let grad_norm = g.iter().fold(0.0f64, |m, v| m.max(2.0 * v.abs()));
        if grad_norm <= config.gradient_tolerance {
            converged = true;
            break;
        }
        let max_diag = (0..a.len()).fold(0.0f64, |m, j| m.max(a[j][j]));
        let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);
        loop {
            let mut m = a.clone();
            for (j, row) in m.iter_mut().enumerate() {
                row[j] += damping * a[j][j].max(floor);
            }
            let step = linalg::solve(m, g.clone(), 1e-300);
            if let Some(step) = step {
                let candidate: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
                let candidate_loss = candidate
                    .iter()
                    .all(|t| t.is_finite())
                    .then(|| loss_at(family, &candidate, data))
                    .flatten();
                if let Some(new_loss) = candidate_loss.filter(|l| *l < loss) {
                    let decrease = (loss - new_loss) / loss;
                    theta = candidate;
                    loss = new_loss;
                    damping = (damping / config.damping_factor).max(1e-15);
                    if decrease < config.relative_tolerance {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
            }
            damping *= config.damping_factor;
            if damping > MAX_DAMPING {
                // No descent step exists at working precision.
                converged = true;
                break 'outer;
            }
        }
    }

    Ok(Fit {
        model: RegressionModel::new(family, theta)?,
        converged,
        iterations,
        loss,
    })
}
