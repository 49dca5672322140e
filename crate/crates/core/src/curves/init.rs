use super::{CurveFamily, RegressionSet};
use crate::linalg;

/// Starting point for the least-squares fit.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitInit {
    /// Product terms 1, bias terms 0.
    Default,
    /// Grid over the nonlinear parameters with the linear ones solved exactly.
    Profiled,
    Explicit(Vec<f64>),
}

impl FitInit {
    pub fn resolve(&self, family: CurveFamily, data: &RegressionSet) -> Vec<f64> {
        match self {
            Self::Default => family.default_init(),
            Self::Profiled => profiled_init(family, data),
            Self::Explicit(theta) => theta.clone(),
        }
    }
}

fn log_grid(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1).max(1) as f64))
        .collect()
}

fn signed_exponents(per_side: usize) -> Vec<f64> {
    let pos = log_grid(-3.0, 3f64.log10(), per_side);
    pos.iter().rev().map(|v| -v).chain(pos.iter().copied()).collect()
}

/// Fit the linear parameters for one setting of the nonlinear ones.
///
/// `row(sizes)` returns the fixed offset and the design row for a sample.
/// Returns the coefficients and the weighted loss.
fn linear_fit<F>(data: &RegressionSet, columns: usize, row: F) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut a = vec![vec![0.0; columns]; columns];
    let mut b = vec![0.0; columns];
    let mut rows = Vec::with_capacity(data.len());
    for s in data.samples() {
        let (offset, x) = row(&s.sizes)?;
        let y = s.score - offset;
        for j in 0..columns {
            b[j] += s.weight * x[j] * y;
            for k in 0..columns {
                a[j][k] += s.weight * x[j] * x[k];
            }
        }
        rows.push((offset, x));
    }
    let coef = linalg::solve(a, b, 1e-13)?;
    let loss = data
        .samples()
        .iter()
        .zip(&rows)
        .map(|(s, (offset, x))| {
            let pred = offset + x.iter().zip(&coef).map(|(xi, c)| xi * c).sum::<f64>();
            s.weight * (s.score - pred).powi(2)
        })
        .sum::<f64>();
    loss.is_finite().then_some((coef, loss))
}

/// Data-driven starting point: scan the nonlinear parameters on a fixed grid,
/// solve the linear ones by weighted least squares and keep the best.
///
/// Falls back to [`CurveFamily::default_init`] if no grid point is usable.
pub fn profiled_init(family: CurveFamily, data: &RegressionSet) -> Vec<f64> {
    let q_ref = data
        .samples()
        .iter()
        .map(|s| s.sizes.iter().cloned().fold(0.0, f64::max))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |loss: f64, theta: Vec<f64>| {
        if best.as_ref().is_none_or(|(l, _)| loss < *l) {
            best = Some((loss, theta));
        }
    };
    match family {
        CurveFamily::PowerLaw => {
            for b in signed_exponents(30) {
                if let Some((c, loss)) = linear_fit(data, 2, |q| {
                    (q[0] > 0.0 || b > 0.0).then(|| (0.0, vec![q[0].powf(b), 1.0]))
                }) {
                    consider(loss, vec![c[0], b, c[1]]);
                }
            }
        }
        CurveFamily::Logarithmic => {
            for s in log_grid(-6.0, 2.0, 33) {
                let shift = s * q_ref;
                if let Some((c, loss)) = linear_fit(data, 2, |q| Some((0.0, vec![(q[0] + shift).ln(), 1.0]))) {
                    consider(loss, vec![c[0], shift, c[1]]);
                }
            }
        }
        CurveFamily::Arctan => {
            for rate in log_grid(-3.0, 3.0, 25) {
                let t0 = rate / q_ref;
                for t1 in [-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0] {
                    let theta = [t0, t1, 0.0];
                    if let Some((c, loss)) = linear_fit(data, 1, |q| Some((family.eval_raw(&theta, q)?, vec![1.0]))) {
                        consider(loss, vec![t0, t1, c[0]]);
                    }
                }
            }
        }
        CurveFamily::AlgebraicRoot => {
            for rate in log_grid(-3.0, 3.0, 25) {
                let t0 = rate / q_ref;
                for t1 in [0.25, 0.5, 1.0, 2.0, 4.0] {
                    let theta = [t0, t1, 0.0];
                    if let Some((c, loss)) = linear_fit(data, 1, |q| Some((family.eval_raw(&theta, q)?, vec![1.0]))) {
                        consider(loss, vec![t0, t1, c[0]]);
                    }
                }
            }
        }
        CurveFamily::AdditivePowerLaw(k) => {
            let per_source = ((4096f64).powf(1.0 / k as f64).floor() as usize).max(2);
            let exps = signed_exponents((per_source / 2).max(1));
            let mut idx = vec![0usize; k];
            loop {
                let b: Vec<f64> = idx.iter().map(|&i| exps[i]).collect();
                if let Some((c, loss)) = linear_fit(data, k + 1, |q| {
                    let mut row = Vec::with_capacity(k + 1);
                    for (qj, bj) in q.iter().zip(&b) {
                        if *qj == 0.0 && *bj < 0.0 {
                            return None;
                        }
                        row.push(qj.powf(*bj));
                    }
                    row.push(1.0);
                    Some((0.0, row))
                }) {
                    let mut theta = Vec::with_capacity(2 * k + 1);
                    for j in 0..k {
                        theta.push(c[j]);
                        theta.push(b[j]);
                    }
                    theta.push(c[k]);
                    consider(loss, theta);
                }
                // Odometer over the exponent grid.
                let mut pos = 0;
                loop {
                    if pos == k {
                        return best.map_or_else(|| family.default_init(), |(_, t)| t);
                    }
                    idx[pos] += 1;
                    if idx[pos] < exps.len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
            }
        }
    }
    best.map_or_else(|| family.default_init(), |(_, t)| t)
}
