//! Parametric learning-curve models.
//!
//! A learning curve maps the amount of training data (one amount per data
//! source) to a model score. This module holds the regression families used
//! to extrapolate such curves, a weighted Levenberg-Marquardt fitter and the
//! inversion that turns a fitted curve into a point estimate of the amount of
//! data needed to reach a target score.

mod fit;
mod init;
mod invert;

pub use fit::{fit_curve, loss_gradient, weighted_loss, Fit, FitConfig};
pub use init::{profiled_init, FitInit};
pub use invert::{invert_curve, invert_curve_seeded, Inversion};

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("{family} is undefined at q = {q:?}")]
    Domain { family: CurveFamily, q: Vec<f64> },
    #[error("{family} expects {expected} parameters, got {got}")]
    ParameterCount {
        family: CurveFamily,
        expected: usize,
        got: usize,
    },
    #[error("expected {expected} data sources, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid regression data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One measured point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub sizes: Vec<f64>,
    pub score: f64,
    pub weight: f64,
}

impl CurveSample {
    pub fn new(sizes: Vec<f64>, score: f64) -> Self {
        Self {
            sizes,
            score,
            weight: 1.0,
        }
    }

    pub fn scalar(size: f64, score: f64) -> Self {
        Self::new(vec![size], score)
    }

    pub fn total_size(&self) -> f64 {
        self.sizes.iter().sum()
    }
}

/// The regression set of a learning curve, ordered by total size.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    samples: Vec<CurveSample>,
    source_count: usize,
}

/// Normalized doubling weights: each sample weighs twice the previous one.
///
/// The largest weight is anchored at 1 before normalizing so that long sets
/// underflow at the small end instead of overflowing at the large end.
pub fn doubling_weights(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|i| 2f64.powi(i as i32 - (n as i32 - 1))).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl RegressionSet {
    /// Build a set with the default doubling weights.
    ///
    /// Samples are stably sorted by total size; the i-th sample in that order
    /// gets weight proportional to 2^i.
    pub fn with_doubling_weights(mut samples: Vec<CurveSample>) -> Result<Self, CurveError> {
        samples.sort_by(|a, b| a.total_size().total_cmp(&b.total_size()));
        let weights = doubling_weights(samples.len());
        for (s, w) in samples.iter_mut().zip(weights) {
            s.weight = w;
        }
        Self::with_weights(samples)
    }

    /// Build a set keeping the weights carried by the samples.
    pub fn with_weights(mut samples: Vec<CurveSample>) -> Result<Self, CurveError> {
        let first = samples
            .first()
            .ok_or_else(|| CurveError::InvalidData("regression set is empty".into()))?;
        let source_count = first.sizes.len();
        if source_count == 0 {
            return Err(CurveError::InvalidData("samples carry no sizes".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.sizes.len() != source_count {
                return Err(CurveError::Dimension {
                    expected: source_count,
                    got: s.sizes.len(),
                });
            }
            if s.sizes.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                return Err(CurveError::InvalidData(format!(
                    "sample {i} has a negative or non-finite size"
                )));
            }
            if !s.score.is_finite() {
                return Err(CurveError::InvalidData(format!(
                    "sample {i} has a non-finite score"
                )));
            }
            if !(s.weight > 0.0 && s.weight.is_finite()) {
                return Err(CurveError::InvalidData(format!(
                    "sample {i} has a non-positive weight"
                )));
            }
        }
        if !samples.iter().any(|s| s.total_size() > 0.0) {
            return Err(CurveError::InvalidData(
                "no sample has a positive total size".into(),
            ));
        }
        samples.sort_by(|a, b| a.total_size().total_cmp(&b.total_size()));
        Ok(Self {
            samples,
            source_count,
        })
    }

    pub fn samples(&self) -> &[CurveSample] {
        &self.samples
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Elementwise maximum of the sample sizes.
    pub fn max_sizes(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.source_count];
        for s in &self.samples {
            for (o, q) in out.iter_mut().zip(&s.sizes) {
                *o = o.max(*q);
            }
        }
        out
    }
}

/// Regression family of a learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    /// `θ0 q^θ1 + θ2`
    PowerLaw,
    /// `θ0 log(q + θ1) + θ2`
    Logarithmic,
    /// `(200/π) atan(θ0 (π/2) q + θ1) + θ2`
    Arctan,
    /// `100 q / (1 + |θ0 q|^θ1)^(1/θ1) + θ2`
    AlgebraicRoot,
    /// `Σ_k θ_{k,0} (q^k)^θ_{k,1} + θ_bias` over `K` sources.
    AdditivePowerLaw(usize),
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PowerLaw => f.write_str("power-law"),
            Self::Logarithmic => f.write_str("logarithmic"),
            Self::Arctan => f.write_str("arctan"),
            Self::AlgebraicRoot => f.write_str("algebraic-root"),
            Self::AdditivePowerLaw(k) => write!(f, "additive-power-law({k})"),
        }
    }
}

impl CurveFamily {
    pub fn parameter_count(&self) -> usize {
        match self {
            Self::AdditivePowerLaw(k) => 2 * k + 1,
            _ => 3,
        }
    }

    pub fn source_count(&self) -> usize {
        match self {
            Self::AdditivePowerLaw(k) => *k,
            _ => 1,
        }
    }

    /// Product terms start at 1, bias terms at 0.
    ///
    /// The logarithmic shift starts at 1 so that `log(q + θ1)` is defined on
    /// the whole non-negative axis.
    pub fn default_init(&self) -> Vec<f64> {
        match self {
            Self::PowerLaw | Self::Logarithmic | Self::AlgebraicRoot => vec![1.0, 1.0, 0.0],
            Self::Arctan => vec![1.0, 0.0, 0.0],
            Self::AdditivePowerLaw(k) => {
                let mut v = vec![1.0; 2 * k];
                v.push(0.0);
                v
            }
        }
    }

    /// Index of the additive bias parameter.
    pub fn bias_index(&self) -> usize {
        self.parameter_count() - 1
    }

    /// Evaluate the family at `q` with parameters `theta`, without checking
    /// lengths. Returns `None` where the formula is undefined or not finite.
    pub(crate) fn eval_raw(&self, theta: &[f64], q: &[f64]) -> Option<f64> {
        let v = match self {
            Self::PowerLaw => power_term(theta[0], theta[1], q[0])? + theta[2],
            Self::Logarithmic => {
                let arg = q[0] + theta[1];
                if arg <= 0.0 {
                    return None;
                }
                theta[0] * arg.ln() + theta[2]
            }
            Self::Arctan => (200.0 / PI) * (theta[0] * (PI / 2.0) * q[0] + theta[1]).atan() + theta[2],
            Self::AlgebraicRoot => {
                let p = theta[1];
                if p == 0.0 {
                    return None;
                }
                let denom = (1.0 + (theta[0] * q[0]).abs().powf(p)).powf(1.0 / p);
                100.0 * q[0] / denom + theta[2]
            }
            Self::AdditivePowerLaw(k) => {
                let mut acc = theta[2 * k];
                for (j, qj) in q.iter().enumerate().take(*k) {
                    acc += power_term(theta[2 * j], theta[2 * j + 1], *qj)?;
                }
                acc
            }
        };
        v.is_finite().then_some(v)
    }
}

impl CurveFamily {
    /// Partial derivatives of the curve value with respect to `theta` at `q`.
    /// `None` where the value is undefined, and always for the algebraic-root
    /// family, which is differentiated numerically.
    pub(crate) fn param_gradient(&self, theta: &[f64], q: &[f64]) -> Option<Vec<f64>> {
        let g = match self {
            Self::PowerLaw => {
                let (da, db) = power_term_gradient(theta[0], theta[1], q[0])?;
                vec![da, db, 1.0]
            }
            Self::Logarithmic => {
                let arg = q[0] + theta[1];
                if arg <= 0.0 {
                    return None;
                }
                vec![arg.ln(), theta[0] / arg, 1.0]
            }
            Self::Arctan => {
                let u = theta[0] * (PI / 2.0) * q[0] + theta[1];
                let w = 1.0 / (1.0 + u * u);
                vec![100.0 * q[0] * w, (200.0 / PI) * w, 1.0]
            }
            Self::AlgebraicRoot => return None,
            Self::AdditivePowerLaw(k) => {
                let mut g = vec![0.0; 2 * k + 1];
                for (j, qj) in q.iter().enumerate().take(*k) {
                    let (da, db) = power_term_gradient(theta[2 * j], theta[2 * j + 1], *qj)?;
                    g[2 * j] = da;
                    g[2 * j + 1] = db;
                }
                g[2 * k] = 1.0;
                g
            }
        };
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

/// `(∂/∂a, ∂/∂b)` of `a q^b`.
fn power_term_gradient(a: f64, b: f64, q: f64) -> Option<(f64, f64)> {
    if q < 0.0 || (q == 0.0 && b < 0.0) {
        return None;
    }
    if q == 0.0 {
        return Some((if b == 0.0 { 1.0 } else { 0.0 }, 0.0));
    }
    let p = q.powf(b);
    Some((p, a * p * q.ln()))
}

/// `a q^b`, with `0^b` defined only for `b >= 0` and a zero coefficient
/// always giving zero.
pub(crate) fn power_term(a: f64, b: f64, q: f64) -> Option<f64> {
    if a == 0.0 {
        return Some(0.0);
    }
    if q < 0.0 || (q == 0.0 && b < 0.0) {
        return None;
    }
    let v = a * q.powf(b);
    v.is_finite().then_some(v)
}

/// A regression family together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    family: CurveFamily,
    theta: Vec<f64>,
}

impl RegressionModel {
    pub fn new(family: CurveFamily, theta: Vec<f64>) -> Result<Self, CurveError> {
        if theta.len() != family.parameter_count() {
            return Err(CurveError::ParameterCount {
                family,
                expected: family.parameter_count(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(CurveError::InvalidArgument(
                "parameters must be finite".into(),
            ));
        }
        Ok(Self { family, theta })
    }

    pub fn family(&self) -> CurveFamily {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn source_count(&self) -> usize {
        self.family.source_count()
    }

    /// Score predicted at `q`.
    pub fn eval(&self, q: &[f64]) -> Result<f64, CurveError> {
        eval_curve(self, q)
    }
}

/// Evaluate a fitted learning curve at the size vector `q`.
pub fn eval_curve(model: &RegressionModel, q: &[f64]) -> Result<f64, CurveError> {
    let k = model.source_count();
    if q.len() != k {
        return Err(CurveError::Dimension {
            expected: k,
            got: q.len(),
        });
    }
    if q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(CurveError::Domain {
            family: model.family,
            q: q.to_vec(),
        });
    }
    model
        .family
        .eval_raw(&model.theta, q)
        .ok_or_else(|| CurveError::Domain {
            family: model.family,
            q: q.to_vec(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(family: CurveFamily, theta: &[f64]) -> RegressionModel {
        RegressionModel::new(family, theta.to_vec()).unwrap()
    }

    #[test]
    fn closed_form_gradients_match_differences() {
        let cases: [(CurveFamily, Vec<f64>, Vec<f64>); 5] = [
            (CurveFamily::PowerLaw, vec![-30.0, -0.4, 90.0], vec![750.0]),
            (CurveFamily::PowerLaw, vec![0.0, 0.3, 5.0], vec![12.0]),
            (CurveFamily::Logarithmic, vec![4.0, 35.0, -2.0], vec![400.0]),
            (CurveFamily::Arctan, vec![0.002, 0.3, 1.0], vec![300.0]),
            (CurveFamily::AdditivePowerLaw(2), vec![-5.0, -0.3, -8.0, -0.2, 60.0], vec![200.0, 900.0]),
        ];
        for (family, theta, q) in cases {
            let g = family.param_gradient(&theta, &q).unwrap();
            for j in 0..theta.len() {
                let h = 1e-6 * theta[j].abs().max(1e-3);
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (family.eval_raw(&up, &q).unwrap() - family.eval_raw(&down, &q).unwrap()) / (2.0 * h);
                assert!((g[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "{family:?} {j}: {} vs {fd}", g[j]);
            }
        }
        assert!(CurveFamily::AlgebraicRoot.param_gradient(&[0.01, 1.0, 0.0], &[10.0]).is_none());
    }

    #[test]
    fn power_law_values() {
        let m = model(CurveFamily::PowerLaw, &[10.0, 0.5, 0.0]);
        assert_eq!(eval_curve(&m, &[100.0]).unwrap(), 100.0);
        let m = model(CurveFamily::PowerLaw, &[0.0, -3.7, 42.0]);
        assert_eq!(eval_curve(&m, &[7.0]).unwrap(), 42.0);
    }

    #[test]
    fn additive_power_law_sums_sources() {
        let m = model(CurveFamily::AdditivePowerLaw(2), &[1.0, 0.5, 1.0, 0.5, 0.0]);
        let expected = 4f64.sqrt() + 9f64.sqrt();
        assert_eq!(eval_curve(&m, &[4.0, 9.0]).unwrap(), expected);
        assert_eq!(expected, 5.0);
    }

    #[test]
    fn other_families_follow_their_formulas() {
        let q = 37.0f64;
        let m = model(CurveFamily::Logarithmic, &[8.0, 1.0, 2.0]);
        assert!((eval_curve(&m, &[q]).unwrap() - (8.0 * (q + 1.0).ln() + 2.0)).abs() < 1e-12);
        let m = model(CurveFamily::Arctan, &[0.01, 0.2, 3.0]);
        let want = 200.0 / PI * (0.01 * PI / 2.0 * q + 0.2).atan() + 3.0;
        assert!((eval_curve(&m, &[q]).unwrap() - want).abs() < 1e-12);
        let m = model(CurveFamily::AlgebraicRoot, &[0.02, 1.5, 1.0]);
        let want = 100.0 * q / (1.0 + (0.02 * q).powf(1.5)).powf(1.0 / 1.5) + 1.0;
        assert!((eval_curve(&m, &[q]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let m = model(CurveFamily::Logarithmic, &[1.0, -5.0, 0.0]);
        assert!(matches!(eval_curve(&m, &[3.0]), Err(CurveError::Domain { .. })));
        let m = model(CurveFamily::PowerLaw, &[1.0, -0.5, 0.0]);
        assert!(matches!(eval_curve(&m, &[0.0]), Err(CurveError::Domain { .. })));
        let m = model(CurveFamily::PowerLaw, &[1.0, 0.5, 0.0]);
        assert!(matches!(eval_curve(&m, &[1.0, 2.0]), Err(CurveError::Dimension { .. })));
        assert!(matches!(eval_curve(&m, &[-1.0]), Err(CurveError::Domain { .. })));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(CurveFamily::PowerLaw.parameter_count(), 3);
        assert_eq!(CurveFamily::AdditivePowerLaw(3).parameter_count(), 7);
        assert_eq!(CurveFamily::AdditivePowerLaw(2).default_init(), vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(RegressionModel::new(CurveFamily::PowerLaw, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn doubling_weights_ratio_is_exactly_two() {
        for n in [1usize, 2, 5, 30, 70] {
            let w = doubling_weights(n);
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for pair in w.windows(2) {
                if pair[0] > f64::MIN_POSITIVE {
                    assert_eq!(pair[1] / pair[0], 2.0);
                }
            }
        }
    }

    #[test]
    fn regression_set_orders_by_total_size() {
        let set = RegressionSet::with_doubling_weights(vec![
            CurveSample::scalar(30.0, 3.0),
            CurveSample::scalar(10.0, 1.0),
            CurveSample::scalar(20.0, 2.0),
        ])
        .unwrap();
        let sizes: Vec<f64> = set.samples().iter().map(|s| s.sizes[0]).collect();
        assert_eq!(sizes, vec![10.0, 20.0, 30.0]);
        assert_eq!(set.samples()[2].weight / set.samples()[1].weight, 2.0);
        assert!(RegressionSet::with_doubling_weights(vec![]).is_err());
        assert!(RegressionSet::with_doubling_weights(vec![CurveSample::scalar(0.0, 1.0)]).is_err());
        assert!(RegressionSet::with_doubling_weights(vec![
            CurveSample::scalar(1.0, 1.0),
            CurveSample::new(vec![1.0, 2.0], 1.0),
        ])
        .is_err());
    }
}
