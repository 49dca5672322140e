//! Probability model of the minimum data requirement.
//!
//! Bootstrap resamples of a regression set are fitted and inverted into
//! estimates of the requirement; a Gaussian KDE (one source) or a diagonal
//! Gaussian mixture (several sources) turns them into a density with an
//! analytic CDF.

mod bootstrap;
mod gmm;
mod kde;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::CurveError;

pub use bootstrap::{bootstrap_requirements, BootstrapConfig, BootstrapOutcome, CensorPolicy};
pub use gmm::fit_gmm;
pub use kde::{fit_kde, log_bandwidth_grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("all {resamples} bootstrap resamples were censored")]
    AllCensored { resamples: usize },
    #[error("need at least {need} estimates, got {got}")]
    TooFewEstimates { need: usize, got: usize },
    #[error("expected dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid estimates: {0}")]
    InvalidEstimates(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// What the planner needs from a requirement distribution.
pub trait RequirementCdf: Send + Sync {
    fn dimension(&self) -> usize;
    fn pdf(&self, q: &[f64]) -> f64;
    fn cdf(&self, q: &[f64]) -> f64;
    /// `1 - cdf(q)`, computed without cancellation where the backend allows.
    fn survival(&self, q: &[f64]) -> f64 {
        1.0 - self.cdf(q)
    }
    /// Partial derivatives of the CDF with respect to each coordinate.
    fn cdf_gradient(&self, q: &[f64]) -> Vec<f64>;
    /// A bracket `[lo, hi]` holding essentially all of the mass (one source).
    fn support_bracket(&self) -> (f64, f64);
    /// A central point of the distribution: the median for one source, the
    /// mean otherwise.
    fn center(&self) -> Vec<f64>;

    /// Smallest `q` with `cdf(q) ≥ p`, by bisection (one source only).
    fn quantile(&self, p: f64) -> Option<f64> {
        if self.dimension() != 1 || !(p > 0.0 && p < 1.0) {
            return None;
        }
        let (mut lo, mut hi) = self.support_bracket();
        let mut width = (hi - lo).max(1.0);
        while self.cdf(&[lo]) >= p {
            lo -= width;
            width *= 2.0;
        }
        while self.cdf(&[hi]) < p {
            hi += width;
            width *= 2.0;
        }
        let tol = 1e-9 * hi.abs().max(lo.abs()).max(1e-300);
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(&[mid]) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// Standard normal CDF.
pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - Φ(z)`.
pub(crate) fn norm_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

pub(crate) fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Gaussian kernel density estimate over scalar points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    points: Vec<f64>,
    bandwidth: f64,
}

/// Kernels further than this many bandwidths away are treated as exactly 0 or 1.
const KERNEL_REACH: f64 = 9.0;

impl Kde {
    pub fn new(mut points: Vec<f64>, bandwidth: f64) -> Result<Self, DensityError> {
        if points.is_empty() {
            return Err(DensityError::TooFewEstimates { need: 1, got: 0 });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(DensityError::InvalidEstimates("non-finite point".into()));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(DensityError::InvalidConfig(format!("bandwidth {bandwidth} must be positive")));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points, bandwidth })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Index range of points within kernel reach of `q`.
    fn window(&self, q: f64) -> (usize, usize) {
        let reach = KERNEL_REACH * self.bandwidth;
        let lo = self.points.partition_point(|&x| x < q - reach);
        let hi = self.points.partition_point(|&x| x <= q + reach);
        (lo, hi)
    }

    pub fn pdf(&self, q: f64) -> f64 {
        let (lo, hi) = self.window(q);
        let h = self.bandwidth;
        let sum: f64 = self.points[lo..hi].iter().map(|x| norm_pdf((q - x) / h)).sum();
        sum / (self.points.len() as f64 * h)
    }

    pub fn cdf(&self, q: f64) -> f64 {
        let (lo, hi) = self.window(q);
        let h = self.bandwidth;
        let inner: f64 = self.points[lo..hi].iter().map(|x| norm_cdf((q - x) / h)).sum();
        ((lo as f64 + inner) / self.points.len() as f64).clamp(0.0, 1.0)
    }

    pub fn survival(&self, q: f64) -> f64 {
        let (lo, hi) = self.window(q);
        let h = self.bandwidth;
        let inner: f64 = self.points[lo..hi].iter().map(|x| norm_sf((q - x) / h)).sum();
        let above = (self.points.len() - hi) as f64;
        ((above + inner) / self.points.len() as f64).clamp(0.0, 1.0)
    }
}

/// One diagonal Gaussian component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GmmComponent {
    fn pdf(&self, q: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(q)
            .map(|((m, v), x)| {
                let s = v.sqrt();
                norm_pdf((x - m) / s) / s
            })
            .product()
    }

    fn coordinate_cdfs(&self, q: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(q)
            .map(|((m, v), x)| norm_cdf((x - m) / v.sqrt()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Kde(Kde),
    Gmm(Vec<GmmComponent>),
}

/// Fitted density of the minimum data requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementDistribution {
    backend: Backend,
    dimension: usize,
    degenerate: bool,
}

impl RequirementDistribution {
    pub fn from_kde(kde: Kde) -> Self {
        Self {
            backend: Backend::Kde(kde),
            dimension: 1,
            degenerate: false,
        }
    }

    pub fn from_components(components: Vec<GmmComponent>) -> Result<Self, DensityError> {
        let dimension = components.first().map_or(0, |c| c.mean.len());
        if dimension == 0 {
            return Err(DensityError::InvalidConfig("mixture needs a non-empty component".into()));
        }
        for c in &components {
            if c.mean.len() != dimension || c.variance.len() != dimension {
                return Err(DensityError::Dimension {
                    expected: dimension,
                    got: c.mean.len(),
                });
            }
            if !(c.weight > 0.0) || c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(DensityError::InvalidConfig("weights and variances must be positive".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(DensityError::InvalidConfig(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            backend: Backend::Gmm(components),
            dimension,
            degenerate: false,
        })
    }

    pub(crate) fn flagged_degenerate(mut self) -> Self {
        self.degenerate = true;
        self
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Set when every estimate was identical and the spread is a placeholder.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Draw one requirement from the distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.backend {
            Backend::Kde(k) => {
                let x = k.points[rng.random_range(0..k.points.len())];
                let z: f64 = rng.sample(StandardNormal);
                vec![x + k.bandwidth * z]
            }
            Backend::Gmm(cs) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &cs[cs.len() - 1];
                for c in cs {
                    acc += c.weight;
                    if u < acc {
                        chosen = c;
                        break;
                    }
                }
                chosen
                    .mean
                    .iter()
                    .zip(&chosen.variance)
                    .map(|(m, v)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + v.sqrt() * z
                    })
                    .collect()
            }
        }
    }
}

impl RequirementCdf for RequirementDistribution {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn center(&self) -> Vec<f64> {
        match &self.backend {
            Backend::Kde(_) => vec![self.quantile(0.5).expect("one-dimensional")],
            Backend::Gmm(_) if self.dimension == 1 => vec![self.quantile(0.5).expect("one-dimensional")],
            Backend::Gmm(cs) => (0..self.dimension)
                .map(|j| cs.iter().map(|c| c.weight * c.mean[j]).sum())
                .collect(),
        }
    }

    fn pdf(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dimension);
        match &self.backend {
            Backend::Kde(k) => k.pdf(q[0]),
            Backend::Gmm(cs) => cs.iter().map(|c| c.weight * c.pdf(q)).sum(),
        }
    }

    fn cdf(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dimension);
        match &self.backend {
            Backend::Kde(k) => k.cdf(q[0]),
            Backend::Gmm(cs) => cs
                .iter()
                .map(|c| c.weight * c.coordinate_cdfs(q).iter().product::<f64>())
                .sum::<f64>()
                .clamp(0.0, 1.0),
        }
    }

    fn survival(&self, q: &[f64]) -> f64 {
        match &self.backend {
            Backend::Kde(k) => k.survival(q[0]),
            Backend::Gmm(cs) if self.dimension == 1 => cs
                .iter()
                .map(|c| c.weight * norm_sf((q[0] - c.mean[0]) / c.variance[0].sqrt()))
                .sum::<f64>()
                .clamp(0.0, 1.0),
            Backend::Gmm(_) => 1.0 - self.cdf(q),
        }
    }

    fn cdf_gradient(&self, q: &[f64]) -> Vec<f64> {
        match &self.backend {
            Backend::Kde(k) => vec![k.pdf(q[0])],
            Backend::Gmm(cs) => {
                let mut grad = vec![0.0; self.dimension];
                for c in cs {
                    let phis = c.coordinate_cdfs(q);
                    for j in 0..self.dimension {
                        let s = c.variance[j].sqrt();
                        let mut term = c.weight * norm_pdf((q[j] - c.mean[j]) / s) / s;
                        for (i, phi) in phis.iter().enumerate() {
                            if i != j {
                                term *= phi;
                            }
                        }
                        grad[j] += term;
                    }
                }
                grad
            }
        }
    }

    fn support_bracket(&self) -> (f64, f64) {
        match &self.backend {
            Backend::Kde(k) => {
                let reach = 40.0 * k.bandwidth;
                (k.points[0] - reach, k.points[k.points.len() - 1] + reach)
            }
            Backend::Gmm(cs) => {
                let lo = cs
                    .iter()
                    .map(|c| c.mean[0] - 40.0 * c.variance[0].sqrt())
                    .fold(f64::INFINITY, f64::min);
                let hi = cs
                    .iter()
                    .map(|c| c.mean[0] + 40.0 * c.variance[0].sqrt())
                    .fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }
}
