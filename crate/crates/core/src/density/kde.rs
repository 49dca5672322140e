use super::{norm_pdf, DensityError, Kde, RequirementDistribution, KERNEL_REACH};

/// Leave-one-out scoring uses at most this many evaluation points, taken at
/// an even stride through the sorted estimates.
const MAX_LOO_POINTS: usize = 2000;

/// `n` log-spaced bandwidths from `lo` to `hi` inclusive.
pub fn log_bandwidth_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn loo_log_likelihood(sorted: &[f64], h: f64) -> f64 {
    let n = sorted.len();
    let stride = n.div_ceil(MAX_LOO_POINTS).max(1);
    let reach = KERNEL_REACH * h;
    let self_term = norm_pdf(0.0);
    let norm = (n - 1) as f64 * h;
    let mut total = 0.0;
    for i in (0..n).step_by(stride) {
        let x = sorted[i];
        let lo = sorted.partition_point(|&y| y < x - reach);
        let hi = sorted.partition_point(|&y| y <= x + reach);
        let s: f64 = sorted[lo..hi].iter().map(|y| norm_pdf((x - y) / h)).sum();
        let density = ((s - self_term).max(0.0) / norm).max(f64::MIN_POSITIVE);
        total += density.ln();
    }
    total
}

/// Gaussian KDE with the bandwidth picked from `bandwidth_grid` by
/// leave-one-out log-likelihood. Ties go to the smaller bandwidth.
///
/// When every estimate is identical the smallest bandwidth is used and the
/// result is flagged degenerate.
pub fn fit_kde(estimates: &[f64], bandwidth_grid: &[f64]) -> Result<RequirementDistribution, DensityError> {
    if estimates.len() < 2 {
        return Err(DensityError::TooFewEstimates {
            need: 2,
            got: estimates.len(),
        });
    }
    if bandwidth_grid.is_empty() || bandwidth_grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(DensityError::InvalidConfig(
            "bandwidth grid must be non-empty and positive".into(),
        ));
    }
    let mut grid = bandwidth_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        log::warn!("all {} requirement estimates equal {}", sorted.len(), sorted[0]);
        let kde = Kde::new(sorted, grid[0])?;
        return Ok(RequirementDistribution::from_kde(kde).flagged_degenerate());
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &h in &grid {
        let score = loo_log_likelihood(&sorted, h);
        if score > best.0 {
            best = (score, h);
        }
    }
    log::debug!("kde bandwidth {} (loo log-likelihood {})", best.1, best.0);
    Ok(RequirementDistribution::from_kde(Kde::new(sorted, best.1)?))
}
