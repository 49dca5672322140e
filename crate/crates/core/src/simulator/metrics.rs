use serde::{Deserialize, Serialize};

use super::{RunRecord, SimError};

/// Summary over a set of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Mean cost ratio over successful runs kept after trimming.
    pub cost_ratio: Option<f64>,
    /// Number of successful runs averaged into `cost_ratio`.
    pub cost_ratio_runs: usize,
    /// Mean `q_T / D*` over the same runs (one source only).
    pub points_ratio: Option<f64>,
}

/// `cᵀ(q_T − q0) / cᵀ(D* − q0) − 1`. When the requirement is already met at
/// `q0` a run that collected nothing scores 0.
pub fn cost_ratio(record: &RunRecord) -> Option<f64> {
    let d = record.d_star_true.as_ref()?;
    let spec = &record.spec;
    let dot = |q: &[f64]| -> f64 { spec.costs.iter().zip(q).zip(&spec.q0).map(|((c, a), b)| c * (a - b)).sum() };
    let spent = dot(record.final_amount());
    let needed = dot(d);
    if needed > 0.0 {
        Some(spent / needed - 1.0)
    } else if spent <= 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// `q_T / D*` for one source.
pub fn points_ratio(record: &RunRecord) -> Option<f64> {
    let d = record.d_star_true.as_ref()?;
    (d.len() == 1 && d[0] > 0.0).then(|| record.final_amount()[0] / d[0])
}

/// Linear-interpolation percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Failure rate over all runs and the cost ratio over successful runs whose
/// total cost is at or below the `trim_percentile` of successful costs.
pub fn aggregate_metrics(records: &[RunRecord], trim_percentile: f64) -> Result<MetricsReport, SimError> {
    if records.is_empty() {
        return Err(SimError::InvalidArgument("no records to aggregate".into()));
    }
    if !(0.0..=100.0).contains(&trim_percentile) {
        return Err(SimError::InvalidArgument(format!("trim percentile {trim_percentile} outside [0, 100]")));
    }
    let failures = records.iter().filter(|r| !r.met_target).count();
    let successes: Vec<(&RunRecord, f64)> = records
        .iter()
        .filter(|r| r.met_target)
        .filter_map(|r| cost_ratio(r).map(|c| (r, c)))
        .collect();
    let kept: Vec<&(&RunRecord, f64)> = if successes.is_empty() || trim_percentile >= 100.0 {
        successes.iter().collect()
    } else {
        let mut costs: Vec<f64> = successes.iter().map(|(r, _)| r.total_paid).collect();
        costs.sort_by(f64::total_cmp);
        let cut = percentile(&costs, trim_percentile);
        successes.iter().filter(|(r, _)| r.total_paid <= cut).collect()
    };
    let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let points: Vec<f64> = kept.iter().filter_map(|(r, _)| points_ratio(r)).collect();
    let points_ratio = if points.len() == kept.len() { mean(points) } else { None };
    Ok(MetricsReport {
        runs: records.len(),
        failures,
        failure_rate: failures as f64 / records.len() as f64,
        cost_ratio: mean(kept.iter().map(|(_, c)| *c).collect()),
        cost_ratio_runs: kept.len(),
        points_ratio,
    })
}
