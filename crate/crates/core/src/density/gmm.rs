use rand::Rng;

use super::{DensityError, GmmComponent, RequirementDistribution};
use crate::rng::{stream, substream};

const EM_ITERATIONS: usize = 100;
const EM_TOLERANCE: f64 = 1e-8;
const MAX_COMPONENTS: usize = 10;

struct Mixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

impl Mixture {
    fn log_component(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = self.weights[k].ln();
        for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.vars[k]) {
            acc -= 0.5 * ((xi - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln());
        }
        acc
    }

    /// Responsibilities for one point (overwritten into `out`) and its log-likelihood.
    fn e_step_point(&self, x: &[f64], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.log_component(k, x);
        }
        let top = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - top).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        top + sum.ln()
    }
}

fn sq_dist(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    a.iter().zip(b).zip(scale).map(|((x, y), s)| ((x - y) / s).powi(2)).sum()
}

/// k-means++ seeding in coordinates scaled by the per-dimension spread.
fn kmeans_pp<R: Rng>(data: &[Vec<f64>], k: usize, scale: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0], scale)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[idx].clone());
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1], scale));
        }
    }
    centers
}

fn fit_em(data: &[Vec<f64>], k: usize, floor: &[f64], scale: &[f64], seed: u64) -> (Mixture, f64) {
    let n = data.len();
    let mut rng = substream(seed, stream::GMM_INIT, k as u64);
    let centers = kmeans_pp(data, k, scale, &mut rng);
    let mut resp = vec![vec![0.0; k]; n];
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        let nearest = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a], scale).total_cmp(&sq_dist(x, &centers[b], scale)))
            .unwrap_or(0);
        r[nearest] = 1.0;
    }
    let mut mix = Mixture {
        weights: vec![1.0 / k as f64; k],
        means: centers,
        vars: vec![floor.to_vec(); k],
    };
    m_step(data, &resp, floor, &mut mix);
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..EM_ITERATIONS {
        ll = 0.0;
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            ll += mix.e_step_point(x, r);
        }
        ll /= n as f64;
        if (ll - prev).abs() < EM_TOLERANCE {
            break;
        }
        prev = ll;
        m_step(data, &resp, floor, &mut mix);
    }
    (mix, ll * n as f64)
}

fn m_step(data: &[Vec<f64>], resp: &[Vec<f64>], floor: &[f64], mix: &mut Mixture) {
    let n = data.len() as f64;
    let dim = floor.len();
    for k in 0..mix.weights.len() {
        let nk: f64 = resp.iter().map(|r| r[k]).sum();
        if nk <= 1e-12 {
            // Starved component: keep its mean, reset to a tiny weight.
            mix.weights[k] = 1e-12;
            mix.vars[k] = floor.to_vec();
            continue;
        }
        mix.weights[k] = nk / n;
        for j in 0..dim {
            let m = data.iter().zip(resp).map(|(x, r)| r[k] * x[j]).sum::<f64>() / nk;
            let v = data.iter().zip(resp).map(|(x, r)| r[k] * (x[j] - m).powi(2)).sum::<f64>() / nk;
            mix.means[k][j] = m;
            mix.vars[k][j] = v.max(floor[j]);
        }
    }
    let total: f64 = mix.weights.iter().sum();
    for w in mix.weights.iter_mut() {
        *w /= total;
    }
}

/// Diagonal-covariance Gaussian mixture fitted by EM, with the component
/// count chosen from `component_grid` by BIC (ties to fewer components).
pub fn fit_gmm(
    estimates: &[Vec<f64>],
    component_grid: &[usize],
    seed: u64,
) -> Result<RequirementDistribution, DensityError> {
    if component_grid.is_empty() || component_grid.iter().any(|&k| k == 0 || k > MAX_COMPONENTS) {
        return Err(DensityError::InvalidConfig(format!(
            "component grid must be non-empty within 1..={MAX_COMPONENTS}"
        )));
    }
    let need = *component_grid.iter().max().unwrap_or(&1);
    if estimates.len() < need.max(1) {
        return Err(DensityError::TooFewEstimates {
            need,
            got: estimates.len(),
        });
    }
    let dim = estimates[0].len();
    if dim == 0 {
        return Err(DensityError::InvalidEstimates("empty size vectors".into()));
    }
    for e in estimates {
        if e.len() != dim {
            return Err(DensityError::Dimension {
                expected: dim,
                got: e.len(),
            });
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(DensityError::InvalidEstimates("non-finite estimate".into()));
        }
    }
    let n = estimates.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| estimates.iter().map(|e| e[j]).sum::<f64>() / n)
        .collect();
    let var: Vec<f64> = (0..dim)
        .map(|j| estimates.iter().map(|e| (e[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    let floor: Vec<f64> = (0..dim)
        .map(|j| (1e-6 * var[j]).max(1e-12 * (1.0 + mean[j] * mean[j])))
        .collect();
    if estimates.iter().all(|e| e == &estimates[0]) {
        log::warn!("all {} requirement estimates equal {:?}", estimates.len(), estimates[0]);
        let component = GmmComponent {
            weight: 1.0,
            mean: estimates[0].clone(),
            variance: estimates[0].iter().map(|x| (1e-6 * x.abs().max(1.0)).powi(2)).collect(),
        };
        return Ok(RequirementDistribution::from_components(vec![component])?.flagged_degenerate());
    }
    let scale: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f).sqrt()).collect();
    let mut grid = component_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut best: Option<(f64, Mixture)> = None;
    for k in grid {
        let (mix, ll) = fit_em(estimates, k, &floor, &scale, seed);
        let params = (k * 2 * dim + k - 1) as f64;
        let bic = -2.0 * ll + params * n.ln();
        log::debug!("gmm k={k} log-likelihood {ll} bic {bic}");
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, mix));
        }
    }
    let (_, mix) = best.expect("grid is non-empty");
    let components: Vec<GmmComponent> = (0..mix.weights.len())
        .filter(|&k| mix.weights[k] > 1e-12)
        .map(|k| GmmComponent {
            weight: mix.weights[k],
            mean: mix.means[k].clone(),
            variance: mix.vars[k].clone(),
        })
        .collect();
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let components = components
        .into_iter()
        .map(|mut c| {
            c.weight /= total;
            c
        })
        .collect();
    RequirementDistribution::from_components(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Backend, RequirementCdf};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn components(d: &RequirementDistribution) -> &[GmmComponent] {
        match d.backend() {
            Backend::Gmm(cs) => cs,
            Backend::Kde(_) => unreachable!(),
        }
    }

    fn cluster(center: [f64; 2], sd: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)])
            .collect()
    }

    #[test]
    fn tight_cluster_selects_one_component() {
        let data = cluster([100.0, 200.0], 1.0, 300, 1);
        let d = fit_gmm(&data, &[1, 2], 9).unwrap();
        let cs = components(&d);
        assert_eq!(cs.len(), 1);
        assert!((cs[0].mean[0] - 100.0).abs() <= 2.0 && (cs[0].mean[1] - 200.0).abs() <= 2.0);
    }

    #[test]
    fn two_clusters_are_separated() {
        let mut data = cluster([100.0, 100.0], 5.0, 250, 2);
        data.extend(cluster([500.0, 500.0], 5.0, 250, 3));
        let d = fit_gmm(&data, &[1, 2, 3, 4], 4).unwrap();
        let mut cs = components(&d).to_vec();
        assert_eq!(cs.len(), 2, "{cs:?}");
        cs.sort_by(|a, b| a.mean[0].total_cmp(&b.mean[0]));
        for (c, center) in cs.iter().zip([100.0, 500.0]) {
            assert!(c.mean.iter().all(|m| (m - center).abs() <= 10.0), "{c:?}");
        }
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let data = vec![vec![3.0, 7.0]; 20];
        let d = fit_gmm(&data, &[1, 2], 0).unwrap();
        assert!(d.is_degenerate());
        assert!((d.cdf(&[3.0, 7.0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let mut data = cluster([10.0, 10.0], 3.0, 100, 5);
        data.extend(cluster([30.0, 15.0], 3.0, 100, 6));
        let a = fit_gmm(&data, &[1, 2, 3], 17).unwrap();
        let b = fit_gmm(&data, &[1, 2, 3], 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_grids() {
        let data = cluster([0.0, 0.0], 1.0, 5, 1);
        assert!(fit_gmm(&data, &[], 0).is_err());
        assert!(fit_gmm(&data, &[11], 0).is_err());
        assert!(matches!(fit_gmm(&data, &[6], 0), Err(DensityError::TooFewEstimates { .. })));
    }
}
