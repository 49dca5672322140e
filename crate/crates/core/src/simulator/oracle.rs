use rand::Rng;

use super::SimError;
use crate::rng::{stream, substream};

/// Piecewise-linear learning curve through the origin and the knots,
/// constant after the last knot.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthCurve1D {
    sizes: Vec<f64>,
    scores: Vec<f64>,
}

impl GroundTruthCurve1D {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if knots.is_empty() {
            return Err(SimError::InvalidOracle("curve needs at least one knot".into()));
        }
        let (sizes, scores): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
        if sizes.iter().chain(&scores).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidOracle("knots must be finite".into()));
        }
        if sizes[0] <= 0.0 {
            return Err(SimError::InvalidOracle("knot sizes must be positive".into()));
        }
        if sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidOracle("knot sizes must be strictly increasing".into()));
        }
        if scores.windows(2).any(|w| w[1] < w[0]) {
            return Err(SimError::InvalidOracle("knot scores must be non-decreasing".into()));
        }
        let slopes: Vec<f64> = std::iter::once(scores[0] / sizes[0])
            .chain((1..sizes.len()).map(|i| (scores[i] - scores[i - 1]) / (sizes[i] - sizes[i - 1])))
            .collect();
        if slopes.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15) {
            log::warn!("ground-truth curve is not concave");
        }
        Ok(Self { sizes, scores })
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sizes.iter().copied().zip(self.scores.iter().copied())
    }

    pub fn max_score(&self) -> f64 {
        self.scores[self.scores.len() - 1]
    }

    pub fn eval(&self, q: f64) -> f64 {
        let n = self.sizes.len();
        if q <= self.sizes[0] {
            return self.scores[0] * q / self.sizes[0];
        }
        if q >= self.sizes[n - 1] {
            return self.scores[n - 1];
        }
        let i = self.sizes.partition_point(|&s| s <= q);
        let (x0, x1) = (self.sizes[i - 1], self.sizes[i]);
        let (v0, v1) = (self.scores[i - 1], self.scores[i]);
        if q == x0 {
            return v0;
        }
        v0 + (v1 - v0) * (q - x0) / (x1 - x0)
    }

    /// Smallest `q ≥ 0` with `eval(q) ≥ target`.
    pub fn requirement(&self, target: f64) -> Option<f64> {
        if target <= 0.0 {
            return Some(0.0);
        }
        let i = self.scores.partition_point(|&v| v < target);
        if i == self.scores.len() {
            return None;
        }
        if self.scores[i] == target {
            // Knot reached exactly; an earlier flat run cannot reach it sooner.
            return Some(self.sizes[i]);
        }
        let (x0, v0) = if i == 0 { (0.0, 0.0) } else { (self.sizes[i - 1], self.scores[i - 1]) };
        let (x1, v1) = (self.sizes[i], self.scores[i]);
        Some(x0 + (target - v0) * (x1 - x0) / (v1 - v0))
    }
}

/// Score surface over a grid of two source sizes, linear on the two
/// triangles of every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSurface2D {
    grid_x: Vec<f64>,
    grid_y: Vec<f64>,
    /// `scores[i][j]` is the score at `(grid_x[i], grid_y[j])`.
    scores: Vec<Vec<f64>>,
}

/// One surface evaluation, with whether the query was moved into the grid box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceValue {
    pub score: f64,
    pub clamped: bool,
}

impl GroundTruthSurface2D {
    pub fn new(grid_x: Vec<f64>, grid_y: Vec<f64>, scores: Vec<Vec<f64>>) -> Result<Self, SimError> {
        for g in [&grid_x, &grid_y] {
            if g.len() < 2 {
                return Err(SimError::InvalidOracle("each grid axis needs at least two sizes".into()));
            }
            if g.iter().any(|v| !v.is_finite() || *v < 0.0) || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(SimError::InvalidOracle("grid sizes must be strictly increasing".into()));
            }
        }
        if scores.len() != grid_x.len() || scores.iter().any(|row| row.len() != grid_y.len()) {
            return Err(SimError::InvalidOracle("score matrix does not match the grid".into()));
        }
        if scores.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidOracle("scores must be finite".into()));
        }
        let rows_ok = scores.iter().all(|r| r.windows(2).all(|w| w[1] >= w[0]));
        let cols_ok = (0..grid_y.len()).all(|j| (1..grid_x.len()).all(|i| scores[i][j] >= scores[i - 1][j]));
        if !rows_ok || !cols_ok {
            log::warn!("ground-truth surface is not monotone along every grid line");
        }
        Ok(Self { grid_x, grid_y, scores })
    }

    pub fn grid_x(&self) -> &[f64] {
        &self.grid_x
    }

    pub fn grid_y(&self) -> &[f64] {
        &self.grid_y
    }

    pub fn score_at(&self, i: usize, j: usize) -> f64 {
        self.scores[i][j]
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn cell(grid: &[f64], q: f64) -> usize {
        grid.partition_point(|&g| g <= q).clamp(1, grid.len() - 1) - 1
    }

    pub fn eval(&self, q1: f64, q2: f64) -> SurfaceValue {
        let (nx, ny) = (self.grid_x.len(), self.grid_y.len());
        let x = q1.clamp(self.grid_x[0], self.grid_x[nx - 1]);
        let y = q2.clamp(self.grid_y[0], self.grid_y[ny - 1]);
        let clamped = x != q1 || y != q2;
        let (i, j) = (Self::cell(&self.grid_x, x), Self::cell(&self.grid_y, y));
        let u = (x - self.grid_x[i]) / (self.grid_x[i + 1] - self.grid_x[i]);
        let v = (y - self.grid_y[j]) / (self.grid_y[j + 1] - self.grid_y[j]);
        let s = &self.scores;
        // Closer (in cell coordinates) to the low corner than to the high
        // corner means the triangle containing the low corner; ties included.
        let score = if u * u + v * v <= (1.0 - u).powi(2) + (1.0 - v).powi(2) {
            s[i][j] + u * (s[i + 1][j] - s[i][j]) + v * (s[i][j + 1] - s[i][j])
        } else {
            s[i + 1][j + 1] + (1.0 - u) * (s[i][j + 1] - s[i + 1][j + 1]) + (1.0 - v) * (s[i + 1][j] - s[i + 1][j + 1])
        };
        SurfaceValue { score, clamped }
    }

    /// Cheapest `(q1, q2)` in the grid box with `eval ≥ target`.
    ///
    /// The feasible set is a union of polygons whose corners are grid
    /// vertices or points where a triangle edge crosses the target level, so
    /// the minimum of a linear cost sits on one of those candidates.
    /// Equal-cost candidates are chosen between with `tie_seed`.
    pub fn requirement(&self, target: f64, costs: &[f64], tie_seed: u64) -> Option<Vec<f64>> {
        let (nx, ny) = (self.grid_x.len(), self.grid_y.len());
        let mut cands: Vec<[f64; 2]> = Vec::new();
        let pt = |i: usize, j: usize| ([self.grid_x[i], self.grid_y[j]], self.scores[i][j]);
        let mut edge = |a: ([f64; 2], f64), b: ([f64; 2], f64)| {
            let (pa, va) = a;
            let (pb, vb) = b;
            if va >= target {
                cands.push(pa);
            }
            if vb >= target {
                cands.push(pb);
            }
            if (va < target) != (vb < target) {
                let t = (target - va) / (vb - va);
                cands.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
            }
        };
        for i in 0..nx {
            for j in 0..ny {
                if i + 1 < nx {
                    edge(pt(i, j), pt(i + 1, j));
                }
                if j + 1 < ny {
                    edge(pt(i, j), pt(i, j + 1));
                }
                if i + 1 < nx && j + 1 < ny {
                    edge(pt(i + 1, j), pt(i, j + 1));
                }
            }
        }
        let cost = |p: &[f64; 2]| costs[0] * p[0] + costs[1] * p[1];
        let best = cands.iter().map(cost).fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return None;
        }
        let tol = 1e-12 * best.abs().max(1e-300);
        let mut ties: Vec<[f64; 2]> = cands.into_iter().filter(|p| cost(p) - best <= tol).collect();
        ties.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        ties.dedup_by(|a, b| (a[0] - b[0]).abs() <= 1e-12 * a[0].abs().max(1.0) && (a[1] - b[1]).abs() <= 1e-12 * a[1].abs().max(1.0));
        let pick = if ties.len() > 1 {
            substream(tie_seed, stream::TIE_BREAK, 0).random_range(0..ties.len())
        } else {
            0
        };
        Some(ties[pick].to_vec())
    }
}

/// A ground-truth learning curve of one or two sources.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    Curve(GroundTruthCurve1D),
    Surface(GroundTruthSurface2D),
}

impl Oracle {
    pub fn dimension(&self) -> usize {
        match self {
            Self::Curve(_) => 1,
            Self::Surface(_) => 2,
        }
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        match self {
            Self::Curve(c) => c.eval(q[0]),
            Self::Surface(s) => s.eval(q[0], q[1]).score,
        }
    }

    pub fn max_score(&self) -> f64 {
        match self {
            Self::Curve(c) => c.max_score(),
            Self::Surface(s) => s.max_score(),
        }
    }
}

/// Cheapest size vector at which the oracle reaches `target`, if any.
pub fn true_requirement(oracle: &Oracle, target: f64, costs: &[f64], tie_seed: u64) -> Option<Vec<f64>> {
    match oracle {
        Oracle::Curve(c) => c.requirement(target).map(|q| vec![q]),
        Oracle::Surface(s) => s.requirement(target, costs, tie_seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve() -> GroundTruthCurve1D {
        GroundTruthCurve1D::new(vec![(10.0, 50.0), (20.0, 70.0)]).unwrap()
    }

    #[test]
    fn curve_values() {
        let c = curve();
        assert_eq!(c.eval(15.0), 60.0);
        assert_eq!(c.eval(10.0), 50.0);
        assert_eq!(c.eval(20.0), 70.0);
        assert_eq!(c.eval(5.0), 25.0);
        assert_eq!(c.eval(1e6), 70.0);
    }

    #[test]
    fn curve_requirements() {
        let c = curve();
        assert_eq!(c.requirement(60.0), Some(15.0));
        assert_eq!(c.requirement(70.0), Some(20.0));
        assert_eq!(c.requirement(50.0), Some(10.0));
        assert_eq!(c.requirement(25.0), Some(5.0));
        assert_eq!(c.requirement(70.5), None);
        let flat = GroundTruthCurve1D::new(vec![(10.0, 50.0), (20.0, 50.0), (30.0, 60.0)]).unwrap();
        assert_eq!(flat.requirement(50.0), Some(10.0));
    }

    #[test]
    fn curve_rejects_bad_knots() {
        assert!(GroundTruthCurve1D::new(vec![(10.0, 50.0), (10.0, 60.0)]).is_err());
        assert!(GroundTruthCurve1D::new(vec![(10.0, 50.0), (20.0, 40.0)]).is_err());
        assert!(GroundTruthCurve1D::new(vec![]).is_err());
    }

    fn affine_surface(a: f64, b: f64, c: f64) -> GroundTruthSurface2D {
        let gx = vec![1.0, 3.0, 4.0, 9.0];
        let gy = vec![2.0, 2.5, 7.0];
        let scores = gx.iter().map(|x| gy.iter().map(|y| a * x + b * y + c).collect()).collect();
        GroundTruthSurface2D::new(gx, gy, scores).unwrap()
    }

    #[test]
    fn surface_vertices_are_exact() {
        let s = affine_surface(0.3, 1.7, -2.0);
        for (i, x) in s.grid_x().iter().enumerate() {
            for (j, y) in s.grid_y().iter().enumerate() {
                assert_eq!(s.eval(*x, *y).score, s.score_at(i, j));
            }
        }
    }

    #[test]
    fn surface_clamps_outside_the_box() {
        let s = affine_surface(1.0, 1.0, 0.0);
        let v = s.eval(0.0, 100.0);
        assert!(v.clamped);
        assert!((v.score - (1.0 + 7.0)).abs() < 1e-12);
    }

    #[test]
    fn diagonal_tie_uses_low_corner_triangle() {
        // Non-affine cell so the two triangles differ away from the diagonal.
        let s = GroundTruthSurface2D::new(vec![0.0, 2.0], vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![1.0, 5.0]]).unwrap();
        // Midpoint of the diagonal: both planes give the average of the two
        // off-diagonal corners.
        assert_eq!(s.eval(1.0, 0.5).score, 1.0);
        // Point (u, v) = (0.25, 0.25) lies in the low triangle.
        assert!((s.eval(0.5, 0.25).score - 0.5).abs() < 1e-15);
    }

    #[test]
    fn surface_requirement_matches_fine_grid() {
        let gx = vec![0.0, 10.0, 20.0, 40.0];
        let gy = vec![0.0, 5.0, 15.0, 30.0];
        let scores: Vec<Vec<f64>> = gx
            .iter()
            .map(|x: &f64| gy.iter().map(|y: &f64| 30.0 * (1.0 - (-x / 15.0).exp()) + 20.0 * (1.0 - (-y / 10.0).exp())).collect())
            .collect();
        let s = GroundTruthSurface2D::new(gx, gy, scores).unwrap();
        for (target, costs) in [(30.0, [1.0, 1.0]), (40.0, [1.0, 3.0]), (20.0, [2.0, 1.0])] {
            let q = s.requirement(target, &costs, 0).unwrap();
            let cost = costs[0] * q[0] + costs[1] * q[1];
            assert!(s.eval(q[0], q[1]).score >= target - 1e-9);
            let mut best = f64::INFINITY;
            for a in 0..=800 {
                for b in 0..=600 {
                    let (x, y) = (a as f64 * 0.05, b as f64 * 0.05);
                    if s.eval(x, y).score >= target {
                        best = best.min(costs[0] * x + costs[1] * y);
                    }
                }
            }
            assert!(cost <= best + 1e-9, "{cost} vs grid {best}");
            assert!(cost >= best - 0.05 * (costs[0] + costs[1]), "{cost} vs grid {best}");
        }
        assert!(s.requirement(60.0, &[1.0, 1.0], 0).is_none());
    }

    proptest! {
        #[test]
        fn affine_surface_reproduced(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -10.0f64..10.0,
                                     x in 1.0f64..9.0, y in 2.0f64..7.0) {
            let s = affine_surface(a, b, c);
            prop_assert!((s.eval(x, y).score - (a * x + b * y + c)).abs() < 1e-9);
        }

        #[test]
        fn curve_is_monotone(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let c = curve();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.eval(lo) <= c.eval(hi));
        }

        #[test]
        fn curve_requirement_is_tight(t in 0.5f64..70.0) {
            let c = curve();
            let q = c.requirement(t).unwrap();
            prop_assert!(c.eval(q) >= t - 1e-9);
            prop_assert!(q < 1.0 || c.eval(q - 1.0) < t);
        }
    }
}
