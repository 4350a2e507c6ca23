//! Couplings and their costs: exact assignment for empirical `W₂²`, the
//! Dacorogna–Moser flow coupling with a general schedule, the
//! Benamou–Brenier cost bound, the exponential-map coupling and the
//! flow-versus-exponential stability checks.

mod assignment;
mod flow;
mod stability;

pub use assignment::{
    assign_points, nearest_candidates, solve_assignment, solve_with_candidates, Matching,
    DENSE_LIMIT, DUAL_TOLERANCE,
};
pub use flow::{bb_cost_bound, dm_flow_map, shallow_cost_bound, FlowSchedule, FlowTrajectory};
pub use stability::{
    exp_pushforward_cost, flow_endpoint, flow_vs_exp_gap, pushforward_distance_bound, ExpCoupling,
    GapOptions, GapReport,
};

use crate::error::{invalid, Result};
use crate::geometry::{DomainKind, Point};

/// Nearest-neighbour candidates per row for large geometric assignments.
pub const DEFAULT_NEIGHBOURS: usize = 16;

/// Optimal matching between two equal-size clouds under squared distance;
/// `cost` is the empirical `W₂²`.
pub fn bipartite_cost(domain: DomainKind, xs: &[Point], ys: &[Point]) -> Result<Matching> {
    if xs.len() != ys.len() {
        return Err(invalid(format!(
            "size mismatch: |X|={} |Y|={}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(invalid("point clouds must be nonempty"));
    }
    assign_points(domain, xs, ys, DEFAULT_NEIGHBOURS)
}

/// `W₂²` between `(1/n) Σ δ_{X_i}` and `(1/(qn)) Σ δ_{Y_j}`: each `X_i` is
/// replicated `q` times and a `qn × qn` assignment is solved.
pub fn replicated_cost(domain: DomainKind, xs: &[Point], ys: &[Point], q: usize) -> Result<f64> {
    if q == 0 {
        return Err(invalid("replication factor must be positive"));
    }
    if xs.is_empty() {
        return Err(invalid("point clouds must be nonempty"));
    }
    if ys.len() != q * xs.len() {
        return Err(invalid(format!(
            "|Y|={} is not {q}·|X|={}",
            ys.len(),
            q * xs.len()
        )));
    }
    if q == 1 {
        return Ok(bipartite_cost(domain, xs, ys)?.cost);
    }
    let rows: Vec<Point> = xs.iter().flat_map(|&p| std::iter::repeat_n(p, q)).collect();
    Ok(assign_points(domain, &rows, ys, DEFAULT_NEIGHBOURS.max(4 * q))?.cost)
}

/// A weighted point set standing in for the volume measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub domain: DomainKind,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Midpoint rule with `per_axis` cells per axis (`per_axis²` points in
    /// two dimensions). Spectrally accurate for the trigonometric and
    /// cosine bases.
    pub fn midpoint(domain: DomainKind, per_axis: usize) -> Result<Self> {
        if per_axis == 0 {
            return Err(invalid("grid needs at least one cell per axis"));
        }
        match domain {
            DomainKind::Interval1 => Self::product(domain, per_axis, 1),
            _ => Self::product(domain, per_axis, per_axis),
        }
    }

    /// Equal-weight midpoint grid with exactly `m` points: the most nearly
    /// square `a × b` factorisation in two dimensions.
    pub fn uniform(domain: DomainKind, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(invalid("grid needs at least one point"));
        }
        if domain == DomainKind::Interval1 {
            return Self::product(domain, m, 1);
        }
        let a = (1..=(m as f64).sqrt() as usize)
            .rev()
            .find(|a| m.is_multiple_of(*a))
            .unwrap_or(1);
        Self::product(domain, m / a, a)
    }

    fn product(domain: DomainKind, nx: usize, ny: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            let x = (i as f64 + 0.5) / nx as f64;
            if domain == DomainKind::Interval1 {
                points.push(Point::new(x, 0.0));
            } else {
                for j in 0..ny {
                    points.push(Point::new(x, (j as f64 + 0.5) / ny as f64));
                }
            }
        }
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Ok(QuadratureGrid {
            domain,
            points,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    fn equal_weights(&self) -> bool {
        let w0 = self.weights.first().copied().unwrap_or(0.0);
        self.weights
            .iter()
            .all(|&w| (w - w0).abs() <= 1e-15 * w0.abs().max(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_uniform, sq_distance};
    use proptest::prelude::*;

    fn brute(domain: DomainKind, xs: &[Point], ys: &[Point]) -> f64 {
        fn perms(k: usize, used: &mut [bool], f: &mut dyn FnMut(&[usize]), cur: &mut Vec<usize>) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for j in 0..k {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    perms(k, used, f, cur);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let n = xs.len();
        let mut best = f64::INFINITY;
        perms(
            n,
            &mut vec![false; n],
            &mut |p| {
                let c: f64 = p
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| sq_distance(domain, xs[i], ys[j]))
                    .sum();
                best = best.min(c);
            },
            &mut Vec::new(),
        );
        best / n as f64
    }

    #[test]
    fn identical_clouds_cost_nothing() {
        let xs = sample_uniform(DomainKind::Square2, 1, 40).unwrap();
        assert_eq!(
            bipartite_cost(DomainKind::Square2, &xs, &xs).unwrap().cost,
            0.0
        );
    }

    #[test]
    fn interval_pairs_monotonically() {
        let xs = [Point::new(0.1, 0.0), Point::new(0.8, 0.0)];
        let ys = [Point::new(0.9, 0.0), Point::new(0.2, 0.0)];
        let m = bipartite_cost(DomainKind::Interval1, &xs, &ys).unwrap();
        assert_eq!(m.perm, vec![1, 0]);
        assert!((m.cost - 0.01).abs() < 1e-15);
    }

    #[test]
    fn size_mismatch_rejected() {
        let xs = sample_uniform(DomainKind::Torus2, 1, 3).unwrap();
        assert!(bipartite_cost(DomainKind::Torus2, &xs, &xs[..2]).is_err());
        assert!(replicated_cost(DomainKind::Torus2, &xs, &xs[..2], 1).is_err());
        assert!(replicated_cost(DomainKind::Torus2, &xs[..1], &xs, 2).is_err());
        assert!(replicated_cost(DomainKind::Torus2, &xs, &xs, 0).is_err());
    }

    #[test]
    fn sparse_replicated_matches_dense() {
        let q = 4;
        for domain in [DomainKind::Torus2, DomainKind::Square2] {
            for seed in 0..3 {
                let mut rng = crate::rng::substream(seed, 5);
                let xs = crate::geometry::sample_uniform_with(domain, &mut rng, 60).unwrap();
                let ys = crate::geometry::sample_uniform_with(domain, &mut rng, q * 60).unwrap();
                let rows: Vec<Point> = xs.iter().flat_map(|&p| std::iter::repeat_n(p, q)).collect();
                let dense: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&r| ys.iter().map(|&y| sq_distance(domain, r, y)).collect())
                    .collect();
                let expected = solve_assignment(&dense).unwrap().cost;
                assert!((replicated_cost(domain, &xs, &ys, q).unwrap() - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_agreement_small_n() {
        let mut rng = crate::rng::substream(17, 1);
        for n in 1..=7 {
            for _ in 0..100 {
                for domain in [DomainKind::Torus2, DomainKind::Square2] {
                    let xs = crate::geometry::sample_uniform_with(domain, &mut rng, n).unwrap();
                    let ys = crate::geometry::sample_uniform_with(domain, &mut rng, n).unwrap();
                    let m = bipartite_cost(domain, &xs, &ys).unwrap();
                    assert!((m.cost - brute(domain, &xs, &ys)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn replicated_reductions() {
        let xs = sample_uniform(DomainKind::Torus2, 4, 30).unwrap();
        let ys = sample_uniform(DomainKind::Torus2, 5, 30).unwrap();
        let a = replicated_cost(DomainKind::Torus2, &xs, &ys, 1).unwrap();
        assert_eq!(
            a,
            bipartite_cost(DomainKind::Torus2, &xs, &ys).unwrap().cost
        );

        let x = Point::new(0.2, 0.3);
        let y = Point::new(0.5, 0.7);
        let c = replicated_cost(DomainKind::Square2, &[x], &[y; 5], 5).unwrap();
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn replicated_matches_vertex_enumeration() {
        // n=2, q=2: every integral split sends two of the four Y atoms to each X.
        let mut rng = crate::rng::substream(23, 0);
        for _ in 0..50 {
            let xs = crate::geometry::sample_uniform_with(DomainKind::Torus2, &mut rng, 2).unwrap();
            let ys = crate::geometry::sample_uniform_with(DomainKind::Torus2, &mut rng, 4).unwrap();
            let mut best = f64::INFINITY;
            for mask in 0u32..16 {
                if mask.count_ones() != 2 {
                    continue;
                }
                let c: f64 = (0..4)
                    .map(|j| sq_distance(DomainKind::Torus2, xs[((mask >> j) & 1) as usize], ys[j]))
                    .sum::<f64>()
                    / 4.0;
                best = best.min(c);
            }
            let got = replicated_cost(DomainKind::Torus2, &xs, &ys, 2).unwrap();
            assert!((got - best).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_grid_shapes() {
        let g = QuadratureGrid::uniform(DomainKind::Torus2, 12).unwrap();
        assert_eq!(g.len(), 12);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = QuadratureGrid::uniform(DomainKind::Square2, 7).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(
            QuadratureGrid::midpoint(DomainKind::Interval1, 9)
                .unwrap()
                .len(),
            9
        );
        assert!(QuadratureGrid::uniform(DomainKind::Torus2, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn interval_solver_equals_sorted_order(seed in 0u64..10_000, n in 1usize..200) {
            let xs = sample_uniform(DomainKind::Interval1, seed, n).unwrap();
            let ys = sample_uniform(DomainKind::Interval1, seed + 1, n).unwrap();
            let mut a: Vec<f64> = xs.iter().map(|p| p.x).collect();
            let mut b: Vec<f64> = ys.iter().map(|p| p.x).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let sorted: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
            let m = bipartite_cost(DomainKind::Interval1, &xs, &ys).unwrap();
            prop_assert!((m.cost - sorted).abs() < 1e-12);
        }

        #[test]
        fn w2_is_symmetric_and_triangular(seed in 0u64..10_000, n in 2usize..40, torus in any::<bool>()) {
            let domain = if torus { DomainKind::Torus2 } else { DomainKind::Square2 };
            let a = sample_uniform(domain, seed, n).unwrap();
            let b = sample_uniform(domain, seed + 7, n).unwrap();
            let c = sample_uniform(domain, seed + 13, n).unwrap();
            let w = |x: &[Point], y: &[Point]| bipartite_cost(domain, x, y).unwrap().cost.sqrt();
            prop_assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-9);
            prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
        }

        #[test]
        fn matching_cost_recomputes(seed in 0u64..10_000, n in 1usize..300) {
            let xs = sample_uniform(DomainKind::Torus2, seed, n).unwrap();
            let ys = sample_uniform(DomainKind::Torus2, seed + 3, n).unwrap();
            let m = bipartite_cost(DomainKind::Torus2, &xs, &ys).unwrap();
            let mut seen = vec![false; n];
            for &j in &m.perm {
                prop_assert!(!seen[j]);
                seen[j] = true;
            }
            let c: f64 = m.perm.iter().enumerate().map(|(i, &j)| sq_distance(DomainKind::Torus2, xs[i], ys[j])).sum::<f64>() / n as f64;
            prop_assert!((c - m.cost).abs() < 1e-12);
        }
    }
}
