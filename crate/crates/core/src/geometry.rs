//! Flat model geometries: the torus `R²/Z²`, the unit square with the
//! reflection group generated by integer lines, and the unit interval.
//!
//! Every domain carries the Lebesgue measure, which is a probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainKind {
    Torus2,
    Square2,
    Interval1,
}

impl DomainKind {
    pub fn dim(self) -> usize {
        match self {
            DomainKind::Interval1 => 1,
            _ => 2,
        }
    }

    /// Parses `torus`, `square` or `interval`.
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "torus" | "torus2" => Ok(DomainKind::Torus2),
            "square" | "square2" => Ok(DomainKind::Square2),
            "interval" | "interval1" => Ok(DomainKind::Interval1),
            other => Err(invalid(format!("unknown domain '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Torus2 => "torus",
            DomainKind::Square2 => "square",
            DomainKind::Interval1 => "interval",
        }
    }
}

/// A point of the fundamental cell. On the interval `y` is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn coords(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn offset(self, v: [f64; 2]) -> [f64; 2] {
        [self.x + v[0], self.y + v[1]]
    }
}

/// Images of a base point under the reflection group of the square.
///
/// Images are listed once per group element, so coincident images (a base
/// point on an edge or corner) appear with multiplicity.
#[derive(Debug, Clone)]
pub struct IsometryOrbit {
    pub base: Point,
    pub images: Vec<[f64; 2]>,
}

fn wrap_unit(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

fn reflect_unit(v: f64) -> f64 {
    let r = v.rem_euclid(2.0);
    let r = if r >= 2.0 { 0.0 } else { r };
    if r > 1.0 {
        2.0 - r
    } else {
        r
    }
}

/// Canonical representative of `p` in the fundamental cell.
pub fn fold(domain: DomainKind, p: [f64; 2]) -> Result<Point> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return Err(invalid(format!("non-finite point ({}, {})", p[0], p[1])));
    }
    Ok(fold_unchecked(domain, p))
}

pub(crate) fn fold_unchecked(domain: DomainKind, p: [f64; 2]) -> Point {
    match domain {
        DomainKind::Torus2 => Point::new(wrap_unit(p[0]), wrap_unit(p[1])),
        DomainKind::Square2 => Point::new(reflect_unit(p[0]), reflect_unit(p[1])),
        DomainKind::Interval1 => Point::new(reflect_unit(p[0]), 0.0),
    }
}

/// Geodesic distance. On the torus this is the minimum over the nine
/// integer shifts of the Euclidean distance.
pub fn distance(domain: DomainKind, p: Point, q: Point) -> f64 {
    match domain {
        DomainKind::Torus2 => {
            let mut best = f64::INFINITY;
            for sx in [-1.0, 0.0, 1.0] {
                for sy in [-1.0, 0.0, 1.0] {
                    let dx = p.x - q.x + sx;
                    let dy = p.y - q.y + sy;
                    best = best.min(dx * dx + dy * dy);
                }
            }
            best.sqrt()
        }
        DomainKind::Square2 | DomainKind::Interval1 => {
            let dx = p.x - q.x;
            let dy = p.y - q.y;
            (dx * dx + dy * dy).sqrt()
        }
    }
}

/// Squared distance, separable form used on hot paths. Agrees with
/// `distance(..)^2` since the nine-shift minimum splits per coordinate.
#[inline]
pub fn sq_distance(domain: DomainKind, p: Point, q: Point) -> f64 {
    let (dx, dy) = displacement(domain, p, q);
    dx * dx + dy * dy
}

/// Shortest displacement `q - p` (minimal image on the torus).
#[inline]
pub fn displacement(domain: DomainKind, p: Point, q: Point) -> (f64, f64) {
    let mut dx = q.x - p.x;
    let mut dy = q.y - p.y;
    if domain == DomainKind::Torus2 {
        dx -= dx.round();
        dy -= dy.round();
    }
    (dx, dy)
}

/// Exponential map. The domains are flat, so this is `fold(p + v)`; on the
/// square the fold reflects across the boundary (billiard extension).
pub fn exp_map(domain: DomainKind, p: Point, v: [f64; 2]) -> Result<Point> {
    let norm = v[0].hypot(v[1]);
    if !(norm < 0.5) {
        return Err(Error::Precondition(format!(
            "tangent vector norm {norm} must be < 1/2"
        )));
    }
    fold(domain, p.offset(v))
}

/// `n` i.i.d. uniform points drawn from `rng`.
pub fn sample_uniform_with<R: Rng + ?Sized>(
    domain: DomainKind,
    rng: &mut R,
    n: usize,
) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(invalid("sample size must be >= 1"));
    }
    Ok((0..n)
        .map(|_| match domain {
            DomainKind::Interval1 => Point::new(rng.random::<f64>(), 0.0),
            _ => {
                let x = rng.random::<f64>();
                let y = rng.random::<f64>();
                Point::new(x, y)
            }
        })
        .collect())
}

/// `n` i.i.d. uniform points, deterministic in `seed`.
pub fn sample_uniform(domain: DomainKind, seed: u64, n: usize) -> Result<Vec<Point>> {
    let mut rng = rng::substream(seed, 0);
    sample_uniform_with(domain, &mut rng, n)
}

/// Images of `x` under the square's reflection group lying within `radius`
/// of the unit cell.
pub fn orbit_images(x: Point, radius: f64) -> Result<IsometryOrbit> {
    if !(radius > 0.0) {
        return Err(invalid("radius must be positive"));
    }
    let images = reflected_images_2d(x.coords(), radius);
    Ok(IsometryOrbit { base: x, images })
}

/// 1D images `±x + 2a` within `radius` of `[0, 1]`.
pub(crate) fn reflected_images_1d(x: f64, radius: f64) -> Vec<f64> {
    let lo = ((-radius - 1.0) / 2.0).floor() as i64;
    let hi = ((2.0 + radius) / 2.0).ceil() as i64;
    let mut out = Vec::new();
    for a in lo..=hi {
        for s in [1.0, -1.0] {
            let z = s * x + 2.0 * a as f64;
            if dist_to_unit(z) <= radius {
                out.push(z);
            }
        }
    }
    out
}

fn reflected_images_2d(x: [f64; 2], radius: f64) -> Vec<[f64; 2]> {
    let xs = reflected_images_1d(x[0], radius);
    let ys = reflected_images_1d(x[1], radius);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &a in &xs {
        let da = dist_to_unit(a);
        for &b in &ys {
            let db = dist_to_unit(b);
            if da * da + db * db <= radius * radius {
                out.push([a, b]);
            }
        }
    }
    out
}

fn dist_to_unit(z: f64) -> f64 {
    if z < 0.0 {
        -z
    } else if z > 1.0 {
        z - 1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn close(p: Point, x: f64, y: f64) {
        assert_abs_diff_eq!(p.x, x, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, y, epsilon = 1e-12);
    }

    #[test]
    fn fold_examples() {
        close(fold(DomainKind::Torus2, [1.3, -0.25]).unwrap(), 0.3, 0.75);
        close(fold(DomainKind::Square2, [1.2, 0.4]).unwrap(), 0.8, 0.4);
        close(fold(DomainKind::Square2, [-0.1, 2.3]).unwrap(), 0.1, 0.3);
        assert!(fold(DomainKind::Torus2, [f64::NAN, 0.0]).is_err());
        assert!(fold(DomainKind::Square2, [0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn torus_fold_never_returns_one() {
        let p = fold(DomainKind::Torus2, [-1e-18, -0.0]).unwrap();
        assert!(p.x < 1.0 && p.y < 1.0);
    }

    #[test]
    fn distance_examples() {
        let d = distance(
            DomainKind::Torus2,
            Point::new(0.1, 0.5),
            Point::new(0.9, 0.5),
        );
        assert_abs_diff_eq!(d, 0.2, epsilon = 1e-12);
        let p = Point::new(0.3, 0.7);
        for dom in [
            DomainKind::Torus2,
            DomainKind::Square2,
            DomainKind::Interval1,
        ] {
            assert_eq!(distance(dom, p, p), 0.0);
        }
        let d = distance(
            DomainKind::Square2,
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
        );
        assert_abs_diff_eq!(d, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn exp_map_examples() {
        let q = exp_map(DomainKind::Torus2, Point::new(0.95, 0.5), [0.1, 0.0]).unwrap();
        close(q, 0.05, 0.5);
        let p = Point::new(0.2, 0.6);
        assert_eq!(exp_map(DomainKind::Square2, p, [0.0, 0.0]).unwrap(), p);
        let q = exp_map(DomainKind::Square2, Point::new(0.98, 0.5), [0.05, 0.0]).unwrap();
        close(q, 0.97, 0.5);
        assert!(matches!(
            exp_map(DomainKind::Torus2, p, [0.5, 0.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_uniform() {
        let a = sample_uniform(DomainKind::Torus2, 11, 3).unwrap();
        let b = sample_uniform(DomainKind::Torus2, 11, 3).unwrap();
        assert_eq!(a, b);
        assert!(sample_uniform(DomainKind::Square2, 1, 0).is_err());
        let one = sample_uniform(DomainKind::Interval1, 5, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((0.0..1.0).contains(&one[0].x) && one[0].y == 0.0);

        let n = 100_000;
        let pts = sample_uniform(DomainKind::Torus2, 2024, n).unwrap();
        let mean = pts.iter().map(|p| p.x).sum::<f64>() / n as f64;
        let tol = 3.0 / (12.0 * n as f64).sqrt();
        assert!((mean - 0.5).abs() < tol, "mean {mean}");
    }

    #[test]
    fn orbit_examples() {
        let x = Point::new(0.3, 0.4);
        let small = orbit_images(x, 0.01).unwrap();
        assert!(small.images.contains(&[0.3, 0.4]));

        let big = orbit_images(x, 3.0).unwrap();
        let has = |a: f64, b: f64| {
            big.images
                .iter()
                .any(|z| (z[0] - a).abs() < 1e-12 && (z[1] - b).abs() < 1e-12)
        };
        assert!(has(-0.3, 0.4));
        assert!(has(0.3, -0.4));
        assert!(has(1.7, 0.4));
        for z in &big.images {
            close(fold(DomainKind::Square2, *z).unwrap(), 0.3, 0.4);
        }
    }

    #[test]
    fn orbit_count_matches_lattice_density() {
        // Images within r of the unit cell: area of the r-neighbourhood of
        // the cell is 1 + 4r + πr², one image per unit area.
        let x = Point::new(0.37, 0.81);
        for r in [10.0, 20.0] {
            let count = orbit_images(x, r).unwrap().images.len() as f64;
            let expect = 1.0 + 4.0 * r + std::f64::consts::PI * r * r;
            assert!(
                (count / expect - 1.0).abs() < 0.05,
                "r={r} count={count} expect={expect}"
            );
        }
    }

    #[test]
    fn corner_has_four_coincident_images() {
        let orbit = orbit_images(Point::new(0.0, 0.0), 0.1).unwrap();
        let at_origin = orbit
            .images
            .iter()
            .filter(|z| z[0] == 0.0 && z[1] == 0.0)
            .count();
        assert_eq!(at_origin, 4);
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(p in arb_point(), q in arb_point(), r in arb_point()) {
            for dom in [DomainKind::Torus2, DomainKind::Square2] {
                let pq = distance(dom, p, q);
                prop_assert!((pq - distance(dom, q, p)).abs() <= 1e-12);
                prop_assert!(pq <= distance(dom, p, r) + distance(dom, r, q) + 1e-12);
                prop_assert!((sq_distance(dom, p, q) - pq * pq).abs() < 1e-12);
            }
        }

        #[test]
        fn fold_is_idempotent(x in -5.0..5.0f64, y in -5.0..5.0f64) {
            for dom in [DomainKind::Torus2, DomainKind::Square2, DomainKind::Interval1] {
                let once = fold(dom, [x, y]).unwrap();
                let twice = fold(dom, once.coords()).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn exp_map_round_trip(p in arb_point(), vx in -0.3..0.3f64, vy in -0.3..0.3f64) {
            prop_assume!(vx.hypot(vy) < 0.5);
            let q = exp_map(DomainKind::Torus2, p, [vx, vy]).unwrap();
            let back = exp_map(DomainKind::Torus2, q, [-vx, -vy]).unwrap();
            prop_assert!(distance(DomainKind::Torus2, back, p) < 1e-12);

            let end = p.offset([vx, vy]);
            if (0.0..=1.0).contains(&end[0]) && (0.0..=1.0).contains(&end[1]) {
                let q = exp_map(DomainKind::Square2, p, [vx, vy]).unwrap();
                let back = exp_map(DomainKind::Square2, q, [-vx, -vy]).unwrap();
                prop_assert!(distance(DomainKind::Square2, back, p) < 1e-12);
            }
        }

        #[test]
        fn orbit_images_fold_to_base(p in arb_point(), r in 0.1..4.0f64) {
            let orbit = orbit_images(p, r).unwrap();
            prop_assert!(!orbit.images.is_empty());
            for z in orbit.images {
                let back = fold(DomainKind::Square2, z).unwrap();
                prop_assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
            }
        }
    }
}
