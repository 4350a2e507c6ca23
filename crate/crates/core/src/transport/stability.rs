//! Exponential-map coupling and stability of flows against the
//! exponential map.

use serde::Serialize;

use super::{replicated_cost, QuadratureGrid};
use crate::error::{invalid, Error, Result};
use crate::geometry::{self, DomainKind, Point};
use crate::potential::{sup_hessian_bound, SpectralField};

/// The two costs of the coupling `g ↦ exp_g(∇f(g))` from a quadrature grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpCoupling {
    /// `(1/m) Σ |∇f(g_j)|²`.
    pub grid_cost: f64,
    /// Replicated assignment cost between the pushed grid and the target.
    pub matched_cost: f64,
}

/// Pushes the grid through `exp(∇f)` and returns the coupling cost and the
/// matching cost of the pushed cloud against `target`.
pub fn exp_pushforward_cost(
    field: &SpectralField,
    target: &[Point],
    grid: &QuadratureGrid,
) -> Result<ExpCoupling> {
    let n = target.len();
    let m = grid.len();
    if n == 0 {
        return Err(invalid("target measure must be nonempty"));
    }
    if grid.domain != field.domain() {
        return Err(invalid("grid and field live on different domains"));
    }
    if !grid.equal_weights() {
        return Err(invalid("exponential coupling needs an equal-weight grid"));
    }
    if m < n || !m.is_multiple_of(n) {
        return Err(invalid(format!(
            "grid size {m} is not a multiple of target size {n}"
        )));
    }
    let mut grid_cost = 0.0;
    let mut pushed = Vec::with_capacity(m);
    for &g in &grid.points {
        let v = field.gradient(g);
        let norm = v[0].hypot(v[1]);
        if norm >= 0.5 {
            return Err(Error::Precondition(format!(
                "|∇f| = {norm} >= 1/2 at ({:.6}, {:.6})",
                g.x, g.y
            )));
        }
        grid_cost += norm * norm;
        pushed.push(geometry::exp_map(field.domain(), g, v)?);
    }
    grid_cost /= m as f64;
    let matched_cost = replicated_cost(field.domain(), target, &pushed, m / n)?;
    Ok(ExpCoupling {
        grid_cost,
        matched_cost,
    })
}

/// Options of [`flow_vs_exp_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapOptions {
    /// Reject fields with `‖∇X‖_∞ ≥ 1/2`.
    pub enforce_gradient_bound: bool,
    /// Covering radius of the grid used to certify `‖∇X‖_∞`.
    pub hessian_spacing: f64,
}

impl Default for GapOptions {
    fn default() -> Self {
        GapOptions {
            enforce_gradient_bound: true,
            hessian_spacing: 1.0 / 256.0,
        }
    }
}

/// Outcome of [`flow_vs_exp_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapReport {
    /// `d(exp_p(X(p)), F₁(p))`.
    pub gap: f64,
    /// `4ξ|X(p)| + 8‖∇X‖_∞|X(p)|`.
    pub budget: f64,
    /// Endpoint change under step doubling.
    pub integrator_error: f64,
    /// Certified `‖∇X‖_∞`.
    pub grad_sup: f64,
    /// `|X(p)|`.
    pub x_norm: f64,
    /// `gap / ((ξ + ‖∇X‖_∞)|X(p)|)`, the constant the data supports.
    pub fitted_constant: f64,
}

impl GapReport {
    pub fn within_budget(&self) -> bool {
        self.gap <= self.budget + self.integrator_error
    }
}

/// Compares the exponential map of `X = ∇f` at `p` with the time-one flow
/// of a perturbation `Y_s` satisfying `|Y_s - X| ≤ ξ|X|`.
///
/// `perturbation(s, y)` returns `Y_s(y)`; the bound on `|Y_s - X|` is
/// enforced at every stage evaluation.
pub fn flow_vs_exp_gap(
    field: &SpectralField,
    perturbation: impl Fn(f64, Point) -> [f64; 2],
    xi: f64,
    p: Point,
    steps: usize,
    opts: GapOptions,
) -> Result<GapReport> {
    if !(xi >= 0.0) {
        return Err(invalid("perturbation size must be nonnegative"));
    }
    if steps == 0 {
        return Err(invalid("need at least one step"));
    }
    let domain = field.domain();
    let grad_sup = sup_hessian_bound(field, opts.hessian_spacing)?;
    if opts.enforce_gradient_bound && grad_sup >= 0.5 {
        return Err(Error::Precondition(format!(
            "‖∇X‖ = {grad_sup} is not below 1/2"
        )));
    }
    let x = field.gradient(p);
    let x_norm = x[0].hypot(x[1]);
    let target = geometry::exp_map(domain, p, x)?;

    let velocity = |s: f64, z: [f64; 2]| -> Result<[f64; 2]> {
        let q = Point::new(z[0], z[1]);
        let y = perturbation(s, q);
        let xq = field.gradient(q);
        let dev = (y[0] - xq[0]).hypot(y[1] - xq[1]);
        if dev > xi * xq[0].hypot(xq[1]) + 1e-12 {
            return Err(Error::Precondition(format!(
                "|Y - X| = {dev:e} exceeds ξ|X| at ({:.6}, {:.6})",
                q.x, q.y
            )));
        }
        Ok(y)
    };
    let coarse = integrate(domain, &velocity, p, steps)?;
    let fine = integrate(domain, &velocity, p, 2 * steps)?;
    let gap = geometry::distance(domain, target, fine);
    let integrator_error = geometry::distance(domain, coarse, fine);
    let budget = (4.0 * xi + 8.0 * grad_sup) * x_norm;
    let scale = (xi + grad_sup) * x_norm;
    let fitted_constant = if scale > 0.0 { gap / scale } else { 0.0 };
    Ok(GapReport {
        gap,
        budget,
        integrator_error,
        grad_sup,
        x_norm,
        fitted_constant,
    })
}

/// Time-one flow of `velocity(s, y)` from `p`, by fixed-step RK4 in
/// unfolded coordinates.
pub fn flow_endpoint(
    domain: DomainKind,
    velocity: impl Fn(f64, Point) -> [f64; 2],
    p: Point,
    steps: usize,
) -> Result<Point> {
    if steps == 0 {
        return Err(invalid("need at least one step"));
    }
    integrate(
        domain,
        &|s, z: [f64; 2]| Ok(velocity(s, Point::new(z[0], z[1]))),
        p,
        steps,
    )
}

fn integrate(
    domain: DomainKind,
    velocity: &impl Fn(f64, [f64; 2]) -> Result<[f64; 2]>,
    p: Point,
    steps: usize,
) -> Result<Point> {
    let h = 1.0 / steps as f64;
    let mut z = p.coords();
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = velocity(s, z)?;
        let k2 = velocity(
            s + 0.5 * h,
            [z[0] + 0.5 * h * k1[0], z[1] + 0.5 * h * k1[1]],
        )?;
        let k3 = velocity(
            s + 0.5 * h,
            [z[0] + 0.5 * h * k2[0], z[1] + 0.5 * h * k2[1]],
        )?;
        let k4 = velocity(s + h, [z[0] + h * k3[0], z[1] + h * k3[1]])?;
        for d in 0..2 {
            z[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
    }
    geometry::fold(domain, z)
}

/// `‖d(f, g)‖_{L²}` over the grid measure; bounds `W₂(f#m, g#m)`.
pub fn pushforward_distance_bound(
    domain: DomainKind,
    f: impl Fn(Point) -> Point,
    g: impl Fn(Point) -> Point,
    grid: &QuadratureGrid,
) -> f64 {
    grid.integrate(|p| geometry::sq_distance(domain, f(p), g(p)))
        .sqrt()
}
