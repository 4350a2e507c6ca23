//! Flow couplings driven by `v_s = θ'(s) ∇f / (u₀(1-θ(s)) + u₁θ(s))` and the
//! Benamou–Brenier bound on their cost.

use serde::{Deserialize, Serialize};

use super::QuadratureGrid;
use crate::error::{invalid, Error, Result};
use crate::geometry::{self, Point};
use crate::potential::SpectralField;
use crate::quad::CompositeRule;

/// Agreement required between `-Δf` and `u₁ - u₀`, coefficientwise.
const POISSON_TOLERANCE: f64 = 1e-8;

/// Interpolation schedule `θ` with `θ(0)=0`, `θ(1)=1`, increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowSchedule {
    /// `θ(s) = 1 - (1-s)²`.
    Quadratic,
    /// `θ(s) = s`.
    Linear,
}

impl FlowSchedule {
    pub fn theta(self, s: f64) -> f64 {
        match self {
            FlowSchedule::Quadratic => 1.0 - (1.0 - s) * (1.0 - s),
            FlowSchedule::Linear => s,
        }
    }

    pub fn dtheta(self, s: f64) -> f64 {
        match self {
            FlowSchedule::Quadratic => 2.0 * (1.0 - s),
            FlowSchedule::Linear => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(FlowSchedule::Quadratic),
            "linear" => Ok(FlowSchedule::Linear),
            other => Err(invalid(format!("unknown schedule {other:?}"))),
        }
    }

    /// `∫₀¹ θ'² / (a(1-θ) + bθ) ds` for positive `a`, `b`.
    pub fn inner_integral(self, a: f64, b: f64) -> f64 {
        inner_rule().integrate(0.0, 1.0, |s| {
            let th = self.theta(s);
            let d = self.dtheta(s);
            d * d / (a * (1.0 - th) + b * th)
        })
    }
}

fn inner_rule() -> CompositeRule {
    CompositeRule::new(20, 4)
}

fn check_positive(u: &SpectralField, p: Point) -> Result<f64> {
    let value = u.value(p);
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::Domain {
            value,
            x: p.x,
            y: p.y,
        })
    }
}

fn check_poisson(field: &SpectralField, u0: &SpectralField, u1: &SpectralField) -> Result<()> {
    let diff = u1.sub(u0)?;
    let lap = field.neg_laplacian();
    diff.sub(&lap)?;
    let worst = diff
        .coefficients()
        .iter()
        .zip(lap.coefficients())
        .map(|(a, b)| (a - b).norm())
        .fold(diff.mean().abs(), f64::max);
    if worst > POISSON_TOLERANCE {
        return Err(Error::Precondition(format!(
            "-Δf differs from u1 - u0 by {worst:e}"
        )));
    }
    Ok(())
}

/// `∫ |∇f|² (∫₀¹ θ'² / (u₀(1-θ) + u₁θ) ds) dm` on the grid: an upper bound
/// on `W₂²(u₀ m, u₁ m)` when `-Δf = u₁ - u₀`.
pub fn bb_cost_bound(
    field: &SpectralField,
    u0: &SpectralField,
    u1: &SpectralField,
    schedule: FlowSchedule,
    grid: &QuadratureGrid,
) -> Result<f64> {
    check_poisson(field, u0, u1)?;
    let nodes = inner_rule().nodes(0.0, 1.0);
    let mut total = 0.0;
    for (&p, &w) in grid.points.iter().zip(&grid.weights) {
        let a = check_positive(u0, p)?;
        let b = check_positive(u1, p)?;
        let g = field.gradient(p);
        let grad_sq = g[0] * g[0] + g[1] * g[1];
        if grad_sq == 0.0 {
            continue;
        }
        let inner: f64 = nodes
            .iter()
            .map(|&(s, ws)| {
                let th = schedule.theta(s);
                let d = schedule.dtheta(s);
                ws * d * d / (a * (1.0 - th) + b * th)
            })
            .sum();
        total += w * grad_sq * inner;
    }
    Ok(total)
}

/// The shallow form `4 ∫ |∇f|² / u₀ dm`.
pub fn shallow_cost_bound(
    field: &SpectralField,
    u0: &SpectralField,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let mut total = 0.0;
    for (&p, &w) in grid.points.iter().zip(&grid.weights) {
        let a = check_positive(u0, p)?;
        let g = field.gradient(p);
        total += w * 4.0 * (g[0] * g[0] + g[1] * g[1]) / a;
    }
    Ok(total)
}

/// A single integrated trajectory of the flow coupling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowTrajectory {
    pub start: Point,
    pub end: Point,
    /// Position after each step, `steps + 1` entries including the start.
    pub positions: Vec<Point>,
    /// `∫₀¹ |v_s(x_s)|² ds`.
    pub action: f64,
}

impl FlowTrajectory {
    pub fn steps(&self) -> usize {
        self.positions.len() - 1
    }
}

/// Minimum number of integration steps accepted by [`dm_flow_map`].
pub const MIN_FLOW_STEPS: usize = 16;

/// Integrates the flow coupling from `p` over `s ∈ [0, 1]` with classical
/// RK4. The action is integrated alongside as an extra state component,
/// so it uses the same stage evaluations.
pub fn dm_flow_map(
    field: &SpectralField,
    u0: &SpectralField,
    u1: &SpectralField,
    schedule: FlowSchedule,
    p: Point,
    steps: usize,
) -> Result<FlowTrajectory> {
    if steps < MIN_FLOW_STEPS {
        return Err(invalid(format!(
            "need at least {MIN_FLOW_STEPS} steps, got {steps}"
        )));
    }
    let domain = field.domain();
    // Fields are evaluated at unfolded positions: the bases extend
    // periodically (torus) or evenly (cosine), which matches the reflected flow.
    let velocity = |s: f64, z: [f64; 2]| -> Result<[f64; 2]> {
        let q = Point::new(z[0], z[1]);
        let th = schedule.theta(s);
        let a = u0.value(q);
        let b = u1.value(q);
        let density = a * (1.0 - th) + b * th;
        if !(density > 0.0) {
            let folded = geometry::fold(domain, z)?;
            return Err(Error::Domain {
                value: density,
                x: folded.x,
                y: folded.y,
            });
        }
        let g = field.gradient(q);
        let scale = schedule.dtheta(s) / density;
        Ok([scale * g[0], scale * g[1]])
    };
    let h = 1.0 / steps as f64;
    let mut z = p.coords();
    let mut action = 0.0;
    let mut positions = Vec::with_capacity(steps + 1);
    positions.push(p);
    let sq = |v: [f64; 2]| v[0] * v[0] + v[1] * v[1];
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
        action += h / 6.0 * (sq(k1) + 2.0 * sq(k2) + 2.0 * sq(k3) + sq(k4));
        let folded = geometry::fold(domain, z)?;
        z = folded.coords();
        positions.push(folded);
    }
    let end = *positions.last().expect("nonempty");
    Ok(FlowTrajectory {
        start: p,
        end,
        positions,
        action,
    })
}
