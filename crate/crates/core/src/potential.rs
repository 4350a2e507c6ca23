//! The regularised empirical potential `f` with `-Δf = u - 1`, where
//! `u = (1/n) Σ_i p_t(X_i, ·)` is the heat-smoothed empirical density.
//!
//! Fields are stored as spectral coefficients over a [`FrequencyLattice`];
//! every evaluation is a termwise-differentiated sum.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{DomainKind, Point};
use crate::heatkernel::{sym2_operator_norm, FrequencyLattice};

/// A real function `mean + Re Σ_{k≠0} c_k φ_k` on a lattice.
///
/// On the torus the coefficients are conjugate-symmetric (`c_{-k} = conj c_k`),
/// on the cosine bases they are real, so the sum is real either way.
#[derive(Debug, Clone)]
pub struct SpectralField {
    lattice: Arc<FrequencyLattice>,
    mean: f64,
    coeffs: Vec<Complex64>,
}

/// Result of [`SpectralField::eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Scalar(f64),
    Gradient([f64; 2]),
    Hessian([[f64; 2]; 2]),
    Third([[[f64; 2]; 2]; 2]),
}

impl SpectralField {
    pub fn zero(lattice: Arc<FrequencyLattice>) -> Self {
        let len = lattice.len();
        SpectralField {
            lattice,
            mean: 0.0,
            coeffs: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn constant(lattice: Arc<FrequencyLattice>, value: f64) -> Self {
        let mut field = SpectralField::zero(lattice);
        field.mean = value;
        field
    }

    /// Builds a field from coefficients in lattice mode order. The entry for
    /// mode 0 is ignored; `mean` is the constant term.
    pub fn from_coefficients(
        lattice: Arc<FrequencyLattice>,
        mean: f64,
        mut coeffs: Vec<Complex64>,
    ) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(invalid(format!(
                "expected {} coefficients, got {}",
                lattice.len(),
                coeffs.len()
            )));
        }
        coeffs[0] = Complex64::new(0.0, 0.0);
        Ok(SpectralField {
            lattice,
            mean,
            coeffs,
        })
    }

    /// `amplitude · φ_k` plus its conjugate partner on the torus, so that the
    /// field is real. `k` must be a nonzero lattice mode.
    pub fn single_mode(
        lattice: Arc<FrequencyLattice>,
        k: [i32; 2],
        amplitude: f64,
    ) -> Result<Self> {
        let mut field = SpectralField::zero(lattice);
        let modes = field.lattice.modes();
        let idx = modes
            .iter()
            .position(|m| m.k == k && m.lambda > 0.0)
            .ok_or_else(|| invalid(format!("mode {k:?} not in lattice")))?;
        match field.lattice.domain() {
            DomainKind::Torus2 => {
                let partner = modes
                    .iter()
                    .position(|m| m.k == [-k[0], -k[1]])
                    .expect("symmetric lattice");
                field.coeffs[idx] += Complex64::new(0.5 * amplitude, 0.0);
                field.coeffs[partner] += Complex64::new(0.5 * amplitude, 0.0);
            }
            _ => field.coeffs[idx] = Complex64::new(amplitude, 0.0),
        }
        Ok(field)
    }

    pub fn lattice(&self) -> &Arc<FrequencyLattice> {
        &self.lattice
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn domain(&self) -> DomainKind {
        self.lattice.domain()
    }

    fn same_lattice(&self, other: &SpectralField) -> Result<()> {
        if Arc::ptr_eq(&self.lattice, &other.lattice)
            || (self.lattice.domain() == other.lattice.domain()
                && self.lattice.cutoff() == other.lattice.cutoff())
        {
            Ok(())
        } else {
            Err(invalid("fields live on different lattices"))
        }
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.same_lattice(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SpectralField {
            lattice: self.lattice.clone(),
            mean: self.mean - other.mean,
            coeffs,
        })
    }

    pub fn scaled(&self, factor: f64) -> SpectralField {
        SpectralField {
            lattice: self.lattice.clone(),
            mean: self.mean * factor,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    /// `-Δ` of the field (zero mean).
    pub fn neg_laplacian(&self) -> SpectralField {
        let coeffs = self
            .lattice
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| c * m.lambda)
            .collect();
        SpectralField {
            lattice: self.lattice.clone(),
            mean: 0.0,
            coeffs,
        }
    }

    /// Zero-mean `f` with `-Δf = self - mean(self)`.
    pub fn poisson_solution(&self) -> SpectralField {
        let coeffs = self
            .lattice
            .modes()
            .iter()
            .zip(&self.coeffs)
            .map(|(m, c)| {
                if m.lambda > 0.0 {
                    c / m.lambda
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        SpectralField {
            lattice: self.lattice.clone(),
            mean: 0.0,
            coeffs,
        }
    }

    fn partials(&self, y: Point, order: usize) -> Vec<f64> {
        let basis = self.lattice.basis(y);
        let mut acc = vec![0.0; order + 1];
        for (m, c) in self.lattice.modes().iter().zip(&self.coeffs).skip(1).rev() {
            if c.re == 0.0 && c.im == 0.0 {
                continue;
            }
            for (j, slot) in acc.iter_mut().enumerate() {
                *slot += (c * basis.deriv(m, order - j, j)).re;
            }
        }
        if self.lattice.domain() == DomainKind::Interval1 {
            for slot in acc.iter_mut().skip(1) {
                *slot = 0.0;
            }
        }
        acc
    }

    pub fn value(&self, y: Point) -> f64 {
        self.mean + self.partials(y, 0)[0]
    }

    pub fn gradient(&self, y: Point) -> [f64; 2] {
        let p = self.partials(y, 1);
        [p[0], p[1]]
    }

    pub fn hessian(&self, y: Point) -> [[f64; 2]; 2] {
        let p = self.partials(y, 2);
        [[p[0], p[1]], [p[1], p[2]]]
    }

    pub fn third(&self, y: Point) -> [[[f64; 2]; 2]; 2] {
        let p = self.partials(y, 3);
        let mut out = [[[0.0; 2]; 2]; 2];
        for (a, plane) in out.iter_mut().enumerate() {
            for (b, row) in plane.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = p[a + b + c];
                }
            }
        }
        out
    }

    /// Value or derivative tensor of order `order <= 3`.
    pub fn eval(&self, y: Point, order: usize) -> Result<FieldValue> {
        Ok(match order {
            0 => FieldValue::Scalar(self.value(y)),
            1 => FieldValue::Gradient(self.gradient(y)),
            2 => FieldValue::Hessian(self.hessian(y)),
            3 => FieldValue::Third(self.third(y)),
            _ => return Err(invalid(format!("derivative order {order} > 3"))),
        })
    }

    /// Operator norm of the Hessian at `y`.
    pub fn hessian_norm(&self, y: Point) -> f64 {
        let p = self.partials(y, 2);
        sym2_operator_norm(p[0], p[1], p[2])
    }

    /// `∫ |∇f|² dm = Σ λ_k |c_k|²`.
    pub fn dirichlet_energy(&self) -> f64 {
        self.lattice
            .modes()
            .iter()
            .zip(&self.coeffs)
            .skip(1)
            .rev()
            .map(|(m, c)| m.lambda * c.norm_sqr())
            .sum()
    }

    /// Upper bound on the operator norm of each mode's third derivative,
    /// summed with coefficient magnitudes: a Lipschitz constant of `∇²f`.
    pub fn hessian_lipschitz_bound(&self) -> f64 {
        let domain = self.lattice.domain();
        self.lattice
            .modes()
            .iter()
            .zip(&self.coeffs)
            .skip(1)
            .map(|(m, c)| c.norm() * third_derivative_bound(domain, m.k))
            .sum()
    }
}

/// Operator-norm bound of `∇³φ_k` (Frobenius norm of the tensor).
fn third_derivative_bound(domain: DomainKind, k: [i32; 2]) -> f64 {
    let r = f64::from(k[0] * k[0] + k[1] * k[1]).sqrt();
    match domain {
        DomainKind::Torus2 => (2.0 * PI * r).powi(3),
        DomainKind::Square2 | DomainKind::Interval1 => {
            let norm = |m: i32| {
                if m == 0 {
                    1.0
                } else {
                    std::f64::consts::SQRT_2
                }
            };
            norm(k[0]) * norm(k[1]) * (PI * r).powi(3)
        }
    }
}

/// The potential `f^{n,t}` built from `n` sample points.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub field: SpectralField,
    pub n: usize,
    pub t: f64,
}

impl std::ops::Deref for PotentialField {
    type Target = SpectralField;
    fn deref(&self) -> &SpectralField {
        &self.field
    }
}

/// `c_k = e^{-λ_k t}/λ_k · (1/n) Σ_i conj φ_k(X_i)`, so that
/// `f(y) = (1/n) Σ_i q_t(X_i, y)`.
pub fn build_potential(
    lattice: &Arc<FrequencyLattice>,
    points: &[Point],
    t: f64,
) -> Result<PotentialField> {
    if points.is_empty() {
        return Err(invalid("potential needs at least one point"));
    }
    lattice.check(t)?;
    let modes = lattice.modes();
    let mut sums = vec![Complex64::new(0.0, 0.0); modes.len()];
    for &p in points {
        let basis = lattice.basis(p);
        for (s, m) in sums.iter_mut().zip(modes).skip(1) {
            *s += basis.value(m).conj();
        }
    }
    let inv_n = 1.0 / points.len() as f64;
    let coeffs = modes
        .iter()
        .zip(sums)
        .map(|(m, s)| {
            if m.lambda > 0.0 {
                s * ((-m.lambda * t).exp() / m.lambda * inv_n)
            } else {
                s
            }
        })
        .collect();
    let field = SpectralField::from_coefficients(lattice.clone(), 0.0, coeffs)?;
    Ok(PotentialField {
        field,
        n: points.len(),
        t,
    })
}

/// `u = 1 - Δf`: coefficients `λ_k c_k` and constant term 1.
pub fn density_from_potential(field: &SpectralField) -> SpectralField {
    let mut u = field.neg_laplacian();
    u.mean = 1.0;
    u
}

/// Exact `E ∫|∇f^{n,t}|² dm = (1/n) Σ_{k≠0} e^{-2λ_k t}/λ_k` for i.i.d.
/// uniform points.
pub fn expected_energy_closed_form(lattice: &FrequencyLattice, n: usize, t: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    Ok(lattice.on_diagonal_energy(t)? / n as f64)
}

/// Parameters of the certified test of `‖∇²f‖_∞ < ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventCheckConfig {
    pub xi: f64,
    /// Covering radius of the evaluation grid.
    pub spacing: f64,
}

impl EventCheckConfig {
    pub fn new(xi: f64, spacing: f64) -> Result<Self> {
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid(format!("threshold must lie in (0,1), got {xi}")));
        }
        if !(spacing > 0.0) {
            return Err(invalid("grid spacing must be positive"));
        }
        Ok(EventCheckConfig { xi, spacing })
    }

    /// Spacing `ξ / (2 L̂)`, capped at 1/8.
    pub fn auto(xi: f64, field: &SpectralField) -> Result<Self> {
        let lip = field.hessian_lipschitz_bound();
        let spacing = if lip > 0.0 {
            (xi / (2.0 * lip)).min(0.125)
        } else {
            0.125
        };
        Self::new(xi, spacing)
    }
}

/// Outcome of [`certified_sup_hessian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianCertificate {
    pub grid_max: f64,
    pub certified: f64,
    /// `certified < ξ`: the field is certainly in the event.
    pub event: bool,
    /// `grid_max < ξ`: uncertified indicator.
    pub grid_event: bool,
    pub lipschitz: f64,
    pub covering_radius: f64,
    pub grid_points: usize,
}

/// Maximum grid points per axis for the certified scan.
pub const MAX_GRID_AXIS: usize = 4096;

/// Regular grid with covering radius at most `spacing`, and its actual
/// covering radius.
pub fn covering_grid(domain: DomainKind, spacing: f64) -> Result<(Vec<Point>, f64)> {
    let per_axis = |width: f64| -> Result<usize> {
        let n = (1.0 / width).ceil().max(1.0) as usize;
        if n > MAX_GRID_AXIS {
            return Err(Error::Resource(format!(
                "grid of {n} points per axis requested"
            )));
        }
        Ok(n)
    };
    Ok(match domain {
        DomainKind::Torus2 => {
            let n = per_axis(spacing * std::f64::consts::SQRT_2)?;
            let h = 1.0 / n as f64;
            let pts = (0..n)
                .flat_map(|i| (0..n).map(move |j| Point::new(i as f64 * h, j as f64 * h)))
                .collect();
            (pts, h / std::f64::consts::SQRT_2)
        }
        DomainKind::Square2 => {
            let n = per_axis(spacing * std::f64::consts::SQRT_2)?;
            let h = 1.0 / n as f64;
            let pts = (0..=n)
                .flat_map(|i| (0..=n).map(move |j| Point::new(i as f64 * h, j as f64 * h)))
                .collect();
            (pts, h / std::f64::consts::SQRT_2)
        }
        DomainKind::Interval1 => {
            let n = per_axis(2.0 * spacing)?;
            let h = 1.0 / n as f64;
            (
                (0..=n).map(|i| Point::new(i as f64 * h, 0.0)).collect(),
                0.5 * h,
            )
        }
    })
}

/// Certified upper bound of `sup ‖∇²f‖`: grid maximum plus covering radius
/// times the Lipschitz bound of the Hessian.
pub fn certified_sup_hessian(
    field: &SpectralField,
    cfg: &EventCheckConfig,
) -> Result<HessianCertificate> {
    let lipschitz = field.hessian_lipschitz_bound();
    if cfg.spacing * lipschitz > 0.5 * cfg.xi {
        return Err(Error::Config {
            spacing: cfg.spacing,
            xi: cfg.xi,
            required: 0.5 * cfg.xi / lipschitz,
        });
    }
    let (grid, radius) = covering_grid(field.domain(), cfg.spacing)?;
    let grid_max = if lipschitz == 0.0 {
        0.0
    } else {
        grid.iter()
            .map(|&y| field.hessian_norm(y))
            .fold(0.0, f64::max)
    };
    let certified = grid_max + radius * lipschitz;
    Ok(HessianCertificate {
        grid_max,
        certified,
        event: certified < cfg.xi,
        grid_event: grid_max < cfg.xi,
        lipschitz,
        covering_radius: radius,
        grid_points: grid.len(),
    })
}

/// Certified upper bound of `sup ‖∇²f‖` from a grid of covering radius at
/// most `spacing`, with no event threshold attached.
pub fn sup_hessian_bound(field: &SpectralField, spacing: f64) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(invalid("grid spacing must be positive"));
    }
    let lipschitz = field.hessian_lipschitz_bound();
    if lipschitz == 0.0 {
        return Ok(0.0);
    }
    let (grid, radius) = covering_grid(field.domain(), spacing)?;
    let grid_max = grid
        .iter()
        .map(|&y| field.hessian_norm(y))
        .fold(0.0, f64::max);
    Ok(grid_max + radius * lipschitz)
}
