//! Heat kernel `p_t` and the time-averaged kernel `q_t = ∫_t^∞ (p_s - 1) ds`.
//!
//! Two independent backends are provided:
//! - a truncated eigenfunction expansion ([`FrequencyLattice`]), with
//!   `λ_k = 4π²|k|²` and complex exponentials on the torus, `λ_k = π²|k|²`
//!   and normalised product cosines (Neumann) on the square, `λ_k = π²k²`
//!   and cosines on the interval;
//! - a sum of plane Gaussians `(4πt)^{-d/2} e^{-|x'-y|²/4t}` over the images
//!   `x'` of the source point ([`heat_kernel_images`]).
//!
//! Derivatives are always taken termwise on the spectral side and act on the
//! second argument.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::geometry::{self, DomainKind, Point};

/// Truncation tolerance of the spectral tail.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Below this time the images backend is the default.
pub const IMAGES_SWITCH_TIME: f64 = 1.0 / (4.0 * PI * PI);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub k: [i32; 2],
    pub lambda: f64,
    axis: [usize; 2],
}

/// Truncated eigenbasis of the (Neumann) Laplacian on a domain.
///
/// Modes are sorted by eigenvalue; mode 0 is the constant function.
#[derive(Debug, Clone)]
pub struct FrequencyLattice {
    domain: DomainKind,
    cutoff: usize,
    t_min: f64,
    modes: Vec<Mode>,
}

/// Values and first three derivatives of the one-dimensional factors of
/// every eigenfunction at a fixed coordinate.
#[derive(Debug, Clone)]
pub struct BasisEval {
    axes: [Vec<[Complex64; 4]>; 2],
}

impl BasisEval {
    /// `∂₁^a ∂₂^b φ_k` at the tabulated point.
    #[inline]
    pub fn deriv(&self, mode: &Mode, a: usize, b: usize) -> Complex64 {
        self.axes[0][mode.axis[0]][a] * self.axes[1][mode.axis[1]][b]
    }

    #[inline]
    pub fn value(&self, mode: &Mode) -> Complex64 {
        self.deriv(mode, 0, 0)
    }
}

fn eigenvalue_scale(domain: DomainKind) -> f64 {
    match domain {
        DomainKind::Torus2 => 4.0 * PI * PI,
        _ => PI * PI,
    }
}

fn squared_radii(domain: DomainKind, max_r2: i64) -> Vec<[i32; 2]> {
    let r = (max_r2 as f64).sqrt().floor() as i32;
    let mut out = Vec::new();
    match domain {
        DomainKind::Torus2 => {
            for a in -r..=r {
                for b in -r..=r {
                    if i64::from(a * a + b * b) <= max_r2 {
                        out.push([a, b]);
                    }
                }
            }
        }
        DomainKind::Square2 => {
            for a in 0..=r {
                for b in 0..=r {
                    if i64::from(a * a + b * b) <= max_r2 {
                        out.push([a, b]);
                    }
                }
            }
        }
        DomainKind::Interval1 => {
            for a in 0..=r {
                out.push([a, 0]);
            }
        }
    }
    out
}

/// Number of modes with `K < |k| <= 2K`.
fn tail_count(domain: DomainKind, cutoff: usize) -> usize {
    let k2 = (cutoff * cutoff) as i64;
    squared_radii(domain, 4 * k2)
        .into_iter()
        .filter(|k| i64::from(k[0] * k[0] + k[1] * k[1]) > k2)
        .count()
}

/// Smallest time for which cutoff `K` meets `e^{-λ_K t} N_tail <= tol`.
fn valid_from(domain: DomainKind, cutoff: usize) -> f64 {
    let lambda_k = eigenvalue_scale(domain) * (cutoff * cutoff) as f64;
    let n_tail = tail_count(domain, cutoff).max(1) as f64;
    (n_tail / TAIL_TOLERANCE).ln() / lambda_k
}

impl FrequencyLattice {
    /// All modes with `|k| <= cutoff`.
    pub fn with_cutoff(domain: DomainKind, cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(invalid("cutoff must be >= 1"));
        }
        let ks = squared_radii(domain, (cutoff * cutoff) as i64);
        let scale = eigenvalue_scale(domain);
        let offset = match domain {
            DomainKind::Torus2 => cutoff as i32,
            _ => 0,
        };
        let mut modes: Vec<Mode> = ks
            .into_iter()
            .map(|k| Mode {
                k,
                lambda: scale * f64::from(k[0] * k[0] + k[1] * k[1]),
                axis: [(k[0] + offset) as usize, (k[1] + offset) as usize],
            })
            .collect();
        modes.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.k.cmp(&b.k)));
        if let Some(zero) = modes.iter().position(|m| m.k == [0, 0]) {
            modes.swap(0, zero);
        }
        Ok(FrequencyLattice {
            domain,
            cutoff,
            t_min: valid_from(domain, cutoff),
            modes,
        })
    }

    /// Smallest lattice whose truncation error is below tolerance for all
    /// times `>= t`.
    pub fn for_time(domain: DomainKind, t: f64) -> Result<Self> {
        check_time(t)?;
        let mut cutoff = 1usize;
        while valid_from(domain, cutoff) > t {
            cutoff += 1;
            if cutoff > 20_000 {
                return Err(Error::Resource(format!(
                    "cutoff needed for t={t:e} exceeds 20000"
                )));
            }
        }
        Self::with_cutoff(domain, cutoff)
    }

    pub fn domain(&self) -> DomainKind {
        self.domain
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Errors unless the truncation rule holds at time `t`.
    pub fn check(&self, t: f64) -> Result<()> {
        check_time(t)?;
        if t < self.t_min {
            return Err(Error::Truncation {
                cutoff: self.cutoff,
                t_min: self.t_min,
                t,
            });
        }
        Ok(())
    }

    /// Tabulates the one-dimensional factors at `p`.
    pub fn basis(&self, p: Point) -> BasisEval {
        let axis = |coord: f64, active: bool| -> Vec<[Complex64; 4]> {
            let k = self.cutoff as i32;
            match self.domain {
                DomainKind::Torus2 => (-k..=k)
                    .map(|m| {
                        let w = 2.0 * PI * f64::from(m);
                        let g = Complex64::from_polar(1.0, w * coord);
                        let iw = Complex64::new(0.0, w);
                        [g, iw * g, iw * iw * g, iw * iw * iw * g]
                    })
                    .collect(),
                _ if !active => {
                    let one = Complex64::new(1.0, 0.0);
                    let zero = Complex64::new(0.0, 0.0);
                    vec![[one, zero, zero, zero]]
                }
                _ => (0..=k)
                    .map(|m| {
                        let c = if m == 0 { 1.0 } else { SQRT_2 };
                        let w = PI * f64::from(m);
                        let (s, co) = (w * coord).sin_cos();
                        [
                            Complex64::new(c * co, 0.0),
                            Complex64::new(-c * w * s, 0.0),
                            Complex64::new(-c * w * w * co, 0.0),
                            Complex64::new(c * w * w * w * s, 0.0),
                        ]
                    })
                    .collect(),
            }
        };
        let second_active = self.domain != DomainKind::Interval1;
        BasisEval {
            axes: [axis(p.x, true), axis(p.y, second_active)],
        }
    }

    /// `Re Σ w_k φ_k(x) conj(∂^{(a,b)} φ_k(y))` over modes with nonzero weight.
    fn kernel_partial(
        &self,
        weights: impl Fn(&Mode) -> f64,
        x: Point,
        y: Point,
        a: usize,
        b: usize,
    ) -> f64 {
        let bx = self.basis(x);
        let by = self.basis(y);
        let mut acc = 0.0;
        // Smallest terms first.
        for m in self.modes.iter().rev() {
            let w = weights(m);
            if w == 0.0 {
                continue;
            }
            let z = bx.value(m) * by.deriv(m, a, b).conj();
            acc += w * z.re;
        }
        acc
    }

    /// All partial derivatives of order `order` in the second argument,
    /// indexed by the number of `y₂` derivatives.
    fn kernel_partials(
        &self,
        weights: impl Fn(&Mode) -> f64,
        x: Point,
        y: Point,
        order: usize,
    ) -> Vec<f64> {
        let bx = self.basis(x);
        let by = self.basis(y);
        let mut acc = vec![0.0; order + 1];
        for m in self.modes.iter().rev() {
            let w = weights(m);
            if w == 0.0 {
                continue;
            }
            let vx = bx.value(m);
            for (j, slot) in acc.iter_mut().enumerate() {
                *slot += w * (vx * by.deriv(m, order - j, j).conj()).re;
            }
        }
        acc
    }

    /// `p_t(x, y) = Σ_k e^{-λ_k t} φ_k(x) φ_k(y)`.
    pub fn heat_kernel(&self, t: f64, x: Point, y: Point) -> Result<f64> {
        self.check(t)?;
        Ok(self.kernel_partial(|m| (-m.lambda * t).exp(), x, y, 0, 0))
    }

    /// `q_t(x, y) = Σ_{k≠0} e^{-λ_k t}/λ_k φ_k(x) φ_k(y)`.
    pub fn q_kernel(&self, t: f64, x: Point, y: Point) -> Result<f64> {
        self.check(t)?;
        Ok(self.kernel_partial(q_weight(t), x, y, 0, 0))
    }

    /// `∇_y q_t(x, y)`.
    pub fn q_grad(&self, t: f64, x: Point, y: Point) -> Result<[f64; 2]> {
        self.check(t)?;
        let g = self.kernel_partials(q_weight(t), x, y, 1);
        Ok([g[0], g[1]])
    }

    /// Order-`order` partials of `p_t(x, ·)` at `y`; entry `j` is
    /// `∂₁^{order-j} ∂₂^j`.
    pub fn heat_kernel_partials(
        &self,
        t: f64,
        x: Point,
        y: Point,
        order: usize,
    ) -> Result<Vec<f64>> {
        self.check(t)?;
        Ok(self.kernel_partials(|m| (-m.lambda * t).exp(), x, y, order))
    }

    /// Order-`order` partials of `q_t(x, ·)` at `y`.
    pub fn q_partials(&self, t: f64, x: Point, y: Point, order: usize) -> Result<Vec<f64>> {
        self.check(t)?;
        Ok(self.kernel_partials(q_weight(t), x, y, order))
    }

    /// Spectral coefficients of `y ↦ p_t(x, y)` and of `y ↦ -Δ_y q_t(x, y)`,
    /// in mode order. The identity `-Δ_y q_t = p_t - 1` holds when the two
    /// arrays agree away from mode 0.
    pub fn kernel_coefficients(
        &self,
        t: f64,
        x: Point,
    ) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        self.check(t)?;
        let bx = self.basis(x);
        let heat = self
            .modes
            .iter()
            .map(|m| bx.value(m).conj() * (-m.lambda * t).exp())
            .collect();
        let lap_q = self
            .modes
            .iter()
            .map(|m| {
                if m.lambda == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    bx.value(m).conj() * ((-m.lambda * t).exp() / m.lambda) * m.lambda
                }
            })
            .collect();
        Ok((heat, lap_q))
    }

    /// `∫ (p_t(x,x) - 1) dm(x) = Σ_{k≠0} e^{-λ_k t}`.
    pub fn trace_deficit(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self
            .modes
            .iter()
            .rev()
            .filter(|m| m.lambda > 0.0)
            .map(|m| (-m.lambda * t).exp())
            .sum())
    }

    /// `Σ_{k≠0} e^{-2λ_k t}/λ_k`, the mean Dirichlet energy of `q_t(x, ·)`.
    pub fn on_diagonal_energy(&self, t: f64) -> Result<f64> {
        self.check(2.0 * t)?;
        Ok(self
            .modes
            .iter()
            .rev()
            .filter(|m| m.lambda > 0.0)
            .map(|m| (-2.0 * m.lambda * t).exp() / m.lambda)
            .sum())
    }
}

fn q_weight(t: f64) -> impl Fn(&Mode) -> f64 {
    move |m: &Mode| {
        if m.lambda == 0.0 {
            0.0
        } else {
            (-m.lambda * t).exp() / m.lambda
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!(
            "time must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

/// Method-of-images heat kernel for `0 < t <= 1`.
///
/// Torus: integer translates of `x`. Square: the reflection-group orbit.
/// Interval: one-dimensional reflections. Images are kept while the
/// Gaussian tail beyond them stays below `1e-14`.
pub fn heat_kernel_images(domain: DomainKind, t: f64, x: Point, y: Point) -> Result<f64> {
    check_time(t)?;
    if t > 1.0 {
        return Err(Error::Unsupported(format!(
            "images backend is limited to t <= 1, got t={t}"
        )));
    }
    let radius = (4.0 * t * 36.0).sqrt();
    let gauss2 = |z: [f64; 2]| {
        let dx = z[0] - y.x;
        let dy = z[1] - y.y;
        (-(dx * dx + dy * dy) / (4.0 * t)).exp()
    };
    let value = match domain {
        DomainKind::Torus2 => {
            let r = radius.ceil() as i64 + 1;
            let mut acc = 0.0;
            for a in -r..=r {
                for b in -r..=r {
                    let z = [x.x + a as f64, x.y + b as f64];
                    let dx = z[0] - y.x;
                    let dy = z[1] - y.y;
                    if dx * dx + dy * dy <= (radius + 1.5) * (radius + 1.5) {
                        acc += gauss2(z);
                    }
                }
            }
            acc / (4.0 * PI * t)
        }
        DomainKind::Square2 => {
            let orbit = geometry::orbit_images(x, radius)?;
            orbit.images.iter().map(|&z| gauss2(z)).sum::<f64>() / (4.0 * PI * t)
        }
        DomainKind::Interval1 => {
            let acc: f64 = geometry::reflected_images_1d(x.x, radius)
                .into_iter()
                .map(|z| (-(z - y.x) * (z - y.x) / (4.0 * t)).exp())
                .sum();
            acc / (4.0 * PI * t).sqrt()
        }
    };
    Ok(value)
}

/// Which representation evaluates the heat kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Spectral,
    Images,
    /// Images below [`IMAGES_SWITCH_TIME`], spectral above.
    Auto,
}

/// Heat kernel through the requested backend.
pub fn heat_kernel_with(
    lattice: &FrequencyLattice,
    backend: Backend,
    t: f64,
    x: Point,
    y: Point,
) -> Result<f64> {
    match backend {
        Backend::Spectral => lattice.heat_kernel(t, x, y),
        Backend::Images => heat_kernel_images(lattice.domain(), t, x, y),
        Backend::Auto if t < IMAGES_SWITCH_TIME => heat_kernel_images(lattice.domain(), t, x, y),
        Backend::Auto => lattice.heat_kernel(t, x, y),
    }
}

/// Norm of a symmetric derivative tensor given its distinct partials
/// (entry `j` = `∂₁^{N-j} ∂₂^j`). Exact operator norm for `N <= 2`,
/// Frobenius norm for `N = 3`.
pub fn tensor_norm(partials: &[f64]) -> f64 {
    match partials.len() {
        1 => partials[0].abs(),
        2 => partials[0].hypot(partials[1]),
        3 => sym2_operator_norm(partials[0], partials[1], partials[2]),
        n => {
            let order = n - 1;
            let mut binom = 1.0;
            let mut acc = 0.0;
            for (j, p) in partials.iter().enumerate() {
                acc += binom * p * p;
                binom = binom * (order - j) as f64 / (j + 1) as f64;
            }
            acc.sqrt()
        }
    }
}

/// Operator norm of `[[a, b], [b, c]]`.
#[inline]
pub fn sym2_operator_norm(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    mean.abs() + rad
}

/// Fitted constants of the heat kernel Gaussian and derivative bounds on a
/// finite sample of times and point pairs.
#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundFit {
    /// Base of the Gaussian envelope `p_t <= C₀ t^{-1} a^{-d²/t}`.
    pub a_hat: f64,
    pub c0_hat: f64,
    /// `|∇^N p_t| <= C_N (t^{-N/2} + d^N/t^N) p_t`, `N = 1, 2, 3`.
    pub c_heat: [f64; 3],
    /// `|∇^N_y q_t| <= C'_N / (d^N + t^{N/2})`, `N = 1, 2, 3`.
    pub c_q: [f64; 3],
    pub t_values: Vec<f64>,
    pub pair_count: usize,
    /// Samples with `p_t` below [`KERNEL_RESOLUTION_FLOOR`], left out of the fit.
    pub skipped: usize,
}

/// Smallest kernel value whose derivative ratios are fitted; below it the
/// truncated series no longer resolves `p_t` to relative accuracy.
pub const KERNEL_RESOLUTION_FLOOR: f64 = 1e-9;

/// Scans the bounds over `times × pairs` and returns the smallest constants
/// that make them hold on the sample.
///
/// `C₀` is pinned to twice the largest `t·p_t` seen; `â` is then the
/// largest base compatible with it.
pub fn verify_kernel_bounds(
    lattice: &FrequencyLattice,
    times: &[f64],
    pairs: &[(Point, Point)],
) -> Result<KernelBoundFit> {
    if times.is_empty() || pairs.is_empty() {
        return Err(invalid("time and point grids must be nonempty"));
    }
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(invalid(format!(
            "kernel bounds are sampled for 0 < t < 1, got {t}"
        )));
    }
    let domain = lattice.domain();
    let mut samples = Vec::with_capacity(times.len() * pairs.len());
    let mut c_heat = [0.0f64; 3];
    let mut c_q = [0.0f64; 3];
    let mut skipped = 0;
    for &t in times {
        for &(x, y) in pairs {
            let d = geometry::distance(domain, x, y);
            let p = lattice.heat_kernel(t, x, y)?;
            if p < KERNEL_RESOLUTION_FLOOR {
                skipped += 1;
                continue;
            }
            samples.push((t, d, p));
            for order in 1..=3 {
                let n = order as i32;
                let grad_p = tensor_norm(&lattice.heat_kernel_partials(t, x, y, order)?);
                let scale = (t.powf(-0.5 * f64::from(n)) + d.powi(n) / t.powi(n)) * p;
                c_heat[order - 1] = c_heat[order - 1].max(grad_p / scale);
                let grad_q = tensor_norm(&lattice.q_partials(t, x, y, order)?);
                c_q[order - 1] =
                    c_q[order - 1].max(grad_q * (d.powi(n) + t.powf(0.5 * f64::from(n))));
            }
        }
    }
    let c0_hat = 2.0 * samples.iter().map(|&(t, _, p)| t * p).fold(0.0, f64::max);
    let a_hat = samples
        .iter()
        .filter(|&&(_, d, _)| d > 0.0)
        .map(|&(t, d, p)| (c0_hat / (t * p)).powf(t / (d * d)))
        .fold(f64::INFINITY, f64::min);
    Ok(KernelBoundFit {
        a_hat,
        c0_hat,
        c_heat,
        c_q,
        t_values: times.to_vec(),
        pair_count: pairs.len(),
        skipped,
    })
}

/// `Σ_{m≥1} e^{-a m² t}`, summed directly for `at ≥ 1` and through the
/// Poisson-dual (Gaussian image) series otherwise.
fn theta_tail(a: f64, t: f64) -> f64 {
    if a * t >= 1.0 {
        let mut sum = 0.0;
        let mut m = 1.0f64;
        loop {
            let term = (-a * m * m * t).exp();
            sum += term;
            if term < 1e-18 * sum.max(f64::MIN_POSITIVE) {
                return sum;
            }
            m += 1.0;
        }
    }
    let dual = PI * PI / (a * t);
    let mut images = 1.0;
    let mut m = 1.0f64;
    loop {
        let term = 2.0 * (-dual * m * m).exp();
        images += term;
        if term < 1e-18 {
            break;
        }
        m += 1.0;
    }
    0.5 * ((PI / (a * t)).sqrt() * images - 1.0)
}

/// `Σ_{k≠0} e^{-λ_k t}` in closed form from the one-dimensional theta
/// functions, with no lattice truncation.
pub fn trace_deficit_closed_form(domain: DomainKind, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(match domain {
        DomainKind::Torus2 => {
            let e = 2.0 * theta_tail(4.0 * PI * PI, t);
            2.0 * e + e * e
        }
        DomainKind::Square2 => {
            let h = theta_tail(PI * PI, t);
            2.0 * h + h * h
        }
        DomainKind::Interval1 => theta_tail(PI * PI, t),
    })
}

/// `∫_{lower}^∞ Σ_{k≠0} e^{-λ_k s} ds` by Gauss–Legendre quadrature in
/// `log s` over the closed-form trace.
pub fn trace_integral(domain: DomainKind, lower: f64) -> Result<f64> {
    check_time(lower)?;
    let lambda1 = eigenvalue_scale(domain);
    let upper = 60.0 / lambda1;
    if lower >= upper {
        // Only the first shell matters this far out.
        let shell = trace_deficit_closed_form(domain, lower)?;
        return Ok(shell / lambda1);
    }
    let rule = crate::quad::CompositeRule::new(20, 96);
    let mut err = None;
    let value = rule.integrate(lower.ln(), upper.ln(), |u| {
        let s = u.exp();
        match trace_deficit_closed_form(domain, s) {
            Ok(d) => d * s,
            Err(e) => {
                err = Some(e);
                0.0
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Least-squares fit of `trace_deficit(t) - 1/(4πt) = c·t^{-1/2}` on the
/// square.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceResidualFit {
    pub c: f64,
    pub r_squared: f64,
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Fits the boundary term of the trace on `times` using the spectral sum.
pub fn fit_trace_residual(domain: DomainKind, times: &[f64]) -> Result<TraceResidualFit> {
    if times.len() < 2 {
        return Err(invalid("need at least two times"));
    }
    let mut residuals = Vec::with_capacity(times.len());
    for &t in times {
        let lat = FrequencyLattice::for_time(domain, t)?;
        residuals.push(lat.trace_deficit(t)? - 1.0 / (4.0 * PI * t));
    }
    let xs: Vec<f64> = times.iter().map(|t| t.powf(-0.5)).collect();
    let c = xs.iter().zip(&residuals).map(|(x, r)| x * r).sum::<f64>()
        / xs.iter().map(|x| x * x).sum::<f64>();
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let ss_res: f64 = xs
        .iter()
        .zip(&residuals)
        .map(|(x, r)| (r - c * x).powi(2))
        .sum();
    let ss_tot: f64 = residuals.iter().map(|r| (r - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(TraceResidualFit {
        c,
        r_squared,
        times: times.to_vec(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::CompositeRule;
    use approx::assert_abs_diff_eq;

    const DOMAINS: [DomainKind; 3] = [
        DomainKind::Torus2,
        DomainKind::Square2,
        DomainKind::Interval1,
    ];

    fn probe_pairs(domain: DomainKind) -> Vec<(Point, Point)> {
        let pts = geometry::sample_uniform(domain, 99, 6).unwrap();
        let mut pairs: Vec<_> = pts.windows(2).map(|w| (w[0], w[1])).collect();
        pairs.push((pts[0], pts[0]));
        if domain != DomainKind::Interval1 {
            pairs.push((Point::new(0.0, 0.0), Point::new(0.0, 0.0)));
            pairs.push((Point::new(0.0, 0.3), Point::new(0.02, 0.35)));
        }
        pairs
    }

    #[test]
    fn lattice_invariants() {
        for domain in DOMAINS {
            let lat = FrequencyLattice::with_cutoff(domain, 12).unwrap();
            assert_eq!(lat.modes()[0].k, [0, 0]);
            assert_eq!(lat.modes()[0].lambda, 0.0);
            assert!(lat.modes().windows(2).all(|w| w[0].lambda <= w[1].lambda));
            let b = lat.basis(Point::new(0.37, 0.61));
            assert_abs_diff_eq!(b.value(&lat.modes()[0]).re, 1.0, epsilon = 0.0);
        }
        assert!(FrequencyLattice::with_cutoff(DomainKind::Torus2, 0).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        // Midpoint rule with 64 nodes per axis is exact for products of
        // modes with |k| <= 12 on all three domains.
        for domain in DOMAINS {
            let lat = FrequencyLattice::with_cutoff(domain, 6).unwrap();
            let g = 64usize;
            let ny = if domain == DomainKind::Interval1 {
                1
            } else {
                g
            };
            let evals: Vec<BasisEval> = (0..g)
                .flat_map(|i| (0..ny).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let y = if ny == 1 {
                        0.0
                    } else {
                        (j as f64 + 0.5) / g as f64
                    };
                    lat.basis(Point::new((i as f64 + 0.5) / g as f64, y))
                })
                .collect();
            let w = 1.0 / evals.len() as f64;
            let modes = lat.modes();
            for (ia, a) in modes.iter().enumerate().step_by(3) {
                for b in modes.iter().skip(ia).step_by(5) {
                    let ip: Complex64 = evals
                        .iter()
                        .map(|e| e.value(a) * e.value(b).conj() * w)
                        .sum();
                    let expect = if a.k == b.k { 1.0 } else { 0.0 };
                    assert!(
                        (ip.re - expect).abs() < 1e-8 && ip.im.abs() < 1e-8,
                        "{domain:?} {:?} {:?} {ip}",
                        a.k,
                        b.k
                    );
                }
            }
        }
    }

    #[test]
    fn cutoff_rule_and_truncation_error() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 1e-3).unwrap();
        assert!(lat.t_min() <= 1e-3);
        let smaller = FrequencyLattice::with_cutoff(DomainKind::Torus2, lat.cutoff() - 1).unwrap();
        assert!(smaller.t_min() > 1e-3);
        let x = Point::new(0.1, 0.2);
        assert!(matches!(
            lat.heat_kernel(1e-4, x, x),
            Err(Error::Truncation { .. })
        ));
        assert!(matches!(
            lat.heat_kernel(0.0, x, x),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            lat.heat_kernel(-1.0, x, x),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn large_time_kernel_is_one() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 1.0).unwrap();
        for (x, y) in probe_pairs(DomainKind::Torus2) {
            assert_abs_diff_eq!(lat.heat_kernel(10.0, x, y).unwrap(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn kernel_symmetry_is_exact() {
        for domain in DOMAINS {
            let lat = FrequencyLattice::for_time(domain, 1e-2).unwrap();
            for (x, y) in probe_pairs(domain) {
                assert_eq!(
                    lat.heat_kernel(0.05, x, y).unwrap(),
                    lat.heat_kernel(0.05, y, x).unwrap()
                );
                assert_eq!(
                    lat.q_kernel(0.05, x, y).unwrap(),
                    lat.q_kernel(0.05, y, x).unwrap()
                );
            }
        }
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 1e-2).unwrap();
        let a = Point::new(0.0, 0.0);
        let b = Point::new(0.5, 0.5);
        assert_eq!(
            lat.q_kernel(0.02, a, b).unwrap(),
            lat.q_kernel(0.02, b, a).unwrap()
        );
    }

    #[test]
    fn backends_agree() {
        for domain in DOMAINS {
            let lat = FrequencyLattice::for_time(domain, 1e-4).unwrap();
            for t in [1e-4, 1e-3, 0.02, 0.1, 1.0] {
                for (x, y) in probe_pairs(domain) {
                    let s = lat.heat_kernel(t, x, y).unwrap();
                    let i = heat_kernel_images(domain, t, x, y).unwrap();
                    assert!((s - i).abs() < 1e-10, "{domain:?} t={t} {s} vs {i}");
                }
            }
        }
    }

    #[test]
    fn images_backend_contract() {
        let x = Point::new(0.5, 0.5);
        assert!(matches!(
            heat_kernel_images(DomainKind::Square2, 1.5, x, x),
            Err(Error::Unsupported(_))
        ));
        assert!(heat_kernel_images(DomainKind::Square2, 0.0, x, x).is_err());
        // Small t: only the identity image matters at the centre.
        let t = 1e-3;
        let v = heat_kernel_images(DomainKind::Square2, t, x, x).unwrap();
        assert!((v * 4.0 * PI * t - 1.0).abs() < 1e-12);
        // Corner: four coincident images.
        let c = Point::new(0.0, 0.0);
        let v = heat_kernel_images(DomainKind::Square2, 0.01, c, c).unwrap();
        let plane = 1.0 / (4.0 * PI * 0.01);
        assert!((v / plane - 4.0).abs() < 1e-6, "ratio {}", v / plane);
    }

    #[test]
    fn on_diagonal_lower_bound() {
        for domain in DOMAINS {
            let lat = FrequencyLattice::for_time(domain, 1e-3).unwrap();
            for t in [1e-3, 0.01, 0.1, 1.0, 3.0] {
                for (x, _) in probe_pairs(domain) {
                    assert!(lat.heat_kernel(t, x, x).unwrap() >= 1.0 - 1e-12);
                }
            }
        }
    }

    #[test]
    fn q_kernel_matches_time_integral_of_heat_kernel() {
        // Oracle: ∫_t^T (p_s - 1) ds by Gauss–Legendre in log s using the
        // images backend, plus the spectral tail q_T.
        let big_t: f64 = 1.0;
        let rule = CompositeRule::new(20, 40);
        for domain in DOMAINS {
            let lat = FrequencyLattice::for_time(domain, 5e-3).unwrap();
            for (x, y) in probe_pairs(domain).into_iter().take(4) {
                let t: f64 = 5e-3;
                let integral = rule.integrate(t.ln(), big_t.ln(), |u| {
                    let s = u.exp();
                    (heat_kernel_images(domain, s, x, y).unwrap() - 1.0) * s
                });
                let oracle = integral + lat.q_kernel(big_t, x, y).unwrap();
                let q = lat.q_kernel(t, x, y).unwrap();
                assert!((q - oracle).abs() < 1e-8, "{domain:?} {q} vs {oracle}");
            }
        }
    }

    #[test]
    fn q_kernel_and_gradient_have_zero_mean() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 0.01).unwrap();
        let g = 48;
        let y = Point::new(0.31, 0.77);
        let mut mean_q = 0.0;
        let mut mean_grad = [0.0; 2];
        for i in 0..g {
            for j in 0..g {
                let x = Point::new((i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64);
                mean_q += lat.q_kernel(0.05, y, x).unwrap();
                let gr = lat.q_grad(0.05, x, y).unwrap();
                mean_grad[0] += gr[0];
                mean_grad[1] += gr[1];
            }
        }
        let w = 1.0 / (g * g) as f64;
        assert!((mean_q * w).abs() < 1e-10);
        assert!((mean_grad[0] * w).abs() < 1e-10 && (mean_grad[1] * w).abs() < 1e-10);
    }

    #[test]
    fn q_solves_poisson_coefficientwise() {
        for domain in DOMAINS {
            let lat = FrequencyLattice::for_time(domain, 0.01).unwrap();
            let (heat, lap_q) = lat.kernel_coefficients(0.02, Point::new(0.3, 0.9)).unwrap();
            assert_eq!(heat[0], Complex64::new(1.0, 0.0));
            for (h, l) in heat.iter().zip(&lap_q).skip(1) {
                assert!((h - l).norm() <= 1e-15 * h.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn q_gradient_matches_finite_differences() {
        let lat = FrequencyLattice::for_time(DomainKind::Square2, 0.01).unwrap();
        let x = Point::new(0.2, 0.7);
        let y = Point::new(0.55, 0.4);
        let h = 1e-5;
        let g = lat.q_grad(0.03, x, y).unwrap();
        let fd = |dx: f64, dy: f64| {
            (lat.q_kernel(0.03, x, Point::new(y.x + dx, y.y + dy))
                .unwrap()
                - lat
                    .q_kernel(0.03, x, Point::new(y.x - dx, y.y - dy))
                    .unwrap())
                / (2.0 * h)
        };
        assert!((g[0] - fd(h, 0.0)).abs() < 1e-6 * g[0].abs().max(1.0));
        assert!((g[1] - fd(0.0, h)).abs() < 1e-6 * g[1].abs().max(1.0));
    }

    #[test]
    fn semigroup_property() {
        // ∫ p_t(x,z) p_s(z,y) dz by the midpoint rule, exact for the
        // truncated trigonometric polynomials involved.
        let lat = FrequencyLattice::with_cutoff(DomainKind::Torus2, 20).unwrap();
        let (t, s) = (0.02, 0.03);
        let x = Point::new(0.13, 0.42);
        let y = Point::new(0.71, 0.05);
        let g = 64;
        let mut acc = 0.0;
        for i in 0..g {
            for j in 0..g {
                let z = Point::new(i as f64 / g as f64, j as f64 / g as f64);
                acc += lat.heat_kernel(t, x, z).unwrap() * lat.heat_kernel(s, z, y).unwrap();
            }
        }
        acc /= (g * g) as f64;
        let direct = lat.heat_kernel(t + s, x, y).unwrap();
        assert!((acc - direct).abs() < 1e-8, "{acc} vs {direct}");
    }

    #[test]
    fn torus_trace_matches_theta_function() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 1e-4).unwrap();
        let t = 1e-4;
        let tr = lat.trace_deficit(t).unwrap();
        assert!((tr - (1.0 / (4.0 * PI * t) - 1.0)).abs() < 1e-10);
        assert!((tr - 794.774_715_459_476_7).abs() < 1e-6);
        let tr10 = lat.trace_deficit(10.0).unwrap();
        assert!(tr10 < 1e-150);
    }

    #[test]
    fn square_trace_closed_form() {
        // Product structure: (½ + ½ϑ(t))² - 1 with ϑ(t) = Σ_m e^{-π²m²t}
        // = (πt)^{-1/2} Σ_m e^{-m²/t}.
        let t = 1e-3;
        let lat = FrequencyLattice::for_time(DomainKind::Square2, t).unwrap();
        let theta = (1.0 / (PI * t)).sqrt();
        let expect = (0.5 + 0.5 * theta).powi(2) - 1.0;
        assert!((lat.trace_deficit(t).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn plane_gaussian_gradient_ratio_is_at_most_one() {
        // ∇_y p = -(y - x)/(2t) p for the plane kernel, so
        // |∇p| / ((t^{-1/2} + d/t) p) = (d/2t)/(t^{-1/2} + d/t) <= 1/2.
        for t in [1e-4f64, 1e-2, 0.5] {
            for d in [0.0, 0.01, 0.1, 1.0] {
                let ratio = (d / (2.0 * t)) / (t.powf(-0.5) + d / t);
                assert!(ratio <= 1.0);
            }
        }
    }

    #[test]
    fn kernel_bound_fit_is_finite_and_stable() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 2e-3).unwrap();
        let coarse_t = [2e-3, 1e-2, 0.1, 0.5];
        let fine_t = [2e-3, 5e-3, 1e-2, 3e-2, 0.1, 0.25, 0.5];
        let grid = |g: usize| -> Vec<(Point, Point)> {
            let x = Point::new(0.5, 0.5);
            (0..g)
                .flat_map(|i| (0..g).map(move |j| (i, j)))
                .map(|(i, j)| (x, Point::new(i as f64 / g as f64, j as f64 / g as f64)))
                .collect()
        };
        let a = verify_kernel_bounds(&lat, &coarse_t, &grid(8)).unwrap();
        let b = verify_kernel_bounds(&lat, &fine_t, &grid(16)).unwrap();
        assert!(a.a_hat > 1.0 && b.a_hat > 1.0);
        for (u, v) in a
            .c_heat
            .iter()
            .chain(&a.c_q)
            .zip(b.c_heat.iter().chain(&b.c_q))
        {
            assert!(u.is_finite() && v.is_finite());
            assert!(v / u < 2.0 && u / v < 2.0, "{u} vs {v}");
        }
        assert!((a.a_hat / b.a_hat) < 2.0 && (b.a_hat / a.a_hat) < 2.0);
        // The Gaussian envelope cannot be sharper than the plane kernel's e^{1/4}.
        assert!(b.a_hat >= 0.25f64.exp() * 0.999);
        assert!(verify_kernel_bounds(&lat, &[], &grid(2)).is_err());
        assert!(verify_kernel_bounds(&lat, &[1.5], &grid(2)).is_err());
    }

    #[test]
    fn diagonal_pair_is_trivially_bounded() {
        let lat = FrequencyLattice::for_time(DomainKind::Torus2, 0.1).unwrap();
        let x = Point::new(0.2, 0.2);
        let fit = verify_kernel_bounds(&lat, &[0.5], &[(x, x)]).unwrap();
        assert!(fit.c_heat.iter().all(|c| c.is_finite()));
        assert!(fit.a_hat.is_infinite());
    }

    #[test]
    fn closed_form_trace_matches_spectral_sum() {
        for domain in [
            DomainKind::Torus2,
            DomainKind::Square2,
            DomainKind::Interval1,
        ] {
            for t in [1e-4, 1e-3, 0.02, 0.3, 2.0] {
                let lat = FrequencyLattice::for_time(domain, t).unwrap();
                let spectral = lat.trace_deficit(t).unwrap();
                let closed = trace_deficit_closed_form(domain, t).unwrap();
                assert!(
                    (spectral - closed).abs() <= 1e-11 * closed.max(1e-300).max(1.0),
                    "{domain:?} {t} {spectral} {closed}"
                );
                if t > 1.0 {
                    assert!((spectral - closed).abs() <= 1e-12 * closed);
                }
            }
        }
    }

    #[test]
    fn on_diagonal_energy_is_trace_integral() {
        for domain in [
            DomainKind::Torus2,
            DomainKind::Square2,
            DomainKind::Interval1,
        ] {
            for t in [1e-4, 1e-3, 1e-2] {
                let lat = FrequencyLattice::for_time(domain, 2.0 * t).unwrap();
                let sum = lat.on_diagonal_energy(t).unwrap();
                let integral = trace_integral(domain, 2.0 * t).unwrap();
                assert!(
                    (sum - integral).abs() < 1e-8,
                    "{domain:?} {t} {sum} {integral}"
                );
            }
        }
    }

    #[test]
    fn square_boundary_term_fit() {
        let fit = fit_trace_residual(DomainKind::Square2, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!(fit.r_squared > 0.99);
        // Exact coefficient 1/(2√π) ≈ 0.282; the constant -3/4 pulls the fit down.
        assert!((fit.c - 0.2725).abs() < 1e-3, "{}", fit.c);
    }
}
