//! Python bindings for `matchlab`.
//!
//! Points cross the boundary as `(x, y)` tuples; one-dimensional points use
//! `y = 0`. Domains are named `"torus"`, `"square"` or `"interval"`.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use matchlab::experiments::{self, ExperimentConfig, FitResult, Mode, TimeRule, TrialRecord};
use matchlab::potential::{self, sup_hessian_bound};
use matchlab::transport;
use matchlab::{DomainKind, Error, FrequencyLattice, Point, SpectralField};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::Config { .. }
        | Error::Domain { .. }
        | Error::Truncation { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn domain(name: &str) -> PyResult<DomainKind> {
    DomainKind::parse(name).map_err(to_py)
}

fn points(raw: &[(f64, f64)]) -> Vec<Point> {
    raw.iter().map(|&(x, y)| Point::new(x, y)).collect()
}

/// Heat kernel `p_t(x, y)` by the spectral sum.
#[pyfunction]
fn heat_kernel(domain_name: &str, t: f64, x: (f64, f64), y: (f64, f64)) -> PyResult<f64> {
    let lat = FrequencyLattice::for_time(domain(domain_name)?, t).map_err(to_py)?;
    lat.heat_kernel(t, Point::new(x.0, x.1), Point::new(y.0, y.1))
        .map_err(to_py)
}

/// Time-averaged kernel `q_t(x, y)`.
#[pyfunction]
fn q_kernel(domain_name: &str, t: f64, x: (f64, f64), y: (f64, f64)) -> PyResult<f64> {
    let lat = FrequencyLattice::for_time(domain(domain_name)?, t).map_err(to_py)?;
    lat.q_kernel(t, Point::new(x.0, x.1), Point::new(y.0, y.1))
        .map_err(to_py)
}

/// `Σ_{k≠0} e^{-λ_k t}`.
#[pyfunction]
fn trace_deficit(domain_name: &str, t: f64) -> PyResult<f64> {
    let lat = FrequencyLattice::for_time(domain(domain_name)?, t).map_err(to_py)?;
    lat.trace_deficit(t).map_err(to_py)
}

/// `E ∫|∇f^{n,t}|²` for `n` uniform points.
#[pyfunction]
fn expected_energy(domain_name: &str, n: usize, t: f64) -> PyResult<f64> {
    let lat = FrequencyLattice::for_time(domain(domain_name)?, t).map_err(to_py)?;
    potential::expected_energy_closed_form(&lat, n, t).map_err(to_py)
}

/// Optimal assignment of a square cost matrix: `(perm, total)`.
#[pyfunction]
fn solve_assignment(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let m = transport::solve_assignment(&cost).map_err(to_py)?;
    Ok((m.perm, m.total))
}

/// Empirical `W₂²` between two equal-size clouds: `(cost, perm)`.
#[pyfunction]
fn bipartite_cost(
    domain_name: &str,
    xs: Vec<(f64, f64)>,
    ys: Vec<(f64, f64)>,
) -> PyResult<(f64, Vec<usize>)> {
    let m = transport::bipartite_cost(domain(domain_name)?, &points(&xs), &points(&ys))
        .map_err(to_py)?;
    Ok((m.cost, m.perm))
}

/// `W₂²` between `n` points and `q·n` points.
#[pyfunction]
fn replicated_cost(
    domain_name: &str,
    xs: Vec<(f64, f64)>,
    ys: Vec<(f64, f64)>,
    q: usize,
) -> PyResult<f64> {
    transport::replicated_cost(domain(domain_name)?, &points(&xs), &points(&ys), q).map_err(to_py)
}

/// Uniform sample of `n` points from a seed.
#[pyfunction]
fn sample_uniform(domain_name: &str, seed: u64, n: usize) -> PyResult<Vec<(f64, f64)>> {
    let pts = matchlab::geometry::sample_uniform(domain(domain_name)?, seed, n).map_err(to_py)?;
    Ok(pts.iter().map(|p| (p.x, p.y)).collect())
}

/// Zero-mean potential `f` with `-Δf = u^{n,t} - 1` for a point cloud.
#[pyclass(name = "Potential", frozen)]
struct PyPotential {
    field: SpectralField,
    n: usize,
    t: f64,
}

#[pymethods]
impl PyPotential {
    #[new]
    fn new(domain_name: &str, pts: Vec<(f64, f64)>, t: f64) -> PyResult<Self> {
        let lat = Arc::new(FrequencyLattice::for_time(domain(domain_name)?, t).map_err(to_py)?);
        let p = potential::build_potential(&lat, &points(&pts), t).map_err(to_py)?;
        Ok(PyPotential {
            field: p.field,
            n: p.n,
            t: p.t,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.n
    }

    #[getter]
    fn t(&self) -> f64 {
        self.t
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        self.field.value(Point::new(x, y))
    }

    fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let g = self.field.gradient(Point::new(x, y));
        (g[0], g[1])
    }

    fn hessian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        self.field.hessian(Point::new(x, y))
    }

    fn dirichlet_energy(&self) -> f64 {
        self.field.dirichlet_energy()
    }

    /// Certified upper bound on `sup ‖∇²f‖` from a grid of the given spacing.
    #[pyo3(signature = (spacing = 1.0 / 256.0))]
    fn sup_hessian(&self, spacing: f64) -> PyResult<f64> {
        sup_hessian_bound(&self.field, spacing).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Potential(domain={}, n={}, t={})",
            self.field.domain().name(),
            self.n,
            self.t
        )
    }
}

fn record_dict<'py>(py: Python<'py>, r: &TrialRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("trial", r.trial)?;
    d.set_item("n", r.n)?;
    d.set_item("t", r.t)?;
    d.set_item("seed", r.seed)?;
    d.set_item("energy", r.energy)?;
    d.set_item("sup_hess", r.sup_hess)?;
    d.set_item("event_ok", r.event_ok)?;
    d.set_item("cost_bip", r.cost_bip)?;
    d.set_item("cost_semi", r.cost_semi)?;
    d.set_item("cost_exp", r.cost_exp)?;
    d.set_item("wall_ms", r.wall_ms)?;
    d.set_item("error", r.error.clone())?;
    Ok(d)
}

fn fit_dict<'py>(py: Python<'py>, f: &FitResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("a", f.a)?;
    d.set_item("b", f.b)?;
    d.set_item("se_a", f.se_a)?;
    d.set_item("se_b", f.se_b)?;
    d.set_item("r_squared", f.r_squared)?;
    d.set_item("n_values", f.n_values.clone())?;
    d.set_item("observations", f.observations)?;
    d.set_item("excluded", f.excluded)?;
    Ok(d)
}

/// Runs one simulation mode and returns its trial records as dicts.
#[pyfunction]
#[pyo3(signature = (mode, ns, trials, seed = 0, domain_name = "torus", gamma = 1.0, t = None, q = 4, check_event = true, workers = None))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    mode: &str,
    ns: Vec<usize>,
    trials: usize,
    seed: u64,
    domain_name: &str,
    gamma: f64,
    t: Option<f64>,
    q: usize,
    check_event: bool,
    workers: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = ExperimentConfig {
        domain: domain(domain_name)?,
        ns,
        trials,
        seed,
        t_rule: t.map_or(TimeRule::Gamma(gamma), TimeRule::Explicit),
        q,
        check_event,
        workers,
        ..Default::default()
    };
    let mode = Mode::parse(mode).map_err(to_py)?;
    let out = py
        .detach(|| experiments::simulate(mode, &cfg))
        .map_err(to_py)?;
    out.records.iter().map(|r| record_dict(py, r)).collect()
}

/// Weighted fit of `a·log(n)/n + b/n` to `(n, value)` observations.
#[pyfunction]
fn fit_leading_constant<'py>(
    py: Python<'py>,
    ns: Vec<usize>,
    values: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    if ns.len() != values.len() {
        return Err(PyValueError::new_err("ns and values differ in length"));
    }
    let fit = experiments::fit_leading_constant(ns.into_iter().zip(values.into_iter().map(Some)))
        .map_err(to_py)?;
    fit_dict(py, &fit)
}

/// Sample mean and standard error of the sorted-matching cost on `[0, 1]`.
#[pyfunction]
fn one_d_oracle(n: usize, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    experiments::one_d_oracle(n, trials, seed).map_err(to_py)
}

#[pymodule]
fn matchlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_function(wrap_pyfunction!(heat_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(q_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(trace_deficit, m)?)?;
    m.add_function(wrap_pyfunction!(expected_energy, m)?)?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(bipartite_cost, m)?)?;
    m.add_function(wrap_pyfunction!(replicated_cost, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_leading_constant, m)?)?;
    m.add_function(wrap_pyfunction!(one_d_oracle, m)?)?;
    Ok(())
}
