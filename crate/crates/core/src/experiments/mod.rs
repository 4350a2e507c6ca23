//! Monte Carlo harness: bipartite and semi-discrete matching costs, the
//! energy identity, event probabilities, contractivity profiles and the
//! one-dimensional exact law.
//!
//! Every trial draws from its own counter-based RNG stream, so records are
//! a pure function of the configuration and the trial index regardless of
//! how trials are scheduled across workers.

mod fit;
mod io;

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fit::{cell_means, fit_leading_constant, CellMean, FitResult};
pub use io::{read_records, write_outputs, write_records, CSV_HEADER};

use crate::error::{invalid, Error, Result};
use crate::geometry::{self, DomainKind, Point};
use crate::heatkernel::FrequencyLattice;
use crate::potential::{
    build_potential, certified_sup_hessian, expected_energy_closed_form, EventCheckConfig,
    SpectralField,
};
use crate::rng::trial_rng;
use crate::transport::{bipartite_cost, exp_pushforward_cost, replicated_cost, QuadratureGrid};

/// How the heat time is chosen for each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum TimeRule {
    Explicit(f64),
    /// `t = γ (log n)³ / n`.
    Gamma(f64),
}

impl TimeRule {
    pub fn time(self, n: usize) -> Result<f64> {
        let t = match self {
            TimeRule::Explicit(t) => t,
            TimeRule::Gamma(gamma) => {
                let l = (n as f64).ln();
                gamma * l * l * l / n as f64
            }
        };
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!(
                "time rule {self:?} gives t = {t} at n = {n}"
            )));
        }
        Ok(t)
    }
}

/// Spectral truncation of the potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "value")]
pub enum CutoffPolicy {
    /// Smallest cutoff whose tail is negligible at the chosen `t`.
    Auto,
    Fixed(usize),
}

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bipartite,
    Semidiscrete,
    Oned,
    Event,
    Contractivity,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bipartite" => Ok(Mode::Bipartite),
            "semidiscrete" => Ok(Mode::Semidiscrete),
            "oned" => Ok(Mode::Oned),
            "event" => Ok(Mode::Event),
            "contractivity" => Ok(Mode::Contractivity),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub domain: DomainKind,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub t_rule: TimeRule,
    /// Replication ratio of the semi-discrete surrogate.
    pub q: usize,
    /// Event threshold; `None` means `1 / log n`.
    pub xi: Option<f64>,
    pub cutoff: CutoffPolicy,
    /// Grid points per sample point for the exponential coupling; `None`
    /// means `q`.
    pub grid_ratio: Option<usize>,
    /// Heat-time multipliers `α` (`t = α/n`) for the contractivity profile;
    /// `None` means `{8, 16, 32, 64}·log n`.
    pub alphas: Option<Vec<f64>>,
    /// Evolved copies per point in the contractivity proxy.
    pub replication: usize,
    /// Largest assignment size allowed.
    pub max_assignment: usize,
    /// Whether to run the certified Hessian check.
    pub check_event: bool,
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainKind::Torus2,
            ns: vec![250, 500, 1000],
            trials: 10,
            seed: 0,
            t_rule: TimeRule::Gamma(1.0),
            q: 4,
            xi: None,
            cutoff: CutoffPolicy::Auto,
            grid_ratio: None,
            alphas: None,
            replication: 4,
            max_assignment: 16_000,
            check_event: true,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.ns.is_empty() || self.ns.contains(&0) {
            return Err(invalid("n list must be nonempty with every n >= 1"));
        }
        if self.q == 0 || self.replication == 0 {
            return Err(invalid("replication ratios must be >= 1"));
        }
        if let TimeRule::Gamma(g) = self.t_rule {
            if !(g > 0.0) {
                return Err(invalid("gamma must be positive"));
            }
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0) {
                return Err(invalid("xi must be positive"));
            }
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be >= 1"));
        }
        Ok(())
    }

    pub fn xi_for(&self, n: usize) -> f64 {
        self.xi.unwrap_or_else(|| 1.0 / (n as f64).ln())
    }

    fn lattice(&self, t: f64) -> Result<Arc<FrequencyLattice>> {
        let lat = match self.cutoff {
            CutoffPolicy::Auto => FrequencyLattice::for_time(self.domain, t)?,
            CutoffPolicy::Fixed(k) => FrequencyLattice::with_cutoff(self.domain, k)?,
        };
        lat.check(t)?;
        Ok(Arc::new(lat))
    }

    fn check_budget(&self, size: usize) -> Result<()> {
        if size > self.max_assignment {
            return Err(Error::Resource(format!(
                "assignment of size {size} exceeds budget {}; raise the budget to at least {size}",
                self.max_assignment
            )));
        }
        Ok(())
    }

    /// Runs `f` over trial indices on the configured pool, in index order.
    fn run_trials<T: Send>(
        &self,
        count: usize,
        f: impl Fn(usize) -> T + Sync + Send,
    ) -> Result<Vec<T>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::Resource(e.to_string()))?;
        Ok(pool.install(|| (0..count).into_par_iter().map(&f).collect()))
    }
}

/// One row of output. Observables a mode does not produce, and all
/// observables of a failed trial, are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub n: usize,
    pub t: f64,
    pub seed: u64,
    pub energy: Option<f64>,
    pub sup_hess: Option<f64>,
    pub event_ok: Option<bool>,
    pub cost_bip: Option<f64>,
    pub cost_semi: Option<f64>,
    pub cost_exp: Option<f64>,
    pub wall_ms: u64,
    #[serde(skip)]
    pub error: Option<String>,
}

impl TrialRecord {
    fn empty(trial: usize, n: usize, t: f64, seed: u64) -> Self {
        TrialRecord {
            trial,
            n,
            t,
            seed,
            energy: None,
            sup_hess: None,
            event_ok: None,
            cost_bip: None,
            cost_semi: None,
            cost_exp: None,
            wall_ms: 0,
            error: None,
        }
    }

    /// No observable was recorded.
    pub fn failed(&self) -> bool {
        self.error.is_some()
            || (self.energy.is_none()
                && self.sup_hess.is_none()
                && self.event_ok.is_none()
                && self.cost_bip.is_none()
                && self.cost_semi.is_none()
                && self.cost_exp.is_none())
    }
}

/// Runs `body` on a fresh record, timing it and turning errors into a
/// failed record.
fn timed_trial(
    trial: usize,
    n: usize,
    t: f64,
    seed: u64,
    body: impl FnOnce(&mut TrialRecord) -> Result<()>,
) -> TrialRecord {
    let start = Instant::now();
    let mut rec = TrialRecord::empty(trial, n, t, seed);
    if let Err(e) = body(&mut rec) {
        rec = TrialRecord::empty(trial, n, t, seed);
        rec.error = Some(e.to_string());
    }
    rec.wall_ms = start.elapsed().as_millis() as u64;
    rec
}

/// Certified `sup ‖∇²f‖` and whether it lies below `xi`. The grid spacing
/// is derived from `min(ξ, 1/2)`, which is finer than needed for large `ξ`.
pub fn certified_event(field: &SpectralField, xi: f64) -> Result<(f64, bool)> {
    let cfg = EventCheckConfig::auto(xi.min(0.5), field)?;
    let cert = certified_sup_hessian(field, &cfg)?;
    Ok((cert.certified, cert.certified < xi))
}

/// Trial index → global row index, for stable ordering over the n grid.
fn flatten<T>(per_n: Vec<Vec<T>>) -> Vec<T> {
    per_n.into_iter().flatten().collect()
}

/// Per trial: two independent uniform clouds, their optimal matching, the
/// energy of the difference potential and the intersection event.
pub fn run_bipartite(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    for &n in &cfg.ns {
        cfg.check_budget(n)?;
    }
    let mut out = Vec::new();
    for &n in &cfg.ns {
        let t = cfg.t_rule.time(n)?;
        let lat = cfg.lattice(t)?;
        let xi = cfg.xi_for(n);
        let tag = format!("bipartite/{}/{n}", cfg.domain.name());
        out.push(cfg.run_trials(cfg.trials, |trial| {
            timed_trial(trial, n, t, cfg.seed, |rec| {
                let mut rng = trial_rng(cfg.seed, &tag, trial as u64);
                let xs = geometry::sample_uniform_with(cfg.domain, &mut rng, n)?;
                let ys = geometry::sample_uniform_with(cfg.domain, &mut rng, n)?;
                rec.cost_bip = Some(bipartite_cost(cfg.domain, &xs, &ys)?.cost);
                let fx = build_potential(&lat, &xs, t)?;
                let fy = build_potential(&lat, &ys, t)?;
                rec.energy = Some(fy.sub(&fx)?.dirichlet_energy());
                if cfg.check_event {
                    let (sx, ex) = certified_event(&fx, xi)?;
                    let (sy, ey) = certified_event(&fy, xi)?;
                    rec.sup_hess = Some(sx.max(sy));
                    rec.event_ok = Some(ex && ey);
                }
                Ok(())
            })
        })?);
    }
    Ok(flatten(out))
}

/// Per trial: one uniform cloud of size n matched to `q·n` fresh uniform
/// points, the potential's energy and event, and the end-to-end cost of the
/// exponential coupling from a uniform grid of `r·n` points.
pub fn run_semidiscrete(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let ratio = cfg.grid_ratio.unwrap_or(cfg.q);
    if ratio == 0 {
        return Err(invalid("grid ratio must be >= 1"));
    }
    for &n in &cfg.ns {
        cfg.check_budget(cfg.q * n)?;
        cfg.check_budget(ratio * n)?;
    }
    let mut out = Vec::new();
    for &n in &cfg.ns {
        let t = cfg.t_rule.time(n)?;
        let lat = cfg.lattice(t)?;
        let xi = cfg.xi_for(n);
        let grid = QuadratureGrid::uniform(cfg.domain, ratio * n)?;
        let tag = format!("semidiscrete/{}/{n}", cfg.domain.name());
        out.push(cfg.run_trials(cfg.trials, |trial| {
            timed_trial(trial, n, t, cfg.seed, |rec| {
                let mut rng = trial_rng(cfg.seed, &tag, trial as u64);
                let xs = geometry::sample_uniform_with(cfg.domain, &mut rng, n)?;
                let ys = geometry::sample_uniform_with(cfg.domain, &mut rng, cfg.q * n)?;
                rec.cost_semi = Some(replicated_cost(cfg.domain, &xs, &ys, cfg.q)?);
                let f = build_potential(&lat, &xs, t)?;
                rec.energy = Some(f.dirichlet_energy());
                if cfg.check_event {
                    let (s, e) = certified_event(&f, xi)?;
                    rec.sup_hess = Some(s);
                    rec.event_ok = Some(e);
                }
                rec.cost_exp = Some(exp_pushforward_cost(&f, &xs, &grid)?.matched_cost);
                Ok(())
            })
        })?);
    }
    Ok(flatten(out))
}

/// Sorted-matching cost of two uniform samples of `[0, 1]` per trial.
pub fn run_oned(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &n in &cfg.ns {
        let tag = format!("oned/{n}");
        out.push(cfg.run_trials(cfg.trials, |trial| {
            timed_trial(trial, n, 0.0, cfg.seed, |rec| {
                let mut rng = trial_rng(cfg.seed, &tag, trial as u64);
                rec.cost_bip = Some(sorted_cost(&mut rng, n));
                Ok(())
            })
        })?);
    }
    Ok(flatten(out))
}

fn sorted_cost<R: Rng + ?Sized>(rng: &mut R, n: usize) -> f64 {
    let mut a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

/// Mean and standard error of the sorted-matching cost on `[0, 1]`, whose
/// exact expectation is `1 / (3(n+1))`.
pub fn one_d_oracle(n: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if n == 0 || trials < 2 {
        return Err(invalid("need n >= 1 and at least two trials"));
    }
    let costs: Vec<f64> = (0..trials)
        .map(|trial| sorted_cost(&mut trial_rng(seed, &format!("oned/{n}"), trial as u64), n))
        .collect();
    Ok(mean_se(&costs))
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Empirical failure frequency of the certified event at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub n: usize,
    pub t: f64,
    pub xi: f64,
    /// Trials whose event check completed.
    pub trials: usize,
    pub failures: usize,
    /// Trials whose event check errored.
    pub errors: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// 95% Wilson score interval for `k` successes out of `m`.
pub fn wilson_interval(k: usize, m: usize) -> (f64, f64) {
    if m == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let m = m as f64;
    let p = k as f64 / m;
    let denom = 1.0 + z * z / m;
    let centre = (p + z * z / (2.0 * m)) / denom;
    let half = z / denom * (p * (1.0 - p) / m + z * z / (4.0 * m * m)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Certified event check on the potential of one uniform cloud per trial.
/// Trial `k` uses the same RNG stream at every `n`.
pub fn run_event_probability(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, Vec<EventRow>)> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.ns {
        let t = cfg.t_rule.time(n)?;
        let lat = cfg.lattice(t)?;
        let xi = cfg.xi_for(n);
        let tag = format!("event/{}", cfg.domain.name());
        let recs = cfg.run_trials(cfg.trials, |trial| {
            timed_trial(trial, n, t, cfg.seed, |rec| {
                let mut rng = trial_rng(cfg.seed, &tag, trial as u64);
                let xs = geometry::sample_uniform_with(cfg.domain, &mut rng, n)?;
                let f = build_potential(&lat, &xs, t)?;
                let (s, e) = certified_event(&f, xi)?;
                rec.energy = Some(f.dirichlet_energy());
                rec.sup_hess = Some(s);
                rec.event_ok = Some(e);
                Ok(())
            })
        })?;
        let done: Vec<bool> = recs.iter().filter_map(|r| r.event_ok).collect();
        let failures = done.iter().filter(|ok| !**ok).count();
        let (ci_low, ci_high) = wilson_interval(failures, done.len());
        rows.push(EventRow {
            n,
            t,
            xi,
            trials: done.len(),
            failures,
            errors: recs.len() - done.len(),
            frequency: if done.is_empty() {
                f64::NAN
            } else {
                failures as f64 / done.len() as f64
            },
            ci_low,
            ci_high,
        });
        records.extend(recs);
    }
    Ok((records, rows))
}

/// Mean proxy `Ŵ₂²(μⁿ, μ^{n,t})` at one `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractivityRow {
    pub alpha: f64,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub trials: usize,
    pub failed: usize,
}

/// `{8, 16, 32, 64} · log n`.
pub fn default_alphas(n: usize) -> Vec<f64> {
    let l = (n as f64).ln();
    [8.0, 16.0, 32.0, 64.0].iter().map(|m| m * l).collect()
}

/// Matches each `X_i`, replicated `m` times, against `m` heat-evolved copies
/// `X_i + √(2t) G` (folded), for `t = α/n`. Within a trial the points and
/// Gaussian increments are shared across `α`. Uses the first entry of `ns`.
pub fn run_contractivity(
    cfg: &ExperimentConfig,
) -> Result<(Vec<TrialRecord>, Vec<ContractivityRow>)> {
    cfg.validate()?;
    let n = cfg.ns[0];
    let m = cfg.replication;
    cfg.check_budget(m * n)?;
    let alphas = cfg.alphas.clone().unwrap_or_else(|| default_alphas(n));
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(invalid("alphas must be positive"));
    }
    let tag = format!("contractivity/{}/{n}", cfg.domain.name());
    let per_trial = cfg.run_trials(cfg.trials, |trial| {
        let mut rng = trial_rng(cfg.seed, &tag, trial as u64);
        let xs = geometry::sample_uniform_with(cfg.domain, &mut rng, n);
        let gauss: Vec<[f64; 2]> = (0..m * n)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        alphas
            .iter()
            .map(|&alpha| {
                let t = alpha / n as f64;
                timed_trial(trial, n, t, cfg.seed, |rec| {
                    let xs = xs.as_ref().map_err(Clone::clone)?;
                    rec.cost_semi = Some(contractivity_proxy(cfg.domain, xs, &gauss, t, m)?);
                    Ok(())
                })
            })
            .collect::<Vec<_>>()
    })?;
    let mut rows = Vec::new();
    for (k, &alpha) in alphas.iter().enumerate() {
        let vals: Vec<f64> = per_trial.iter().filter_map(|r| r[k].cost_semi).collect();
        let (mean, se) = if vals.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_se(&vals)
        };
        rows.push(ContractivityRow {
            alpha,
            t: alpha / n as f64,
            mean,
            se,
            trials: vals.len(),
            failed: per_trial.len() - vals.len(),
        });
    }
    // Rows ordered by α, then trial.
    let mut records = Vec::new();
    for k in 0..alphas.len() {
        records.extend(per_trial.iter().map(|r| r[k].clone()));
    }
    Ok((records, rows))
}

fn contractivity_proxy(
    domain: DomainKind,
    xs: &[Point],
    gauss: &[[f64; 2]],
    t: f64,
    m: usize,
) -> Result<f64> {
    let s = (2.0 * t).sqrt();
    let mut ys = Vec::with_capacity(gauss.len());
    for (i, x) in xs.iter().enumerate() {
        for g in &gauss[i * m..(i + 1) * m] {
            let dy = if domain == DomainKind::Interval1 {
                0.0
            } else {
                s * g[1]
            };
            ys.push(geometry::fold(domain, [x.x + s * g[0], x.y + dy])?);
        }
    }
    replicated_cost(domain, xs, &ys, m)
}

/// Mean, standard error and count of one observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Stat {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Option<Stat> {
        let v: Vec<f64> = values.flatten().collect();
        if v.is_empty() {
            return None;
        }
        let (mean, se) = mean_se(&v);
        Some(Stat {
            mean,
            se,
            count: v.len(),
        })
    }
}

/// Aggregates of all records sharing `(n, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub t: f64,
    pub trials: usize,
    pub failed: usize,
    pub energy: Option<Stat>,
    /// `E ∫|∇f|²` for a single cloud.
    pub expected_energy: Option<f64>,
    pub sup_hess: Option<Stat>,
    pub event_rate: Option<f64>,
    pub cost_bip: Option<Stat>,
    pub cost_semi: Option<Stat>,
    pub cost_exp: Option<Stat>,
}

/// Groups records by `(n, t)` in order of first appearance.
pub fn summarize(records: &[TrialRecord], domain: Option<DomainKind>) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(n, t)| n == r.n && t == r.t) {
            keys.push((r.n, r.t));
        }
    }
    keys.into_iter()
        .map(|(n, t)| {
            let cell: Vec<&TrialRecord> = records.iter().filter(|r| r.n == n && r.t == t).collect();
            let ok: Vec<&TrialRecord> = cell.iter().copied().filter(|r| !r.failed()).collect();
            let events: Vec<bool> = ok.iter().filter_map(|r| r.event_ok).collect();
            let expected_energy = domain.filter(|_| t > 0.0).and_then(|d| {
                FrequencyLattice::for_time(d, t)
                    .ok()
                    .and_then(|lat| expected_energy_closed_form(&lat, n, t).ok())
            });
            CellSummary {
                n,
                t,
                trials: cell.len(),
                failed: cell.len() - ok.len(),
                energy: Stat::of(ok.iter().map(|r| r.energy)),
                expected_energy,
                sup_hess: Stat::of(ok.iter().map(|r| r.sup_hess)),
                event_rate: if events.is_empty() {
                    None
                } else {
                    Some(events.iter().filter(|e| **e).count() as f64 / events.len() as f64)
                },
                cost_bip: Stat::of(ok.iter().map(|r| r.cost_bip)),
                cost_semi: Stat::of(ok.iter().map(|r| r.cost_semi)),
                cost_exp: Stat::of(ok.iter().map(|r| r.cost_exp)),
            }
        })
        .collect()
}

/// Which cost column a fit uses and its predicted leading constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTarget {
    Bipartite,
    Semidiscrete,
}

impl FitTarget {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bipartite" => Ok(FitTarget::Bipartite),
            "semidiscrete" => Ok(FitTarget::Semidiscrete),
            other => Err(invalid(format!("unknown fit target {other:?}"))),
        }
    }

    /// `1/(2π)` for bipartite; `(1/(4π))(1 + 1/q)` for the replicated
    /// semi-discrete surrogate, `1/(4π)` when `q` is unknown.
    pub fn constant(self, q: Option<usize>) -> f64 {
        use std::f64::consts::PI;
        match self {
            FitTarget::Bipartite => 1.0 / (2.0 * PI),
            FitTarget::Semidiscrete => {
                let corr = q.map_or(1.0, |q| 1.0 + 1.0 / q as f64);
                corr / (4.0 * PI)
            }
        }
    }

    pub fn column(self, r: &TrialRecord) -> Option<f64> {
        match self {
            FitTarget::Bipartite => r.cost_bip,
            FitTarget::Semidiscrete => r.cost_semi,
        }
    }
}

/// Fit of the target column over all records.
pub fn fit_records(records: &[TrialRecord], target: FitTarget) -> Result<FitResult> {
    fit_leading_constant(records.iter().map(|r| (r.n, target.column(r))))
}

/// Everything written to the JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub domain: String,
    pub seed: u64,
    pub trials: usize,
    pub q: usize,
    pub t_rule: TimeRule,
    pub cells: Vec<CellSummary>,
    pub failed_trials: usize,
    pub fit: Option<FitResult>,
    pub fit_target_constant: Option<f64>,
    pub event: Option<Vec<EventRow>>,
    pub contractivity: Option<Vec<ContractivityRow>>,
    pub notes: Vec<String>,
}

/// Records plus summary of one simulation.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Dispatches on `mode` and assembles the summary.
pub fn simulate(mode: Mode, cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    let mut notes = Vec::new();
    let mut event = None;
    let mut contractivity = None;
    let records = match mode {
        Mode::Bipartite => run_bipartite(cfg)?,
        Mode::Semidiscrete => run_semidiscrete(cfg)?,
        Mode::Oned => run_oned(cfg)?,
        Mode::Event => {
            let (r, rows) = run_event_probability(cfg)?;
            event = Some(rows);
            r
        }
        Mode::Contractivity => {
            if cfg.alphas.is_none() {
                notes.push("alpha grid defaults to {8,16,32,64}·log n; the constant C in α >= C log n is unspecified".into());
            }
            notes.push("cost_semi holds the contractivity proxy; t = α/n".into());
            let (r, rows) = run_contractivity(cfg)?;
            contractivity = Some(rows);
            r
        }
    };
    let failed_trials = records.iter().filter(|r| r.failed()).count();
    if failed_trials > 0 {
        notes.push(format!(
            "{failed_trials} failed trials excluded from aggregates"
        ));
    }
    let target = match mode {
        Mode::Bipartite | Mode::Oned => Some(FitTarget::Bipartite),
        Mode::Semidiscrete => Some(FitTarget::Semidiscrete),
        _ => None,
    };
    let (fit, fit_target_constant) = match target {
        Some(tg) if mode != Mode::Oned && distinct_ns(&records) >= 3 => {
            match fit_records(&records, tg) {
                Ok(f) => (
                    Some(f),
                    Some(tg.constant((tg == FitTarget::Semidiscrete).then_some(cfg.q))),
                ),
                Err(e) => {
                    notes.push(format!("fit skipped: {e}"));
                    (None, None)
                }
            }
        }
        _ => (None, None),
    };
    let domain = if mode == Mode::Oned {
        DomainKind::Interval1
    } else {
        cfg.domain
    };
    let cells = summarize(
        &records,
        (mode != Mode::Oned && mode != Mode::Contractivity).then_some(domain),
    );
    Ok(SimulationOutput {
        summary: Summary {
            mode,
            domain: domain.name().to_string(),
            seed: cfg.seed,
            trials: cfg.trials,
            q: cfg.q,
            t_rule: cfg.t_rule,
            cells,
            failed_trials,
            fit,
            fit_target_constant,
            event,
            contractivity,
            notes,
        },
        records,
    })
}

fn distinct_ns(records: &[TrialRecord]) -> usize {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.len()
}
