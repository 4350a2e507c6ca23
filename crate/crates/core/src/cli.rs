//! Command-line front end: `simulate`, `kernel-selftest`, `fit` and
//! `report`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 some trials failed,
//! 3 self-test failure.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::experiments::{
    fit_records, read_records, simulate, write_outputs, CutoffPolicy, ExperimentConfig, FitResult,
    FitTarget, Mode, Summary, TimeRule,
};
use crate::geometry::{DomainKind, Point};
use crate::heatkernel::{
    fit_trace_residual, heat_kernel_images, heat_kernel_with, trace_deficit_closed_form,
    trace_integral, Backend, FrequencyLattice,
};
use crate::transport::QuadratureGrid;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "matchlab",
    version,
    about = "Random matching on flat domains: simulations, kernel self-tests and fits"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MATCHLAB_WORKERS")]
    pub workers: Option<usize>,

    /// Flat key=value file of default flag values; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo trials and write <out>.csv and <out>.json.
    Simulate(SimulateArgs),
    /// Check heat-kernel invariants; exit 3 if any fails.
    KernelSelftest(SelftestArgs),
    /// Fit a·log(n)/n + b/n to a record CSV.
    Fit(FitArgs),
    /// Print a summary of a previous run.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Torus,
    Square,
    Interval,
}

impl From<DomainArg> for DomainKind {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Torus => DomainKind::Torus2,
            DomainArg::Square => DomainKind::Square2,
            DomainArg::Interval => DomainKind::Interval1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Bipartite,
    Semidiscrete,
    Oned,
    Event,
    Contractivity,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Bipartite => Mode::Bipartite,
            ModeArg::Semidiscrete => Mode::Semidiscrete,
            ModeArg::Oned => Mode::Oned,
            ModeArg::Event => Mode::Event,
            ModeArg::Contractivity => Mode::Contractivity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "torus")]
    pub domain: DomainArg,
    /// Comma-separated sample sizes.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Explicit heat time; overrides the γ rule.
    #[arg(long)]
    pub t: Option<f64>,
    /// γ in t = γ·(log n)³/n.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Replication ratio of the semi-discrete surrogate.
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    /// Event threshold (default 1/log n).
    #[arg(long)]
    pub xi: Option<f64>,
    /// Spectral cutoff: "auto" or a fixed integer.
    #[arg(long, default_value = "auto")]
    pub cutoff: String,
    /// Grid points per sample point for the exponential coupling (default q).
    #[arg(long)]
    pub grid_ratio: Option<usize>,
    /// Comma-separated α values for the contractivity profile
    /// (default 8,16,32,64 times log n).
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Evolved copies per point in the contractivity proxy.
    #[arg(long, default_value_t = 4)]
    pub replication: usize,
    /// Largest assignment size allowed.
    #[arg(long, default_value_t = 16_000)]
    pub max_assignment: usize,
    /// Skip the certified Hessian check.
    #[arg(long)]
    pub no_event: bool,
    /// Output prefix; writes <out>.csv and <out>.json.
    #[arg(long, required = true)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Auto,
    Spectral,
    Images,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Auto => Backend::Auto,
            BackendArg::Spectral => Backend::Spectral,
            BackendArg::Images => Backend::Images,
        }
    }
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, value_enum, default_value = "torus")]
    pub domain: DomainArg,
    #[arg(long, default_value_t = 1e-4)]
    pub tmin: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub tmax: f64,
    /// Backend checked against the spectral sum.
    #[arg(long, value_enum, default_value = "auto")]
    pub backend: BackendArg,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Record CSV produced by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    /// Replication ratio used for the semi-discrete target constant.
    #[arg(long)]
    pub q: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Bipartite,
    Semidiscrete,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON summary produced by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config_file(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, cli.workers),
        Command::KernelSelftest(a) => cmd_kernel_selftest(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Splices `--key value` pairs from the `--config` file into `argv` for
/// every key not already given on the command line.
fn apply_config_file(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let path = strs.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            strs.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    });
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| invalid(format!("cannot read config {path}: {e}")))?;
    let given: HashSet<String> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut extra: Vec<OsString> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("{path}:{}: expected key=value", lineno + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if given.contains(&key) || key == "config" {
            continue;
        }
        if key == "no-event" {
            match value {
                "true" => extra.push("--no-event".into()),
                "false" => {}
                _ => {
                    return Err(invalid(format!(
                        "{path}:{}: no-event must be true or false",
                        lineno + 1
                    )))
                }
            }
            continue;
        }
        extra.push(format!("--{key}").into());
        extra.push(value.into());
    }
    // Insert after the subcommand so subcommand flags resolve.
    let subcommands = ["simulate", "kernel-selftest", "fit", "report"];
    let pos = strs
        .iter()
        .position(|a| subcommands.contains(&a.as_str()))
        .map_or(argv.len(), |p| p + 1);
    let mut out = argv;
    out.splice(pos..pos, extra);
    Ok(out)
}

fn parse_cutoff(s: &str) -> Result<CutoffPolicy> {
    if s == "auto" {
        return Ok(CutoffPolicy::Auto);
    }
    s.parse::<usize>()
        .map(CutoffPolicy::Fixed)
        .map_err(|_| invalid(format!("cutoff must be \"auto\" or an integer, got {s:?}")))
}

pub fn config_from_args(a: &SimulateArgs, workers: Option<usize>) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig {
        domain: a.domain.into(),
        ns: a.ns.clone(),
        trials: a.trials,
        seed: a.seed,
        t_rule: match a.t {
            Some(t) => TimeRule::Explicit(t),
            None => TimeRule::Gamma(a.gamma),
        },
        q: a.q,
        xi: a.xi,
        cutoff: parse_cutoff(&a.cutoff)?,
        grid_ratio: a.grid_ratio,
        alphas: a.alphas.clone(),
        replication: a.replication,
        max_assignment: a.max_assignment,
        check_event: !a.no_event,
        workers,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(a: &SimulateArgs, workers: Option<usize>) -> Result<i32> {
    let cfg = config_from_args(a, workers)?;
    let mode: Mode = a.mode.into();
    let out = simulate(mode, &cfg)?;
    let (csv, json) = write_outputs(&a.out, &out)?;
    print_summary(&out.summary);
    println!("wrote {} and {}", csv.display(), json.display());
    if out.summary.failed_trials > 0 {
        for r in out.records.iter().filter(|r| r.failed()) {
            if let Some(e) = &r.error {
                eprintln!("trial {} (n={}) failed: {e}", r.trial, r.n);
            }
        }
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn print_summary(s: &Summary) {
    println!(
        "mode={:?} domain={} trials={} failed={}",
        s.mode, s.domain, s.trials, s.failed_trials
    );
    for c in &s.cells {
        let mut line = format!("n={} t={:.6e}", c.n, c.t);
        for (name, stat) in [
            ("cost_bip", c.cost_bip),
            ("cost_semi", c.cost_semi),
            ("cost_exp", c.cost_exp),
            ("energy", c.energy),
        ] {
            if let Some(st) = stat {
                line += &format!(" {name}={:.6e}±{:.2e}", st.mean, st.se);
            }
        }
        if let Some(e) = c.expected_energy {
            line += &format!(" expected_energy={e:.6e}");
        }
        if let Some(r) = c.event_rate {
            line += &format!(" event_rate={r:.4}");
        }
        println!("{line}");
    }
    if let (Some(f), Some(target)) = (&s.fit, s.fit_target_constant) {
        print_fit(f, target);
    }
    if let Some(rows) = &s.event {
        for r in rows {
            println!(
                "event n={} xi={:.4} failures={}/{} freq={:.4} ci=[{:.4}, {:.4}]",
                r.n, r.xi, r.failures, r.trials, r.frequency, r.ci_low, r.ci_high
            );
        }
    }
    if let Some(rows) = &s.contractivity {
        for r in rows {
            println!(
                "contractivity alpha={:.3} t={:.4e} mean={:.6e}±{:.2e}",
                r.alpha, r.t, r.mean, r.se
            );
        }
    }
    for n in &s.notes {
        println!("note: {n}");
    }
}

fn print_fit(f: &FitResult, target: f64) {
    println!(
        "fit a={:.6}±{:.6} b={:.6}±{:.6} R2={:.4} target={:.6} rel_dev={:.4}",
        f.a,
        f.se_a,
        f.b,
        f.se_b,
        f.r_squared,
        target,
        (f.a - target).abs() / target
    );
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    fit: &'a FitResult,
    target: f64,
    relative_deviation: f64,
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let records = read_records(&a.input)?;
    let target = match a.target {
        TargetArg::Bipartite => FitTarget::Bipartite,
        TargetArg::Semidiscrete => FitTarget::Semidiscrete,
    };
    let fit = fit_records(&records, target)?;
    let constant = target.constant(a.q);
    let report = FitReport {
        fit: &fit,
        target: constant,
        relative_deviation: (fit.a - constant).abs() / constant,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Io(e.to_string()))?
    );
    Ok(EXIT_OK)
}

fn cmd_report(a: &ReportArgs) -> Result<i32> {
    let text = fs::read_to_string(&a.input)?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| invalid(format!("not a summary file: {e}")))?;
    print_summary(&summary);
    Ok(EXIT_OK)
}

/// One self-test check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

fn log_times(tmin: f64, tmax: f64, count: usize) -> Vec<f64> {
    if count < 2 || tmin == tmax {
        return vec![tmin];
    }
    let (a, b) = (tmin.ln(), tmax.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Runs the heat-kernel invariant suite over `[tmin, tmax]`.
pub fn kernel_selftest(
    domain: DomainKind,
    tmin: f64,
    tmax: f64,
    backend: Backend,
) -> Result<Vec<Check>> {
    if !(tmin > 0.0 && tmax >= tmin && tmax.is_finite()) {
        return Err(invalid(format!(
            "need 0 < tmin <= tmax, got [{tmin}, {tmax}]"
        )));
    }
    if backend == Backend::Images && tmax > 1.0 {
        return Err(Error::Unsupported(format!(
            "images backend requires t <= 1, got tmax = {tmax}"
        )));
    }
    let mut checks = Vec::new();
    let mut push = |name: String, err: f64, tol: f64| {
        checks.push(Check {
            name,
            passed: err <= tol,
            value: err,
            tolerance: tol,
        });
    };
    let lattice = FrequencyLattice::for_time(domain, tmin)?;
    let probes: Vec<(Point, Point)> = match domain {
        DomainKind::Interval1 => vec![
            (Point::new(0.1, 0.0), Point::new(0.15, 0.0)),
            (Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
            (Point::new(0.3, 0.0), Point::new(0.9, 0.0)),
        ],
        _ => vec![
            (Point::new(0.1, 0.2), Point::new(0.15, 0.22)),
            (Point::new(0.0, 0.0), Point::new(0.0, 0.0)),
            (Point::new(0.3, 0.7), Point::new(0.9, 0.05)),
            (Point::new(0.5, 0.5), Point::new(0.5, 0.5)),
        ],
    };
    let times = log_times(tmin, tmax, 5);

    // Backend agreement on the common range t <= 1.
    let mut worst: f64 = 0.0;
    for &t in times.iter().filter(|&&t| t <= 1.0) {
        for &(x, y) in &probes {
            let spectral = lattice.heat_kernel(t, x, y)?;
            let other = match backend {
                Backend::Spectral => heat_kernel_images(domain, t, x, y)?,
                b => heat_kernel_with(&lattice, b, t, x, y)?,
            };
            worst = worst.max((spectral - other).abs() / spectral.abs().max(1.0));
        }
    }
    push("backend_agreement".into(), worst, 1e-10);

    // Symmetry and on-diagonal lower bound.
    let mut asym: f64 = 0.0;
    let mut below_one: f64 = 0.0;
    for &t in &times {
        for &(x, y) in &probes {
            asym = asym.max((lattice.heat_kernel(t, x, y)? - lattice.heat_kernel(t, y, x)?).abs());
            below_one = below_one.max(1.0 - lattice.heat_kernel(t, x, x)?);
        }
    }
    push("symmetry".into(), asym, 0.0);
    push("on_diagonal_at_least_one".into(), below_one.max(0.0), 1e-12);

    // Chapman–Kolmogorov on a midpoint grid (needs t large enough to resolve).
    let s = tmax.max(0.01);
    let lat_s = FrequencyLattice::for_time(domain, s)?;
    let grid = QuadratureGrid::midpoint(
        domain,
        if domain == DomainKind::Interval1 {
            512
        } else {
            96
        },
    )?;
    let mut semigroup: f64 = 0.0;
    for &(x, y) in &probes {
        let lhs = lat_s.heat_kernel(2.0 * s, x, y)?;
        let mut rhs = 0.0;
        for (&z, &w) in grid.points.iter().zip(&grid.weights) {
            rhs += w * lat_s.heat_kernel(s, x, z)? * lat_s.heat_kernel(s, z, y)?;
        }
        semigroup = semigroup.max((lhs - rhs).abs());
    }
    push(format!("semigroup_t{s:e}"), semigroup, 1e-8);

    // Trace: spectral sum against the closed-form theta product.
    let mut trace_err: f64 = 0.0;
    for &t in &times {
        let lat_t = FrequencyLattice::for_time(domain, t)?;
        let spectral = lat_t.trace_deficit(t)?;
        let closed = trace_deficit_closed_form(domain, t)?;
        trace_err = trace_err.max((spectral - closed).abs() / closed.max(1.0));
    }
    push("trace_closed_form".into(), trace_err, 1e-10);
    if domain == DomainKind::Torus2 && tmin <= 1e-3 {
        let lat_t = FrequencyLattice::for_time(domain, tmin)?;
        let dev =
            (4.0 * std::f64::consts::PI * tmin * (lat_t.trace_deficit(tmin)? + 1.0) - 1.0).abs();
        push(format!("trace_leading_term_t{tmin:e}"), dev, 1e-6);
    }
    if domain == DomainKind::Square2 {
        let fit = fit_trace_residual(domain, &[1e-2, 1e-3, 1e-4])?;
        println!(
            "square trace boundary coefficient c={:.6} R2={:.6}",
            fit.c, fit.r_squared
        );
        push("trace_sqrt_t_fit_r2".into(), 1.0 - fit.r_squared, 0.01);
    }

    // On-diagonal energy equals the time integral of the trace.
    let mut identity_err: f64 = 0.0;
    for &t in times.iter().filter(|&&t| t <= 1.0) {
        let lat_t = FrequencyLattice::for_time(domain, 2.0 * t)?;
        let sum = lat_t.on_diagonal_energy(t)?;
        identity_err = identity_err.max((sum - trace_integral(domain, 2.0 * t)?).abs());
    }
    push("energy_trace_integral".into(), identity_err, 1e-8);
    Ok(checks)
}

fn cmd_kernel_selftest(a: &SelftestArgs) -> Result<i32> {
    let checks = kernel_selftest(a.domain.into(), a.tmin, a.tmax, a.backend.into())?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "check {} {} value={:.3e} tol={:.1e}",
            c.name,
            if c.passed { "pass" } else { "fail" },
            c.value,
            c.tolerance
        );
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(EXIT_SELFTEST)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_on_each_domain() {
        for domain in [
            DomainKind::Torus2,
            DomainKind::Square2,
            DomainKind::Interval1,
        ] {
            let checks = kernel_selftest(domain, 1e-4, 1e-1, Backend::Auto).unwrap();
            for c in &checks {
                assert!(c.passed, "{domain:?} {c:?}");
            }
        }
    }

    #[test]
    fn images_backend_range_is_enforced() {
        assert!(matches!(
            kernel_selftest(DomainKind::Torus2, 1e-3, 5.0, Backend::Images),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn config_file_fills_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("defaults.cfg");
        fs::write(&cfg, "# defaults\ntrials = 7\nseed=3\nno_event=true\n").unwrap();
        let argv: Vec<OsString> = [
            "matchlab",
            "--config",
            cfg.to_str().unwrap(),
            "simulate",
            "--seed",
            "9",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let out: Vec<String> = apply_config_file(argv)
            .unwrap()
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        assert!(out.windows(2).any(|w| w[0] == "--trials" && w[1] == "7"));
        assert!(out.contains(&"--no-event".to_string()));
        assert_eq!(out.iter().filter(|a| *a == "--seed").count(), 1);
    }

    #[test]
    fn parse_errors_exit_with_config_code() {
        assert_eq!(
            run(["matchlab", "simulate", "--mode", "oned", "--n", "5"]),
            EXIT_CONFIG
        );
        assert_eq!(run(["matchlab", "simulate", "--bogus"]), EXIT_CONFIG);
        assert_eq!(run(["matchlab", "--help"]), EXIT_OK);
    }
}
