use matchlab::experiments::{
    fit_records, read_records, run_bipartite, run_semidiscrete, simulate, summarize, write_outputs,
    ExperimentConfig, FitTarget, Mode, TimeRule,
};
use matchlab::geometry::{sample_uniform_with, sq_distance};
use matchlab::rng::trial_rng;
use matchlab::DomainKind;

fn scaled_mean(values: &[f64], n: usize) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64 * n as f64 / (n as f64).ln()
}

#[test]
fn single_point_bipartite_cost_is_squared_distance() {
    let cfg = ExperimentConfig {
        ns: vec![1],
        trials: 5,
        seed: 11,
        t_rule: TimeRule::Explicit(0.05),
        ..Default::default()
    };
    let records = run_bipartite(&cfg).unwrap();
    for r in &records {
        let mut rng = trial_rng(11, "bipartite/torus/1", r.trial as u64);
        let x = sample_uniform_with(DomainKind::Torus2, &mut rng, 1).unwrap();
        let y = sample_uniform_with(DomainKind::Torus2, &mut rng, 1).unwrap();
        assert_eq!(
            r.cost_bip,
            Some(sq_distance(DomainKind::Torus2, x[0], y[0]))
        );
        assert!(r.energy.unwrap() > 0.0);
    }
}

#[test]
fn bipartite_pilot_range_at_n_500() {
    let cfg = ExperimentConfig {
        ns: vec![500],
        trials: 50,
        seed: 1,
        check_event: false,
        ..Default::default()
    };
    let costs: Vec<f64> = run_bipartite(&cfg)
        .unwrap()
        .iter()
        .map(|r| r.cost_bip.unwrap())
        .collect();
    let s = scaled_mean(&costs, 500);
    assert!((0.10..=0.22).contains(&s), "{s}");
}

#[test]
fn unit_replication_follows_bipartite_law() {
    let cfg = ExperimentConfig {
        ns: vec![500],
        trials: 50,
        seed: 1,
        q: 1,
        check_event: false,
        ..Default::default()
    };
    let costs: Vec<f64> = run_semidiscrete(&cfg)
        .unwrap()
        .iter()
        .map(|r| r.cost_semi.unwrap())
        .collect();
    let s = scaled_mean(&costs, 500);
    assert!((0.10..=0.22).contains(&s), "{s}");
}

#[test]
fn simulate_output_round_trips_into_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        ns: vec![40, 80, 160],
        trials: 6,
        seed: 5,
        ..Default::default()
    };
    let out = simulate(Mode::Bipartite, &cfg).unwrap();
    let (csv, json) = write_outputs(&dir.path().join("bip"), &out).unwrap();
    assert!(json.exists());
    let back = read_records(&csv).unwrap();
    assert_eq!(back.len(), 18);
    for (a, b) in back.iter().zip(&out.records) {
        assert_eq!(a.cost_bip, b.cost_bip);
        assert_eq!(a.energy, b.energy);
        assert_eq!(a.event_ok, b.event_ok);
    }
    let direct = fit_records(&out.records, FitTarget::Bipartite).unwrap();
    let reread = fit_records(&back, FitTarget::Bipartite).unwrap();
    assert_eq!(direct.a, reread.a);
    assert_eq!(out.summary.fit.as_ref().unwrap().a, direct.a);
    assert_eq!(summarize(&back, Some(DomainKind::Torus2)).len(), 3);
}

#[test]
fn records_are_reproducible() {
    let cfg = ExperimentConfig {
        ns: vec![64],
        trials: 4,
        seed: 9,
        workers: Some(1),
        ..Default::default()
    };
    let a = run_semidiscrete(&cfg).unwrap();
    let b = run_semidiscrete(&ExperimentConfig {
        workers: Some(2),
        ..cfg
    })
    .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            (x.cost_semi, x.cost_exp, x.energy, x.sup_hess),
            (y.cost_semi, y.cost_exp, y.energy, y.sup_hess)
        );
    }
}
