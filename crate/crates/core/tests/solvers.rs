mod common;

use common::*;
use homrf_core::model::DEFAULT_ENUMERATION_CAP;
use homrf_core::{
    baseline, brute_force_map, build_chain_decomposition, build_clique_decomposition, qn, trn, ExitReason, SolveResult,
    TraceEvent, TrnConfig,
};

fn quiet() -> TrnConfig {
    TrnConfig { timing: false, ..TrnConfig::default() }
}

fn check_trace(r: &SolveResult) {
    let rows = &r.trace.rows;
    assert!(!rows.is_empty());
    for w in rows.windows(2) {
        assert!(w[1].oracle_calls > w[0].oracle_calls, "{:?} then {:?}", w[0], w[1]);
    }
    assert_eq!(rows.last().unwrap().oracle_calls, r.report.oracle_calls);
    assert!(rows.iter().all(|row| row.wall_ms == 0.0));
}

#[test]
fn traces_increase_in_oracle_calls() {
    for seed in 0..5 {
        let (m, chain) = path_model(50 + seed);
        let cliques = build_clique_decomposition(&m);
        let chains = build_chain_decomposition(&m, &[chain]).unwrap();
        check_trace(&trn::solve(&m, &cliques, &quiet()).unwrap());
        check_trace(&qn::qn_solve(&m, &chains, &quiet()).unwrap());
        check_trace(&baseline::fista_solve(&m, &cliques, &quiet()).unwrap());
    }
}

#[test]
fn fista_agrees_with_trn_on_trees() {
    for seed in 0..10 {
        let m = tree_model(300 + seed);
        let d = build_clique_decomposition(&m);
        let a = trn::solve(&m, &d, &quiet()).unwrap().report.nonsmooth_dual;
        let b = baseline::fista_solve(&m, &d, &quiet()).unwrap().report.nonsmooth_dual;
        assert!((a - b).abs() <= 1e-3, "seed {seed}: trn {a} fista {b}");
    }
}

#[test]
fn chain_quasi_newton_reaches_map_on_paths() {
    for seed in 0..8 {
        let (m, chain) = path_model(90 + seed);
        let d = build_chain_decomposition(&m, &[chain]).unwrap();
        let r = qn::qn_solve(&m, &d, &quiet()).unwrap();
        let (_, map) = brute_force_map(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        assert!((r.report.nonsmooth_dual - map).abs() <= 1e-2, "seed {seed}");
    }
}

#[test]
fn report_is_consistent_with_labeling_and_trace() {
    for seed in 0..5 {
        let m = tree_model(500 + seed);
        let d = build_clique_decomposition(&m);
        let r = trn::solve(&m, &d, &quiet()).unwrap();
        assert_eq!(m.energy(&r.labeling).unwrap(), r.report.integer_primal);
        assert!(r.report.nonsmooth_dual <= r.report.integer_primal + 1e-9);
        assert_eq!(r.report.tau, quiet().tau_max);
        let last = r.trace.rows.last().unwrap();
        match r.report.exit {
            ExitReason::Gradient => assert_eq!(last.event, TraceEvent::ExitGrad),
            ExitReason::PdGap => assert_eq!(last.event, TraceEvent::ExitPdgap),
            ExitReason::MaxIterations => {}
        }
    }
}

#[test]
fn repeated_solves_give_identical_traces() {
    let m = tree_model(7);
    let d = build_clique_decomposition(&m);
    let a = trn::solve(&m, &d, &quiet()).unwrap();
    let b = trn::solve(&m, &d, &quiet()).unwrap();
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    assert_eq!(a.delta, b.delta);
}

#[test]
fn iteration_cap_is_reported() {
    let m = tree_model(11);
    let d = build_clique_decomposition(&m);
    let r = trn::solve(&m, &d, &TrnConfig { max_iterations: 2, ..quiet() }).unwrap();
    assert_eq!(r.report.exit, ExitReason::MaxIterations);
    assert!(r.report.outer_iterations <= 2);
}

#[test]
fn invalid_configs_are_rejected() {
    let m = tree_model(1);
    let d = build_clique_decomposition(&m);
    for cfg in [
        TrnConfig { alpha: 1.0, ..quiet() },
        TrnConfig { tau0: 0.0, ..quiet() },
        TrnConfig { tau0: 10.0, tau_max: 5.0, ..quiet() },
        TrnConfig { cg_max: 0, ..quiet() },
    ] {
        assert!(trn::solve(&m, &d, &cfg).is_err(), "{cfg:?}");
    }
}
