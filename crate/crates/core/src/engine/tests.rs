use std::sync::Arc;

use super::*;
use crate::compression::CompressorKind;
use crate::problems::{partition, synthesize, ProblemKind};
use crate::rng::data_stream;
use crate::topology::{build_graph, build_mixing, GraphKind};
use rand::Rng;

fn quadratic_config(kind: GraphKind, n: usize, d: usize, j: usize) -> EngineConfig {
    let mixing = build_mixing(&build_graph(&kind, n).unwrap()).unwrap();
    let data = synthesize(ProblemKind::Quadratic, d, 0, n * j, 0, 17);
    let problem = Problem {
        objective: Objective::quadratic(d),
        partition: partition(&data.train, n, 3).unwrap(),
        test: data.test,
    };
    EngineConfig {
        eta: 0.1,
        t: 20,
        algorithm: Algorithm::DpCsgp,
        seed: 42,
        overflow_guard: DEFAULT_OVERFLOW_GUARD,
        mixing: Arc::new(mixing),
        compressor: CompressorSpec::identity(d),
        sigma_sq: 0.0,
        clip: None,
        problem: Arc::new(problem),
        init: None,
    }
}

#[test]
fn single_node_is_plain_sgd() {
    let mut cfg = quadratic_config(GraphKind::Complete, 1, 3, 25);
    cfg.t = 40;
    let mut sim = Simulator::new(cfg.clone()).unwrap();
    let local = &cfg.problem.partition.locals[0].samples;
    let mut sampler = crate::rng::NodeStreams::new(cfg.seed, 0).sampling;
    let mut x = vec![0.0; 3];
    for _ in 0..cfg.t {
        sim.step().unwrap();
        let k = sample_index(local.len(), &mut sampler);
        let g = cfg.problem.objective.grad(&x, &local[k]).unwrap();
        x = x.iter().zip(&g).map(|(xi, gi)| xi - cfg.eta * (gi + 0.0)).collect();
        assert_eq!(sim.states()[0].x, x);
    }
}

#[test]
fn weights_are_conserved() {
    let mut cfg = quadratic_config(GraphKind::Exponential, 6, 2, 10);
    cfg.t = 100;
    let out = run(cfg).unwrap();
    assert!(out.failure.is_none());
    for r in &out.records {
        assert!((r.weight_sum - 6.0).abs() <= 1e-12 * 6.0, "{}", r.weight_sum);
    }
}

#[test]
fn average_identity_without_noise() {
    let mut cfg = quadratic_config(GraphKind::Exponential, 5, 4, 10);
    cfg.compressor = CompressorSpec::new(CompressorKind::Rand { a: 0.5 }, 4).unwrap();
    cfg.t = 60;
    let out = run(cfg).unwrap();
    assert!(out.records.iter().all(|r| r.average_identity_residual <= 1e-10));
}

#[test]
fn identity_compression_has_no_residual_error() {
    let mut cfg = quadratic_config(GraphKind::Ring, 4, 3, 10);
    cfg.sigma_sq = 0.3;
    cfg.clip = Some(1.0);
    let out = run(cfg).unwrap();
    // xhat + (x - xhat) recovers x up to one rounding per coordinate
    assert_eq!(out.records[0].u_t, 0.0);
    assert!(out.records.iter().all(|r| r.u_t <= 1e-28), "{:?}", out.records.iter().map(|r| r.u_t).collect::<Vec<_>>());
}

#[test]
fn zero_gradients_leave_everything_at_zero() {
    let mut cfg = quadratic_config(GraphKind::Ring, 4, 3, 10);
    let problem = Problem { objective: Objective::zero(3), ..(*cfg.problem).clone() };
    cfg.problem = Arc::new(problem);
    cfg.compressor = CompressorSpec::new(CompressorKind::Gsgd { b: 4 }, 3).unwrap();
    let out = run(cfg).unwrap();
    assert!(out.records.iter().all(|r| r.u_t == 0.0 && r.loss_avg == 0.0));
    assert_eq!(out.final_average, vec![0.0; 3]);
}

#[test]
fn bits_per_round_on_exponential_graph() {
    let mut cfg = quadratic_config(GraphKind::Exponential, 10, 100, 5);
    cfg.t = 3;
    let out = baseline_exact_sgp(cfg).unwrap();
    // 10 nodes, 4 true out-edges each (offsets 1, 2, 4, 8)
    let per_round = 10 * 4 * (3200 + 32);
    for (k, r) in out.records.iter().enumerate() {
        assert_eq!(r.bits_cum, per_round * (k as u64 + 1));
    }
}

#[test]
fn baseline_matches_identity_run() {
    let mut cfg = quadratic_config(GraphKind::Exponential, 5, 3, 10);
    cfg.sigma_sq = 0.1;
    cfg.clip = Some(2.0);
    let a = run(cfg.clone()).unwrap();
    cfg.compressor = CompressorSpec::new(CompressorKind::Rand { a: 0.4 }, 3).unwrap();
    let b = baseline_exact_sgp(cfg).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn complete_graph_reaches_consensus_quickly() {
    let mut cfg = quadratic_config(GraphKind::Complete, 6, 3, 10);
    let init: Vec<Vec<f64>> = {
        let mut r = data_stream(1);
        (0..6).map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
    };
    cfg.init = Some(init);
    cfg.problem = Arc::new(Problem { objective: Objective::zero(3), ..(*cfg.problem).clone() });
    cfg.t = 5;
    let out = run(cfg).unwrap();
    assert!(out.records.last().unwrap().consensus_err < 1e-8);
}

#[test]
fn validation_errors() {
    let mut cfg = quadratic_config(GraphKind::Ring, 3, 2, 5);
    cfg.t = 0;
    assert!(run(cfg.clone()).is_err());
    cfg.t = 1;
    cfg.eta = 0.0;
    assert!(run(cfg.clone()).is_err());
    cfg.eta = 0.1;
    cfg.compressor = CompressorSpec::identity(5);
    assert!(matches!(run(cfg).unwrap_err(), Error::Dimension { .. }));
}

#[test]
fn divergence_is_reported_with_partial_records() {
    let mut cfg = quadratic_config(GraphKind::Ring, 3, 2, 5);
    cfg.eta = 3.0;
    cfg.t = 200;
    cfg.overflow_guard = 1e3;
    let out = run(cfg).unwrap();
    assert!(matches!(out.failure, Some(Error::Divergence { .. })));
    assert!(!out.records.is_empty() && out.records.len() < 200);
}

#[test]
fn oracle_single_round() {
    let mut cfg = quadratic_config(GraphKind::Ring, 3, 2, 5);
    cfg.t = 1;
    cfg.sigma_sq = 0.5;
    let oracle = matrix_oracle(&cfg).unwrap();
    let mut sim = Simulator::new(cfg).unwrap();
    sim.step().unwrap();
    for (i, s) in sim.states().iter().enumerate() {
        assert_eq!(s.x.as_slice(), oracle.x[0].row(i));
        assert_eq!(s.y, oracle.y[0][i]);
    }
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = quadratic_config(GraphKind::Exponential, 4, 6, 10);
    cfg.compressor = CompressorSpec::new(CompressorKind::Gsgd { b: 6 }, 6).unwrap();
    cfg.sigma_sq = 0.2;
    cfg.clip = Some(1.0);
    let a = run(cfg.clone()).unwrap();
    let b = run(cfg.clone()).unwrap();
    assert_eq!(a.records, b.records);
    cfg.seed += 1;
    let c = run(cfg).unwrap();
    assert_ne!(a.records, c.records);
}
