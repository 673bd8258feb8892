use std::collections::BTreeSet;
use std::sync::Arc;

use dvrsgd::baselines::{serial_svrg_with, SerialSvrgConfig, SnapshotChoice};
use dvrsgd::cluster::{run_simulated, run_sockets, ClusterSpec, SimOptions};
use dvrsgd::protocol::TaskKind;
use dvrsgd::transport::{LatencyModel, SocketOptions};
use dvrsgd::worker::CostModel;
use dvrsgd::{
    make_synthetic, partition, Algorithm, HyperParams, LossKind, ParamVector, PartitionStrategy,
    Problem, StoppingRule, SyntheticSpec,
};

fn quadratic(n: usize, d: usize, seed: u64) -> Arc<Problem> {
    Arc::new(make_synthetic(&SyntheticSpec::new(LossKind::Quadratic, n, d).seed(seed)).unwrap())
}

fn spec(p: &Arc<Problem>, alg: Algorithm, hyper: HyperParams, seed: u64) -> ClusterSpec {
    let part = partition(p, hyper.workers, PartitionStrategy::Contiguous).unwrap();
    ClusterSpec::new(Arc::clone(p), part, alg, hyper, seed)
}

fn hyper(workers: usize, tau: u64, theta: f64, stages: u64) -> HyperParams {
    HyperParams {
        eta: 0.01,
        theta,
        tau,
        batch_size: 4,
        tasks_per_stage: 50,
        stages,
        workers,
    }
}

fn jitter() -> SimOptions {
    SimOptions {
        latency: LatencyModel::Uniform { lo: 0.0, hi: 1e-3 },
        latency_seed: 2,
        ..SimOptions::default()
    }
}

fn bits(v: &[ParamVector]) -> Vec<Vec<u64>> {
    v.iter()
        .map(|w| w.iter().map(|x| x.to_bits()).collect())
        .collect()
}

/// `F(w) − F(w*)` through the Hessian form, independent of the objective code.
fn suboptimality(p: &Problem, w: &[f64], w_star: &[f64]) -> f64 {
    let d: Vec<f64> = w.iter().zip(w_star).map(|(a, b)| a - b).collect();
    let data: f64 = p
        .samples()
        .iter()
        .map(|s| s.features.dot(&d).powi(2))
        .sum::<f64>()
        / p.len() as f64;
    0.5 * (data + p.lambda() * d.iter().map(|x| x * x).sum::<f64>())
}

#[test]
fn single_worker_without_delay_reproduces_serial_svrg() {
    let p = quadratic(120, 6, 1);
    for theta in [0.0, 0.5] {
        let h = HyperParams {
            eta: 0.02,
            theta,
            tau: 0,
            batch_size: 2,
            tasks_per_stage: 60,
            stages: 4,
            workers: 1,
        };
        let out = run_simulated(&spec(&p, Algorithm::DistrVrSgd, h, 31), &jitter()).unwrap();
        let cfg = SerialSvrgConfig {
            eta: 0.02,
            tasks_per_stage: 60,
            stages: 4,
            batch_size: 2,
            seed: 31,
            choice: SnapshotChoice::LastIterate,
        };
        let serial = serial_svrg_with(&p, ParamVector::zeros(6), &cfg).unwrap();
        assert_eq!(bits(&out.anchors), bits(&serial.anchors), "theta {theta}");
    }
}

#[test]
fn distr_svrg_is_the_zero_theta_hybrid() {
    let p = quadratic(200, 8, 2);
    let a = run_simulated(
        &spec(&p, Algorithm::DistrSvrg, hyper(4, 3, 0.7, 3), 9),
        &jitter(),
    )
    .unwrap();
    let b = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, hyper(4, 3, 0.0, 3), 9),
        &jitter(),
    )
    .unwrap();
    assert_eq!(bits(&a.anchors), bits(&b.anchors));
    assert_eq!(a.records, b.records);
}

#[test]
fn timestamps_are_issued_once_per_kind() {
    let p = quadratic(200, 8, 3);
    let (m, s) = (50u64, 3u64);
    let out = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, hyper(5, 4, 0.5, s), 1),
        &jitter(),
    )
    .unwrap();
    let updates: Vec<u64> = out
        .issued
        .iter()
        .filter(|(t, _)| t.kind == TaskKind::Update)
        .map(|(t, _)| t.timestamp)
        .collect();
    assert_eq!(updates, (1..=s * m).collect::<Vec<_>>());
    let evals: BTreeSet<(u64, u32)> = out
        .issued
        .iter()
        .filter(|(t, _)| t.kind == TaskKind::Evaluation)
        .map(|(t, w)| (t.timestamp, *w))
        .collect();
    let expected: BTreeSet<(u64, u32)> = (0..=s)
        .flat_map(|k| (0..5).map(move |w| (k * m + 1, w)))
        .collect();
    assert_eq!(evals, expected);
}

#[test]
fn recorded_objective_is_the_anchor_objective() {
    let p = quadratic(300, 10, 4);
    let out = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, hyper(6, 8, 0.5, 5), 2),
        &jitter(),
    )
    .unwrap();
    assert_eq!(out.records.len(), out.anchors.len());
    for (r, a) in out.records.iter().zip(&out.anchors) {
        let f = p.objective(a).unwrap();
        assert!(
            (r.objective - f).abs() <= 1e-12 * f.abs().max(1.0),
            "stage {}: {} vs {f}",
            r.stage,
            r.objective
        );
        assert_eq!(r.comp_time.len(), 6);
        assert!(r.wall_time >= 0.0);
    }
    let walls: Vec<f64> = out.records.iter().map(|r| r.wall_time).collect();
    assert!(walls.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn simulation_is_deterministic() {
    let p = quadratic(200, 8, 5);
    let opts = SimOptions {
        latency: LatencyModel::adversarial_trace(4, 64),
        record_trace: true,
        ..SimOptions::default()
    };
    let s = spec(&p, Algorithm::DistrVrSgd, hyper(4, 6, 0.5, 2), 3);
    let a = run_simulated(&s, &opts).unwrap();
    let b = run_simulated(&s, &opts).unwrap();
    assert!(!a.trace.is_empty());
    assert_eq!(a.trace, b.trace);
    assert_eq!(bits(&a.anchors), bits(&b.anchors));
    let other = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, hyper(4, 6, 0.5, 2), 4),
        &opts,
    )
    .unwrap();
    assert_ne!(bits(&a.anchors), bits(&other.anchors));
}

#[test]
fn zero_stages_produce_nothing() {
    let p = quadratic(50, 4, 6);
    let out = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, hyper(2, 1, 0.5, 0), 1),
        &jitter(),
    )
    .unwrap();
    assert!(out.records.is_empty());
    assert!(out.issued.is_empty());
    assert_eq!(out.final_params, ParamVector::zeros(4));
}

#[test]
fn objective_threshold_stops_early() {
    let p = quadratic(200, 8, 7);
    let w_star = p.solve_optimum(1e-12, 10).unwrap();
    let target = p.objective(&w_star).unwrap() + 1e-3;
    let h = HyperParams {
        eta: 0.02,
        ..hyper(4, 2, 0.5, 40)
    };
    let out = run_simulated(
        &spec(&p, Algorithm::DistrVrSgd, h, 1).stopping(StoppingRule::ObjectiveBelow(target)),
        &jitter(),
    )
    .unwrap();
    let last = out.records.last().unwrap();
    assert!(last.objective <= target);
    assert!((last.stage as usize) < 40);
    assert!(out.records[..out.records.len() - 1]
        .iter()
        .all(|r| r.objective > target));
}

#[test]
fn sockets_agree_with_simulation_without_delay() {
    let p = quadratic(160, 6, 8);
    for alg in [Algorithm::DistrVrSgd, Algorithm::Dpg] {
        let s = spec(&p, alg, hyper(4, 0, 0.5, 2), 12);
        let sim = run_simulated(&s, &jitter()).unwrap();
        let tcp = run_sockets(
            &s.clone().cost(CostModel::Measured),
            &SocketOptions::default(),
        )
        .unwrap();
        assert_eq!(bits(&sim.anchors), bits(&tcp.anchors), "{alg}");
        assert_eq!(tcp.records.len(), 3);
    }
}

#[test]
fn serial_svrg_gains_an_order_of_magnitude_per_stage() {
    let p = make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 500, 10)
            .lambda(1.0)
            .row_norm(3.0)
            .seed(5),
    )
    .unwrap();
    let w_star = p.solve_optimum(1e-12, 10).unwrap();
    let cfg = SerialSvrgConfig {
        eta: 0.025,
        tasks_per_stage: 1000,
        stages: 6,
        batch_size: 1,
        seed: 1,
        choice: SnapshotChoice::RandomIterate,
    };
    let run = serial_svrg_with(&p, ParamVector::zeros(10), &cfg).unwrap();
    let subs: Vec<f64> = run
        .anchors
        .iter()
        .map(|a| suboptimality(&p, a, &w_star))
        .collect();
    let mean_gain = (subs[0] / subs[6]).powf(1.0 / 6.0);
    assert!(mean_gain >= 10.0, "per-stage gain {mean_gain}: {subs:?}");
}

#[test]
fn baselines_behave_as_expected() {
    let p = quadratic(800, 20, 9);
    let w_star = p.solve_optimum(1e-12, 10).unwrap();
    let h = HyperParams {
        eta: 0.02,
        theta: 0.5,
        tau: 4,
        batch_size: 10,
        tasks_per_stage: 80,
        stages: 25,
        workers: 4,
    };
    let run_with = |alg, h: &HyperParams| {
        let out = run_simulated(&spec(&p, alg, h.clone(), 6), &jitter()).unwrap();
        out.anchors
            .iter()
            .map(|a| suboptimality(&p, a, &w_star))
            .collect::<Vec<f64>>()
    };
    let run = |alg| run_with(alg, &h);
    let vr = run(Algorithm::DistrVrSgd);
    let vr_dpg = run(Algorithm::VrDpg);
    let dpg = run(Algorithm::Dpg);
    let ssp = run(Algorithm::DecayingSsp);
    // adaptive steps shrink with accumulated squares, so start larger
    let adagrad = run_with(
        Algorithm::DownpourAdagrad,
        &HyperParams {
            eta: 0.5,
            ..h.clone()
        },
    );

    assert!(*vr.last().unwrap() <= 1e-8, "{vr:?}");
    assert!(*vr_dpg.last().unwrap() <= 1e-8, "{vr_dpg:?}");
    // constant-step plain gradients stall at a noise floor
    let floor = dpg[20..].iter().copied().fold(f64::INFINITY, f64::min);
    assert!(floor > 100.0 * vr.last().unwrap(), "{dpg:?}");
    let reach = |s: &[f64]| s.iter().position(|x| *x <= 1e-4);
    assert!(
        reach(&vr).unwrap() < reach(&ssp).unwrap_or(usize::MAX),
        "ssp {ssp:?}"
    );
    assert!(adagrad.last().unwrap() < &(0.1 * adagrad[0]), "{adagrad:?}");
}
