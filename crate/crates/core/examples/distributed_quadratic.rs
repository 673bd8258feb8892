//! One asynchronous run with eight workers in the simulator.

use std::sync::Arc;

use dvrsgd::transport::LatencyModel;
use dvrsgd::{
    make_synthetic, partition, run_simulated, Algorithm, ClusterSpec, HyperParams, LossKind,
    PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let p = Arc::new(make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 2000, 50)
            .spectrum(1.0, 10.0)
            .seed(11),
    )?);
    let best = p.objective(&p.solve_optimum(1e-12, 10)?)?;
    let part = partition(&p, 8, PartitionStrategy::Contiguous)?;
    let hyper = HyperParams {
        eta: 0.02,
        theta: 0.5,
        tau: 8,
        batch_size: 20,
        tasks_per_stage: 100,
        stages: 20,
        workers: 8,
    };
    let spec = ClusterSpec::new(Arc::clone(&p), part, Algorithm::DistrVrSgd, hyper, 5);
    let opts = SimOptions {
        latency: LatencyModel::Uniform { lo: 0.0, hi: 1e-4 },
        latency_seed: 1,
        ..SimOptions::default()
    };
    let out = run_simulated(&spec, &opts)?;
    for r in &out.records {
        println!(
            "stage {:>2}  t = {:.4}  F - F* = {:.3e}  comp {:.4}  wait {:.4}",
            r.stage,
            r.wall_time,
            r.objective - best,
            r.mean_comp(),
            r.mean_comm()
        );
    }
    Ok(())
}
