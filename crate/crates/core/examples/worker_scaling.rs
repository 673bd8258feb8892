//! Simulated time to a fixed accuracy as workers are added.

use std::sync::Arc;

use dvrsgd::transport::LatencyModel;
use dvrsgd::worker::CostModel;
use dvrsgd::{
    make_synthetic, partition, run_simulated, Algorithm, ClusterSpec, HyperParams, LossKind,
    PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let p = Arc::new(make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 4000, 40).seed(4),
    )?);
    let best = p.objective(&p.solve_optimum(1e-12, 10)?)?;
    let opts = SimOptions {
        latency: LatencyModel::Uniform {
            lo: 0.001,
            hi: 0.01,
        },
        latency_seed: 2,
        ..SimOptions::default()
    };
    println!("{:>7} {:>12} {:>12}", "workers", "time", "speedup");
    let mut base = None;
    for workers in [1, 2, 4, 8, 16] {
        let part = partition(&p, workers, PartitionStrategy::Shuffled(1))?;
        let hyper = HyperParams {
            eta: 0.02,
            theta: 0.5,
            tau: 2 * workers as u64,
            batch_size: 20,
            tasks_per_stage: 200,
            stages: 30,
            workers,
        };
        let spec = ClusterSpec::new(Arc::clone(&p), part, Algorithm::DistrVrSgd, hyper, 3)
            .cost(CostModel::Modeled { per_gradient: 1e-4 });
        let out = run_simulated(&spec, &opts)?;
        let Some(hit) = out.records.iter().find(|r| r.objective - best <= 1e-8) else {
            println!("{workers:>7} {:>12}", "not reached");
            continue;
        };
        let t0 = *base.get_or_insert(hit.wall_time);
        println!(
            "{workers:>7} {:>12.3} {:>12.2}",
            hit.wall_time,
            t0 / hit.wall_time
        );
    }
    Ok(())
}
