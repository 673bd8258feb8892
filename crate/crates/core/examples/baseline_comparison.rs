//! Every algorithm on the same problem, data split and latency stream.

use std::sync::Arc;

use dvrsgd::transport::LatencyModel;
use dvrsgd::{
    make_synthetic, partition, run_simulated, serial_svrg, Algorithm, ClusterSpec, HyperParams,
    LossKind, PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let p = Arc::new(make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 1000, 20).seed(2),
    )?);
    let best = p.objective(&p.solve_optimum(1e-12, 10)?)?;
    let part = partition(&p, 4, PartitionStrategy::Contiguous)?;
    let hyper = HyperParams {
        eta: 0.02,
        theta: 0.5,
        tau: 4,
        batch_size: 10,
        tasks_per_stage: 100,
        stages: 15,
        workers: 4,
    };
    let opts = SimOptions {
        latency: LatencyModel::Exponential { mean: 1e-4 },
        latency_seed: 3,
        ..SimOptions::default()
    };
    println!("{:<18} {:>12}", "algorithm", "F - F*");
    for alg in Algorithm::ALL {
        let last = if alg.is_distributed() {
            let mut h = hyper.clone();
            if alg == Algorithm::DownpourAdagrad {
                h.eta = 0.5;
            }
            let out = run_simulated(
                &ClusterSpec::new(Arc::clone(&p), part.clone(), alg, h, 7),
                &opts,
            )?;
            out.anchors.last().cloned().unwrap_or_default()
        } else {
            // unit batches need a step scaled to the worst single sample
            let eta = 0.1 / p.curvature().l_sample_max;
            serial_svrg(&p, eta, 2 * p.len() as u64, hyper.stages, 7)?
                .pop()
                .unwrap_or_default()
        };
        println!("{:<18} {:>12.3e}", alg.name(), p.objective(&last)? - best);
    }
    Ok(())
}
