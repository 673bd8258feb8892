//! The same cluster over loopback TCP, one thread per role, checked against
//! the simulator. With a zero delay bound the result does not depend on timing.

use std::sync::Arc;

use dvrsgd::transport::SocketOptions;
use dvrsgd::worker::CostModel;
use dvrsgd::{
    make_synthetic, partition, run_simulated, run_sockets, Algorithm, ClusterSpec, HyperParams,
    LossKind, PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let p = Arc::new(make_synthetic(
        &SyntheticSpec::new(LossKind::L2Logistic, 1000, 20)
            .lambda(0.01)
            .seed(3),
    )?);
    let part = partition(&p, 4, PartitionStrategy::Contiguous)?;
    let hyper = HyperParams {
        eta: 0.1,
        theta: 0.5,
        tau: 0,
        batch_size: 10,
        tasks_per_stage: 100,
        stages: 5,
        workers: 4,
    };
    let spec = ClusterSpec::new(Arc::clone(&p), part, Algorithm::DistrVrSgd, hyper, 9);
    let tcp = run_sockets(
        &spec.clone().cost(CostModel::Measured),
        &SocketOptions::default(),
    )?;
    let sim = run_simulated(&spec, &SimOptions::default())?;
    for r in &tcp.records {
        println!(
            "stage {}  objective {:.8}  wall {:.3}s  wait {:.4}s",
            r.stage,
            r.objective,
            r.wall_time,
            r.mean_comm()
        );
    }
    println!("matches simulation: {}", tcp.anchors == sim.anchors);
    Ok(())
}
