//! The theoretical per-stage contraction next to the one actually observed.

use std::sync::Arc;

use dvrsgd::{
    compute_rate_gamma, make_synthetic, partition, run_simulated, Algorithm, ClusterSpec,
    HyperParams, LossKind, PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let p = Arc::new(make_synthetic(
        &SyntheticSpec::new(LossKind::Quadratic, 2000, 50).seed(11),
    )?);
    let c = p.curvature();
    println!("mu = {:.4}, L = {:.4}", c.mu, c.l);
    let best = p.objective(&p.solve_optimum(1e-12, 10)?)?;
    let (eta, theta, tau, m) = (0.0005, 0.5, 8, 2000);
    let bound = compute_rate_gamma(c.mu, c.l, eta, theta, m, tau)?;
    println!(
        "gamma = {:.4} (contracts: {})",
        bound.gamma, bound.contracts
    );
    let part = partition(&p, 8, PartitionStrategy::Contiguous)?;
    let hyper = HyperParams {
        eta,
        theta,
        tau,
        batch_size: 20,
        tasks_per_stage: m,
        stages: 10,
        workers: 8,
    };
    let out = run_simulated(
        &ClusterSpec::new(Arc::clone(&p), part, Algorithm::DistrVrSgd, hyper, 1),
        &SimOptions::default(),
    )?;
    let gaps: Vec<f64> = out.records.iter().map(|r| r.objective - best).collect();
    for (s, pair) in gaps.windows(2).enumerate() {
        println!(
            "stage {:>2}  observed ratio {:.4}",
            s + 1,
            pair[1] / pair[0]
        );
    }
    Ok(())
}
