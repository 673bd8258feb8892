//! Multiclass logistic regression from a LibSVM file. Pass a path to use your
//! own data; otherwise a synthetic file is written and read back.

use std::sync::Arc;

use dvrsgd::data::save_libsvm;
use dvrsgd::{
    load_libsvm, make_synthetic, partition, run_simulated, Algorithm, ClusterSpec, HyperParams,
    LossKind, PartitionStrategy, SimOptions, SyntheticSpec,
};

fn main() -> dvrsgd::Result<()> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = std::env::temp_dir().join("dvrsgd_example.svm");
            save_libsvm(
                &make_synthetic(
                    &SyntheticSpec::new(LossKind::MulticlassLogistic, 1500, 30)
                        .classes(4)
                        .seed(1),
                )?,
                &p,
            )?;
            p
        }
    };
    let raw = load_libsvm(&path)?;
    // the loader leaves λ at 0; add a little ridge so the problem is strongly convex
    let p = Arc::new(dvrsgd::Problem::new(
        raw.samples().to_vec(),
        raw.kind(),
        1e-3,
        raw.num_classes(),
        raw.dim(),
    )?);
    println!(
        "{}: {} samples, {} features, {} classes",
        path.display(),
        p.len(),
        p.dim(),
        p.num_classes()
    );
    let part = partition(&p, 4, PartitionStrategy::Shuffled(2))?;
    let eta = 0.5 / p.curvature().l_sample_max;
    let m = HyperParams::default_tasks_per_stage(p.len(), 10);
    let hyper = HyperParams {
        eta,
        theta: 0.5,
        tau: 4,
        batch_size: 10,
        tasks_per_stage: m,
        stages: 10,
        workers: 4,
    };
    let out = run_simulated(
        &ClusterSpec::new(Arc::clone(&p), part, Algorithm::DistrVrSgd, hyper, 1),
        &SimOptions::default(),
    )?;
    for r in &out.records {
        println!("stage {:>2}  objective {:.6}", r.stage, r.objective);
    }
    Ok(())
}
