//! How the delay bound trades waiting for staleness, through the sweep API.

use dvrsgd::harness::SweepAxis;
use dvrsgd::{sweep, ExperimentConfig};

const CONFIG: &str = r#"
[experiment]
algo = "distr-vr-sgd"
seed = 7

[problem]
source = "synthetic"
loss = "quadratic"
n = 2000
d = 50
data_seed = 1

[hyper]
eta = 0.02
theta = 0.5
tau = 1
batch_size = 20
tasks_per_stage = 100
stages = 20
workers = 8

[transport]
latency = "uniform"
latency_lo = 1.0
latency_hi = 5.0
latency_seed = 3
grad_cost = 0.01
"#;

fn main() -> dvrsgd::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    let values: Vec<String> = ["1", "4", "16", "64"].map(String::from).to_vec();
    let out = std::env::temp_dir().join("dvrsgd_tau_sweep");
    let rows = sweep(&cfg, SweepAxis::Tau, &values, 1e-8, Some(&out))?;
    println!(
        "{:>4} {:>8} {:>12} {:>12} {:>12}",
        "tau", "stages", "time", "compute", "wait"
    );
    for r in rows {
        let stages = r.stages_to_target.map_or("-".into(), |s| s.to_string());
        println!(
            "{:>4} {stages:>8} {:>12.1} {:>12.1} {:>12.1}",
            r.value, r.total_time, r.comp_time, r.comm_time
        );
    }
    println!(
        "per-value CSVs, summary.csv and plot.gp in {}",
        out.display()
    );
    Ok(())
}
