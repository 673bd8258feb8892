//! Experiment configuration, end-to-end runs, parameter sweeps and their
//! CSV output.
//!
//! Progress CSV columns, in order: `stage, objective, wall_time, comp_time,
//! comm_time`. Times are logical in simulation and seconds over sockets;
//! `comp_time` and `comm_time` are cumulative per-worker means.
//!
//! Sweep summary columns: `value, stages_to_target, total_time, comp_time,
//! comm_time`; `stages_to_target` is empty when the target was not reached.

use std::fmt;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::baselines::{serial_svrg_with, Algorithm, SerialSvrgConfig, SnapshotChoice};
use crate::cluster::{run_simulated, run_sockets, ClusterSpec, SimOptions};
use crate::data::{load_libsvm_with, partition, LibsvmOptions, PartitionStrategy};
use crate::error::{Error, Result};
use crate::losses::{make_synthetic, LossKind, ParamVector, Problem, SyntheticSpec};
use crate::protocol::NodeId;
use crate::scheduler::{ProgressRecord, StoppingRule};
use crate::server::HyperParams;
use crate::transport::{LatencyModel, SocketOptions};
use crate::worker::CostModel;

/// Header of every progress CSV.
pub const PROGRESS_COLUMNS: [&str; 5] =
    ["stage", "objective", "wall_time", "comp_time", "comm_time"];
/// Header of the sweep summary CSV.
pub const SUMMARY_COLUMNS: [&str; 5] = [
    "value",
    "stages_to_target",
    "total_time",
    "comp_time",
    "comm_time",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub problem: ProblemSection,
    pub hyper: HyperSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default, skip_serializing_if = "EndpointsSection::is_empty")]
    pub endpoints: EndpointsSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Algorithm name, e.g. `distr-vr-sgd` or its short form `dvrsgd`.
    pub algo: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub stop: StopName,
    /// Threshold for the `objective-below` and `relative-decrease` rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopName {
    #[default]
    Fixed,
    ObjectiveBelow,
    RelativeDecrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceName {
    Synthetic,
    Libsvm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossName {
    Quadratic,
    Logistic,
    Multiclass,
}

impl From<LossName> for LossKind {
    fn from(l: LossName) -> Self {
        match l {
            LossName::Quadratic => LossKind::Quadratic,
            LossName::Logistic => LossKind::L2Logistic,
            LossName::Multiclass => LossKind::MulticlassLogistic,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionName {
    #[default]
    Contiguous,
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub source: SourceName,
    pub loss: LossName,
    #[serde(default)]
    pub lambda: f64,
    /// LibSVM file; required for the `libsvm` source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Feature dimension override for LibSVM files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_spectrum_lo")]
    pub spectrum_lo: f64,
    #[serde(default = "default_spectrum_hi")]
    pub spectrum_hi: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Seed of the synthetic generator; the experiment seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub partition: PartitionName,
}

fn default_classes() -> usize {
    2
}
fn default_spectrum_lo() -> f64 {
    1.0
}
fn default_spectrum_hi() -> f64 {
    10.0
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    pub eta: f64,
    pub theta: f64,
    pub tau: u64,
    pub batch_size: usize,
    /// `m`; `⌈N/B⌉` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks_per_stage: Option<u64>,
    pub stages: u64,
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Sim,
    Socket,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatencyName {
    #[default]
    Constant,
    Uniform,
    Exponential,
    Adversarial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSection {
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default)]
    pub latency: LatencyName,
    /// Constant delay, or the lower end of a uniform delay.
    #[serde(default)]
    pub latency_lo: f64,
    #[serde(default)]
    pub latency_hi: f64,
    #[serde(default)]
    pub latency_mean: f64,
    #[serde(default = "default_trace_len")]
    pub trace_len: usize,
    #[serde(default)]
    pub latency_seed: u64,
    /// Logical cost of one per-sample gradient in simulation.
    #[serde(default = "default_grad_cost")]
    pub grad_cost: f64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default = "default_idle_timeout")]
    pub idle_timeout_secs: f64,
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_secs: f64,
}

fn default_trace_len() -> usize {
    4096
}
fn default_grad_cost() -> f64 {
    1e-6
}
fn default_max_events() -> u64 {
    50_000_000
}
fn default_idle_timeout() -> f64 {
    60.0
}
fn default_connect_timeout() -> f64 {
    10.0
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            mode: ModeName::Sim,
            latency: LatencyName::Constant,
            latency_lo: 0.0,
            latency_hi: 0.0,
            latency_mean: 0.0,
            trace_len: default_trace_len(),
            latency_seed: 0,
            grad_cost: default_grad_cost(),
            max_events: default_max_events(),
            idle_timeout_secs: default_idle_timeout(),
            connect_timeout_secs: default_connect_timeout(),
        }
    }
}

impl TransportSection {
    pub fn latency_model(&self) -> LatencyModel {
        match self.latency {
            LatencyName::Constant => LatencyModel::Constant(self.latency_lo),
            LatencyName::Uniform => LatencyModel::Uniform {
                lo: self.latency_lo,
                hi: self.latency_hi,
            },
            LatencyName::Exponential => LatencyModel::Exponential {
                mean: self.latency_mean,
            },
            LatencyName::Adversarial => {
                LatencyModel::adversarial_trace(self.latency_seed, self.trace_len)
            }
        }
    }

    pub fn socket_options(&self) -> SocketOptions {
        SocketOptions {
            idle_timeout: Duration::from_secs_f64(self.idle_timeout_secs),
            connect_timeout: Duration::from_secs_f64(self.connect_timeout_secs),
        }
    }
}

/// `host:port` per role, for multi-process socket runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<String>,
}

impl EndpointsSection {
    fn is_empty(&self) -> bool {
        self.scheduler.is_none() && self.server.is_none() && self.workers.is_empty()
    }

    /// Environment variable that overrides the endpoint of `id`.
    pub fn env_var(id: NodeId) -> String {
        match id {
            NodeId::Scheduler => "DVRSGD_SCHEDULER_ADDR".into(),
            NodeId::Server => "DVRSGD_SERVER_ADDR".into(),
            NodeId::Worker(p) => format!("DVRSGD_WORKER_{p}_ADDR"),
        }
    }

    /// Endpoint of `id`, with the environment taking precedence over the file.
    pub fn resolve(&self, id: NodeId) -> Option<String> {
        if let Ok(v) = std::env::var(Self::env_var(id)) {
            return Some(v);
        }
        match id {
            NodeId::Scheduler => self.scheduler.clone(),
            NodeId::Server => self.server.clone(),
            NodeId::Worker(p) => self.workers.get(p as usize).cloned(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(
                msgs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        self.experiment.algo.parse()
    }

    /// Reports every out-of-range field at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(e) = self.algorithm() {
            errs.push(e.to_string());
        }
        let h = &self.hyper;
        let hp = HyperParams {
            eta: h.eta,
            theta: h.theta,
            tau: h.tau,
            batch_size: h.batch_size,
            tasks_per_stage: h.tasks_per_stage.unwrap_or(1),
            stages: h.stages,
            workers: h.workers,
        };
        if let Err(mut e) = hp.validate() {
            errs.append(&mut e);
        }
        let p = &self.problem;
        match p.source {
            SourceName::Synthetic => {
                if p.n == 0 || p.d == 0 {
                    errs.push("synthetic problems need n ≥ 1 and d ≥ 1".into());
                }
                if p.loss == LossName::Quadratic
                    && !(p.spectrum_lo > 0.0 && p.spectrum_hi >= p.spectrum_lo)
                {
                    errs.push(format!(
                        "spectrum must satisfy 0 < lo ≤ hi (got {}, {})",
                        p.spectrum_lo, p.spectrum_hi
                    ));
                }
            }
            SourceName::Libsvm => {
                if p.path.is_none() {
                    errs.push("libsvm source needs a path".into());
                }
            }
        }
        if p.loss == LossName::Multiclass && p.classes < 2 {
            errs.push("multiclass problems need classes ≥ 2".into());
        }
        if !(p.lambda >= 0.0) {
            errs.push(format!("lambda must be ≥ 0 (got {})", p.lambda));
        }
        let t = &self.transport;
        if let Err(e) = t.latency_model().validate() {
            errs.push(e);
        }
        if !(t.grad_cost >= 0.0) {
            errs.push(format!("grad_cost must be ≥ 0 (got {})", t.grad_cost));
        }
        if !(t.idle_timeout_secs > 0.0 && t.connect_timeout_secs > 0.0) {
            errs.push("socket timeouts must be positive".into());
        }
        if self.experiment.stop != StopName::Fixed && self.experiment.stop_threshold.is_none() {
            errs.push("stop rule needs stop_threshold".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn stopping_rule(&self) -> StoppingRule {
        let x = self.experiment.stop_threshold.unwrap_or(0.0);
        match self.experiment.stop {
            StopName::Fixed => StoppingRule::FixedStages,
            StopName::ObjectiveBelow => StoppingRule::ObjectiveBelow(x),
            StopName::RelativeDecrease => StoppingRule::RelativeDecrease(x),
        }
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let p = &self.problem;
        match p.source {
            SourceName::Synthetic => {
                let spec = SyntheticSpec::new(p.loss.into(), p.n, p.d)
                    .classes(p.classes)
                    .lambda(p.lambda)
                    .seed(p.data_seed.unwrap_or(self.experiment.seed))
                    .spectrum(p.spectrum_lo, p.spectrum_hi)
                    .noise(p.noise);
                make_synthetic(&spec)
            }
            SourceName::Libsvm => {
                let path = p
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config(vec!["libsvm source needs a path".into()]))?;
                load_libsvm_with(
                    path,
                    &LibsvmOptions {
                        dim: p.dim,
                        kind: p.loss.into(),
                        lambda: p.lambda,
                    },
                )
            }
        }
    }

    pub fn hyper_params(&self, problem: &Problem) -> HyperParams {
        let h = &self.hyper;
        HyperParams {
            eta: h.eta,
            theta: h.theta,
            tau: h.tau,
            batch_size: h.batch_size,
            tasks_per_stage: h.tasks_per_stage.unwrap_or_else(|| {
                HyperParams::default_tasks_per_stage(problem.len(), h.batch_size)
            }),
            stages: h.stages,
            workers: h.workers,
        }
    }

    /// Cluster description for a distributed algorithm on `problem`.
    pub fn cluster_spec(&self, problem: Arc<Problem>) -> Result<ClusterSpec> {
        let strategy = match self.problem.partition {
            PartitionName::Contiguous => PartitionStrategy::Contiguous,
            PartitionName::Shuffled => PartitionStrategy::Shuffled(self.experiment.seed),
        };
        let part = partition(&problem, self.hyper.workers, strategy)?;
        let hyper = self.hyper_params(&problem);
        let cost = match self.transport.mode {
            ModeName::Sim => CostModel::Modeled {
                per_gradient: self.transport.grad_cost,
            },
            ModeName::Socket => CostModel::Measured,
        };
        Ok(ClusterSpec::new(
            problem,
            part,
            self.algorithm()?,
            hyper,
            self.experiment.seed,
        )
        .stopping(self.stopping_rule())
        .cost(cost))
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            latency: self.transport.latency_model(),
            latency_seed: self.transport.latency_seed,
            record_trace: false,
            max_events: self.transport.max_events,
        }
    }
}

/// Runs the configured algorithm on an already-built problem.
pub fn run_on_problem(
    cfg: &ExperimentConfig,
    problem: Arc<Problem>,
) -> Result<Vec<ProgressRecord>> {
    cfg.validate()?;
    let alg = cfg.algorithm()?;
    if alg == Algorithm::SerialSvrg {
        return run_serial(cfg, &problem);
    }
    let spec = cfg.cluster_spec(problem)?;
    let outcome = match cfg.transport.mode {
        ModeName::Sim => run_simulated(&spec, &cfg.sim_options())?,
        ModeName::Socket => run_sockets(&spec, &cfg.transport.socket_options())?,
    };
    Ok(outcome.records)
}

fn run_serial(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<ProgressRecord>> {
    let hyper = cfg.hyper_params(problem);
    let serial = SerialSvrgConfig {
        eta: hyper.eta,
        tasks_per_stage: hyper.tasks_per_stage,
        stages: hyper.stages,
        batch_size: hyper.batch_size,
        seed: cfg.experiment.seed,
        choice: SnapshotChoice::RandomIterate,
    };
    let run = serial_svrg_with(problem, ParamVector::zeros(problem.param_len()), &serial)?;
    let cost = cfg.transport.grad_cost;
    let mut records = Vec::new();
    for (s, (obj, grads)) in run.objectives.iter().zip(&run.gradients).enumerate() {
        let t = *grads as f64 * cost;
        records.push(ProgressRecord {
            stage: s as u64,
            objective: *obj,
            wall_time: t,
            comp_time: vec![t],
            comm_time: vec![0.0],
        });
        let stop = match cfg.stopping_rule() {
            StoppingRule::FixedStages => false,
            StoppingRule::ObjectiveBelow(x) => *obj <= x,
            StoppingRule::RelativeDecrease(eps) => {
                s > 0
                    && (run.objectives[s - 1] - obj)
                        / run.objectives[s - 1].abs().max(f64::MIN_POSITIVE)
                        < eps
            }
        };
        if stop {
            break;
        }
    }
    Ok(records)
}

/// Builds the problem and runs the configured algorithm. With zero stages
/// nothing is recorded.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ProgressRecord>> {
    cfg.validate()?;
    if cfg.hyper.stages == 0 {
        return Ok(Vec::new());
    }
    run_on_problem(cfg, Arc::new(cfg.build_problem()?))
}

pub fn write_progress_csv(records: &[ProgressRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROGRESS_COLUMNS)?;
    for r in records {
        w.write_record([
            r.stage.to_string(),
            r.objective.to_string(),
            r.wall_time.to_string(),
            r.mean_comp().to_string(),
            r.mean_comm().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_progress_csv(records: &[ProgressRecord], path: impl AsRef<Path>) -> Result<()> {
    write_progress_csv(records, File::create(path)?)
}

/// Hyper-parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Workers,
    Tau,
    Theta,
    Eta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Workers => "workers",
            SweepAxis::Tau => "tau",
            SweepAxis::Theta => "theta",
            SweepAxis::Eta => "eta",
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |e: &dyn fmt::Display| {
            Error::Config(vec![format!("{} value {value:?}: {e}", self.name())])
        };
        let mut c = cfg.clone();
        match self {
            SweepAxis::Workers => c.hyper.workers = value.trim().parse().map_err(|e| bad(&e))?,
            SweepAxis::Tau => c.hyper.tau = value.trim().parse().map_err(|e| bad(&e))?,
            SweepAxis::Theta => c.hyper.theta = value.trim().parse().map_err(|e| bad(&e))?,
            SweepAxis::Eta => c.hyper.eta = value.trim().parse().map_err(|e| bad(&e))?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "workers" | "p" => Ok(SweepAxis::Workers),
            "tau" => Ok(SweepAxis::Tau),
            "theta" => Ok(SweepAxis::Theta),
            "eta" => Ok(SweepAxis::Eta),
            _ => Err(Error::Config(vec![format!(
                "unknown sweep axis {s:?}; expected workers, tau, theta or eta"
            )])),
        }
    }
}

/// One sweep point, summarized.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    /// First stage whose suboptimality is at or below the target.
    pub stages_to_target: Option<u64>,
    pub total_time: f64,
    pub comp_time: f64,
    pub comm_time: f64,
    pub records: Vec<ProgressRecord>,
}

/// Runs `cfg` once per value of `axis` with the shared seed. When `out_dir`
/// is given, writes `<axis>_<value>.csv` per run plus `summary.csv`.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    target: f64,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| axis.apply(cfg, v))
        .collect::<Result<_>>()?;
    let problem = Arc::new(cfg.build_problem()?);
    let optimum = problem.objective(&problem.solve_optimum(1e-10, 200_000)?)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for (value, c) in values.iter().zip(&configs) {
        let records = if c.hyper.stages == 0 {
            Vec::new()
        } else {
            run_on_problem(c, Arc::clone(&problem))?
        };
        if let Some(dir) = out_dir {
            save_progress_csv(
                &records,
                dir.join(format!("{}_{}.csv", axis.name(), value.trim())),
            )?;
        }
        let last = records.last();
        rows.push(SweepRow {
            value: value.trim().to_string(),
            stages_to_target: records
                .iter()
                .find(|r| r.objective - optimum <= target)
                .map(|r| r.stage),
            total_time: last.map_or(0.0, |r| r.wall_time),
            comp_time: last.map_or(0.0, ProgressRecord::mean_comp),
            comm_time: last.map_or(0.0, ProgressRecord::mean_comm),
            records,
        });
    }
    if let Some(dir) = out_dir {
        write_summary_csv(&rows, File::create(dir.join("summary.csv"))?)?;
        write_gnuplot_script(axis, &rows, optimum, File::create(dir.join("plot.gp"))?)?;
    }
    Ok(rows)
}

pub fn write_summary_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.value.clone(),
            r.stages_to_target
                .map(|s| s.to_string())
                .unwrap_or_default(),
            r.total_time.to_string(),
            r.comp_time.to_string(),
            r.comm_time.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Gnuplot script drawing suboptimality against time for every sweep value,
/// reading the per-value CSVs next to it.
pub fn write_gnuplot_script(
    axis: SweepAxis,
    rows: &[SweepRow],
    optimum: f64,
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "set datafile separator ','")?;
    writeln!(out, "set logscale y")?;
    writeln!(out, "set xlabel 'time'")?;
    writeln!(out, "set ylabel 'objective - optimum'")?;
    writeln!(out, "set key outside right")?;
    let plots: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "'{}_{}.csv' using 3:($2-({optimum:e})) every ::1 with linespoints title '{}={}'",
                axis.name(),
                r.value,
                axis.name(),
                r.value
            )
        })
        .collect();
    if !plots.is_empty() {
        writeln!(out, "plot {}", plots.join(", \\\n     "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
[experiment]
algo = "dvrsgd"
seed = 3

[problem]
source = "synthetic"
loss = "quadratic"
n = 80
d = 4

[hyper]
eta = 0.01
theta = 0.5
tau = 2
batch_size = 4
stages = 3
workers = 2

[transport]
latency = "uniform"
latency_lo = 0.0
latency_hi = 0.001
"#;

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn validation_lists_every_problem() {
        let text = CONFIG
            .replace("eta = 0.01", "eta = -1.0")
            .replace("workers = 2", "workers = 0");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(errs)) => assert_eq!(errs.len(), 2, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str(&format!("{CONFIG}\nbogus = 1\n")).is_err());
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_stage() {
        let cfg = ExperimentConfig::from_toml_str(CONFIG).unwrap();
        let records = run_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        write_progress_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("stage,objective,wall_time,comp_time,comm_time")
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn zero_stages_gives_header_only() {
        let cfg =
            ExperimentConfig::from_toml_str(&CONFIG.replace("stages = 3", "stages = 0")).unwrap();
        let mut buf = Vec::new();
        write_progress_csv(&run_experiment(&cfg).unwrap(), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "stage,objective,wall_time,comp_time,comm_time\n"
        );
    }

    #[test]
    fn endpoint_env_override() {
        let e = EndpointsSection {
            scheduler: Some("a:1".into()),
            server: None,
            workers: vec!["w:2".into()],
        };
        assert_eq!(e.resolve(NodeId::Worker(0)).as_deref(), Some("w:2"));
        assert_eq!(e.resolve(NodeId::Worker(1)), None);
        assert_eq!(
            EndpointsSection::env_var(NodeId::Worker(3)),
            "DVRSGD_WORKER_3_ADDR"
        );
    }
}
