//! Scheduler role: issues update and evaluation tasks stage by stage,
//! collects objective reports and decides when to stop.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::protocol::{Control, Message, NodeId, ObjectiveReport, TaskId};
use crate::server::HyperParams;
use crate::transport::{Node, Reaction};

/// When the run ends. Every rule also stops after the configured stage count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoppingRule {
    FixedStages,
    /// Stop once the objective is at or below the threshold.
    ObjectiveBelow(f64),
    /// Stop once a stage improves the objective by less than this fraction.
    RelativeDecrease(f64),
}

/// Objective and timing at the end of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgressRecord {
    /// Stage index; 0 is the initial point.
    pub stage: u64,
    pub objective: f64,
    /// Time at which the last report of the stage arrived.
    pub wall_time: f64,
    /// Cumulative computation time per worker.
    pub comp_time: Vec<f64>,
    /// Cumulative pull-wait time per worker.
    pub comm_time: Vec<f64>,
}

impl ProgressRecord {
    pub fn mean_comp(&self) -> f64 {
        mean(&self.comp_time)
    }

    pub fn mean_comm(&self) -> f64 {
        mean(&self.comm_time)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Bound on the expected contraction per stage and whether it is below one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBound {
    pub gamma: f64,
    pub contracts: bool,
}

/// `γ = (1 − 2η(μ − ηL²/θ))^{m/(1+τ)} + ηL²/(θμ − ηL²)`, defined for
/// `θ ∈ (0, 1]` and `η ∈ (0, μθ/(2L²))`.
pub fn compute_rate_gamma(
    mu: f64,
    l: f64,
    eta: f64,
    theta: f64,
    m: u64,
    tau: u64,
) -> Result<RateBound> {
    if !(mu > 0.0 && l > 0.0 && mu.is_finite() && l.is_finite()) {
        return Err(Error::Hyper(format!(
            "curvature needs 0 < mu, 0 < L (got mu={mu}, L={l})"
        )));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Hyper(format!(
            "theta must lie in (0, 1] (got {theta})"
        )));
    }
    if m == 0 {
        return Err(Error::Hyper("m must be ≥ 1".into()));
    }
    let upper = mu * theta / (2.0 * l * l);
    if !(eta > 0.0 && eta < upper) {
        return Err(Error::RateDomain { eta, upper });
    }
    let l2 = l * l;
    let base = 1.0 - 2.0 * eta * (mu - eta * l2 / theta);
    let exponent = m as f64 / (1.0 + tau as f64);
    let gamma = base.powf(exponent) + eta * l2 / (theta * mu - eta * l2);
    Ok(RateBound {
        gamma,
        contracts: gamma < 1.0,
    })
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    hyper: HyperParams,
    counts: Vec<usize>,
    cumulative: Vec<usize>,
    n_total: usize,
    rng: ChaCha8Rng,
    stopping: StoppingRule,
    stage: u64,
    reports: Vec<Option<ObjectiveReport>>,
    records: Vec<ProgressRecord>,
    issued: Vec<(TaskId, u32)>,
    done: bool,
}

impl Scheduler {
    /// `counts[p]` is worker p's partition size; update tasks go to worker p
    /// with probability `counts[p] / Σ counts`.
    pub fn new(
        hyper: HyperParams,
        counts: Vec<usize>,
        seed: u64,
        stopping: StoppingRule,
    ) -> Result<Self> {
        hyper.validate().map_err(Error::Config)?;
        if counts.len() != hyper.workers || counts.contains(&0) {
            return Err(Error::InvalidSize(format!(
                "need {} non-empty partitions, got sizes {counts:?}",
                hyper.workers
            )));
        }
        let cumulative = counts
            .iter()
            .scan(0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        Ok(Self {
            n_total: counts.iter().sum(),
            reports: vec![None; counts.len()],
            counts,
            cumulative,
            rng,
            stopping,
            stage: 0,
            records: Vec::new(),
            issued: Vec::new(),
            hyper,
            done: false,
        })
    }

    pub fn records(&self) -> &[ProgressRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ProgressRecord> {
        self.records
    }

    /// Every task issued, with the worker it went to, in issue order.
    /// Evaluation tasks appear once per worker.
    pub fn issued(&self) -> &[(TaskId, u32)] {
        &self.issued
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    fn pick_worker(&mut self) -> u32 {
        let u = self.rng.random_range(0..self.n_total);
        self.cumulative.partition_point(|&c| c <= u) as u32
    }

    fn issue_evaluation(&mut self, stage: u64, out: &mut Reaction) {
        let task = TaskId::evaluation(self.hyper.eval_timestamp(stage));
        out.send(NodeId::Server, Message::EvalTask(task));
        for p in 0..self.counts.len() as u32 {
            self.issued.push((task, p));
            out.send(NodeId::Worker(p), Message::AssignTask(task));
        }
    }

    fn issue_stage(&mut self, stage: u64, out: &mut Reaction) {
        let m = self.hyper.tasks_per_stage;
        for k in 1..=m {
            let task = TaskId::update((stage - 1) * m + k);
            let p = self.pick_worker();
            self.issued.push((task, p));
            out.send(NodeId::Worker(p), Message::AssignTask(task));
        }
        self.issue_evaluation(stage, out);
    }

    fn stop(&mut self, out: &mut Reaction) {
        info!("scheduler stopping after stage {}", self.stage);
        out.send(NodeId::Server, Message::Control(Control::Stop));
        for p in 0..self.counts.len() as u32 {
            out.send(NodeId::Worker(p), Message::Control(Control::Stop));
        }
        self.done = true;
    }

    fn should_stop(&self) -> bool {
        if self.stage >= self.hyper.stages {
            return true;
        }
        let last = self.records.last().map(|r| r.objective);
        match self.stopping {
            StoppingRule::FixedStages => false,
            StoppingRule::ObjectiveBelow(x) => last.is_some_and(|f| f <= x),
            StoppingRule::RelativeDecrease(eps) => match self.records.as_slice() {
                [.., prev, cur] => {
                    (prev.objective - cur.objective) / prev.objective.abs().max(f64::MIN_POSITIVE)
                        < eps
                }
                _ => false,
            },
        }
    }

    fn finish_stage(&mut self, now: f64, out: &mut Reaction) {
        let reports: Vec<ObjectiveReport> = self
            .reports
            .iter_mut()
            .map(|r| r.take().expect("complete"))
            .collect();
        let objective = reports.iter().map(|r| r.local_obj_sum).sum::<f64>() / self.n_total as f64;
        info!(
            "stage {} objective {objective:.6e} at t={now:.4}",
            self.stage
        );
        self.records.push(ProgressRecord {
            stage: self.stage,
            objective,
            wall_time: now,
            comp_time: reports.iter().map(|r| r.comp_time).collect(),
            comm_time: reports.iter().map(|r| r.comm_time).collect(),
        });
        if self.should_stop() {
            self.stop(out);
        } else {
            self.stage += 1;
            self.issue_stage(self.stage, out);
        }
    }
}

impl Node for Scheduler {
    fn start(&mut self, _now: f64) -> Result<Reaction> {
        let mut out = Reaction::idle();
        if self.hyper.stages == 0 {
            self.stop(&mut out);
        } else {
            self.issue_evaluation(0, &mut out);
        }
        Ok(out)
    }

    fn handle(&mut self, now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
        let mut out = Reaction::idle();
        if self.done {
            return Ok(out);
        }
        match msg {
            Message::ObjectiveReport(report) => {
                let expected = TaskId::evaluation(self.hyper.eval_timestamp(self.stage));
                if report.task != expected {
                    return Err(Error::Protocol(format!(
                        "report for {} while waiting for {expected}",
                        report.task
                    )));
                }
                let slot = self
                    .reports
                    .get_mut(report.worker as usize)
                    .ok_or_else(|| {
                        Error::Protocol(format!("report from unknown worker {}", report.worker))
                    })?;
                if slot.is_some() {
                    return Err(Error::Protocol(format!(
                        "worker {} reported twice",
                        report.worker
                    )));
                }
                if !report.local_obj_sum.is_finite() {
                    return Err(Error::Diverged(report.task));
                }
                *slot = Some(report);
                if self.reports.iter().all(Option::is_some) {
                    self.finish_stage(now, &mut out);
                }
            }
            other => {
                return Err(Error::Protocol(format!(
                    "scheduler cannot handle {:?} from {from}",
                    other.kind()
                )))
            }
        }
        Ok(out)
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
