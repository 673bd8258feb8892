//! Worker role: pulls `w`, computes a mini-batch step on its own partition
//! and pushes it back; at stage ends it evaluates its share of the full
//! gradient and objective.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{ParamVector, Problem};
use crate::protocol::{
    Control, EvalPush, Message, NodeId, ObjectiveReport, PullRequest, TaskId, UpdatePush,
};
use crate::transport::{Node, Reaction};
use crate::vrgrad::{plain_gradient, vr_gradient, Snapshot};

/// Draws mini-batches without replacement from one worker's partition.
///
/// Worker `p` uses stream `p + 1` of the run seed, so batches do not depend
/// on timing or on the other workers.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(seed: u64, worker: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(worker as u64 + 1);
        Self { rng }
    }

    pub fn sample(&mut self, pool: &[usize], batch_size: usize) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch_size > pool.len() {
            return Err(Error::BatchTooLarge {
                batch: batch_size,
                local: pool.len(),
            });
        }
        Ok(index::sample(&mut self.rng, pool.len(), batch_size)
            .into_iter()
            .map(|k| pool[k])
            .collect())
    }
}

/// Which direction a worker pushes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRule {
    /// Variance-reduced gradient against the current stage snapshot.
    VarianceReduced,
    /// Plain mini-batch gradient; no snapshot needed.
    Plain,
}

/// How long a task occupies the worker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CostModel {
    /// Fixed seconds per per-sample gradient; used by the simulator.
    Modeled { per_gradient: f64 },
    /// Wall-clock time of the computation.
    Measured,
}

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub tasks_per_stage: u64,
    pub rule: GradientRule,
    pub cost: CostModel,
    pub seed: u64,
}

/// Cumulative per-worker accounting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerStats {
    /// Time spent computing.
    pub comp_time: f64,
    /// Time between sending a pull and receiving its response.
    pub comm_time: f64,
    pub updates: u64,
    pub evaluations: u64,
    /// Gradient evaluations, counting each per-sample gradient once.
    pub gradients: u64,
}

#[derive(Clone, Debug)]
struct InFlight {
    task: TaskId,
    sent_at: f64,
}

#[derive(Clone, Debug)]
pub struct Worker {
    id: u32,
    problem: Arc<Problem>,
    local: Vec<usize>,
    cfg: WorkerConfig,
    sampler: BatchSampler,
    snapshot: Option<Snapshot>,
    pending_anchor: Option<ParamVector>,
    queue: VecDeque<TaskId>,
    in_flight: Option<InFlight>,
    stats: WorkerStats,
    anchors: Vec<ParamVector>,
    stopped: bool,
}

impl Worker {
    pub fn new(
        id: u32,
        problem: Arc<Problem>,
        local: Vec<usize>,
        cfg: WorkerConfig,
    ) -> Result<Self> {
        if local.is_empty() {
            return Err(Error::InvalidSize(format!("worker {id} has no samples")));
        }
        if cfg.batch_size > local.len() {
            return Err(Error::BatchTooLarge {
                batch: cfg.batch_size,
                local: local.len(),
            });
        }
        let sampler = BatchSampler::new(cfg.seed, id);
        Ok(Self {
            id,
            problem,
            local,
            cfg,
            sampler,
            snapshot: None,
            pending_anchor: None,
            queue: VecDeque::new(),
            in_flight: None,
            stats: WorkerStats::default(),
            anchors: Vec::new(),
            stopped: false,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    /// Every `w` this worker evaluated, one per stage starting at stage 0.
    pub fn anchors(&self) -> &[ParamVector] {
        &self.anchors
    }

    fn stage_of(&self, t: u64) -> u64 {
        (t - 1) / self.cfg.tasks_per_stage.max(1) + 1
    }

    /// Computes the push for update `task` from the pulled iterate `w_hat`:
    /// `Δ` is the batch direction and `w̄ = ŵ − ηΔ`.
    pub fn run_update_task(&mut self, task: TaskId, w_hat: &ParamVector) -> Result<UpdatePush> {
        let batch = self.sampler.sample(&self.local, self.cfg.batch_size)?;
        let delta = match self.cfg.rule {
            GradientRule::VarianceReduced => {
                let snap = self.snapshot.as_ref().ok_or_else(|| {
                    Error::Protocol(format!("worker {} ran {task} before any snapshot", self.id))
                })?;
                self.stats.gradients += 2 * batch.len() as u64;
                vr_gradient(&self.problem, w_hat, snap, &batch)?
            }
            GradientRule::Plain => {
                self.stats.gradients += batch.len() as u64;
                plain_gradient(&self.problem, w_hat, &batch)?
            }
        };
        self.stats.updates += 1;
        let w_bar = w_hat.step(self.cfg.eta, &delta);
        Ok(UpdatePush {
            worker: self.id,
            task,
            w_bar,
            delta,
        })
    }

    /// Local gradient mean and objective sum at the pulled anchor `w`.
    pub fn run_evaluation_task(&mut self, task: TaskId, w: &ParamVector) -> Result<EvalPush> {
        let local_grad = self.problem.mean_gradient(w, &self.local)?;
        let local_obj_sum = self.problem.loss_sum(w, &self.local)?;
        self.stats.gradients += self.local.len() as u64;
        self.stats.evaluations += 1;
        self.pending_anchor = Some(w.clone());
        self.anchors.push(w.clone());
        Ok(EvalPush {
            worker: self.id,
            task,
            local_grad,
            local_obj_sum,
        })
    }

    fn ready(&self, task: TaskId) -> bool {
        if !task.is_update() || self.cfg.rule == GradientRule::Plain {
            return true;
        }
        let needed = self.stage_of(task.timestamp) - 1;
        self.snapshot.as_ref().is_some_and(|s| s.stage == needed)
    }

    fn try_pull(&mut self, at: f64, out: &mut Reaction) {
        if self.in_flight.is_some() || self.stopped {
            return;
        }
        let Some(&task) = self.queue.front() else {
            return;
        };
        if !self.ready(task) {
            debug!("worker {} holds {task} until its snapshot arrives", self.id);
            return;
        }
        self.queue.pop_front();
        self.in_flight = Some(InFlight { task, sent_at: at });
        out.send(
            NodeId::Server,
            Message::Pull(PullRequest {
                worker: self.id,
                task,
            }),
        );
    }

    fn on_response(&mut self, now: f64, task: TaskId, w: ParamVector) -> Result<Reaction> {
        let flight = self
            .in_flight
            .take()
            .filter(|f| f.task == task)
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "worker {} got an unrequested response for {task}",
                    self.id
                ))
            })?;
        self.stats.comm_time += now - flight.sent_at;
        let grads_before = self.stats.gradients;
        let clock = Instant::now();
        let mut out = Reaction::idle();
        let msgs = if task.is_update() {
            vec![(
                NodeId::Server,
                Message::Update(self.run_update_task(task, &w)?),
            )]
        } else {
            let push = self.run_evaluation_task(task, &w)?;
            let obj = push.local_obj_sum;
            vec![
                (NodeId::Server, Message::Eval(push)),
                (
                    NodeId::Scheduler,
                    Message::ObjectiveReport(ObjectiveReport {
                        worker: self.id,
                        task,
                        local_obj_sum: obj,
                        comp_time: 0.0,
                        comm_time: 0.0,
                    }),
                ),
            ]
        };
        let cost = match self.cfg.cost {
            CostModel::Modeled { per_gradient } => {
                (self.stats.gradients - grads_before) as f64 * per_gradient
            }
            CostModel::Measured => clock.elapsed().as_secs_f64(),
        };
        self.stats.comp_time += cost;
        out.busy = cost;
        for (to, mut msg) in msgs {
            if let Message::ObjectiveReport(r) = &mut msg {
                r.comp_time = self.stats.comp_time;
                r.comm_time = self.stats.comm_time;
            }
            out.send(to, msg);
        }
        self.try_pull(now + cost, &mut out);
        Ok(out)
    }
}

impl Node for Worker {
    fn handle(&mut self, now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
        let mut out = Reaction::idle();
        if self.stopped {
            info!(
                "worker {} stopped; ignoring {:?} from {from}",
                self.id,
                msg.kind()
            );
            return Ok(out);
        }
        match msg {
            Message::AssignTask(task) => {
                self.queue.push_back(task);
                self.try_pull(now, &mut out);
            }
            Message::PullResponse { task, w } => return self.on_response(now, task, w),
            Message::Control(Control::SnapshotBroadcast { stage, anchor_grad }) => {
                let anchor = self.pending_anchor.take().ok_or_else(|| {
                    Error::Protocol(format!(
                        "worker {} got snapshot {stage} without evaluating it",
                        self.id
                    ))
                })?;
                self.snapshot = Some(Snapshot::from_parts(anchor, anchor_grad, stage));
                self.try_pull(now, &mut out);
            }
            Message::Control(Control::Stop) => {
                self.stopped = true;
                self.queue.clear();
            }
            other => {
                return Err(Error::Protocol(format!(
                    "worker {} cannot handle {:?} from {from}",
                    self.id,
                    other.kind()
                )))
            }
        }
        Ok(out)
    }

    fn is_done(&self) -> bool {
        self.stopped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{make_synthetic, LossKind, SyntheticSpec};

    fn worker(rule: GradientRule) -> Worker {
        let p = Arc::new(
            make_synthetic(&SyntheticSpec::new(LossKind::Quadratic, 30, 3).seed(4)).unwrap(),
        );
        let cfg = WorkerConfig {
            eta: 0.1,
            batch_size: 4,
            tasks_per_stage: 5,
            rule,
            cost: CostModel::Modeled { per_gradient: 1.0 },
            seed: 9,
        };
        Worker::new(0, p, (0..30).collect(), cfg).unwrap()
    }

    #[test]
    fn sampler_respects_pool_and_size() {
        let mut s = BatchSampler::new(1, 3);
        let pool: Vec<usize> = (100..110).collect();
        let b = s.sample(&pool, 10).unwrap();
        let mut sorted = b.clone();
        sorted.sort();
        assert_eq!(sorted, pool);
        assert!(matches!(
            s.sample(&pool, 11),
            Err(Error::BatchTooLarge {
                batch: 11,
                local: 10
            })
        ));
        let a = BatchSampler::new(5, 0).sample(&pool, 3).unwrap();
        assert_eq!(a, BatchSampler::new(5, 0).sample(&pool, 3).unwrap());
    }

    #[test]
    fn update_push_satisfies_local_step() {
        let mut w = worker(GradientRule::Plain);
        let w_hat: ParamVector = vec![0.3, -0.2, 1.0].into();
        let push = w.run_update_task(TaskId::update(1), &w_hat).unwrap();
        for k in 0..3 {
            assert_eq!(push.w_bar[k], w_hat[k] - 0.1 * push.delta[k]);
        }
    }

    #[test]
    fn vr_worker_waits_for_snapshot() {
        let mut w = worker(GradientRule::VarianceReduced);
        let r = w
            .handle(
                0.0,
                NodeId::Scheduler,
                Message::AssignTask(TaskId::update(1)),
            )
            .unwrap();
        assert!(r.outbox.is_empty());
        let r = w
            .handle(
                0.0,
                NodeId::Scheduler,
                Message::AssignTask(TaskId::evaluation(1)),
            )
            .unwrap();
        assert!(r.outbox.is_empty(), "queue is FIFO");
    }

    #[test]
    fn modeled_cost_counts_gradients() {
        let mut w = worker(GradientRule::Plain);
        let r = w
            .handle(
                0.0,
                NodeId::Scheduler,
                Message::AssignTask(TaskId::update(1)),
            )
            .unwrap();
        assert_eq!(r.outbox.len(), 1);
        let r = w
            .handle(
                2.0,
                NodeId::Server,
                Message::PullResponse {
                    task: TaskId::update(1),
                    w: ParamVector::zeros(3),
                },
            )
            .unwrap();
        assert_eq!(r.busy, 4.0);
        assert_eq!(w.stats().comm_time, 2.0);
        assert!(matches!(
            w.handle(
                3.0,
                NodeId::Server,
                Message::PullResponse {
                    task: TaskId::update(1),
                    w: ParamVector::zeros(3)
                }
            ),
            Err(Error::Protocol(_))
        ));
    }
}
