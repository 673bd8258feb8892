//! The parameter server: owns `w`, gates pulls by bounded delay, applies
//! pushed updates and assembles the stage snapshot.
//!
//! Pull gating and update application are serialized through a single
//! handler, so a pull response always reads a `w` between updates.

use std::collections::{BTreeSet, VecDeque};

use log::info;

use crate::baselines::{AdagradState, DecayingRate};
use crate::error::{Error, Result};
use crate::losses::ParamVector;
use crate::protocol::{Control, EvalPush, Message, NodeId, PullRequest, TaskId, UpdatePush};
use crate::transport::{Node, Reaction};
use crate::vrgrad::Snapshot;

/// Algorithm and asynchrony settings shared by all roles.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Learning rate η.
    pub eta: f64,
    /// Mixing weight θ between the delayed-step and fresh-step iterates.
    pub theta: f64,
    /// Maximum delay τ, in update timestamps.
    pub tau: u64,
    /// Mini-batch size B.
    pub batch_size: usize,
    /// Update tasks per stage, m.
    pub tasks_per_stage: u64,
    /// Number of stages, S.
    pub stages: u64,
    /// Worker count, P.
    pub workers: usize,
}

impl HyperParams {
    /// `m = ⌈N/B⌉`
    pub fn default_tasks_per_stage(n: usize, batch_size: usize) -> u64 {
        n.div_ceil(batch_size.max(1)) as u64
    }

    /// Collects every violated range instead of stopping at the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            errs.push(format!("eta must be > 0 (got {})", self.eta));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            errs.push(format!("theta must lie in [0, 1] (got {})", self.theta));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be ≥ 1".into());
        }
        if self.tasks_per_stage == 0 {
            errs.push("tasks_per_stage must be ≥ 1".into());
        }
        if self.workers == 0 {
            errs.push("workers must be ≥ 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Stage an update timestamp belongs to (stages count from 1).
    pub fn stage_of_update(&self, timestamp: u64) -> u64 {
        (timestamp - 1) / self.tasks_per_stage + 1
    }

    /// Timestamp of stage `s`'s evaluation task, `s·m + 1`.
    pub fn eval_timestamp(&self, stage: u64) -> u64 {
        stage * self.tasks_per_stage + 1
    }
}

/// How far an update pull may run ahead of unfinished updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayBound {
    /// Update pull `t` waits until all updates `< t − τ` finished.
    Bounded(u64),
    /// Updates are never gated.
    Unbounded,
}

/// How the server folds an `UpdatePush` into `w`.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateRule {
    /// `w = (1−θ)(w − ηΔ) + θ w̄`
    Hybrid { eta: f64, theta: f64 },
    /// `w = (1−θ)w + θ w̄`
    ConvexCombination { theta: f64 },
    /// Per-coordinate Adagrad step with `Δ`.
    Adagrad(AdagradState),
    /// `w = w − η_epoch Δ`, with η decayed at every stage end.
    DecayingSgd(DecayingRate),
}

/// `w = (1−θ)(w − ηΔ) + θ w̄`, with the endpoints θ ∈ {0, 1} evaluated exactly.
pub fn hybrid_update(w: &[f64], delta: &[f64], w_bar: &[f64], eta: f64, theta: f64) -> ParamVector {
    if theta == 0.0 {
        return w
            .iter()
            .zip(delta)
            .map(|(a, d)| a - eta * d)
            .collect::<Vec<_>>()
            .into();
    }
    if theta == 1.0 {
        return w_bar.to_vec().into();
    }
    w.iter()
        .zip(delta)
        .zip(w_bar)
        .map(|((a, d), b)| (1.0 - theta) * (a - eta * d) + theta * b)
        .collect::<Vec<_>>()
        .into()
}

/// Finished update timestamps as a watermark plus the out-of-order overflow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinishedSet {
    watermark: u64,
    overflow: BTreeSet<u64>,
}

impl FinishedSet {
    /// Largest `t₀` with every update `≤ t₀` finished.
    pub fn watermark(&self) -> u64 {
        self.watermark
    }

    pub fn contains(&self, t: u64) -> bool {
        t <= self.watermark || self.overflow.contains(&t)
    }

    /// Returns false if `t` was already finished.
    pub fn insert(&mut self, t: u64) -> bool {
        if t == 0 || self.contains(t) {
            return false;
        }
        self.overflow.insert(t);
        while self.overflow.remove(&(self.watermark + 1)) {
            self.watermark += 1;
        }
        true
    }

    /// Whether every update timestamp strictly below `t` has finished.
    pub fn all_below(&self, t: u64) -> bool {
        t <= self.watermark + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateDecision {
    Respond(ParamVector),
    Defer,
}

#[derive(Clone, Debug)]
pub struct Server {
    w: ParamVector,
    rule: UpdateRule,
    gate: DelayBound,
    weights: Vec<f64>,
    tasks_per_stage: u64,
    finished: FinishedSet,
    pending: Vec<(u64, PullRequest)>,
    arrivals: u64,
    last_served: Vec<Option<TaskId>>,
    snapshot: Option<Snapshot>,
    eval_tasks: VecDeque<TaskId>,
    completed_stage: Option<u64>,
    eval_pushes: Vec<Option<EvalPush>>,
    anchors: Vec<ParamVector>,
    stop_requested: bool,
    stopped: bool,
    updates_applied: u64,
    discarded: u64,
}

impl Server {
    /// `weights[p]` is worker p's share `q_p = n_p/N`.
    pub fn new(
        initial: ParamVector,
        rule: UpdateRule,
        gate: DelayBound,
        weights: Vec<f64>,
        tasks_per_stage: u64,
    ) -> Self {
        let p = weights.len();
        Self {
            w: initial,
            rule,
            gate,
            weights,
            tasks_per_stage: tasks_per_stage.max(1),
            finished: FinishedSet::default(),
            pending: Vec::new(),
            arrivals: 0,
            last_served: vec![None; p],
            snapshot: None,
            eval_tasks: VecDeque::new(),
            completed_stage: None,
            eval_pushes: vec![None; p],
            anchors: Vec::new(),
            stop_requested: false,
            stopped: false,
            updates_applied: 0,
            discarded: 0,
        }
    }

    pub fn params(&self) -> &ParamVector {
        &self.w
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    /// Anchor `w̃ˢ` of every completed stage, starting with stage 0.
    pub fn anchors(&self) -> &[ParamVector] {
        &self.anchors
    }

    pub fn finished(&self) -> &FinishedSet {
        &self.finished
    }

    pub fn rule(&self) -> &UpdateRule {
        &self.rule
    }

    pub fn pending_pulls(&self) -> usize {
        self.pending.len()
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// Last stage whose snapshot is complete; 0 is the initial evaluation.
    pub fn completed_stage(&self) -> Option<u64> {
        self.completed_stage
    }

    fn eligible(&self, task: TaskId) -> bool {
        if task.is_update() {
            // updates of stage s read the snapshot of stage s − 1, so they also
            // wait for it; this keeps every evaluation pull on the same w
            let stage = (task.timestamp - 1) / self.tasks_per_stage + 1;
            if !self.completed_stage.is_some_and(|c| c + 1 >= stage) {
                return false;
            }
            match self.gate {
                DelayBound::Unbounded => true,
                DelayBound::Bounded(tau) => {
                    self.finished.all_below(task.timestamp.saturating_sub(tau))
                }
            }
        } else {
            self.finished.all_below(task.timestamp)
        }
    }

    /// Answers the pull now or buffers it until older updates finish.
    pub fn gate_pull(&mut self, req: PullRequest) -> Result<GateDecision> {
        let p = req.worker as usize;
        if p >= self.last_served.len() {
            return Err(Error::Protocol(format!(
                "pull from unknown worker {}",
                req.worker
            )));
        }
        if self.last_served[p] == Some(req.task)
            || self.pending.iter().any(|(_, r)| r.worker == req.worker)
        {
            return Err(Error::DuplicatePull {
                worker: req.worker,
                task: req.task,
            });
        }
        if self.eligible(req.task) {
            self.last_served[p] = Some(req.task);
            return Ok(GateDecision::Respond(self.w.clone()));
        }
        self.arrivals += 1;
        self.pending.push((self.arrivals, req));
        Ok(GateDecision::Defer)
    }

    /// Buffered pulls that became eligible, oldest task first.
    fn release(&mut self) -> Vec<(PullRequest, ParamVector)> {
        let (ready, waiting): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|(_, r)| self.eligible(r.task));
        self.pending = waiting;
        let mut ready = ready;
        ready.sort_by_key(|(arrival, r)| (r.task.timestamp, *arrival));
        ready
            .into_iter()
            .map(|(_, r)| {
                self.last_served[r.worker as usize] = Some(r.task);
                (r, self.w.clone())
            })
            .collect()
    }

    /// Folds `push` into `w`, marks its task finished and returns the
    /// buffered pulls this unblocked.
    pub fn apply_update(&mut self, push: &UpdatePush) -> Result<Vec<(PullRequest, ParamVector)>> {
        if !push.task.is_update() {
            return Err(Error::Protocol(format!(
                "update push carries {}",
                push.task
            )));
        }
        if self.finished.contains(push.task.timestamp) {
            return Err(Error::DuplicateUpdate(push.task));
        }
        if push.delta.len() != self.w.len() || push.w_bar.len() != self.w.len() {
            return Err(Error::LengthMismatch {
                got: push.delta.len(),
                expected: self.w.len(),
            });
        }
        let next = match &mut self.rule {
            UpdateRule::Hybrid { eta, theta } => {
                hybrid_update(&self.w, &push.delta, &push.w_bar, *eta, *theta)
            }
            UpdateRule::ConvexCombination { theta } => {
                crate::baselines::dpg_update(&self.w, &push.w_bar, *theta)
            }
            UpdateRule::Adagrad(state) => {
                let mut w = self.w.clone();
                state.downpour_adagrad_update(&mut w, &push.delta);
                w
            }
            UpdateRule::DecayingSgd(rate) => {
                let mut w = self.w.clone();
                crate::baselines::decaying_ssp_update(&mut w, &push.delta, rate);
                w
            }
        };
        if !next.is_finite() {
            return Err(Error::Diverged(push.task));
        }
        self.w = next;
        self.finished.insert(push.task.timestamp);
        self.updates_applied += 1;
        Ok(self.release())
    }

    /// Closes a stage: `w̃ := w`, `∇F(w̃) := Σ_p q_p ∇F_p(w̃)`.
    pub fn stage_end(&mut self, pushes: &[EvalPush], weights: &[f64]) -> Result<Snapshot> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSum(total));
        }
        let mut by_worker: Vec<Option<&EvalPush>> = vec![None; weights.len()];
        for push in pushes {
            let slot = by_worker.get_mut(push.worker as usize).ok_or_else(|| {
                Error::Protocol(format!("eval push from unknown worker {}", push.worker))
            })?;
            *slot = Some(push);
        }
        let task = pushes
            .first()
            .map(|p| p.task)
            .ok_or(Error::MissingEvalPush(0))?;
        if !self.finished.all_below(task.timestamp) {
            return Err(Error::Protocol(format!(
                "stage end at {task} with updates below it unfinished (watermark {})",
                self.finished.watermark()
            )));
        }
        let mut grad: Vec<f64> = Vec::new();
        for (p, (push, q)) in by_worker.iter().zip(weights).enumerate() {
            let push = push.ok_or(Error::MissingEvalPush(p as u32))?;
            if push.task != task {
                return Err(Error::Protocol(format!(
                    "worker {p} pushed {} during {task}",
                    push.task
                )));
            }
            if push.local_grad.len() != self.w.len() {
                return Err(Error::LengthMismatch {
                    got: push.local_grad.len(),
                    expected: self.w.len(),
                });
            }
            if p == 0 {
                grad = push.local_grad.iter().map(|l| q * l).collect();
            } else {
                for (g, l) in grad.iter_mut().zip(push.local_grad.iter()) {
                    *g += q * l;
                }
            }
        }
        let stage = (task.timestamp - 1) / self.tasks_per_stage;
        let snap = Snapshot::from_parts(self.w.clone(), grad.into(), stage);
        self.anchors.push(snap.anchor.clone());
        self.snapshot = Some(snap.clone());
        self.completed_stage = Some(stage);
        Ok(snap)
    }

    fn try_finish_stage(&mut self, out: &mut Reaction) -> Result<()> {
        let Some(&task) = self.eval_tasks.front() else {
            return Ok(());
        };
        if !self.finished.all_below(task.timestamp) || self.eval_pushes.iter().any(Option::is_none)
        {
            return Ok(());
        }
        let pushes: Vec<EvalPush> = self
            .eval_pushes
            .iter_mut()
            .map(|p| p.take().expect("checked"))
            .collect();
        let weights = self.weights.clone();
        let snap = self.stage_end(&pushes, &weights)?;
        self.eval_tasks.pop_front();
        if self.stop_requested {
            self.stopped = true;
            return Ok(());
        }
        if snap.stage >= 1 {
            if let UpdateRule::DecayingSgd(rate) = &mut self.rule {
                rate.end_epoch();
            }
        }
        for p in 0..self.weights.len() {
            out.send(
                NodeId::Worker(p as u32),
                Message::Control(Control::SnapshotBroadcast {
                    stage: snap.stage,
                    anchor_grad: snap.anchor_grad.clone(),
                }),
            );
        }
        for (req, w) in self.release() {
            respond(out, &req, w);
        }
        Ok(())
    }
}

fn respond(out: &mut Reaction, req: &PullRequest, w: ParamVector) {
    out.send(
        NodeId::Worker(req.worker),
        Message::PullResponse { task: req.task, w },
    );
}

impl Node for Server {
    fn handle(&mut self, _now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
        let mut out = Reaction::idle();
        if self.stopped {
            self.discarded += 1;
            info!("server stopped; discarding {:?} from {from}", msg.kind());
            return Ok(out);
        }
        match msg {
            Message::Pull(req) => {
                if let GateDecision::Respond(w) = self.gate_pull(req.clone())? {
                    respond(&mut out, &req, w);
                }
            }
            Message::Update(push) => {
                for (req, w) in self.apply_update(&push)? {
                    respond(&mut out, &req, w);
                }
            }
            Message::EvalTask(task) => {
                if self
                    .eval_tasks
                    .back()
                    .is_some_and(|last| last.timestamp >= task.timestamp)
                {
                    return Err(Error::Protocol(format!("{task} issued out of order")));
                }
                self.eval_tasks.push_back(task);
                self.try_finish_stage(&mut out)?;
            }
            Message::Eval(push) => {
                let p = push.worker as usize;
                let slot = self
                    .eval_pushes
                    .get_mut(p)
                    .ok_or_else(|| Error::Protocol(format!("eval push from unknown worker {p}")))?;
                if slot.is_some() {
                    return Err(Error::Protocol(format!(
                        "worker {p} pushed twice for one evaluation"
                    )));
                }
                *slot = Some(push);
                self.try_finish_stage(&mut out)?;
            }
            Message::Control(Control::Stop) => {
                // the last evaluation's pushes may still be in flight
                self.stop_requested = true;
                if self.eval_tasks.is_empty() {
                    self.stopped = true;
                }
                if !self.pending.is_empty() {
                    info!(
                        "server stopped with {} deferred pulls; discarding them",
                        self.pending.len()
                    );
                    self.pending.clear();
                }
            }
            other => {
                return Err(Error::Protocol(format!(
                    "server cannot handle {:?} from {from}",
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
