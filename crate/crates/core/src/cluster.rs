//! Wiring a scheduler, a server and `P` workers into one run, either inside
//! the discrete-event simulator or over loopback TCP.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;

use crate::baselines::Algorithm;
use crate::data::Partitioning;
use crate::error::{Error, Result};
use crate::losses::{ParamVector, Problem};
use crate::protocol::{Message, NodeId, TaskId};
use crate::scheduler::{ProgressRecord, Scheduler, StoppingRule};
use crate::server::{HyperParams, Server};
use crate::transport::{
    run_socket_node, LatencyModel, Node, Reaction, SimCluster, SocketOptions, TraceEntry,
};
use crate::worker::{CostModel, Worker, WorkerConfig, WorkerStats};

/// Any one of the three roles, so a cluster can hold them side by side.
#[derive(Clone, Debug)]
pub enum Role {
    Scheduler(Scheduler),
    Server(Server),
    Worker(Worker),
}

impl Node for Role {
    fn start(&mut self, now: f64) -> Result<Reaction> {
        match self {
            Role::Scheduler(n) => n.start(now),
            Role::Server(n) => n.start(now),
            Role::Worker(n) => n.start(now),
        }
    }

    fn handle(&mut self, now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
        match self {
            Role::Scheduler(n) => n.handle(now, from, msg),
            Role::Server(n) => n.handle(now, from, msg),
            Role::Worker(n) => n.handle(now, from, msg),
        }
    }

    fn is_done(&self) -> bool {
        match self {
            Role::Scheduler(n) => n.is_done(),
            Role::Server(n) => n.is_done(),
            Role::Worker(n) => n.is_done(),
        }
    }
}

/// Everything that determines a distributed run apart from the transport.
#[derive(Clone, Debug)]
pub struct ClusterSpec {
    pub problem: Arc<Problem>,
    pub partition: Partitioning,
    pub algorithm: Algorithm,
    pub hyper: HyperParams,
    pub seed: u64,
    pub stopping: StoppingRule,
    /// Starting point; zeros when unset.
    pub initial: Option<ParamVector>,
    pub cost: CostModel,
}

impl ClusterSpec {
    pub fn new(
        problem: Arc<Problem>,
        partition: Partitioning,
        algorithm: Algorithm,
        hyper: HyperParams,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            partition,
            algorithm,
            hyper,
            seed,
            stopping: StoppingRule::FixedStages,
            initial: None,
            cost: CostModel::Modeled { per_gradient: 1e-6 },
        }
    }

    pub fn stopping(mut self, rule: StoppingRule) -> Self {
        self.stopping = rule;
        self
    }

    pub fn initial(mut self, w: ParamVector) -> Self {
        self.initial = Some(w);
        self
    }

    pub fn cost(mut self, cost: CostModel) -> Self {
        self.cost = cost;
        self
    }

    fn check(&self) -> Result<()> {
        self.hyper.validate().map_err(Error::Config)?;
        if !self.algorithm.is_distributed() {
            return Err(Error::Hyper(format!(
                "{} does not run on a cluster",
                self.algorithm
            )));
        }
        if self.partition.workers() != self.hyper.workers {
            return Err(Error::Hyper(format!(
                "partition has {} workers but hyper-parameters ask for {}",
                self.partition.workers(),
                self.hyper.workers
            )));
        }
        if self.partition.assignments().len() != self.problem.len() {
            return Err(Error::InvalidSize(
                "partition does not cover the data set".into(),
            ));
        }
        Ok(())
    }

    /// Every node id in the cluster, scheduler and server first.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids = vec![NodeId::Scheduler, NodeId::Server];
        ids.extend((0..self.hyper.workers as u32).map(NodeId::Worker));
        ids
    }

    pub fn build_role(&self, id: NodeId) -> Result<Role> {
        self.check()?;
        Ok(match id {
            NodeId::Scheduler => Role::Scheduler(Scheduler::new(
                self.hyper.clone(),
                self.partition.counts(),
                self.seed,
                self.stopping,
            )?),
            NodeId::Server => {
                let len = self.problem.param_len();
                let initial = self
                    .initial
                    .clone()
                    .unwrap_or_else(|| ParamVector::zeros(len));
                if initial.len() != len {
                    return Err(Error::LengthMismatch {
                        got: initial.len(),
                        expected: len,
                    });
                }
                Role::Server(Server::new(
                    initial,
                    self.algorithm.update_rule(&self.hyper, len)?,
                    self.algorithm.delay_bound(&self.hyper),
                    self.partition.weights().to_vec(),
                    self.hyper.tasks_per_stage,
                ))
            }
            NodeId::Worker(p) => {
                if p as usize >= self.hyper.workers {
                    return Err(Error::UnknownEndpoint(id));
                }
                let cfg = WorkerConfig {
                    eta: self.hyper.eta,
                    batch_size: self.hyper.batch_size,
                    tasks_per_stage: self.hyper.tasks_per_stage,
                    rule: self.algorithm.gradient_rule(),
                    cost: self.cost,
                    seed: self.seed,
                };
                Role::Worker(Worker::new(
                    p,
                    Arc::clone(&self.problem),
                    self.partition.subset(p as usize).to_vec(),
                    cfg,
                )?)
            }
        })
    }
}

/// Final state of a distributed run.
#[derive(Clone, Debug, Default)]
pub struct ClusterOutcome {
    pub records: Vec<ProgressRecord>,
    pub final_params: ParamVector,
    /// Server-side anchors, one per completed stage from stage 0.
    pub anchors: Vec<ParamVector>,
    pub worker_stats: Vec<WorkerStats>,
    /// Tasks in issue order with their worker.
    pub issued: Vec<(TaskId, u32)>,
    /// Handled-message log; empty for socket runs.
    pub trace: Vec<TraceEntry>,
    /// Simulated or wall-clock time of the last handled message.
    pub end_time: f64,
}

impl ClusterOutcome {
    fn collect(
        nodes: impl IntoIterator<Item = (NodeId, Role)>,
        trace: Vec<TraceEntry>,
        end_time: f64,
    ) -> Result<Self> {
        let mut out = ClusterOutcome {
            trace,
            end_time,
            ..Default::default()
        };
        let mut stats = Vec::new();
        for (id, role) in nodes {
            if !role.is_done() {
                return Err(Error::Stalled(format!("{id} did not finish")));
            }
            match role {
                Role::Scheduler(s) => {
                    out.issued = s.issued().to_vec();
                    out.records = s.into_records();
                }
                Role::Server(s) => {
                    out.final_params = s.params().clone();
                    out.anchors = s.anchors().to_vec();
                }
                Role::Worker(w) => stats.push((w.id(), w.stats().clone())),
            }
        }
        stats.sort_by_key(|(id, _)| *id);
        out.worker_stats = stats.into_iter().map(|(_, s)| s).collect();
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub latency: LatencyModel,
    /// Seed of the per-link latency streams.
    pub latency_seed: u64,
    pub record_trace: bool,
    pub max_events: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            latency: LatencyModel::zero(),
            latency_seed: 0,
            record_trace: false,
            max_events: 50_000_000,
        }
    }
}

/// Runs the cluster in the deterministic simulator. Identical inputs give
/// identical outcomes, traces included.
pub fn run_simulated(spec: &ClusterSpec, opts: &SimOptions) -> Result<ClusterOutcome> {
    opts.latency.validate().map_err(Error::Hyper)?;
    let mut sim = SimCluster::new(opts.latency.clone(), opts.latency_seed)
        .record_trace(opts.record_trace)
        .max_events(opts.max_events);
    for id in spec.node_ids() {
        sim.add_node(id, spec.build_role(id)?);
    }
    sim.start()?;
    let trace = sim.run_until_quiescent()?;
    let end = sim.now();
    ClusterOutcome::collect(sim.into_nodes(), trace, end)
}

/// Runs one role over TCP; the remaining roles are expected at `peers`.
pub fn run_socket_role(
    spec: &ClusterSpec,
    id: NodeId,
    listener: TcpListener,
    peers: &HashMap<NodeId, SocketAddr>,
    opts: &SocketOptions,
) -> Result<Role> {
    let role = spec.build_role(id)?;
    run_socket_node(id, role, listener, peers, opts)
}

/// Runs every role on its own thread, talking over loopback TCP.
pub fn run_sockets(spec: &ClusterSpec, opts: &SocketOptions) -> Result<ClusterOutcome> {
    let ids = spec.node_ids();
    let mut listeners = Vec::new();
    let mut peers = HashMap::new();
    for &id in &ids {
        let l = TcpListener::bind("127.0.0.1:0")?;
        peers.insert(id, l.local_addr()?);
        listeners.push((id, l));
    }
    let clock = std::time::Instant::now();
    let mut handles = Vec::new();
    for (id, listener) in listeners {
        let role = spec.build_role(id)?;
        let (peers, opts) = (peers.clone(), opts.clone());
        handles.push((
            id,
            thread::spawn(move || run_socket_node(id, role, listener, &peers, &opts)),
        ));
    }
    let mut nodes = Vec::new();
    let mut first_err = None;
    for (id, h) in handles {
        match h.join() {
            Ok(Ok(role)) => nodes.push((id, role)),
            Ok(Err(e)) => {
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(Error::Transport(format!("{id} panicked")));
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    ClusterOutcome::collect(nodes, Vec::new(), clock.elapsed().as_secs_f64())
}
