//! Deterministic discrete-event cluster.
//!
//! Every node is a single-server queue: a delivered message waits in the
//! node's inbox until the node is idle, the handler runs, and the node stays
//! busy for the reported compute time before its outgoing messages leave.
//! Each directed link draws latencies from its own seeded stream and never
//! reorders its own messages.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{Error, Result};
use crate::protocol::{Message, MessageKind, NodeId, TaskId};
use crate::transport::latency::{LatencyModel, LinkLatency};
use crate::transport::{Node, Reaction};

/// One handled message, in handling order.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// Position in handling order.
    pub index: u64,
    /// Index of the handled message whose reaction sent this one.
    pub cause: Option<u64>,
    pub from: NodeId,
    pub to: NodeId,
    pub sent_at: f64,
    pub delivered_at: f64,
    pub handled_at: f64,
    pub kind: MessageKind,
    pub task: Option<TaskId>,
    pub worker: Option<u32>,
    /// Hash of the vector payload bits, if the message carries one.
    pub digest: Option<u64>,
}

#[derive(Debug)]
struct Envelope {
    from: NodeId,
    to: NodeId,
    msg: Message,
    sent_at: f64,
    delivered_at: f64,
    cause: Option<u64>,
}

#[derive(Debug)]
enum EventKind {
    Arrival(Envelope),
    Wake(NodeId),
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct Slot<N> {
    node: N,
    inbox: VecDeque<Envelope>,
    busy_until: f64,
    wake_pending: bool,
}

struct Link {
    latency: LinkLatency,
    last_arrival: f64,
}

pub struct SimCluster<N> {
    nodes: BTreeMap<NodeId, Slot<N>>,
    queue: BinaryHeap<Reverse<Event>>,
    links: HashMap<(NodeId, NodeId), Link>,
    latency: LatencyModel,
    seed: u64,
    now: f64,
    seq: u64,
    handled: u64,
    events: u64,
    max_events: u64,
    record_trace: bool,
    trace: Vec<TraceEntry>,
}

impl<N: Node> SimCluster<N> {
    pub fn new(latency: LatencyModel, seed: u64) -> Self {
        Self {
            nodes: BTreeMap::new(),
            queue: BinaryHeap::new(),
            links: HashMap::new(),
            latency,
            seed,
            now: 0.0,
            seq: 0,
            handled: 0,
            events: 0,
            max_events: 50_000_000,
            record_trace: true,
            trace: Vec::new(),
        }
    }

    /// Upper bound on processed events before the run is declared a livelock.
    pub fn max_events(mut self, n: u64) -> Self {
        self.max_events = n;
        self
    }

    pub fn record_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    pub fn add_node(&mut self, id: NodeId, node: N) {
        self.nodes.insert(
            id,
            Slot {
                node,
                inbox: VecDeque::new(),
                busy_until: 0.0,
                wake_pending: false,
            },
        );
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn node(&self, id: NodeId) -> Option<&N> {
        self.nodes.get(&id).map(|s| &s.node)
    }

    pub fn into_nodes(self) -> BTreeMap<NodeId, N> {
        self.nodes.into_iter().map(|(id, s)| (id, s.node)).collect()
    }

    /// Sends `msg` from `from` at the current time.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Message) -> Result<()> {
        self.send_at(self.now, from, to, msg, None)
    }

    fn send_at(
        &mut self,
        at: f64,
        from: NodeId,
        to: NodeId,
        msg: Message,
        cause: Option<u64>,
    ) -> Result<()> {
        if !self.nodes.contains_key(&to) {
            return Err(Error::UnknownEndpoint(to));
        }
        let (latency, seed) = (&self.latency, self.seed);
        let link = self.links.entry((from, to)).or_insert_with(|| Link {
            latency: latency.link(seed, from, to),
            last_arrival: f64::NEG_INFINITY,
        });
        let arrival = (at + link.latency.sample()).max(link.last_arrival);
        link.last_arrival = arrival;
        let env = Envelope {
            from,
            to,
            msg,
            sent_at: at,
            delivered_at: arrival,
            cause,
        };
        self.push(arrival, EventKind::Arrival(env));
        Ok(())
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    /// Calls every node's `start` hook at time zero, in node-id order.
    pub fn start(&mut self) -> Result<()> {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let slot = self.nodes.get_mut(&id).expect("listed");
            let reaction = slot.node.start(self.now)?;
            slot.busy_until = self.now + reaction.busy;
            self.dispatch(id, reaction, None)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, from: NodeId, reaction: Reaction, cause: Option<u64>) -> Result<()> {
        let at = self.now + reaction.busy;
        for (to, msg) in reaction.outbox {
            self.send_at(at, from, to, msg, cause)?;
        }
        Ok(())
    }

    /// Processes events until none remain. Returns the entries handled during
    /// this call, in handling order.
    pub fn run_until_quiescent(&mut self) -> Result<Vec<TraceEntry>> {
        while let Some(Reverse(event)) = self.queue.pop() {
            self.events += 1;
            if self.events > self.max_events {
                return Err(Error::Livelock(self.max_events));
            }
            self.now = event.time;
            match event.kind {
                EventKind::Arrival(env) => {
                    let slot = self.nodes.get_mut(&env.to).expect("checked on send");
                    let to = env.to;
                    slot.inbox.push_back(env);
                    if !slot.wake_pending {
                        slot.wake_pending = true;
                        let at = slot.busy_until.max(self.now);
                        self.push(at, EventKind::Wake(to));
                    }
                }
                EventKind::Wake(id) => self.wake(id)?,
            }
        }
        Ok(std::mem::take(&mut self.trace))
    }

    fn wake(&mut self, id: NodeId) -> Result<()> {
        let now = self.now;
        let slot = self.nodes.get_mut(&id).expect("registered");
        let Some(env) = slot.inbox.pop_front() else {
            slot.wake_pending = false;
            return Ok(());
        };
        let index = self.handled;
        self.handled += 1;
        if self.record_trace {
            self.trace.push(TraceEntry {
                index,
                cause: env.cause,
                from: env.from,
                to: env.to,
                sent_at: env.sent_at,
                delivered_at: env.delivered_at,
                handled_at: now,
                kind: env.msg.kind(),
                task: env.msg.task(),
                worker: env.msg.worker(),
                digest: env.msg.payload().map(digest),
            });
        }
        let reaction = slot.node.handle(now, env.from, env.msg)?;
        slot.busy_until = now + reaction.busy;
        if slot.inbox.is_empty() {
            slot.wake_pending = false;
        } else {
            let at = slot.busy_until;
            self.push(at, EventKind::Wake(id));
        }
        self.dispatch(id, reaction, Some(index))
    }
}

fn digest(v: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Control, TaskId};

    /// Records what it receives; optionally echoes to a peer.
    struct Probe {
        seen: Vec<(f64, NodeId, Message)>,
        echo: Option<NodeId>,
        cost: f64,
    }

    impl Probe {
        fn new() -> Self {
            Self {
                seen: Vec::new(),
                echo: None,
                cost: 0.0,
            }
        }
    }

    impl Node for Probe {
        fn handle(&mut self, now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
            self.seen.push((now, from, msg.clone()));
            let mut r = Reaction {
                busy: self.cost,
                ..Reaction::idle()
            };
            if let Some(peer) = self.echo {
                if !matches!(msg, Message::Control(Control::Stop)) {
                    r.send(peer, Message::Control(Control::Stop));
                }
            }
            Ok(r)
        }
        fn is_done(&self) -> bool {
            false
        }
    }

    fn cluster(latency: LatencyModel) -> SimCluster<Probe> {
        let mut sim = SimCluster::new(latency, 7);
        sim.add_node(NodeId::Server, Probe::new());
        sim.add_node(NodeId::Worker(0), Probe::new());
        sim
    }

    #[test]
    fn empty_queue_gives_empty_trace() {
        let mut sim = cluster(LatencyModel::Constant(1.0));
        assert!(sim.run_until_quiescent().unwrap().is_empty());
    }

    #[test]
    fn constant_latency_delivery_time() {
        let mut sim = cluster(LatencyModel::Constant(1.0));
        sim.now = 5.0;
        sim.send(
            NodeId::Server,
            NodeId::Worker(0),
            Message::AssignTask(TaskId::update(1)),
        )
        .unwrap();
        let trace = sim.run_until_quiescent().unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].delivered_at, 6.0);
        assert_eq!(sim.node(NodeId::Worker(0)).unwrap().seen[0].0, 6.0);
    }

    #[test]
    fn per_link_fifo_under_random_latency() {
        let mut sim = cluster(LatencyModel::Uniform { lo: 0.0, hi: 10.0 });
        for t in 1..=200 {
            sim.send(
                NodeId::Server,
                NodeId::Worker(0),
                Message::AssignTask(TaskId::update(t)),
            )
            .unwrap();
        }
        sim.run_until_quiescent().unwrap();
        let got: Vec<u64> = sim
            .node(NodeId::Worker(0))
            .unwrap()
            .seen
            .iter()
            .map(|(_, _, m)| m.task().unwrap().timestamp)
            .collect();
        assert_eq!(got, (1..=200).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_endpoint() {
        let mut sim = cluster(LatencyModel::zero());
        assert!(matches!(
            sim.send(
                NodeId::Server,
                NodeId::Worker(9),
                Message::Control(Control::Stop)
            ),
            Err(Error::UnknownEndpoint(NodeId::Worker(9)))
        ));
    }

    #[test]
    fn livelock_bound() {
        // two nodes bouncing assignments forever
        struct PingPong;
        impl Node for PingPong {
            fn handle(&mut self, _now: f64, from: NodeId, msg: Message) -> Result<Reaction> {
                let mut r = Reaction::idle();
                r.send(from, msg);
                Ok(r)
            }
            fn is_done(&self) -> bool {
                false
            }
        }
        let mut sim = SimCluster::new(LatencyModel::Constant(1.0), 0).max_events(1000);
        sim.add_node(NodeId::Server, PingPong);
        sim.add_node(NodeId::Scheduler, PingPong);
        sim.send(
            NodeId::Scheduler,
            NodeId::Server,
            Message::Control(Control::Stop),
        )
        .unwrap();
        assert!(matches!(
            sim.run_until_quiescent(),
            Err(Error::Livelock(1000))
        ));
    }

    #[test]
    fn busy_node_defers_processing_and_sends() {
        let mut sim = SimCluster::new(LatencyModel::Constant(1.0), 0);
        let mut server = Probe::new();
        server.cost = 3.0;
        server.echo = Some(NodeId::Worker(0));
        sim.add_node(NodeId::Server, server);
        sim.add_node(NodeId::Worker(0), Probe::new());
        sim.send(
            NodeId::Worker(0),
            NodeId::Server,
            Message::AssignTask(TaskId::update(1)),
        )
        .unwrap();
        sim.send(
            NodeId::Worker(0),
            NodeId::Server,
            Message::AssignTask(TaskId::update(2)),
        )
        .unwrap();
        let trace = sim.run_until_quiescent().unwrap();
        // second message is handled only after the 3-tick busy period
        let handled: Vec<f64> = trace
            .iter()
            .filter(|e| e.to == NodeId::Server)
            .map(|e| e.handled_at)
            .collect();
        assert_eq!(handled, [1.0, 4.0]);
        // echoes leave after the busy period: 1+3+1 and 4+3+1
        let echoes: Vec<f64> = trace
            .iter()
            .filter(|e| e.to == NodeId::Worker(0))
            .map(|e| e.delivered_at)
            .collect();
        assert_eq!(echoes, [5.0, 8.0]);
        assert_eq!(
            trace
                .iter()
                .filter(|e| e.to == NodeId::Worker(0))
                .map(|e| e.cause)
                .collect::<Vec<_>>(),
            [Some(0), Some(1)]
        );
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut sim = SimCluster::new(LatencyModel::Exponential { mean: 2.0 }, 42);
            let mut a = Probe::new();
            a.echo = Some(NodeId::Worker(0));
            sim.add_node(NodeId::Server, a);
            sim.add_node(NodeId::Worker(0), Probe::new());
            for t in 1..50 {
                sim.send(
                    NodeId::Scheduler,
                    NodeId::Server,
                    Message::AssignTask(TaskId::update(t)),
                )
                .unwrap();
            }
            sim.add_node(NodeId::Scheduler, Probe::new());
            sim.run_until_quiescent().unwrap()
        };
        assert_eq!(run(), run());
    }
}
