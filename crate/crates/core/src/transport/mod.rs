//! Message delivery between the scheduler, the server and the workers.
//!
//! Components are written as message handlers implementing [`Node`]; they
//! never touch sockets or clocks directly. [`sim::SimCluster`] runs them in a
//! deterministic discrete-event loop with modeled latency, and
//! [`socket::run_socket_node`] runs one of them over TCP.

pub mod latency;
pub mod sim;
pub mod socket;

pub use latency::LatencyModel;
pub use sim::{SimCluster, TraceEntry};
pub use socket::{run_socket_node, SocketOptions};

use crate::error::Result;
use crate::protocol::{Message, NodeId};

/// Outcome of handling one message.
#[derive(Debug, Default)]
pub struct Reaction {
    /// Messages to send once the handler finishes.
    pub outbox: Vec<(NodeId, Message)>,
    /// Time the node spent computing; outgoing messages leave after it.
    pub busy: f64,
}

impl Reaction {
    pub fn idle() -> Self {
        Self::default()
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.outbox.push((to, msg));
    }
}

/// A protocol participant driven by incoming messages.
pub trait Node {
    /// Called once before any message is delivered.
    fn start(&mut self, _now: f64) -> Result<Reaction> {
        Ok(Reaction::idle())
    }

    fn handle(&mut self, now: f64, from: NodeId, msg: Message) -> Result<Reaction>;

    /// True once the node will neither send nor expect further messages.
    fn is_done(&self) -> bool;
}
