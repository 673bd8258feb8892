use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::protocol::NodeId;

/// Per-message network delay.
#[derive(Clone, Debug, PartialEq)]
pub enum LatencyModel {
    Constant(f64),
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        mean: f64,
    },
    /// Delays replayed cyclically; each link starts at its own offset.
    Trace(Vec<f64>),
}

impl LatencyModel {
    pub fn zero() -> Self {
        LatencyModel::Constant(0.0)
    }

    /// Bursty trace mixing near-instant deliveries with long stalls, so that
    /// messages on different links overtake each other aggressively.
    pub fn adversarial_trace(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trace = Vec::with_capacity(len);
        while trace.len() < len {
            let burst = rng.random_range(1..=8);
            let (lo, hi) = match rng.random_range(0..3) {
                0 => (0.0, 0.01),
                1 => (0.5, 2.0),
                _ => (20.0, 200.0),
            };
            for _ in 0..burst {
                trace.push(rng.random_range(lo..=hi));
            }
        }
        trace.truncate(len);
        LatencyModel::Trace(trace)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            LatencyModel::Constant(c) => *c >= 0.0 && c.is_finite(),
            LatencyModel::Uniform { lo, hi } => *lo >= 0.0 && hi >= lo && hi.is_finite(),
            LatencyModel::Exponential { mean } => *mean > 0.0 && mean.is_finite(),
            LatencyModel::Trace(t) => !t.is_empty() && t.iter().all(|v| *v >= 0.0 && v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid latency model {self:?}"))
        }
    }

    /// Independent latency stream for the directed link `from → to`.
    pub fn link(&self, seed: u64, from: NodeId, to: NodeId) -> LinkLatency {
        let stream = (node_code(from) << 32) | node_code(to);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let cursor = match self {
            LatencyModel::Trace(t) => rng.random_range(0..t.len()),
            _ => 0,
        };
        LinkLatency {
            model: self.clone(),
            rng,
            cursor,
        }
    }
}

fn node_code(n: NodeId) -> u64 {
    match n {
        NodeId::Scheduler => 0,
        NodeId::Server => 1,
        NodeId::Worker(p) => 2 + u64::from(p),
    }
}

#[derive(Clone, Debug)]
pub struct LinkLatency {
    model: LatencyModel,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl LinkLatency {
    pub fn sample(&mut self) -> f64 {
        match &self.model {
            LatencyModel::Constant(c) => *c,
            LatencyModel::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    self.rng.random_range(*lo..*hi)
                }
            }
            LatencyModel::Exponential { mean } => Exp::new(1.0 / mean)
                .expect("validated mean")
                .sample(&mut self.rng),
            LatencyModel::Trace(t) => {
                let v = t[self.cursor % t.len()];
                self.cursor += 1;
                v
            }
        }
    }
}
