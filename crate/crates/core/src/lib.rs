//! Distributed asynchronous variance-reduced SGD.
//!
//! A scheduler hands out timestamped update and evaluation tasks, a parameter
//! server owns the iterate and gates pulls by a delay bound, and workers push
//! variance-reduced steps computed on their own data partition. The same
//! roles run inside a deterministic discrete-event simulator or over TCP.

pub mod baselines;
pub mod cluster;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod protocol;
pub mod scheduler;
pub mod server;
pub mod transport;
pub mod vrgrad;
pub mod worker;

pub use baselines::{serial_svrg, Algorithm};
pub use cluster::{run_simulated, run_sockets, ClusterOutcome, ClusterSpec, SimOptions};
pub use data::{load_libsvm, partition, PartitionStrategy, Partitioning};
pub use error::{Error, Result};
pub use harness::{run_experiment, sweep, ExperimentConfig};
pub use losses::{make_synthetic, LossKind, ParamVector, Problem, SyntheticSpec};
pub use scheduler::{compute_rate_gamma, ProgressRecord, StoppingRule};
pub use server::HyperParams;
pub use vrgrad::{plain_gradient, vr_gradient, Snapshot};
