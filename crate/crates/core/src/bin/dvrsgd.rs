use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::error;

use dvrsgd::cluster::run_socket_role;
use dvrsgd::harness::{save_progress_csv, write_progress_csv, EndpointsSection, SweepAxis};
use dvrsgd::protocol::NodeId;
use dvrsgd::{sweep, Error, ExperimentConfig, Result};

#[derive(Parser)]
#[command(
    name = "dvrsgd",
    about = "Run distributed variance-reduced SGD experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its per-stage progress CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Algorithm: dvrsgd, dsvrg, dpg, vrdpg, downpour, ssp or svrg.
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; stdout when neither this nor the config sets one.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Feature dimension for LibSVM input.
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Run the experiment once per value of one hyper-parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of workers, tau, theta, eta.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Suboptimality counted as reaching the target.
        #[arg(long, default_value_t = 1e-4)]
        target: f64,
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Run a single role of a socket cluster whose endpoints the config lists.
    Node {
        #[arg(long)]
        config: PathBuf,
        /// scheduler, server or worker:N
        #[arg(long)]
        role: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        /// Progress CSV written by the scheduler role.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(
    config: &PathBuf,
    algo: Option<String>,
    seed: Option<u64>,
    dim: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(a) = algo {
        cfg.experiment.algo = a;
    }
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    if dim.is_some() {
        cfg.problem.dim = dim;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(endpoints: &EndpointsSection, id: NodeId) -> Result<SocketAddr> {
    let text = endpoints.resolve(id).ok_or_else(|| {
        Error::Config(vec![format!(
            "no endpoint for {id}; set it in [endpoints] or {}",
            EndpointsSection::env_var(id)
        )])
    })?;
    text.to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::Config(vec![format!("endpoint {text:?} for {id} does not resolve")]))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            algo,
            seed,
            out,
            dim,
        } => {
            let cfg = load(&config, algo, seed, dim)?;
            let records = dvrsgd::run_experiment(&cfg)?;
            match out.or(cfg.experiment.out.clone()) {
                Some(path) => save_progress_csv(&records, path),
                None => write_progress_csv(&records, std::io::stdout().lock()),
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            target,
            out_dir,
            algo,
            seed,
            dim,
        } => {
            let cfg = load(&config, algo, seed, dim)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = sweep(&cfg, axis, &values, target, Some(&out_dir))?;
            for r in rows {
                let reached = r
                    .stages_to_target
                    .map_or("-".to_string(), |s| s.to_string());
                println!(
                    "{}={}: stages_to_target={reached} total_time={}",
                    axis.name(),
                    r.value,
                    r.total_time
                );
            }
            Ok(())
        }
        Command::Node {
            config,
            role,
            seed,
            dim,
            out,
        } => {
            let cfg = load(&config, None, seed, dim)?;
            let id: NodeId = role.parse().map_err(|e: String| Error::Config(vec![e]))?;
            let problem = Arc::new(cfg.build_problem()?);
            let mut spec = cfg.cluster_spec(problem)?;
            spec.cost = dvrsgd::worker::CostModel::Measured;
            let mut peers = HashMap::new();
            for peer in spec.node_ids() {
                peers.insert(peer, resolve(&cfg.endpoints, peer)?);
            }
            let listener = TcpListener::bind(peers[&id])?;
            let finished =
                run_socket_role(&spec, id, listener, &peers, &cfg.transport.socket_options())?;
            if let dvrsgd::cluster::Role::Scheduler(s) = finished {
                match out.or(cfg.experiment.out.clone()) {
                    Some(path) => save_progress_csv(s.records(), path)?,
                    None => write_progress_csv(s.records(), std::io::stdout().lock())?,
                }
            }
            Ok(())
        }
    }
}
