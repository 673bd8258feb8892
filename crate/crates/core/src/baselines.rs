//! Reference algorithms: serial SVRG and the server-side rules of the
//! asynchronous baselines.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{ParamVector, Problem};
use crate::server::{DelayBound, HyperParams, UpdateRule};
use crate::vrgrad::{vr_gradient, Snapshot};
use crate::worker::{BatchSampler, GradientRule};

/// Staleness `s` of decaying SSP; the pull gate is `s·P` timestamps.
pub const SSP_STALENESS: u64 = 2;
/// Per-stage learning-rate factor of decaying SSP.
pub const SSP_DECAY: f64 = 0.95;
/// Initial Adagrad accumulator.
pub const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Hybrid update with the configured θ.
    DistrVrSgd,
    /// Hybrid update with θ = 0.
    DistrSvrg,
    /// Convex combination of plain mini-batch steps.
    Dpg,
    /// Convex combination of variance-reduced steps.
    VrDpg,
    /// Asynchronous Adagrad without a delay bound.
    DownpourAdagrad,
    /// Plain SGD under a stale-synchronous gate with a decaying rate.
    DecayingSsp,
    /// Single-process SVRG.
    SerialSvrg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::DistrVrSgd,
        Algorithm::DistrSvrg,
        Algorithm::Dpg,
        Algorithm::VrDpg,
        Algorithm::DownpourAdagrad,
        Algorithm::DecayingSsp,
        Algorithm::SerialSvrg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DistrVrSgd => "distr-vr-sgd",
            Algorithm::DistrSvrg => "distr-svrg",
            Algorithm::Dpg => "dpg",
            Algorithm::VrDpg => "vr-dpg",
            Algorithm::DownpourAdagrad => "downpour-adagrad",
            Algorithm::DecayingSsp => "decaying-ssp",
            Algorithm::SerialSvrg => "svrg",
        }
    }

    pub fn is_distributed(self) -> bool {
        self != Algorithm::SerialSvrg
    }

    pub fn gradient_rule(self) -> GradientRule {
        match self {
            Algorithm::DistrVrSgd
            | Algorithm::DistrSvrg
            | Algorithm::VrDpg
            | Algorithm::SerialSvrg => GradientRule::VarianceReduced,
            Algorithm::Dpg | Algorithm::DownpourAdagrad | Algorithm::DecayingSsp => {
                GradientRule::Plain
            }
        }
    }

    /// Server rule for this algorithm; `len` is the parameter length.
    pub fn update_rule(self, hyper: &HyperParams, len: usize) -> Result<UpdateRule> {
        Ok(match self {
            Algorithm::DistrVrSgd => UpdateRule::Hybrid {
                eta: hyper.eta,
                theta: hyper.theta,
            },
            Algorithm::DistrSvrg => UpdateRule::Hybrid {
                eta: hyper.eta,
                theta: 0.0,
            },
            Algorithm::Dpg | Algorithm::VrDpg => {
                if hyper.theta <= 0.0 {
                    return Err(Error::Hyper(format!(
                        "{} needs theta > 0; theta = 0 never moves w",
                        self.name()
                    )));
                }
                UpdateRule::ConvexCombination { theta: hyper.theta }
            }
            Algorithm::DownpourAdagrad => UpdateRule::Adagrad(AdagradState::new(len, hyper.eta)),
            Algorithm::DecayingSsp => {
                UpdateRule::DecayingSgd(DecayingRate::new(hyper.eta, SSP_DECAY))
            }
            Algorithm::SerialSvrg => return Err(Error::Hyper("serial SVRG has no server".into())),
        })
    }

    pub fn delay_bound(self, hyper: &HyperParams) -> DelayBound {
        match self {
            Algorithm::DownpourAdagrad => DelayBound::Unbounded,
            Algorithm::DecayingSsp => DelayBound::Bounded(SSP_STALENESS * hyper.workers as u64),
            _ => DelayBound::Bounded(hyper.tau),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let alg = match key.as_str() {
            "distr-vr-sgd" | "dvrsgd" => Algorithm::DistrVrSgd,
            "distr-svrg" | "dsvrg" => Algorithm::DistrSvrg,
            "dpg" => Algorithm::Dpg,
            "vr-dpg" | "vrdpg" => Algorithm::VrDpg,
            "downpour-adagrad" | "downpour" => Algorithm::DownpourAdagrad,
            "decaying-ssp" | "ssp" => Algorithm::DecayingSsp,
            "svrg" | "serial-svrg" => Algorithm::SerialSvrg,
            _ => {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                return Err(Error::Hyper(format!(
                    "unknown algorithm {s:?}; expected one of {}",
                    names.join(", ")
                )));
            }
        };
        Ok(alg)
    }
}

/// `(1−θ)w + θŵ`. Used with plain steps for DPG and with variance-reduced
/// steps for VR-DPG; θ = 1 returns `ŵ` exactly.
pub fn dpg_update(w: &[f64], w_hat: &[f64], theta: f64) -> ParamVector {
    if theta == 1.0 {
        return w_hat.to_vec().into();
    }
    w.iter()
        .zip(w_hat)
        .map(|(a, b)| (1.0 - theta) * a + theta * b)
        .collect::<Vec<_>>()
        .into()
}

/// Per-coordinate squared-gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    acc: Vec<f64>,
    eta: f64,
}

impl AdagradState {
    pub fn new(len: usize, eta: f64) -> Self {
        Self {
            acc: vec![ADAGRAD_EPS; len],
            eta,
        }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }

    /// `acc += g²`, then `w −= η g / √acc`.
    pub fn downpour_adagrad_update(&mut self, w: &mut [f64], grad: &[f64]) {
        for ((wj, aj), gj) in w.iter_mut().zip(&mut self.acc).zip(grad) {
            *aj += gj * gj;
            *wj -= self.eta * gj / aj.sqrt();
        }
    }
}

/// Learning rate that shrinks by a fixed factor per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayingRate {
    eta0: f64,
    decay: f64,
    epochs: u64,
}

impl DecayingRate {
    pub fn new(eta0: f64, decay: f64) -> Self {
        Self {
            eta0,
            decay,
            epochs: 0,
        }
    }

    /// `η₀ · decay^epochs`
    pub fn current(&self) -> f64 {
        self.eta0 * self.decay.powi(self.epochs as i32)
    }

    pub fn epochs(&self) -> u64 {
        self.epochs
    }

    pub fn end_epoch(&mut self) {
        self.epochs += 1;
    }
}

/// `w −= η_epoch · g`
pub fn decaying_ssp_update(w: &mut [f64], grad: &[f64], rate: &DecayingRate) {
    let eta = rate.current();
    for (wj, gj) in w.iter_mut().zip(grad) {
        *wj -= eta * gj;
    }
}

/// Which inner iterate becomes the next anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotChoice {
    /// `w^t` for `t` uniform in `{0, …, m−1}`.
    RandomIterate,
    /// `w^m`, as the distributed algorithms do.
    LastIterate,
}

#[derive(Clone, Debug)]
pub struct SerialSvrgConfig {
    pub eta: f64,
    pub tasks_per_stage: u64,
    pub stages: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub choice: SnapshotChoice,
}

/// Anchors and objective of a serial run, one entry per stage from stage 0.
#[derive(Clone, Debug, Default)]
pub struct SerialRun {
    pub anchors: Vec<ParamVector>,
    pub objectives: Vec<f64>,
    /// Cumulative per-sample gradient evaluations at each stage end.
    pub gradients: Vec<u64>,
}

/// Serial SVRG from `w = 0` with unit batches and a random inner iterate as
/// the next anchor. Returns the anchors of stages `0..=stages`.
pub fn serial_svrg(
    problem: &Problem,
    eta: f64,
    m: u64,
    stages: u64,
    seed: u64,
) -> Result<Vec<ParamVector>> {
    let cfg = SerialSvrgConfig {
        eta,
        tasks_per_stage: m,
        stages,
        batch_size: 1,
        seed,
        choice: SnapshotChoice::RandomIterate,
    };
    Ok(serial_svrg_with(problem, ParamVector::zeros(problem.param_len()), &cfg)?.anchors)
}

/// Batches are drawn exactly as worker 0 of a one-worker cluster draws them,
/// so `LastIterate` reproduces that cluster's anchors.
pub fn serial_svrg_with(
    problem: &Problem,
    initial: ParamVector,
    cfg: &SerialSvrgConfig,
) -> Result<SerialRun> {
    if !(cfg.eta > 0.0) {
        return Err(Error::Hyper(format!("need eta > 0 (got {})", cfg.eta)));
    }
    let all: Vec<usize> = (0..problem.len()).collect();
    let mut sampler = BatchSampler::new(cfg.seed, 0);
    let mut choice_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    choice_rng.set_stream(u64::MAX);
    let n = problem.len() as u64;
    let mut run = SerialRun::default();
    let mut grads = 0u64;

    let mut snap = Snapshot::new(problem, initial, 0)?;
    grads += n;
    run.objectives.push(problem.objective(&snap.anchor)?);
    run.anchors.push(snap.anchor.clone());
    run.gradients.push(grads);
    for stage in 1..=cfg.stages {
        let keep = match cfg.choice {
            SnapshotChoice::RandomIterate if cfg.tasks_per_stage > 0 => {
                choice_rng.random_range(0..cfg.tasks_per_stage)
            }
            SnapshotChoice::RandomIterate => 0,
            SnapshotChoice::LastIterate => cfg.tasks_per_stage,
        };
        let mut w = snap.anchor.clone();
        let mut kept = (keep == 0).then(|| w.clone());
        for t in 1..=cfg.tasks_per_stage {
            let batch = sampler.sample(&all, cfg.batch_size)?;
            let g = vr_gradient(problem, &w, &snap, &batch)?;
            grads += 2 * batch.len() as u64;
            w = w.step(cfg.eta, &g);
            if !w.is_finite() {
                return Err(Error::Diverged(crate::protocol::TaskId::update(
                    (stage - 1) * cfg.tasks_per_stage + t,
                )));
            }
            if t == keep {
                kept = Some(w.clone());
            }
        }
        snap = Snapshot::new(problem, kept.expect("keep ≤ m"), stage)?;
        grads += n;
        run.objectives.push(problem.objective(&snap.anchor)?);
        run.anchors.push(snap.anchor.clone());
        run.gradients.push(grads);
    }
    Ok(run)
}
