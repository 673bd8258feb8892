//! Variance-reduced gradients anchored at a stage snapshot.

use crate::error::{Error, Result};
use crate::losses::{ParamVector, Problem};

/// Stage anchor `(w̃, ∇F(w̃))`. Replaced wholesale between stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub anchor: ParamVector,
    pub anchor_grad: ParamVector,
    pub stage: u64,
}

impl Snapshot {
    /// Computes `∇F(anchor)` directly over the whole data set.
    pub fn new(problem: &Problem, anchor: ParamVector, stage: u64) -> Result<Self> {
        let anchor_grad = problem.full_gradient(&anchor)?;
        Ok(Self {
            anchor,
            anchor_grad,
            stage,
        })
    }

    /// Snapshot whose gradient was aggregated elsewhere (e.g. by the server).
    pub fn from_parts(anchor: ParamVector, anchor_grad: ParamVector, stage: u64) -> Self {
        Self {
            anchor,
            anchor_grad,
            stage,
        }
    }
}

/// `(1/B) Σ_{i∈batch} [∇fᵢ(w) − ∇fᵢ(w̃)] + ∇F(w̃)`
pub fn vr_gradient(
    problem: &Problem,
    w: &[f64],
    snapshot: &Snapshot,
    batch: &[usize],
) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let len = problem.param_len();
    for v in [w, &snapshot.anchor[..], &snapshot.anchor_grad[..]] {
        if v.len() != len {
            return Err(Error::LengthMismatch {
                got: v.len(),
                expected: len,
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
    }
    let mut acc = vec![0.0; len];
    let mut g_cur = vec![0.0; len];
    let mut g_anchor = vec![0.0; len];
    for &i in batch {
        if i >= problem.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: problem.len(),
            });
        }
        problem.write_sample_gradient(w, i, &mut g_cur);
        problem.write_sample_gradient(&snapshot.anchor, i, &mut g_anchor);
        for ((a, c), o) in acc.iter_mut().zip(&g_cur).zip(&g_anchor) {
            *a += c - o;
        }
    }
    let b = batch.len() as f64;
    for (a, g) in acc.iter_mut().zip(snapshot.anchor_grad.iter()) {
        *a = *a / b + g;
    }
    Ok(acc.into())
}

/// Mini-batch mean of plain sample gradients.
pub fn plain_gradient(problem: &Problem, w: &[f64], batch: &[usize]) -> Result<ParamVector> {
    problem.mean_gradient(w, batch)
}
