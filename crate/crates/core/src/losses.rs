//! Finite-sum objectives `F(w) = (1/N) Σ fᵢ(w)` and their per-sample gradients.
//!
//! Three losses are supported: K-class softmax regression, binary logistic
//! regression, and least squares. An optional ridge term `λ‖w‖²/2` is folded
//! into every `fᵢ`, so the finite-sum form is preserved and each `fᵢ` keeps
//! its own smoothness constant.
//!
//! Multiclass parameters are stored class-major: block `k` of a `ParamVector`
//! holds `w_k` at `[k·d, (k+1)·d)`.

use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Sparse feature vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidSize(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSize(
                "feature indices must be strictly increasing".into(),
            ));
        }
        Ok(Self { indices, values })
    }

    /// Stores every coordinate, zeros included.
    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            indices: (0..values.len() as u32).collect(),
            values: values.to_vec(),
        }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest stored index.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn axpy_into(&self, alpha: f64, out: &mut [f64]) {
        for (i, v) in self.iter() {
            out[i] += alpha * v;
        }
    }
}

/// What a sample is regressed onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: SparseVector,
    pub target: Target,
}

/// Dense model parameter exchanged between server and workers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `‖self − other‖²`
    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `self − alpha·dir`, evaluated elementwise as `a − alpha * d`.
    pub fn step(&self, alpha: f64, dir: &[f64]) -> Self {
        Self(self.0.iter().zip(dir).map(|(a, d)| a - alpha * d).collect())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// Softmax cross-entropy over K classes; parameters are K·d.
    MulticlassLogistic,
    /// Binary logistic loss with labels {0,1} mapped to {−1,+1}.
    L2Logistic,
    /// `½(aᵢᵀw − bᵢ)²`
    Quadratic,
}

/// Smoothness and strong-convexity constants of a problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    /// Strong convexity of `F`.
    pub mu: f64,
    /// Smoothness of `F` (max curvature for quadratics, an upper bound otherwise).
    pub l: f64,
    /// Upper bound on the per-sample smoothness `max Lᵢ`.
    pub l_sample_max: f64,
    /// Whether `mu` and `l` are exact rather than bounds.
    pub exact: bool,
}

/// An immutable finite-sum problem.
#[derive(Clone, Debug)]
pub struct Problem {
    samples: Vec<Sample>,
    kind: LossKind,
    lambda: f64,
    num_classes: usize,
    dim: usize,
    curvature: Curvature,
    label_names: Vec<String>,
}

impl Problem {
    /// Builds a problem and derives its curvature constants. For quadratics the
    /// constants come from an eigendecomposition of the Hessian; for logistic
    /// kinds they are the standard bounds `μ = λ`, `L = λ + c·maxᵢ‖xᵢ‖²`.
    pub fn new(
        samples: Vec<Sample>,
        kind: LossKind,
        lambda: f64,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self> {
        let mut p = Self::unchecked(samples, kind, lambda, num_classes, dim)?;
        p.curvature = match kind {
            LossKind::Quadratic => {
                let h = p.quadratic_hessian();
                let eig = h.symmetric_eigen();
                let mu = eig.eigenvalues.min();
                let l = eig.eigenvalues.max();
                Curvature {
                    mu,
                    l,
                    l_sample_max: p.max_feature_norm_sq() + lambda,
                    exact: true,
                }
            }
            _ => p.logistic_bounds(),
        };
        Ok(p)
    }

    fn unchecked(
        samples: Vec<Sample>,
        kind: LossKind,
        lambda: f64,
        num_classes: usize,
        dim: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSize(
                "problem needs at least one sample".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::InvalidSize("feature dimension must be ≥ 1".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidSize(format!(
                "regularizer {lambda} must be ≥ 0"
            )));
        }
        let k = match kind {
            LossKind::MulticlassLogistic => num_classes,
            LossKind::L2Logistic => 2,
            LossKind::Quadratic => 1,
        };
        if k == 0 {
            return Err(Error::InvalidSize("num_classes must be ≥ 1".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.min_dim() > dim {
                return Err(Error::InvalidSize(format!(
                    "sample {i} has feature index beyond dimension {dim}"
                )));
            }
            match (kind, s.target) {
                (LossKind::Quadratic, Target::Value(_)) => {}
                (LossKind::Quadratic, Target::Class(_)) => {
                    return Err(Error::InvalidSize(format!(
                        "sample {i}: quadratic loss needs a real target"
                    )))
                }
                (_, Target::Class(c)) if c < k => {}
                _ => {
                    return Err(Error::InvalidSize(format!(
                        "sample {i}: label out of range for {k} classes"
                    )))
                }
            }
        }
        let label_names = (0..k).map(|c| c.to_string()).collect();
        Ok(Self {
            samples,
            kind,
            lambda,
            num_classes: k,
            dim,
            curvature: Curvature {
                mu: lambda,
                l: lambda,
                l_sample_max: lambda,
                exact: false,
            },
            label_names,
        })
    }

    fn logistic_bounds(&self) -> Curvature {
        let c = match self.kind {
            LossKind::L2Logistic => 0.25,
            _ => 0.5,
        };
        let l = self.lambda + c * self.max_feature_norm_sq();
        Curvature {
            mu: self.lambda,
            l,
            l_sample_max: l,
            exact: false,
        }
    }

    fn max_feature_norm_sq(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.features.norm_sq())
            .fold(0.0, f64::max)
    }

    fn quadratic_hessian(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut h = DMatrix::<f64>::zeros(d, d);
        for s in &self.samples {
            for (i, vi) in s.features.iter() {
                for (j, vj) in s.features.iter() {
                    h[(i, j)] += vi * vj;
                }
            }
        }
        h /= self.samples.len() as f64;
        for i in 0..d {
            h[(i, i)] += self.lambda;
        }
        h
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Self {
        debug_assert_eq!(names.len(), self.num_classes);
        self.label_names = names;
        self
    }

    /// Length of a parameter vector for this problem.
    pub fn param_len(&self) -> usize {
        match self.kind {
            LossKind::MulticlassLogistic => self.num_classes * self.dim,
            _ => self.dim,
        }
    }

    fn check_params(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.param_len() {
            return Err(Error::LengthMismatch {
                got: w.len(),
                expected: self.param_len(),
            });
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.samples.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.samples.len(),
            });
        }
        Ok(())
    }

    /// `∇fᵢ(w)`, regularizer included.
    pub fn sample_gradient(&self, w: &[f64], i: usize) -> Result<ParamVector> {
        self.check_params(w)?;
        self.check_index(i)?;
        let mut out = vec![0.0; w.len()];
        self.write_sample_gradient(w, i, &mut out);
        Ok(out.into())
    }

    /// Overwrites `out` with `∇fᵢ(w)`. This is the single code path every
    /// gradient in the crate goes through.
    pub(crate) fn write_sample_gradient(&self, w: &[f64], i: usize, out: &mut [f64]) {
        let s = &self.samples[i];
        if self.lambda == 0.0 {
            out.fill(0.0);
        } else {
            for (o, wj) in out.iter_mut().zip(w) {
                *o = self.lambda * wj;
            }
        }
        match (self.kind, s.target) {
            (LossKind::Quadratic, Target::Value(b)) => {
                let r = s.features.dot(w) - b;
                s.features.axpy_into(r, out);
            }
            (LossKind::L2Logistic, Target::Class(c)) => {
                let y = if c == 1 { 1.0 } else { -1.0 };
                let z = y * s.features.dot(w);
                // d/dz log(1 + e^{−z}) = −σ(−z)
                let coef = -y * sigmoid(-z);
                s.features.axpy_into(coef, out);
            }
            (LossKind::MulticlassLogistic, Target::Class(c)) => {
                let d = self.dim;
                let probs = softmax(&self.logits(w, &s.features));
                for (k, p) in probs.iter().enumerate() {
                    let coef = p - if k == c { 1.0 } else { 0.0 };
                    s.features.axpy_into(coef, &mut out[k * d..(k + 1) * d]);
                }
            }
            _ => unreachable!("target validated at construction"),
        }
    }

    /// `fᵢ(w)` without the regularizer.
    fn data_loss(&self, w: &[f64], i: usize) -> f64 {
        let s = &self.samples[i];
        match (self.kind, s.target) {
            (LossKind::Quadratic, Target::Value(b)) => {
                let r = s.features.dot(w) - b;
                0.5 * r * r
            }
            (LossKind::L2Logistic, Target::Class(c)) => {
                let y = if c == 1 { 1.0 } else { -1.0 };
                softplus(-y * s.features.dot(w))
            }
            (LossKind::MulticlassLogistic, Target::Class(c)) => {
                let z = self.logits(w, &s.features);
                log_sum_exp(&z) - z[c]
            }
            _ => unreachable!("target validated at construction"),
        }
    }

    fn logits(&self, w: &[f64], x: &SparseVector) -> Vec<f64> {
        let d = self.dim;
        (0..self.num_classes)
            .map(|k| x.dot(&w[k * d..(k + 1) * d]))
            .collect()
    }

    fn reg_term(&self, w: &[f64]) -> f64 {
        if self.lambda == 0.0 {
            0.0
        } else {
            0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
        }
    }

    /// `fᵢ(w)`, regularizer included.
    pub fn sample_loss(&self, w: &[f64], i: usize) -> Result<f64> {
        self.check_params(w)?;
        self.check_index(i)?;
        Ok(self.data_loss(w, i) + self.reg_term(w))
    }

    /// `Σ_{i ∈ indices} fᵢ(w)`, summed in slice order.
    pub fn loss_sum(&self, w: &[f64], indices: &[usize]) -> Result<f64> {
        self.check_params(w)?;
        let reg = self.reg_term(w);
        let mut total = 0.0;
        for &i in indices {
            self.check_index(i)?;
            total += self.data_loss(w, i) + reg;
        }
        Ok(total)
    }

    /// Mean of `∇fᵢ(w)` over `indices`: per-sample gradients are accumulated
    /// in slice order, then divided by the count.
    pub fn mean_gradient(&self, w: &[f64], indices: &[usize]) -> Result<ParamVector> {
        self.check_params(w)?;
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut acc = vec![0.0; w.len()];
        let mut g = vec![0.0; w.len()];
        for &i in indices {
            self.check_index(i)?;
            self.write_sample_gradient(w, i, &mut g);
            for (a, gj) in acc.iter_mut().zip(&g) {
                *a += gj;
            }
        }
        let n = indices.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Ok(acc.into())
    }

    /// `∇F(w)`: the index-ordered mean of all sample gradients.
    pub fn full_gradient(&self, w: &[f64]) -> Result<ParamVector> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.mean_gradient(w, &all)
    }

    /// `F(w)`.
    pub fn objective(&self, w: &[f64]) -> Result<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.loss_sum(w, &all)? / self.len() as f64)
    }

    /// Minimizer of `F`. Quadratics are solved directly through the normal
    /// equations; logistic kinds use restarted accelerated gradient descent
    /// until `‖∇F‖ ≤ grad_tol` or the iteration budget runs out.
    pub fn solve_optimum(&self, grad_tol: f64, max_iters: usize) -> Result<ParamVector> {
        match self.kind {
            LossKind::Quadratic => {
                let h = self.quadratic_hessian();
                let mut rhs = DVector::<f64>::zeros(self.dim);
                for s in &self.samples {
                    if let Target::Value(b) = s.target {
                        for (i, v) in s.features.iter() {
                            rhs[i] += b * v;
                        }
                    }
                }
                rhs /= self.len() as f64;
                let chol = h.cholesky().ok_or_else(|| {
                    Error::InvalidSize("quadratic Hessian is not positive definite".into())
                })?;
                Ok(chol.solve(&rhs).as_slice().to_vec().into())
            }
            _ => self.accelerated_descent(grad_tol, max_iters),
        }
    }

    fn accelerated_descent(&self, grad_tol: f64, max_iters: usize) -> Result<ParamVector> {
        let step = 1.0 / self.curvature.l.max(f64::MIN_POSITIVE);
        let mut x = ParamVector::zeros(self.param_len());
        let mut y = x.clone();
        let mut t = 1.0_f64;
        for _ in 0..max_iters {
            let g = self.full_gradient(&y)?;
            if g.norm() <= grad_tol {
                return Ok(y);
            }
            let x_next = y.step(step, &g);
            let moved: Vec<f64> = x_next.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            // gradient restart; function values are too noisy near the optimum
            if g.dot(&moved) > 0.0 {
                t = 1.0;
                y = x.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = x_next
                .iter()
                .zip(&moved)
                .map(|(a, d)| a + beta * d)
                .collect::<Vec<_>>()
                .into();
            x = x_next;
            t = t_next;
        }
        Ok(x)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Recipe for a reproducible synthetic problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: LossKind,
    pub n: usize,
    pub d: usize,
    /// Number of classes (multiclass only).
    pub k: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Hessian eigenvalue range for quadratics, before adding `lambda`.
    pub spectrum: (f64, f64),
    /// Standard deviation of the target noise for quadratics.
    pub noise: f64,
    /// Standard deviation of the generating weights for logistic kinds.
    pub weight_scale: f64,
    /// Quadratics only: give every row this norm instead of prescribing the
    /// spectrum, so each sample is exactly `row_norm² + lambda` smooth.
    pub row_norm: Option<f64>,
}

impl SyntheticSpec {
    pub fn new(kind: LossKind, n: usize, d: usize) -> Self {
        Self {
            kind,
            n,
            d,
            k: if kind == LossKind::MulticlassLogistic {
                3
            } else {
                2
            },
            lambda: 0.0,
            seed: 0,
            spectrum: (1.0, 10.0),
            noise: 0.1,
            weight_scale: 2.0,
            row_norm: None,
        }
    }

    pub fn classes(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn spectrum(mut self, lo: f64, hi: f64) -> Self {
        self.spectrum = (lo, hi);
        self
    }

    pub fn noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn row_norm(mut self, r: f64) -> Self {
        self.row_norm = Some(r);
        self
    }
}

/// Generates a problem from `spec`. The same spec always yields the same problem.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Problem> {
    let SyntheticSpec {
        kind,
        n,
        d,
        k,
        lambda,
        seed,
        ..
    } = *spec;
    if n == 0 || d == 0 || k == 0 {
        return Err(Error::InvalidSize(format!(
            "N={n}, d={d}, K={k} must all be ≥ 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LossKind::Quadratic => synthetic_quadratic(spec, &mut rng),
        LossKind::L2Logistic | LossKind::MulticlassLogistic => {
            let classes = if kind == LossKind::L2Logistic { 2 } else { k };
            let scale = spec.weight_scale;
            let truth: Vec<f64> = (0..classes * d).map(|_| scale * normal(&mut rng)).collect();
            let feat_sd = 1.0 / (d as f64).sqrt();
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..d).map(|_| feat_sd * normal(&mut rng)).collect();
                let label = if kind == LossKind::L2Logistic {
                    let z: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
                    usize::from(rng.random::<f64>() < sigmoid(z))
                } else {
                    let z: Vec<f64> = (0..classes)
                        .map(|c| {
                            x.iter()
                                .zip(&truth[c * d..(c + 1) * d])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    draw_categorical(&softmax(&z), rng.random::<f64>())
                };
                samples.push(Sample {
                    features: SparseVector::from_dense(&x),
                    target: Target::Class(label),
                });
            }
            let mut p = Problem::unchecked(samples, kind, lambda, classes, d)?;
            p.curvature = p.logistic_bounds();
            Ok(p)
        }
    }
}

fn synthetic_quadratic(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Problem> {
    let SyntheticSpec { n, d, lambda, .. } = *spec;
    if let Some(r) = spec.row_norm {
        return bounded_row_quadratic(spec, r, rng);
    }
    let (lo, hi) = spec.spectrum;
    if n < d {
        return Err(Error::InvalidSize(format!(
            "quadratic with a prescribed spectrum needs N ≥ d (N={n}, d={d})"
        )));
    }
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidSize(format!(
            "spectrum [{lo}, {hi}] must satisfy 0 < lo ≤ hi"
        )));
    }
    // A = √N · U · diag(√λ) · Vᵀ, so that AᵀA/N = V diag(λ) Vᵀ.
    let g = DMatrix::<f64>::from_fn(n, d, |_, _| normal(rng));
    let u = g.qr().q();
    let h = DMatrix::<f64>::from_fn(d, d, |_, _| normal(rng));
    let v = h.qr().q();
    let eig: Vec<f64> = (0..d)
        .map(|j| {
            if d == 1 {
                lo
            } else {
                lo + (hi - lo) * j as f64 / (d - 1) as f64
            }
        })
        .collect();
    let scale = DMatrix::<f64>::from_diagonal(&DVector::from_iterator(
        d,
        eig.iter().map(|e| e.sqrt() * (n as f64).sqrt()),
    ));
    let a = u * scale * v.transpose();
    let truth: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|j| a[(i, j)]).collect();
        let b: f64 =
            row.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + spec.noise * normal(rng);
        samples.push(Sample {
            features: SparseVector::from_dense(&row),
            target: Target::Value(b),
        });
    }
    let mut p = Problem::unchecked(samples, LossKind::Quadratic, lambda, 1, d)?;
    p.curvature = Curvature {
        mu: eig[0] + lambda,
        l: eig[d - 1] + lambda,
        l_sample_max: p.max_feature_norm_sq() + lambda,
        exact: true,
    };
    Ok(p)
}

/// Rows of norm `r` drawn from an anisotropic Gaussian whose last coordinate
/// is zero, so the smallest Hessian eigenvalue is exactly `lambda`.
fn bounded_row_quadratic(spec: &SyntheticSpec, r: f64, rng: &mut ChaCha8Rng) -> Result<Problem> {
    let SyntheticSpec { n, d, lambda, .. } = *spec;
    let (lo, hi) = spec.spectrum;
    if d < 2 || !(r > 0.0 && r.is_finite()) || !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidSize(format!(
            "bounded rows need d ≥ 2, r > 0, 0 < lo ≤ hi (d={d}, r={r})"
        )));
    }
    let live = d - 1;
    let sd: Vec<f64> = (0..live)
        .map(|j| {
            if live == 1 {
                hi.sqrt()
            } else {
                (lo + (hi - lo) * j as f64 / (live - 1) as f64).sqrt()
            }
        })
        .collect();
    let truth: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = sd.iter().map(|s| s * normal(rng)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut row {
            *x *= r / norm;
        }
        row.push(0.0);
        let b: f64 =
            row.iter().zip(&truth).map(|(x, w)| x * w).sum::<f64>() + spec.noise * normal(rng);
        samples.push(Sample {
            features: SparseVector::from_dense(&row),
            target: Target::Value(b),
        });
    }
    Problem::new(samples, LossKind::Quadratic, lambda, 1, d)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(p: &Problem, w: &[f64], i: usize, h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|j| {
                let mut plus = w.to_vec();
                let mut minus = w.to_vec();
                plus[j] += h;
                minus[j] -= h;
                (p.sample_loss(&plus, i).unwrap() - p.sample_loss(&minus, i).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn multiclass_gradient_at_zero_is_uniform_softmax() {
        let p = make_synthetic(&SyntheticSpec::new(LossKind::MulticlassLogistic, 5, 4).classes(4))
            .unwrap();
        let w = vec![0.0; p.param_len()];
        for i in 0..p.len() {
            let g = p.sample_gradient(&w, i).unwrap();
            let s = &p.samples()[i];
            let Target::Class(y) = s.target else { panic!() };
            for k in 0..4 {
                let coef = 0.25 - if k == y { 1.0 } else { 0.0 };
                for (j, x) in s.features.iter() {
                    assert!((g[k * 4 + j] - coef * x).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn multiclass_objective_at_zero_is_log_k() {
        let p = make_synthetic(&SyntheticSpec::new(LossKind::MulticlassLogistic, 30, 6).classes(5))
            .unwrap();
        let f = p.objective(&vec![0.0; p.param_len()]).unwrap();
        assert!((f - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn quadratic_gradient_vanishes_on_zero_residual() {
        let features = SparseVector::new(vec![0, 2], vec![1.5, -2.0]).unwrap();
        let w = [1.0, 7.0, 0.25];
        let b = features.dot(&w);
        let p = Problem::new(
            vec![Sample {
                features,
                target: Target::Value(b),
            }],
            LossKind::Quadratic,
            0.0,
            1,
            3,
        )
        .unwrap();
        assert_eq!(&*p.sample_gradient(&w, 0).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn l2_logistic_single_sample_matches_finite_differences() {
        let features = SparseVector::new(vec![0, 1], vec![0.8, -1.3]).unwrap();
        let p = Problem::new(
            vec![Sample {
                features,
                target: Target::Class(1),
            }],
            LossKind::L2Logistic,
            0.1,
            2,
            2,
        )
        .unwrap();
        let w = [0.4, -0.7];
        let g = p.sample_gradient(&w, 0).unwrap();
        let fd = central_diff(&p, &w, 0, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        let specs = [
            SyntheticSpec::new(LossKind::Quadratic, 40, 5).lambda(0.05),
            SyntheticSpec::new(LossKind::L2Logistic, 40, 5).lambda(0.05),
            SyntheticSpec::new(LossKind::MulticlassLogistic, 40, 5)
                .classes(3)
                .lambda(0.05),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in &specs {
            let p = make_synthetic(spec).unwrap();
            for _ in 0..50 {
                let w: Vec<f64> = (0..p.param_len()).map(|_| normal(&mut rng)).collect();
                let i = rng.random_range(0..p.len());
                let g = p.sample_gradient(&w, i).unwrap();
                let fd = central_diff(&p, &w, i, 1e-5);
                let num: f64 = g
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().max(1e-12);
                assert!(
                    (num / den).sqrt() <= 1e-5,
                    "{:?}: rel err {}",
                    spec.kind,
                    (num / den).sqrt()
                );
            }
        }
    }

    #[test]
    fn full_gradient_is_index_ordered_mean() {
        let p =
            make_synthetic(&SyntheticSpec::new(LossKind::L2Logistic, 37, 4).lambda(0.01)).unwrap();
        let w = [0.3, -0.2, 0.9, 0.05];
        let mut acc = [0.0; 4];
        for i in 0..p.len() {
            let g = p.sample_gradient(&w, i).unwrap();
            for (a, b) in acc.iter_mut().zip(g.iter()) {
                *a += b;
            }
        }
        let expected: Vec<f64> = acc.iter().map(|a| a / 37.0).collect();
        assert_eq!(&*p.full_gradient(&w).unwrap(), expected.as_slice());
    }

    #[test]
    fn single_sample_full_gradient_equals_sample_gradient() {
        let features = SparseVector::from_dense(&[1.0, 2.0]);
        let p = Problem::new(
            vec![Sample {
                features,
                target: Target::Value(0.5),
            }],
            LossKind::Quadratic,
            0.0,
            1,
            2,
        )
        .unwrap();
        let w = [0.1, 0.2];
        assert_eq!(
            p.full_gradient(&w).unwrap(),
            p.sample_gradient(&w, 0).unwrap()
        );
    }

    #[test]
    fn errors_on_bad_index_and_non_finite_params() {
        let p = make_synthetic(&SyntheticSpec::new(LossKind::Quadratic, 10, 3)).unwrap();
        assert!(matches!(
            p.sample_gradient(&[0.0; 3], 10),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            p.sample_gradient(&[f64::NAN, 0.0, 0.0], 0),
            Err(Error::NonFinite)
        ));
        assert!(matches!(
            p.sample_gradient(&[0.0; 2], 0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn logistic_objective_is_stable_for_huge_logits() {
        let p = make_synthetic(&SyntheticSpec::new(LossKind::MulticlassLogistic, 20, 3).classes(3))
            .unwrap();
        let w = vec![1e6; p.param_len()];
        assert!(p.objective(&w).unwrap().is_finite());
        let p = make_synthetic(&SyntheticSpec::new(LossKind::L2Logistic, 20, 3)).unwrap();
        let w = vec![-1e6; 3];
        assert!(p.objective(&w).unwrap().is_finite());
    }

    #[test]
    fn synthetic_is_reproducible() {
        let spec = SyntheticSpec::new(LossKind::MulticlassLogistic, 50, 4).seed(9);
        let a = make_synthetic(&spec).unwrap();
        let b = make_synthetic(&spec).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = make_synthetic(&spec.clone().seed(10)).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn quadratic_records_prescribed_spectrum() {
        let p = make_synthetic(&SyntheticSpec::new(LossKind::Quadratic, 60, 6).spectrum(1.0, 10.0))
            .unwrap();
        let c = p.curvature();
        assert_eq!((c.mu, c.l), (1.0, 10.0));
        assert!(c.exact);
        // independent check through the Hessian eigenvalues
        let eig = p.quadratic_hessian().symmetric_eigen().eigenvalues;
        assert!((eig.min() - 1.0).abs() < 1e-9 && (eig.max() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn l2_logistic_mu_is_at_least_lambda() {
        let p =
            make_synthetic(&SyntheticSpec::new(LossKind::L2Logistic, 30, 3).lambda(0.01)).unwrap();
        assert!(p.curvature().mu >= 0.01);
        assert!(p.curvature().l > p.curvature().mu);
    }

    #[test]
    fn invalid_sizes_are_rejected() {
        assert!(make_synthetic(&SyntheticSpec::new(LossKind::L2Logistic, 0, 3)).is_err());
        assert!(make_synthetic(&SyntheticSpec::new(LossKind::L2Logistic, 3, 0)).is_err());
        assert!(
            make_synthetic(&SyntheticSpec::new(LossKind::MulticlassLogistic, 3, 2).classes(0))
                .is_err()
        );
        assert!(SparseVector::new(vec![2, 1], vec![1.0, 1.0]).is_err());
    }
}
