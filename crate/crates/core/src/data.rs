//! LibSVM ingestion and per-worker partitioning.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{LossKind, Problem, Sample, SparseVector, Target};

#[derive(Clone, Debug)]
pub struct LibsvmOptions {
    /// Overrides the dimension inferred from the largest feature index.
    pub dim: Option<usize>,
    pub kind: LossKind,
    pub lambda: f64,
}

impl Default for LibsvmOptions {
    fn default() -> Self {
        Self {
            dim: None,
            kind: LossKind::MulticlassLogistic,
            lambda: 0.0,
        }
    }
}

/// Loads a LibSVM file as a K-class logistic problem.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Problem> {
    load_libsvm_with(path, &LibsvmOptions::default())
}

pub fn load_libsvm_with(path: impl AsRef<Path>, opts: &LibsvmOptions) -> Result<Problem> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_libsvm(BufReader::new(file), &path.display().to_string(), opts)
}

/// Parses `<label> <idx>:<val> ...` lines. Indices are 1-based in the file and
/// 0-based in memory; labels are remapped to `0..K` in first-seen order, or
/// kept as real targets when `opts.kind` is quadratic.
pub fn read_libsvm(reader: impl BufRead, source: &str, opts: &LibsvmOptions) -> Result<Problem> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut label_names: Vec<String> = Vec::new();
    let mut samples = Vec::new();
    let mut max_dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected <idx>:<val>, got {tok:?}")))?;
            let idx: u32 = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "feature indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad feature value {val:?}")))?;
            indices.push(idx - 1);
            values.push(val);
        }
        let features = SparseVector::new(indices, values)
            .map_err(|_| parse_err(lineno, "feature indices must be strictly increasing".into()))?;
        max_dim = max_dim.max(features.min_dim());
        let target = if opts.kind == LossKind::Quadratic {
            Target::Value(
                label
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad target {label:?}")))?,
            )
        } else {
            let next = labels.len();
            let class = *labels.entry(label.to_string()).or_insert_with(|| {
                label_names.push(label.to_string());
                next
            });
            Target::Class(class)
        };
        samples.push(Sample { features, target });
    }

    if samples.is_empty() {
        return Err(parse_err(0, "file contains no samples".into()));
    }
    let dim = match opts.dim {
        Some(d) if d < max_dim => {
            return Err(parse_err(
                0,
                format!("--dim {d} is below the largest feature index {max_dim}"),
            ))
        }
        Some(d) => d,
        None => max_dim.max(1),
    };
    let (kind, k) = match opts.kind {
        LossKind::Quadratic => (LossKind::Quadratic, 1),
        LossKind::L2Logistic if label_names.len() <= 2 => (LossKind::L2Logistic, 2),
        LossKind::L2Logistic => {
            return Err(parse_err(
                0,
                format!("binary loss but {} distinct labels", label_names.len()),
            ))
        }
        LossKind::MulticlassLogistic => (LossKind::MulticlassLogistic, label_names.len()),
    };
    let mut problem = Problem::new(samples, kind, opts.lambda, k, dim)?;
    if kind != LossKind::Quadratic {
        while label_names.len() < k {
            label_names.push(label_names.len().to_string());
        }
        problem = problem.with_label_names(label_names);
    }
    Ok(problem)
}

/// Writes a problem in LibSVM format; class labels are written by name.
pub fn write_libsvm(problem: &Problem, mut out: impl Write) -> Result<()> {
    for s in problem.samples() {
        match s.target {
            Target::Class(c) => write!(out, "{}", problem.label_names()[c])?,
            Target::Value(v) => write!(out, "{v:?}")?,
        }
        for (i, v) in s.features.iter() {
            write!(out, " {}:{v:?}", i + 1)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_libsvm(problem: &Problem, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_libsvm(problem, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    Contiguous,
    Shuffled(u64),
}

/// Disjoint split of the sample indices across `P` workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Partitioning {
    assignments: Vec<u32>,
    subsets: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl Partitioning {
    pub fn workers(&self) -> usize {
        self.subsets.len()
    }

    /// Worker owning each sample.
    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    /// `D_p` in the order the worker iterates it.
    pub fn subset(&self, p: usize) -> &[usize] {
        &self.subsets[p]
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn counts(&self) -> Vec<usize> {
        self.subsets.iter().map(Vec::len).collect()
    }

    /// `q_p = n_p / N`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Splits `problem` across `workers`. Uneven remainders go to the lowest ids.
pub fn partition(
    problem: &Problem,
    workers: usize,
    strategy: PartitionStrategy,
) -> Result<Partitioning> {
    partition_indices(problem.len(), workers, strategy)
}

pub fn partition_indices(
    n: usize,
    workers: usize,
    strategy: PartitionStrategy,
) -> Result<Partitioning> {
    if workers == 0 {
        return Err(Error::InvalidSize("need at least one worker".into()));
    }
    if workers > n {
        return Err(Error::InvalidSize(format!(
            "{workers} workers for only {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let PartitionStrategy::Shuffled(seed) = strategy {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let base = n / workers;
    let extra = n % workers;
    let mut subsets = Vec::with_capacity(workers);
    let mut assignments = vec![0u32; n];
    let mut start = 0;
    for p in 0..workers {
        let len = base + usize::from(p < extra);
        let mut subset = order[start..start + len].to_vec();
        subset.sort_unstable();
        for &i in &subset {
            assignments[i] = p as u32;
        }
        subsets.push(subset);
        start += len;
    }
    let weights = subsets.iter().map(|s| s.len() as f64 / n as f64).collect();
    Ok(Partitioning {
        assignments,
        subsets,
        weights,
    })
}
