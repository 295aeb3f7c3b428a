//! Sampled signals and the weighted norms used to compare them.
//!
//! A [`Trajectory`] is a signal sampled on a strictly increasing time grid that starts at zero.
//! Continuous-time suprema are approximated by maxima over the grid; two trajectories can only be
//! compared when their grids are identical, so no interpolation ever enters a deviation estimate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("trajectory needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("times and states differ in length ({times} vs {states})")]
    LengthMismatch { times: usize, states: usize },
    #[error("trajectory must start at t = 0, starts at {0}")]
    NonZeroStart(f64),
    #[error("timestamps must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("state {index} has dimension {found}, expected {expected}")]
    RaggedStates { index: usize, expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("trajectories are sampled on different time grids (first difference at index {0})")]
    GridMismatch(usize),
    #[error("norm weights must be finite and non-negative with at least one positive entry")]
    InvalidWeights,
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// A signal sampled on `[0, t_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self, SignalError> {
        if times.len() != states.len() {
            return Err(SignalError::LengthMismatch { times: times.len(), states: states.len() });
        }
        if times.len() < 2 {
            return Err(SignalError::TooShort(times.len()));
        }
        if times[0] != 0.0 {
            return Err(SignalError::NonZeroStart(times[0]));
        }
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(SignalError::NotIncreasing(i + 1));
            }
        }
        let dim = states[0].len();
        if let Some((index, s)) = states.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(SignalError::RaggedStates { index, expected: dim, found: s.len() });
        }
        Ok(Self { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// Always false; a trajectory holds at least two samples.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty by construction")
    }

    /// Iterates `(t, x(t))` pairs.
    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.states.iter().map(Vec::as_slice))
    }

    /// One coordinate of the state over time.
    pub fn coordinate(&self, index: usize) -> Option<Vec<f64>> {
        (index < self.dim()).then(|| self.states.iter().map(|s| s[index]).collect())
    }

    /// Serializes as `t,x1,...,xn` CSV, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 1..=self.dim() {
            write!(out, ",x{i}").unwrap();
        }
        out.push('\n');
        for (t, x) in self.samples() {
            write!(out, "{t}").unwrap();
            for v in x {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, SignalError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(SignalError::Csv { line: 1, msg: "empty input".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(SignalError::Csv { line: 1, msg: "header must start with `t`".into() });
        }
        for (i, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("x{i}") {
                return Err(SignalError::Csv { line: 1, msg: format!("unexpected column `{c}`") });
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SignalError::Csv { line: idx + 1, msg: e.to_string() })?;
            if values.len() != dim + 1 {
                return Err(SignalError::Csv {
                    line: idx + 1,
                    msg: format!("expected {} fields, found {}", dim + 1, values.len()),
                });
            }
            times.push(values[0]);
            states.push(values[1..].to_vec());
        }
        Self::new(times, states)
    }
}

/// Weighted Euclidean norm `sqrt(sum_i w_i x_i^2)`.
///
/// Zero weights are allowed; on those coordinates the norm degenerates to a seminorm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightedNorm {
    weights: Vec<f64>,
}

impl WeightedNorm {
    pub fn new(weights: Vec<f64>) -> Result<Self, SignalError> {
        let valid = weights.iter().all(|w| w.is_finite() && *w >= 0.0) && weights.iter().any(|w| *w > 0.0);
        if !valid {
            return Err(SignalError::InvalidWeights);
        }
        Ok(Self { weights })
    }

    /// Unit weights on every coordinate.
    pub fn euclidean(dim: usize) -> Self {
        Self { weights: vec![1.0; dim] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, SignalError> {
        self.check_dim(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    /// Norm of `a - b` without allocating the difference.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64, SignalError> {
        self.check_dim(a.len())?;
        self.check_dim(b.len())?;
        let sum: f64 = self.weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y) * (x - y)).sum();
        Ok(sum.sqrt())
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn check_dim(&self, found: usize) -> Result<(), SignalError> {
        if found != self.weights.len() {
            return Err(SignalError::Dimension { expected: self.weights.len(), found });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for WeightedNorm {
    type Error = SignalError;

    fn try_from(weights: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(weights)
    }
}

impl From<WeightedNorm> for Vec<f64> {
    fn from(n: WeightedNorm) -> Self {
        n.weights
    }
}

pub fn weighted_norm(x: &[f64], nrm: &WeightedNorm) -> Result<f64, SignalError> {
    nrm.eval(x)
}

/// Largest weighted distance between two trajectories over their shared sample grid.
pub fn sup_deviation(a: &Trajectory, b: &Trajectory, nrm: &WeightedNorm) -> Result<f64, SignalError> {
    if a.len() != b.len() {
        return Err(SignalError::GridMismatch(a.len().min(b.len())));
    }
    if let Some(i) = a.times.iter().zip(&b.times).position(|(s, t)| s != t) {
        return Err(SignalError::GridMismatch(i));
    }
    nrm.check_dim(a.dim())?;
    nrm.check_dim(b.dim())?;
    Ok(a.states.iter().zip(&b.states).map(|(x, y)| nrm.distance(x, y).expect("dimensions checked")).fold(0.0, f64::max))
}
