use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::BoError;

/// Largest diagonal jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-6;

/// Fixed squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// One length scale per input dimension, in unit-box coordinates.
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    /// Constant prior mean.
    pub mean: f64,
    /// Initial diagonal jitter; escalated tenfold up to [`MAX_JITTER`] if needed.
    pub jitter: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, length_scale: f64, signal_variance: f64, mean: f64) -> Self {
        Self { length_scales: vec![length_scale; dim], signal_variance, mean, jitter: 1e-10 }
    }

    fn validate(&self) -> Result<(), BoError> {
        let ok = self.length_scales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.mean.is_finite()
            && self.jitter > 0.0;
        if ok {
            Ok(())
        } else {
            Err(BoError::InvalidParams(format!("{self:?}")))
        }
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).zip(&self.length_scales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// Noiseless GP regression model with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    chol_lower: DMatrix<f64>,
    weights: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Jitter that made the kernel matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance at a unit-box input.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let n = self.inputs.len();
        let mut v: Vec<f64> = self.inputs.iter().map(|xi| self.params.kernel(xi, x)).collect();
        let mean = self.params.mean + v.iter().zip(self.weights.iter()).map(|(k, w)| k * w).sum::<f64>();
        // forward substitution: v <- L^{-1} k
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= self.chol_lower[(i, j)] * v[j];
            }
            v[i] = s / self.chol_lower[(i, i)];
        }
        let var = self.params.signal_variance - v.iter().map(|a| a * a).sum::<f64>();
        // residual variance at the jitter scale is an artifact of the regularization
        (mean, if var <= 10.0 * self.jitter { 0.0 } else { var })
    }
}

/// Fits a noiseless GP to unit-box inputs.
///
/// Exact duplicate inputs with equal targets are merged; duplicates with conflicting targets are
/// an error since no interpolant exists.
pub fn gp_fit(inputs: &[Vec<f64>], targets: &[f64], params: &KernelParams) -> Result<GpModel, BoError> {
    params.validate()?;
    if inputs.len() != targets.len() {
        return Err(BoError::InvalidData(format!("{} inputs but {} targets", inputs.len(), targets.len())));
    }
    if inputs.is_empty() {
        return Err(BoError::InvalidData("need at least one observation".into()));
    }
    let dim = params.length_scales.len();
    for x in inputs {
        if x.len() != dim {
            return Err(BoError::InvalidData(format!("input of dimension {} but {dim} length scales", x.len())));
        }
        if x.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
            return Err(BoError::InvalidData(format!("input {x:?} lies outside the unit box")));
        }
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(BoError::InvalidData(format!("non-finite target {t}")));
    }

    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    let mut ys: Vec<f64> = Vec::with_capacity(inputs.len());
    let mut conflicts = Vec::new();
    for (x, y) in inputs.iter().zip(targets) {
        match xs.iter().position(|seen| seen == x) {
            Some(i) if ys[i] == *y => {}
            Some(i) => conflicts.push((x.clone(), ys[i], *y)),
            None => {
                xs.push(x.clone());
                ys.push(*y);
            }
        }
    }
    if !conflicts.is_empty() {
        return Err(BoError::Factorization(
            conflicts.iter().map(|(x, a, b)| format!("{x:?} observed as both {a} and {b}")).collect(),
        ));
    }

    let n = xs.len();
    let base = DMatrix::from_fn(n, n, |i, j| params.kernel(&xs[i], &xs[j]));
    let mut jitter = params.jitter;
    let chol = loop {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(c) = k.cholesky() {
            break c;
        }
        if jitter >= MAX_JITTER {
            return Err(BoError::Factorization(near_duplicates(&xs, &params.length_scales)));
        }
        jitter = (jitter * 10.0).min(MAX_JITTER);
    };
    let residual = DVector::from_iterator(n, ys.iter().map(|y| y - params.mean));
    let weights = chol.solve(&residual);
    Ok(GpModel { params: params.clone(), inputs: xs, targets: ys, chol_lower: chol.l(), weights, jitter })
}

fn near_duplicates(xs: &[Vec<f64>], scales: &[f64]) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let r: f64 = xs[i].iter().zip(&xs[j]).zip(scales).map(|((a, b), l)| ((a - b) / l).powi(2)).sum();
            if r.sqrt() < 1e-3 {
                out.push(format!("{:?} ~ {:?}", xs[i], xs[j]));
            }
        }
    }
    if out.is_empty() {
        out.push("kernel matrix is ill-conditioned".into());
    }
    out
}
