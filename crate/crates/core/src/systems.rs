//! Closed-loop simulation.
//!
//! A [`VectorField`] describes `dx/dt = f(x, u, d, w)`. The nominal model evaluates it with the
//! disturbance pinned to zero; the true model draws `w` from a seeded [`DisturbanceSampler`], held
//! constant over each integration step. Control is recomputed at the start of every step, clamped
//! into the controller's bounds and held across the step (zero-order hold). Integration is
//! classical fixed-step RK4.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::Rng;
use crate::signals::{SignalError, Trajectory};
use rand::SeedableRng;

/// States with any coordinate beyond this magnitude count as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("simulation diverged at step {step} (t = {time}); {} finite samples kept", partial.len())]
    Divergence { step: usize, time: f64, partial: Vec<(f64, Vec<f64>)> },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{what} has dimension {found}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("invalid control bounds: {0}")]
    InvalidBounds(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Right-hand side `f(x, u, d, w)` of the closed-loop ODE.
pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], d: &[f64], w: &[f64], dx: &mut [f64]);
}

/// Unclamped state feedback `U(t, x, d)`.
pub trait FeedbackLaw: Send + Sync {
    fn input_dim(&self) -> usize;
    fn control(&self, t: f64, x: &[f64], d: &[f64], u: &mut [f64]);
}

/// A feedback law together with its per-coordinate input box.
#[derive(Clone)]
pub struct ControllerSpec {
    law: Arc<dyn FeedbackLaw>,
    bounds: Vec<(f64, f64)>,
}

impl ControllerSpec {
    pub fn new(law: Arc<dyn FeedbackLaw>, bounds: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if bounds.len() != law.input_dim() {
            return Err(SimError::Dimension { what: "control bounds", expected: law.input_dim(), found: bounds.len() });
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi) || lo.is_nan()) {
            return Err(SimError::InvalidBounds(format!("[{lo}, {hi}]")));
        }
        Ok(Self { law, bounds })
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// `U(t, x, d)` clamped into the input box.
    pub fn apply(&self, t: f64, x: &[f64], d: &[f64], u: &mut [f64]) {
        self.law.control(t, x, d, u);
        for (v, (lo, hi)) in u.iter_mut().zip(&self.bounds) {
            // NaN stays NaN and surfaces as divergence
            *v = v.clamp(*lo, *hi);
        }
    }
}

impl std::fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControllerSpec").field("bounds", &self.bounds).finish_non_exhaustive()
    }
}

/// Deterministic simulator `dx/dt = f(x, u, d, 0)`.
#[derive(Clone)]
pub struct NominalModel {
    field: Arc<dyn VectorField>,
}

impl NominalModel {
    pub fn new(field: Arc<dyn VectorField>) -> Self {
        Self { field }
    }

    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.field.input_dim()
    }
}

/// Per-step disturbance distribution. Stand-in for the unknown environment noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceSampler {
    /// Independent `Uniform[-m_i, m_i]` per coordinate.
    Uniform { magnitudes: Vec<f64> },
}

impl DisturbanceSampler {
    pub fn uniform(magnitudes: Vec<f64>) -> Self {
        DisturbanceSampler::Uniform { magnitudes }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSampler::Uniform { magnitudes } => magnitudes.len(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DisturbanceSampler::Uniform { magnitudes } => magnitudes.iter().all(|m| *m == 0.0),
        }
    }

    fn draw(&self, rng: &mut Rng, w: &mut [f64]) {
        match self {
            DisturbanceSampler::Uniform { magnitudes } => {
                for (wi, m) in w.iter_mut().zip(magnitudes) {
                    *wi = if *m == 0.0 { 0.0 } else { m * rng.gen_range(-1.0..=1.0) };
                }
            }
        }
    }
}

/// The "real" system: the same kind of vector field, driven by sampled disturbances.
#[derive(Clone)]
pub struct TrueModel {
    field: Arc<dyn VectorField>,
    sampler: DisturbanceSampler,
}

impl TrueModel {
    pub fn new(field: Arc<dyn VectorField>, sampler: DisturbanceSampler) -> Result<Self, SimError> {
        if sampler.dim() != field.disturbance_dim() {
            return Err(SimError::Dimension {
                what: "disturbance sampler",
                expected: field.disturbance_dim(),
                found: sampler.dim(),
            });
        }
        let DisturbanceSampler::Uniform { magnitudes } = &sampler;
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(SimError::InvalidScenario("disturbance magnitudes must be finite and >= 0".into()));
        }
        Ok(Self { field, sampler })
    }

    pub fn sampler(&self) -> &DisturbanceSampler {
        &self.sampler
    }

    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }
}

/// Initial state, horizon and step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub x0: Vec<f64>,
    pub t_f: f64,
    pub dt: f64,
}

impl ScenarioConfig {
    pub fn new(x0: Vec<f64>, t_f: f64, dt: f64) -> Result<Self, SimError> {
        let cfg = Self { x0, t_f, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.t_f > 0.0 && self.t_f.is_finite()) {
            return Err(SimError::InvalidScenario(format!("horizon must be positive, got {}", self.t_f)));
        }
        if !(self.dt > 0.0 && self.dt <= self.t_f) {
            return Err(SimError::InvalidScenario(format!("step must lie in (0, t_f], got {}", self.dt)));
        }
        let ratio = self.t_f / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SimError::InvalidScenario(format!("t_f / dt = {ratio} is not an integer")));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidScenario("initial state must be finite".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_f / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// A simulated trajectory plus the (clamped) input applied over each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub inputs: Vec<Vec<f64>>,
}

fn integrate(
    field: &dyn VectorField,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    mut disturbance: impl FnMut(&mut [f64]),
) -> Result<Rollout, SimError> {
    cfg.validate()?;
    let n = field.state_dim();
    if cfg.x0.len() != n {
        return Err(SimError::Dimension { what: "initial state", expected: n, found: cfg.x0.len() });
    }
    if ctrl.input_dim() != field.input_dim() {
        return Err(SimError::Dimension {
            what: "controller output",
            expected: field.input_dim(),
            found: ctrl.input_dim(),
        });
    }
    let steps = cfg.steps();
    let dt = cfg.dt;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps);
    let mut x = cfg.x0.clone();
    let mut u = vec![0.0; field.input_dim()];
    let mut w = vec![0.0; field.disturbance_dim()];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    times.push(0.0);
    states.push(x.clone());
    for step in 0..steps {
        let t = cfg.time(step);
        ctrl.apply(t, &x, d, &mut u);
        disturbance(&mut w);
        field.eval(&x, &u, d, &w, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        field.eval(&tmp, &u, d, &w, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        field.eval(&tmp, &u, d, &w, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + dt * k3[i];
        }
        field.eval(&tmp, &u, d, &w, &mut k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        inputs.push(u.clone());
        if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(SimError::Divergence {
                step: step + 1,
                time: cfg.time(step + 1),
                partial: times.into_iter().zip(states).collect(),
            });
        }
        times.push(cfg.time(step + 1));
        states.push(x.clone());
    }
    Ok(Rollout { trajectory: Trajectory::new(times, states)?, inputs })
}

pub fn simulate_nominal_rollout(
    model: &NominalModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
) -> Result<Rollout, SimError> {
    integrate(model.field.as_ref(), ctrl, cfg, d, |w| w.fill(0.0))
}

/// Closed-loop trajectory of the nominal model.
pub fn simulate_nominal(
    model: &NominalModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
) -> Result<Trajectory, SimError> {
    simulate_nominal_rollout(model, ctrl, cfg, d).map(|r| r.trajectory)
}

pub fn simulate_true_rollout(
    model: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    seed: u64,
) -> Result<Rollout, SimError> {
    let mut rng = Rng::seed_from_u64(seed);
    let sampler = &model.sampler;
    integrate(model.field.as_ref(), ctrl, cfg, d, |w| sampler.draw(&mut rng, w))
}

/// Closed-loop trajectory of the true model for one disturbance realization.
pub fn simulate_true(
    model: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    seed: u64,
) -> Result<Trajectory, SimError> {
    simulate_true_rollout(model, ctrl, cfg, d, seed).map(|r| r.trajectory)
}
