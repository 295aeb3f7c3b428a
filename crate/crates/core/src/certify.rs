//! Probabilistic certificate and its empirical check against the true system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{EnvSpace, FalsificationResult};
use crate::calibrate::{AccuracyProfile, CalibrationMode};
use crate::seeds::{derive_seed, rng_for, stream};
use crate::signals::Trajectory;
use crate::stl::{robustness, satisfies, RobustnessMeasure, Spec, StlError};
use crate::systems::{simulate_true, ControllerSpec, ScenarioConfig, SimError, TrueModel};

/// Timestamp used when the caller supplies none, keeping certificates reproducible.
pub const DEFAULT_CREATED_AT: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("accuracy profile uses norm weights {profile:?} but the robustness measure uses {measure:?}")]
    NormMismatch { profile: Vec<f64>, measure: Vec<f64> },
    #[error("spec is outside the certifiable fragment: {0}")]
    NotCertifiable(String),
    #[error("trial count must be positive")]
    NoTrials,
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    pub h_star: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    #[serde(with = "crate::float_serde")]
    pub epsilon: f64,
    pub lambda: f64,
    #[serde(with = "crate::float_serde")]
    pub margin: f64,
    pub spec_text: String,
    pub norm_weights: Vec<f64>,
    pub assumptions: Vec<String>,
    pub accuracy_profile_ref: String,
    pub falsification_ref: String,
    pub created_at: String,
}

/// The core decision: certified iff `h_star >= L * epsilon`, compared exactly.
pub fn decide(h_star: f64, lipschitz: f64, epsilon: f64) -> bool {
    h_star >= lipschitz * epsilon
}

fn assumptions(ap: &AccuracyProfile, fr: &FalsificationResult) -> Vec<String> {
    let mut out = vec![match &ap.mode {
        CalibrationMode::SampledD => format!(
            "epsilon is the empirical {}-quantile of {} deviations at uniformly sampled configurations, not a bound uniform over all configurations",
            1.0 - ap.lambda,
            ap.n
        ),
        CalibrationMode::FixedD { d } => format!(
            "epsilon is the empirical {}-quantile of {} deviations at the single configuration {d:?}",
            1.0 - ap.lambda,
            ap.n
        ),
    }];
    out.push(format!(
        "trajectories are sampled every {} s over [0, {}] s; the supremum is taken over samples",
        ap.dt, ap.t_f
    ));
    out.push("the true system is a simulated twin with a configured disturbance sampler".into());
    out.push(format!(
        "h_star is the best value found by {} of {} optimizer evaluations and is assumed to be the global minimum",
        fr.history.len(),
        fr.budget
    ));
    if ap.divergences > 0 {
        out.push(format!("{} calibration pairs diverged and were counted as infinite deviation", ap.divergences));
    }
    out
}

/// Applies the certificate condition. Provenance references and the timestamp are left for the
/// caller to fill in.
pub fn certify(
    fr: &FalsificationResult,
    ap: &AccuracyProfile,
    m: &RobustnessMeasure,
    spec: &Spec,
) -> Result<Certificate, CertifyError> {
    if ap.norm_weights != m.norm().weights() {
        return Err(CertifyError::NormMismatch {
            profile: ap.norm_weights.clone(),
            measure: m.norm().weights().to_vec(),
        });
    }
    if !spec.is_certifiable() {
        return Err(CertifyError::NotCertifiable(spec.to_string()));
    }
    let l = m.lipschitz();
    let certified = decide(fr.h_star, l, ap.epsilon);
    Ok(Certificate {
        certified,
        probability: certified.then_some(1.0 - ap.lambda),
        h_star: fr.h_star,
        lipschitz: l,
        epsilon: ap.epsilon,
        lambda: ap.lambda,
        margin: fr.h_star - l * ap.epsilon,
        spec_text: spec.to_string(),
        norm_weights: ap.norm_weights.clone(),
        assumptions: assumptions(ap, fr),
        accuracy_profile_ref: String::new(),
        falsification_ref: String::new(),
        created_at: DEFAULT_CREATED_AT.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub d: Vec<f64>,
    pub seed: u64,
    #[serde(with = "crate::float_serde")]
    pub robustness: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    #[serde(rename = "K")]
    pub trials: usize,
    pub d: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Robustness of each true trajectory; `-inf` when the rollout diverged.
    #[serde(with = "crate::float_serde::vec")]
    pub robustness: Vec<f64>,
    pub satisfied: Vec<bool>,
    pub divergences: usize,
    pub rate: f64,
    #[serde(with = "crate::float_serde")]
    pub min_robustness: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepTrial>,
}

impl ValidationReport {
    pub fn satisfied_count(&self) -> usize {
        self.satisfied.iter().filter(|s| **s).count()
    }
}

/// Disturbance seed of validation trial `k`.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, stream::VALIDATION, k as u64)
}

/// Robustness and satisfaction of one true rollout. Divergence is a violation.
fn trial(
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    spec: &Spec,
    m: &RobustnessMeasure,
    seed: u64,
) -> Result<(f64, bool), CertifyError> {
    match simulate_true(true_sys, ctrl, cfg, d, seed) {
        Ok(tr) => Ok((robustness(m, &tr)?, satisfies(spec, &tr)?)),
        Err(SimError::Divergence { .. }) => Ok((f64::NEG_INFINITY, false)),
        Err(e) => Err(e.into()),
    }
}

/// Trajectory of validation trial `k`, for plotting.
pub fn validation_trace(
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    seed: u64,
    k: usize,
) -> Result<Trajectory, SimError> {
    simulate_true(true_sys, ctrl, cfg, d, trial_seed(seed, k))
}

/// Runs `k` independent true rollouts at `d_star`.
#[allow(clippy::too_many_arguments)]
pub fn validate_empirically(
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d_star: &[f64],
    spec: &Spec,
    m: &RobustnessMeasure,
    k: usize,
    seed: u64,
) -> Result<ValidationReport, CertifyError> {
    if k == 0 {
        return Err(CertifyError::NoTrials);
    }
    let seeds: Vec<u64> = (0..k).map(|i| trial_seed(seed, i)).collect();
    let outcomes =
        seeds.par_iter().map(|s| trial(true_sys, ctrl, cfg, d_star, spec, m, *s)).collect::<Result<Vec<_>, _>>()?;
    let (robustness, satisfied): (Vec<f64>, Vec<bool>) = outcomes.into_iter().unzip();
    let ok = satisfied.iter().filter(|s| **s).count();
    Ok(ValidationReport {
        trials: k,
        d: d_star.to_vec(),
        seeds,
        divergences: robustness.iter().filter(|r| **r == f64::NEG_INFINITY).count(),
        rate: ok as f64 / k as f64,
        min_robustness: robustness.iter().copied().fold(f64::INFINITY, f64::min),
        robustness,
        satisfied,
        sweep: Vec::new(),
    })
}

/// One true rollout at each of `count` configurations drawn uniformly from `space`.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    space: &EnvSpace,
    spec: &Spec,
    m: &RobustnessMeasure,
    count: usize,
    seed: u64,
) -> Result<Vec<SweepTrial>, CertifyError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let d = space.sample_uniform(&mut rng_for(seed, stream::SWEEP, i as u64));
            let s = derive_seed(seed, stream::SWEEP, (i + count) as u64);
            let (robustness, satisfied) = trial(true_sys, ctrl, cfg, &d, spec, m, s)?;
            Ok(SweepTrial { d, seed: s, robustness, satisfied })
        })
        .collect()
}
