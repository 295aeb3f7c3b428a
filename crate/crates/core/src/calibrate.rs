//! Monte-Carlo estimate of how far the nominal model strays from the true system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{BoError, EnvSpace};
use crate::seeds::{derive_seed, rng_for, stream};
use crate::signals::{sup_deviation, SignalError, WeightedNorm};
use crate::systems::{
    simulate_nominal, simulate_true, ControllerSpec, NominalModel, ScenarioConfig, SimError, TrueModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("no samples")]
    Empty,
    #[error("samples contain NaN")]
    NaN,
    #[error("quantile level {0} must lie in (0, 1)")]
    InvalidLevel(f64),
    #[error("lambda must lie in (0, 1), got {0}")]
    InvalidLambda(f64),
    #[error("sample count must be positive")]
    NoSamples,
    #[error(transparent)]
    Space(#[from] BoError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// The `ceil(q * N)`-th smallest sample (1-indexed).
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64, CalibrationError> {
    if samples.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(CalibrationError::InvalidLevel(q));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(CalibrationError::NaN);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(sorted.len(), q)])
}

fn order_index(n: usize, q: f64) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n) - 1
}

/// How configurations are chosen for the calibration pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CalibrationMode {
    /// A fresh uniform draw from the environment space per pair.
    SampledD,
    /// Every pair uses the same configuration.
    FixedD { d: Vec<f64> },
}

/// Deviation quantile `epsilon` such that at least a `1 - lambda` fraction of the observed
/// sup-norm deviations are `<= epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    #[serde(with = "crate::float_serde")]
    pub epsilon: f64,
    pub lambda: f64,
    pub t_f: f64,
    pub dt: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub norm_weights: Vec<f64>,
    #[serde(with = "crate::float_serde::vec")]
    pub samples_sorted: Vec<f64>,
    /// Pairs where a simulation diverged; their deviation is recorded as infinite.
    pub divergences: usize,
    pub variance_bound: f64,
    pub mode: CalibrationMode,
    pub seed: u64,
}

impl AccuracyProfile {
    pub fn norm(&self) -> Result<WeightedNorm, SignalError> {
        WeightedNorm::new(self.norm_weights.clone())
    }

    /// Number of retained samples `<= epsilon`.
    pub fn covered(&self) -> usize {
        self.samples_sorted.iter().filter(|v| **v <= self.epsilon).count()
    }
}

/// Everything except the deviations themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMeta {
    pub lambda: f64,
    pub t_f: f64,
    pub dt: f64,
    pub norm: WeightedNorm,
    pub mode: CalibrationMode,
    pub seed: u64,
}

/// Builds a profile from raw deviations. Infinite entries count as divergences.
pub fn profile_from_deviations(deviations: &[f64], meta: ProfileMeta) -> Result<AccuracyProfile, CalibrationError> {
    if !(meta.lambda > 0.0 && meta.lambda < 1.0) {
        return Err(CalibrationError::InvalidLambda(meta.lambda));
    }
    if deviations.is_empty() {
        return Err(CalibrationError::NoSamples);
    }
    if deviations.iter().any(|v| v.is_nan()) {
        return Err(CalibrationError::NaN);
    }
    let mut sorted = deviations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(AccuracyProfile {
        epsilon: sorted[order_index(n, 1.0 - meta.lambda)],
        lambda: meta.lambda,
        t_f: meta.t_f,
        dt: meta.dt,
        n,
        norm_weights: meta.norm.weights().to_vec(),
        divergences: sorted.iter().filter(|v| v.is_infinite()).count(),
        samples_sorted: sorted,
        variance_bound: 1.0 / n as f64,
        mode: meta.mode,
        seed: meta.seed,
    })
}

/// Sup-norm deviation for one pair. Divergence of either simulation counts as infinite.
pub fn pair_deviation(
    nominal: &NominalModel,
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    d: &[f64],
    nrm: &WeightedNorm,
    disturbance_seed: u64,
) -> Result<f64, CalibrationError> {
    let a = match simulate_nominal(nominal, ctrl, cfg, d) {
        Err(SimError::Divergence { .. }) => return Ok(f64::INFINITY),
        other => other?,
    };
    let b = match simulate_true(true_sys, ctrl, cfg, d, disturbance_seed) {
        Err(SimError::Divergence { .. }) => return Ok(f64::INFINITY),
        other => other?,
    };
    Ok(sup_deviation(&a, &b, nrm)?)
}

/// Configuration used for calibration pair `k`.
pub fn calibration_config(space: &EnvSpace, mode: &CalibrationMode, seed: u64, k: usize) -> Vec<f64> {
    match mode {
        CalibrationMode::SampledD => space.sample_uniform(&mut rng_for(seed, stream::CALIBRATION_CONFIG, k as u64)),
        CalibrationMode::FixedD { d } => d.clone(),
    }
}

/// Simulates `n` matched nominal/true pairs and takes the `1 - lambda` deviation quantile.
/// Pairs run in parallel; each draws from its own seed stream.
#[allow(clippy::too_many_arguments)]
pub fn estimate_accuracy(
    nominal: &NominalModel,
    true_sys: &TrueModel,
    ctrl: &ControllerSpec,
    cfg: &ScenarioConfig,
    space: &EnvSpace,
    nrm: &WeightedNorm,
    n: usize,
    lambda: f64,
    mode: CalibrationMode,
    seed: u64,
) -> Result<AccuracyProfile, CalibrationError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(CalibrationError::InvalidLambda(lambda));
    }
    if n == 0 {
        return Err(CalibrationError::NoSamples);
    }
    if let CalibrationMode::FixedD { d } = &mode {
        space.check(d)?;
    }
    let deviations = (0..n)
        .into_par_iter()
        .map(|k| {
            let d = calibration_config(space, &mode, seed, k);
            let w_seed = derive_seed(seed, stream::CALIBRATION_DISTURBANCE, k as u64);
            pair_deviation(nominal, true_sys, ctrl, cfg, &d, nrm, w_seed)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    profile_from_deviations(
        &deviations,
        ProfileMeta { lambda, t_f: cfg.t_f, dt: cfg.dt, norm: nrm.clone(), mode, seed },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{segway_env_space, segway_models, segway_norm};
    use crate::seeds::Rng;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn meta(lambda: f64) -> ProfileMeta {
        ProfileMeta {
            lambda,
            t_f: 1.0,
            dt: 0.1,
            norm: WeightedNorm::euclidean(1),
            mode: CalibrationMode::SampledD,
            seed: 0,
        }
    }

    #[test]
    fn quantile_examples() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[3.0, 3.0, 3.0], 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&[], 0.5), Err(CalibrationError::Empty));
        assert!(empirical_quantile(&[1.0], 1.0).is_err());
        assert!(empirical_quantile(&[1.0, f64::NAN], 0.5).is_err());
    }

    #[test]
    fn n300_uses_the_285th_order_statistic() {
        let mut rng = Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..300).map(|_| rng.gen()).collect();
        let p = profile_from_deviations(&s, meta(0.05)).unwrap();
        assert_eq!(p.epsilon, p.samples_sorted[284]);
        assert_eq!(p.variance_bound, 1.0 / 300.0);
    }

    #[test]
    fn uniform_deviations_land_near_the_true_quantile() {
        let mut rng = Rng::seed_from_u64(20);
        let s: Vec<f64> = (0..2000).map(|_| rng.gen()).collect();
        let p = profile_from_deviations(&s, meta(0.05)).unwrap();
        assert!((0.93..=0.97).contains(&p.epsilon), "{}", p.epsilon);
    }

    #[test]
    fn divergences_are_infinite_and_counted() {
        let p = profile_from_deviations(&[0.1, f64::INFINITY, 0.2], meta(0.5)).unwrap();
        assert_eq!(p.divergences, 1);
        assert_eq!(p.epsilon, 0.2);
        let p = profile_from_deviations(&[0.1, f64::INFINITY], meta(0.05)).unwrap();
        assert_eq!(p.epsilon, f64::INFINITY);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AccuracyProfile>(&json).unwrap(), p);
        assert!(json.contains("\"N\":2"));
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(profile_from_deviations(&[0.1], meta(0.0)).is_err());
        assert!(profile_from_deviations(&[0.1], meta(1.0)).is_err());
    }

    #[test]
    fn zero_disturbance_twin_has_zero_epsilon() {
        let (nominal, true_sys, ctrl, mut cfg) = segway_models(0.0);
        cfg.t_f = 2.0;
        let p = estimate_accuracy(
            &nominal,
            &true_sys,
            &ctrl,
            &cfg,
            &segway_env_space(),
            &segway_norm(),
            8,
            0.1,
            CalibrationMode::SampledD,
            1,
        )
        .unwrap();
        assert_eq!(p.epsilon, 0.0);
        assert_eq!(p.divergences, 0);
    }

    #[test]
    fn calibration_is_reproducible() {
        let (nominal, true_sys, ctrl, mut cfg) = segway_models(1.0);
        cfg.t_f = 2.0;
        let run = |seed| {
            estimate_accuracy(
                &nominal,
                &true_sys,
                &ctrl,
                &cfg,
                &segway_env_space(),
                &segway_norm(),
                12,
                0.1,
                CalibrationMode::SampledD,
                seed,
            )
            .unwrap()
        };
        let a = run(4);
        assert_eq!(a, run(4));
        assert_ne!(a.samples_sorted, run(5).samples_sorted);
        assert!(a.epsilon > 0.0);
        let fixed = estimate_accuracy(
            &nominal,
            &true_sys,
            &ctrl,
            &cfg,
            &segway_env_space(),
            &segway_norm(),
            4,
            0.1,
            CalibrationMode::FixedD { d: vec![1.0, 1.0, 2.0, 2.0, 10.5] },
            4,
        );
        assert!(matches!(fixed, Err(CalibrationError::Space(_))));
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_and_index(s in proptest::collection::vec(0.0..10.0f64, 1..50), q in 0.01..0.99f64) {
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = (q * s.len() as f64).ceil() as usize;
            prop_assert_eq!(empirical_quantile(&s, q).unwrap(), sorted[k.max(1) - 1]);
        }

        #[test]
        fn coverage_and_monotonicity(s in proptest::collection::vec(0.0..1.0f64, 1..80), l1 in 0.01..0.5f64, l2 in 0.01..0.5f64) {
            let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
            let a = profile_from_deviations(&s, meta(lo)).unwrap();
            let b = profile_from_deviations(&s, meta(hi)).unwrap();
            prop_assert!(a.epsilon >= b.epsilon);
            let need = ((1.0 - lo) * s.len() as f64).ceil() as usize;
            prop_assert!(a.covered() >= need);
        }
    }
}
