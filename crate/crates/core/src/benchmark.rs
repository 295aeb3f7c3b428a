//! Planar Segway benchmark.
//!
//! State `[x, y, theta, psi, v, theta_dot, psi_dot]`: position, tilt, heading, forward speed and
//! the two angular rates. The environment configuration `d = [g1x, g1y, g2x, g2y, T]` names two
//! cells of a 5x5 grid of 1 m cells; the robot drives to the centre of `G1` and switches to `G2`
//! at the first sample with `t >= T`. The property under test keeps the tilt within 0.7 rad.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bayesopt::{Dimension, EnvSpace};
use crate::signals::WeightedNorm;
use crate::stl::{parse_spec, Spec};
use crate::systems::{
    ControllerSpec, DisturbanceSampler, FeedbackLaw, NominalModel, ScenarioConfig, TrueModel, VectorField,
};

pub const NOMINAL_MODEL: &str = "segway-nominal";
pub const TRUE_MODEL: &str = "segway-true";
pub const CONTROLLER: &str = "segway-waypoint";

pub const SPEC_TEXT: &str = "always (abs(x[2]) <= 0.7)";
pub const TILT: usize = 2;
pub const STATE_DIM: usize = 7;
pub const GRID_SIZE: i64 = 5;
pub const HORIZON: f64 = 10.0;
pub const STEP: f64 = 0.01;
/// Per-coordinate disturbance bounds at scale 1: forward acceleration, tilt acceleration, yaw
/// acceleration.
pub const BASE_DISTURBANCE: [f64; 3] = [0.75, 1.5, 0.75];

/// Named disturbance scales.
pub const PRESETS: [(&str, f64); 2] = [("default", 1.0), ("stress", 8.0)];

pub fn preset_scale(name: &str) -> Option<f64> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Physical constants and controller gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegwayParams {
    pub gravity: f64,
    /// Pendulum length (m).
    pub length: f64,
    /// Viscous tilt damping (1/s).
    pub tilt_damping: f64,
    pub max_accel: f64,
    pub max_yaw_accel: f64,
    pub max_speed: f64,
    pub position_gain: f64,
    pub heading_gain: f64,
    pub heading_rate_gain: f64,
    /// Distance below which heading control switches off.
    pub arrival_radius: f64,
    /// Closed-loop poles of the speed/tilt subsystem.
    pub balance_poles: [f64; 3],
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 0.6,
            tilt_damping: 0.4,
            max_accel: 5.0,
            max_yaw_accel: 4.0,
            max_speed: 2.0,
            position_gain: 1.5,
            heading_gain: 4.0,
            heading_rate_gain: 3.0,
            arrival_radius: 0.15,
            balance_poles: [-2.5, -3.5, -4.5],
        }
    }
}

impl SegwayParams {
    /// Gains `[k_v, k_theta, k_omega]` of `a = k_v (v - v_ref) + k_theta theta + k_omega theta_dot`
    /// placing the linearized speed/tilt poles at `balance_poles`.
    pub fn balance_gains(&self) -> [f64; 3] {
        let [p1, p2, p3] = self.balance_poles;
        let s1 = p1 + p2 + p3;
        let s2 = p1 * p2 + p1 * p3 + p2 * p3;
        let s3 = p1 * p2 * p3;
        let (g, l, c) = (self.gravity, self.length, self.tilt_damping);
        let k1 = -s3 * l / g;
        let k2 = g + l * (s2 + k1 * c);
        let k3 = l * (-s1 - c + k1);
        [k1, k2, k3]
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Centre of grid cell `(i, j)`, 1-indexed.
pub fn cell_center(i: f64, j: f64) -> (f64, f64) {
    (i - 0.5, j - 0.5)
}

#[derive(Debug, Clone)]
pub struct SegwayField {
    params: SegwayParams,
}

impl SegwayField {
    pub fn new(params: SegwayParams) -> Self {
        Self { params }
    }
}

impl VectorField for SegwayField {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn disturbance_dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], u: &[f64], _d: &[f64], w: &[f64], dx: &mut [f64]) {
        let p = &self.params;
        let (theta, psi, v, omega, yaw_rate) = (x[2], x[3], x[4], x[5], x[6]);
        let accel = u[0] + w[0];
        dx[0] = v * psi.cos();
        dx[1] = v * psi.sin();
        dx[2] = omega;
        dx[3] = yaw_rate;
        dx[4] = accel;
        dx[5] = (p.gravity * theta.sin() - accel * theta.cos()) / p.length - p.tilt_damping * omega + w[1];
        dx[6] = u[1] + w[2];
    }
}

/// Drives toward the current goal cell while balancing. Outputs `[acceleration, yaw acceleration]`.
#[derive(Debug, Clone)]
pub struct WaypointController {
    params: SegwayParams,
    gains: [f64; 3],
}

impl WaypointController {
    pub fn new(params: SegwayParams) -> Self {
        let gains = params.balance_gains();
        Self { params, gains }
    }

    /// Goal position tracked at time `t`.
    pub fn reference(t: f64, d: &[f64]) -> (f64, f64) {
        if t < d[4] {
            cell_center(d[0], d[1])
        } else {
            cell_center(d[2], d[3])
        }
    }
}

impl FeedbackLaw for WaypointController {
    fn input_dim(&self) -> usize {
        2
    }

    fn control(&self, t: f64, x: &[f64], d: &[f64], u: &mut [f64]) {
        let p = &self.params;
        let (gx, gy) = Self::reference(t, d);
        let (dx, dy) = (gx - x[0], gy - x[1]);
        let psi = x[3];
        let along = dx * psi.cos() + dy * psi.sin();
        let v_ref = (p.position_gain * along).clamp(-p.max_speed, p.max_speed);
        let mut heading_error = wrap_angle(dy.atan2(dx) - psi);
        // reverse instead of turning around
        if heading_error.abs() > PI / 2.0 {
            heading_error = wrap_angle(heading_error + PI);
        }
        if dx.hypot(dy) <= p.arrival_radius {
            heading_error = 0.0;
        }
        let [k1, k2, k3] = self.gains;
        u[0] = k1 * (x[4] - v_ref) + k2 * x[2] + k3 * x[5];
        u[1] = p.heading_gain * heading_error - p.heading_rate_gain * x[6];
    }
}

/// `G1, G2` in `{1..5}^2` and `T` in `[0, 10]`.
pub fn segway_env_space() -> EnvSpace {
    let mut dims: Vec<Dimension> = (0..4).map(|_| Dimension::integer_range(1, GRID_SIZE)).collect();
    dims.push(Dimension::Continuous { lo: 0.0, hi: HORIZON });
    EnvSpace::new(dims).expect("static space is valid")
}

/// Weight 1 on the tilt, 1e-6 elsewhere.
pub fn segway_norm() -> WeightedNorm {
    let mut w = vec![1e-6; STATE_DIM];
    w[TILT] = 1.0;
    WeightedNorm::new(w).expect("static weights are valid")
}

pub fn segway_spec() -> Spec {
    parse_spec(SPEC_TEXT).expect("static spec parses")
}

pub fn segway_scenario() -> ScenarioConfig {
    let mut x0 = vec![0.0; STATE_DIM];
    (x0[0], x0[1]) = cell_center(3.0, 3.0);
    ScenarioConfig::new(x0, HORIZON, STEP).expect("static scenario is valid")
}

pub fn segway_controller(params: &SegwayParams) -> ControllerSpec {
    ControllerSpec::new(
        Arc::new(WaypointController::new(params.clone())),
        vec![(-params.max_accel, params.max_accel), (-params.max_yaw_accel, params.max_yaw_accel)],
    )
    .expect("static bounds are valid")
}

/// Nominal model, true twin with disturbances `scale * BASE_DISTURBANCE`, controller and scenario.
///
/// # Panics
/// If `scale` is negative or not finite.
pub fn segway_models(scale: f64) -> (NominalModel, TrueModel, ControllerSpec, ScenarioConfig) {
    assert!(scale.is_finite() && scale >= 0.0, "disturbance scale must be finite and >= 0, got {scale}");
    let params = SegwayParams::default();
    let field: Arc<dyn VectorField> = Arc::new(SegwayField::new(params.clone()));
    let sampler = DisturbanceSampler::uniform(BASE_DISTURBANCE.iter().map(|m| m * scale).collect());
    let true_model = TrueModel::new(field.clone(), sampler).expect("dimensions match");
    (NominalModel::new(field), true_model, segway_controller(&params), segway_scenario())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::sup_deviation;
    use crate::stl::{build_measure, robustness, satisfies};
    use crate::systems::{simulate_nominal, simulate_nominal_rollout, simulate_true};
    use nalgebra::Matrix3;
    use proptest::prelude::*;

    #[test]
    fn balance_gains_place_the_poles() {
        let p = SegwayParams::default();
        let [k1, k2, k3] = p.balance_gains();
        let (g, l, c) = (p.gravity, p.length, p.tilt_damping);
        // linearization of (v - v_ref, theta, theta_dot) under the feedback
        let a = Matrix3::new(k1, k2, k3, 0.0, 0.0, 1.0, -k1 / l, (g - k2) / l, -k3 / l - c);
        let mut eig: Vec<f64> = a
            .complex_eigenvalues()
            .iter()
            .map(|z| {
                assert!(z.im.abs() < 1e-6);
                z.re
            })
            .collect();
        eig.sort_by(f64::total_cmp);
        for (e, want) in eig.iter().zip([-4.5, -3.5, -2.5]) {
            assert!((e - want).abs() < 1e-6, "{eig:?}");
        }
    }

    #[test]
    fn env_space_membership() {
        let s = segway_env_space();
        assert!(s.contains(&[4.0, 5.0, 1.0, 2.0, 4.885]));
        assert!(!s.contains(&[4.0, 5.0, 1.0, 2.0, 10.5]));
        assert!(s.contains(&[3.0, 3.0, 1.0, 1.0, 0.0]));
        assert!(!s.contains(&[0.0, 3.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn reference_switches_at_the_first_sample_past_t() {
        let cfg = segway_scenario();
        let d = [1.0, 1.0, 5.0, 5.0, 2.345];
        let refs: Vec<_> = (0..=cfg.steps()).map(|k| WaypointController::reference(cfg.time(k), &d)).collect();
        let switch = refs.iter().position(|r| *r == cell_center(5.0, 5.0)).unwrap();
        assert_eq!(switch, 235);
        assert!(refs[..switch].iter().all(|r| *r == cell_center(1.0, 1.0)));
        assert!(refs[switch..].iter().all(|r| *r == cell_center(5.0, 5.0)));
    }

    #[test]
    fn benign_configuration_satisfies_the_spec() {
        let (nominal, _, ctrl, cfg) = segway_models(1.0);
        let spec = segway_spec();
        let m = build_measure(&spec, &segway_norm()).unwrap();
        let benign = simulate_nominal(&nominal, &ctrl, &cfg, &[3.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(satisfies(&spec, &benign).unwrap());
        let rho_benign = robustness(&m, &benign).unwrap();
        let aggressive = simulate_nominal(&nominal, &ctrl, &cfg, &[5.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let rho_aggressive = robustness(&m, &aggressive).unwrap();
        assert!(rho_aggressive < rho_benign);
        assert!(rho_aggressive > 0.0);
    }

    #[test]
    fn robot_reaches_the_goal() {
        let (nominal, _, ctrl, cfg) = segway_models(1.0);
        let tr = simulate_nominal(&nominal, &ctrl, &cfg, &[1.0, 5.0, 4.0, 2.0, 3.0]).unwrap();
        let last = tr.states().last().unwrap();
        let (gx, gy) = cell_center(4.0, 2.0);
        assert!((last[0] - gx).hypot(last[1] - gy) < 0.3, "{last:?}");
    }

    #[test]
    fn inputs_respect_bounds() {
        let (nominal, _, ctrl, cfg) = segway_models(1.0);
        let r = simulate_nominal_rollout(&nominal, &ctrl, &cfg, &[5.0, 5.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(r.inputs.iter().all(|u| u[0].abs() <= 5.0 && u[1].abs() <= 4.0));
    }

    #[test]
    fn zero_scale_twin_matches_nominal() {
        let (nominal, true_model, ctrl, cfg) = segway_models(0.0);
        let d = [2.0, 4.0, 5.0, 1.0, 3.3];
        let a = simulate_nominal(&nominal, &ctrl, &cfg, &d).unwrap();
        for seed in [0, 1, 99] {
            let b = simulate_true(&true_model, &ctrl, &cfg, &d, seed).unwrap();
            assert_eq!(sup_deviation(&a, &b, &segway_norm()).unwrap(), 0.0);
        }
    }

    #[test]
    fn seeds_change_true_trajectories() {
        let (_, true_model, ctrl, cfg) = segway_models(1.0);
        let d = [2.0, 4.0, 5.0, 1.0, 3.3];
        let a = simulate_true(&true_model, &ctrl, &cfg, &d, 1).unwrap();
        let b = simulate_true(&true_model, &ctrl, &cfg, &d, 2).unwrap();
        assert!(sup_deviation(&a, &b, &segway_norm()).unwrap() > 0.0);
    }

    #[test]
    fn presets() {
        assert_eq!(preset_scale("default"), Some(1.0));
        assert_eq!(preset_scale("stress"), Some(8.0));
        assert_eq!(preset_scale("nope"), None);
    }

    proptest! {
        #[test]
        fn tilt_dominates_the_norm(v in proptest::collection::vec(-100.0..100.0f64, STATE_DIM)) {
            let n = segway_norm().eval(&v).unwrap();
            let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - v[TILT].abs()).abs() <= 1e-3 * l2 + 1e-12);
        }
    }
}
