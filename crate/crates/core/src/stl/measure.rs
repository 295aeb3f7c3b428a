//! Signed distances and the robustness measures built from them.

use serde::{Deserialize, Serialize};

use super::{Cmp, Predicate, Spec, StlError};
use crate::signals::{SignalError, Trajectory, WeightedNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    /// Reach: `eventually (p)`.
    MaxOverTime,
    /// Avoid: `always (p)`.
    MinOverTime,
}

/// `rho(s) = fold_t h(s(t))` for a certifiable formula.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessMeasure {
    predicate: Predicate,
    negated: bool,
    scale: f64,
    mode: TemporalMode,
    lipschitz: f64,
    norm: WeightedNorm,
}

impl RobustnessMeasure {
    pub fn mode(&self) -> TemporalMode {
        self.mode
    }

    /// Lipschitz constant of the measure with respect to the sup-norm induced by [`Self::norm`].
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn norm(&self) -> &WeightedNorm {
        &self.norm
    }

    pub fn predicate(&self) -> &Predicate {
        &self.predicate
    }

    /// Whether `h` is the signed distance of the predicate's complement.
    pub fn is_negated(&self) -> bool {
        self.negated
    }

    /// The measurement function `h` at one state.
    pub fn measure_state(&self, x: &[f64]) -> Result<f64, StlError> {
        self.norm.check_dim(x.len())?;
        Ok(self.h(x))
    }

    fn h(&self, x: &[f64]) -> f64 {
        let v = margin(&self.predicate, x, self.scale);
        if self.negated {
            -v
        } else {
            v
        }
    }
}

/// Splits a certifiable formula into its temporal mode, atomic predicate and negation parity.
pub(super) fn decompose(spec: &Spec) -> Option<(TemporalMode, Predicate, bool)> {
    use TemporalMode::*;
    let (mode, inner, flip) = match spec {
        Spec::Eventually(a) => (MaxOverTime, a.as_ref(), false),
        Spec::Always(a) => (MinOverTime, a.as_ref(), false),
        Spec::Until(l, r) if **l == Spec::True => (MaxOverTime, r.as_ref(), false),
        // not (true until p) == always (not p), and the sugar forms alike
        Spec::Not(a) => match a.as_ref() {
            Spec::Until(l, r) if **l == Spec::True => (MinOverTime, r.as_ref(), true),
            Spec::Eventually(r) => (MinOverTime, r.as_ref(), true),
            Spec::Always(r) => (MaxOverTime, r.as_ref(), true),
            _ => return None,
        },
        _ => return None,
    };
    let (p, negated) = atomic(inner)?;
    Some((mode, p, negated ^ flip))
}

fn atomic(spec: &Spec) -> Option<(Predicate, bool)> {
    match spec {
        Spec::True => Some((Predicate::Literal(true), false)),
        Spec::False => Some((Predicate::Literal(false), false)),
        Spec::Pred(p) => Some((p.clone(), false)),
        Spec::Not(a) => atomic(a).map(|(p, n)| (p, !n)),
        _ => None,
    }
}

/// Converts a raw margin into a distance under `nrm`.
fn distance_scale(p: &Predicate, nrm: &WeightedNorm) -> Result<f64, StlError> {
    let w = nrm.weights();
    match p {
        Predicate::Literal(_) | Predicate::SignedDistance(_) => Ok(1.0),
        Predicate::Coordinate { index, .. } | Predicate::Magnitude { index, .. } => {
            let wi = *w.get(*index).ok_or(StlError::CoordinateOutOfRange { index: *index, dim: w.len() })?;
            if wi == 0.0 {
                return Err(StlError::DegenerateNorm(*index));
            }
            Ok(wi.sqrt())
        }
        Predicate::HalfSpace { normal, .. } => {
            if normal.len() > w.len() {
                return Err(StlError::CoordinateOutOfRange { index: normal.len() - 1, dim: w.len() });
            }
            // distance to {a.x = b} is |a.x - b| divided by the dual norm of a
            let mut dual = 0.0;
            for (j, (a, wj)) in normal.iter().zip(w).enumerate() {
                if *a != 0.0 {
                    if *wj == 0.0 {
                        return Err(StlError::DegenerateNorm(j));
                    }
                    dual += a * a / wj;
                }
            }
            Ok(1.0 / dual.sqrt())
        }
    }
}

fn margin(p: &Predicate, x: &[f64], scale: f64) -> f64 {
    let oriented = |cmp: Cmp, lhs: f64, rhs: f64| if cmp.is_lower_bound() { lhs - rhs } else { rhs - lhs };
    match p {
        Predicate::Literal(true) => 1.0,
        Predicate::Literal(false) => -1.0,
        Predicate::Coordinate { index, cmp, bound } => scale * oriented(*cmp, x[*index], *bound),
        Predicate::Magnitude { index, cmp, bound } => scale * oriented(*cmp, x[*index].abs(), *bound),
        Predicate::HalfSpace { normal, cmp, offset } => {
            let dot: f64 = normal.iter().zip(x).map(|(a, v)| a * v).sum();
            scale * oriented(*cmp, dot, *offset)
        }
        Predicate::SignedDistance(sd) => sd.eval(x),
    }
}

/// Signed distance from `x` to the boundary of the predicate's truth region under `nrm`:
/// positive inside, negative outside. Literals map to the constants `+1` and `-1`.
pub fn signed_distance(p: &Predicate, x: &[f64], nrm: &WeightedNorm) -> Result<f64, StlError> {
    p.validate()?;
    nrm.check_dim(x.len())?;
    if p.min_dim() > x.len() {
        return Err(StlError::CoordinateOutOfRange { index: p.min_dim() - 1, dim: x.len() });
    }
    Ok(margin(p, x, distance_scale(p, nrm)?))
}

/// Builds the max/min-over-time signed-distance measure for a certifiable formula.
pub fn build_measure(spec: &Spec, nrm: &WeightedNorm) -> Result<RobustnessMeasure, StlError> {
    let (mode, predicate, negated) = decompose(spec).ok_or_else(|| StlError::OutsideFragment(spec.to_string()))?;
    predicate.validate()?;
    if predicate.min_dim() > nrm.dim() {
        return Err(StlError::CoordinateOutOfRange { index: predicate.min_dim() - 1, dim: nrm.dim() });
    }
    let scale = distance_scale(&predicate, nrm)?;
    let lipschitz = match &predicate {
        Predicate::SignedDistance(sd) => sd.lipschitz(),
        _ => 1.0,
    };
    Ok(RobustnessMeasure { predicate, negated, scale, mode, lipschitz, norm: nrm.clone() })
}

/// Evaluates the measure on every sample of `s` and folds with `min` or `max`.
pub fn robustness(m: &RobustnessMeasure, s: &Trajectory) -> Result<f64, StlError> {
    if s.dim() != m.norm.dim() {
        return Err(SignalError::Dimension { expected: m.norm.dim(), found: s.dim() }.into());
    }
    let values = s.states().iter().map(|x| m.h(x));
    Ok(match m.mode {
        TemporalMode::MinOverTime => values.fold(f64::INFINITY, f64::min),
        TemporalMode::MaxOverTime => values.fold(f64::NEG_INFINITY, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{parse_spec, satisfies, SignedDistanceFn};
    use proptest::prelude::*;

    fn alpha() -> WeightedNorm {
        let mut w = vec![1e-6; 7];
        w[2] = 1.0;
        WeightedNorm::new(w).unwrap()
    }

    fn with_tilt(theta: f64) -> Vec<f64> {
        let mut x = vec![0.3; 7];
        x[2] = theta;
        x
    }

    #[test]
    fn tilt_bound_signed_distance() {
        let p = Predicate::magnitude(2, Cmp::Le, 0.7);
        assert!((signed_distance(&p, &with_tilt(0.2), &alpha()).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(signed_distance(&p, &with_tilt(0.7), &alpha()).unwrap(), 0.0);
        assert!((signed_distance(&p, &with_tilt(-0.9), &alpha()).unwrap() + 0.2).abs() < 1e-12);
    }

    #[test]
    fn half_line_signed_distance() {
        let p = Predicate::coordinate(0, Cmp::Ge, 1.0);
        let d = signed_distance(&p, &[0.25, 4.0, -2.0], &WeightedNorm::new(vec![1.0, 0.0, 3.0]).unwrap()).unwrap();
        assert_eq!(d, -0.75);
        // weight 4 doubles distances along x0
        let d = signed_distance(&p, &[0.25, 0.0, 0.0], &WeightedNorm::new(vec![4.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(d, -1.5);
    }

    #[test]
    fn half_space_distance_uses_the_dual_norm() {
        // x0 + x1 >= 1 under weights (1, 4): dual norm sqrt(1 + 1/4)
        let p = Predicate::HalfSpace { normal: vec![1.0, 1.0], cmp: Cmp::Ge, offset: 1.0 };
        let nrm = WeightedNorm::new(vec![1.0, 4.0]).unwrap();
        let d = signed_distance(&p, &[0.0, 0.0], &nrm).unwrap();
        assert!((d + 1.0 / 1.25f64.sqrt()).abs() < 1e-12);
        // the closest boundary point is x = (0.8, 0.2); its weighted distance from the origin matches
        assert!((nrm.eval(&[0.8, 0.2]).unwrap() - d.abs()).abs() < 1e-12);
    }

    #[test]
    fn literals_are_constant() {
        assert_eq!(signed_distance(&Predicate::Literal(true), &[5.0], &WeightedNorm::euclidean(1)).unwrap(), 1.0);
        assert_eq!(signed_distance(&Predicate::Literal(false), &[5.0], &WeightedNorm::euclidean(1)).unwrap(), -1.0);
    }

    #[test]
    fn zero_weight_on_the_constrained_coordinate_is_rejected() {
        let nrm = WeightedNorm::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(
            signed_distance(&Predicate::coordinate(0, Cmp::Le, 1.0), &[0.0, 0.0], &nrm),
            Err(StlError::DegenerateNorm(0))
        );
    }

    #[test]
    fn measure_modes_follow_the_formula() {
        let always = build_measure(&parse_spec("always (abs(x[2]) <= 0.7)").unwrap(), &alpha()).unwrap();
        assert_eq!(always.mode(), TemporalMode::MinOverTime);
        assert_eq!(always.lipschitz(), 1.0);
        let ev = build_measure(&parse_spec("eventually (x[0] >= 1)").unwrap(), &WeightedNorm::euclidean(1)).unwrap();
        assert_eq!(ev.mode(), TemporalMode::MaxOverTime);
        assert_eq!(ev.lipschitz(), 1.0);
        let err = build_measure(&parse_spec("x[0] >= 1 and x[0] <= 2").unwrap(), &WeightedNorm::euclidean(1));
        assert!(matches!(err, Err(StlError::OutsideFragment(_))));
    }

    #[test]
    fn declared_signed_distance_keeps_its_constant() {
        let sd = SignedDistanceFn::new("disk", 2, 1.0, |x| 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt());
        let spec = Spec::always(Spec::pred(Predicate::SignedDistance(sd)));
        let m = build_measure(&spec, &WeightedNorm::euclidean(2)).unwrap();
        assert_eq!(m.lipschitz(), 1.0);
        let t = Trajectory::new(vec![0.0, 1.0], vec![vec![0.0, 0.5], vec![0.6, 0.0]]).unwrap();
        assert!((robustness(&m, &t).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn robustness_on_simple_traces() {
        let m = build_measure(&parse_spec("always (abs(x[2]) <= 0.7)").unwrap(), &alpha()).unwrap();
        let times: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let constant = Trajectory::new(times.clone(), vec![with_tilt(0.1); 5]).unwrap();
        assert!((robustness(&m, &constant).unwrap() - 0.6).abs() < 1e-12);
        let mut states = vec![with_tilt(0.1); 5];
        states[3] = with_tilt(-0.7);
        let touching = Trajectory::new(times, states).unwrap();
        assert_eq!(robustness(&m, &touching).unwrap(), 0.0);
        let short = Trajectory::new(vec![0.0, 1.0], vec![vec![0.0; 3]; 2]).unwrap();
        assert!(robustness(&m, &short).is_err());
    }

    fn trace(values: &[f64], dim: usize) -> Trajectory {
        let n = values.len() / dim;
        let times = (0..n).map(|k| k as f64 * 0.1).collect();
        Trajectory::new(times, values.chunks(dim).map(<[f64]>::to_vec).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn robustness_matches_brute_force_fold(values in prop::collection::vec(-2.0..2.0f64, 150), eventually in any::<bool>()) {
            let text = if eventually { "eventually (x[1] < 0.3)" } else { "always (abs(x[2]) <= 0.7)" };
            let nrm = WeightedNorm::new(vec![0.5, 2.0, 1.0]).unwrap();
            let m = build_measure(&parse_spec(text).unwrap(), &nrm).unwrap();
            let t = trace(&values, 3);
            let mut brute = if eventually { f64::NEG_INFINITY } else { f64::INFINITY };
            for x in t.states() {
                let h = if eventually { 2.0f64.sqrt() * (0.3 - x[1]) } else { 0.7 - x[2].abs() };
                brute = if eventually { brute.max(h) } else { brute.min(h) };
            }
            prop_assert!((robustness(&m, &t).unwrap() - brute).abs() < 1e-12);
        }

        #[test]
        fn always_is_the_dual_of_eventually_not(values in prop::collection::vec(-2.0..2.0f64, 60), bound in 0.0..1.5f64) {
            let nrm = WeightedNorm::new(vec![1.0, 0.3]).unwrap();
            let p = Spec::pred(Predicate::magnitude(1, Cmp::Le, bound));
            let always = build_measure(&Spec::always(p.clone()), &nrm).unwrap();
            let ev_not = build_measure(&Spec::eventually(Spec::not(p)), &nrm).unwrap();
            let t = trace(&values, 2);
            prop_assert_eq!(robustness(&always, &t).unwrap(), -robustness(&ev_not, &t).unwrap());
        }

        #[test]
        fn signed_distance_is_one_lipschitz(
            x in prop::collection::vec(-3.0..3.0f64, 3),
            y in prop::collection::vec(-3.0..3.0f64, 3),
            w in prop::collection::vec(0.01..4.0f64, 3),
            a in prop::collection::vec(-2.0..2.0f64, 3),
            c in -1.0..1.0f64,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
            let nrm = WeightedNorm::new(w).unwrap();
            let dist = nrm.distance(&x, &y).unwrap();
            for p in [
                Predicate::coordinate(1, Cmp::Lt, c),
                Predicate::magnitude(0, Cmp::Ge, c.abs() + 0.1),
                Predicate::HalfSpace { normal: a.clone(), cmp: Cmp::Le, offset: c },
            ] {
                let hx = signed_distance(&p, &x, &nrm).unwrap();
                let hy = signed_distance(&p, &y, &nrm).unwrap();
                prop_assert!((hx - hy).abs() <= dist * (1.0 + 1e-12) + 1e-12);
                if hx.abs() > 1e-12 {
                    prop_assert_eq!(hx > 0.0, p.holds(&x));
                }
            }
        }

        #[test]
        fn sign_agrees_with_monitor(values in prop::collection::vec(-1.5..1.5f64, 40), always in any::<bool>()) {
            let text = if always { "always (x[0] <= 1)" } else { "eventually (abs(x[1]) > 1.2)" };
            let spec = parse_spec(text).unwrap();
            let m = build_measure(&spec, &WeightedNorm::euclidean(2)).unwrap();
            let t = trace(&values, 2);
            let rho = robustness(&m, &t).unwrap();
            prop_assume!(rho.abs() >= 1e-9);
            prop_assert_eq!(rho >= 0.0, satisfies(&spec, &t).unwrap());
        }
    }
}
