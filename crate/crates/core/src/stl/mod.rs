//! Reach-avoid Signal Temporal Logic.
//!
//! Formulas are parsed into a [`Spec`] tree. Two independent evaluators work on that tree:
//!
//! * [`satisfies`] is a boolean monitor for the whole untimed fragment (`not`, `and`, `or`,
//!   `until` and the `eventually`/`always` sugar), evaluated on the sample grid.
//! * [`build_measure`] turns a *certifiable* formula, `eventually (p)` or `always (p)` over a
//!   single predicate, into a [`RobustnessMeasure`]: a signed distance to the predicate's boundary
//!   folded with `max` or `min` over time. Its Lipschitz constant with respect to the sup-norm
//!   induced by the chosen [`WeightedNorm`](crate::signals::WeightedNorm) is known exactly.
//!
//! The sign of the measure agrees with the monitor everywhere except on the predicate boundary,
//! where the measure is zero and counts as satisfied.

mod measure;
mod monitor;
mod parse;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::signals::SignalError;

pub use measure::{build_measure, robustness, signed_distance, RobustnessMeasure, TemporalMode};
pub use monitor::satisfies;
pub use parse::parse_spec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown identifier `{name}` at line {line}, column {col}")]
    UnknownIdentifier { name: String, line: usize, col: usize },
    #[error("formula `{0}` is outside the Assumption 1 fragment (expected `eventually (p)` or `always (p)` over one predicate)")]
    OutsideFragment(String),
    #[error("invalid predicate: {0}")]
    InvalidPredicate(String),
    #[error("predicate needs coordinate {index} but the state has dimension {dim}")]
    CoordinateOutOfRange { index: usize, dim: usize },
    #[error("norm gives zero weight to coordinate {0}, so the predicate's signed distance is degenerate")]
    DegenerateNorm(usize),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Le,
    Lt,
    Ge,
    Gt,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Le => lhs <= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
        }
    }

    /// True for `>=` and `>`.
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Cmp::Ge | Cmp::Gt)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Lt => "<",
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
        }
    }
}

/// A user-supplied signed distance `h` with a declared Lipschitz constant.
///
/// `h(x) >= 0` must hold exactly on the truth region. The declared constant is trusted.
#[derive(Clone)]
pub struct SignedDistanceFn {
    name: String,
    dim: usize,
    lipschitz: f64,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl SignedDistanceFn {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        lipschitz: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), dim, lipschitz, f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for SignedDistanceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SignedDistanceFn")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SignedDistanceFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

/// An atomic proposition over one state vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Literal(bool),
    /// `x[index] cmp bound`
    Coordinate {
        index: usize,
        cmp: Cmp,
        bound: f64,
    },
    /// `abs(x[index]) cmp bound`
    Magnitude {
        index: usize,
        cmp: Cmp,
        bound: f64,
    },
    /// `normal . x cmp offset`
    HalfSpace {
        normal: Vec<f64>,
        cmp: Cmp,
        offset: f64,
    },
    SignedDistance(SignedDistanceFn),
}

impl Predicate {
    pub fn coordinate(index: usize, cmp: Cmp, bound: f64) -> Self {
        Predicate::Coordinate { index, cmp, bound }
    }

    pub fn magnitude(index: usize, cmp: Cmp, bound: f64) -> Self {
        Predicate::Magnitude { index, cmp, bound }
    }

    /// Rejects predicates whose truth region or its complement is empty.
    pub fn validate(&self) -> Result<(), StlError> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(StlError::InvalidPredicate(format!("{what} must be finite")))
            }
        };
        match self {
            Predicate::Literal(_) => Ok(()),
            Predicate::Coordinate { bound, .. } => finite(*bound, "bound"),
            Predicate::Magnitude { cmp, bound, .. } => {
                finite(*bound, "bound")?;
                let ok = match cmp {
                    Cmp::Le | Cmp::Gt => *bound >= 0.0,
                    Cmp::Lt | Cmp::Ge => *bound > 0.0,
                };
                if ok {
                    Ok(())
                } else {
                    Err(StlError::InvalidPredicate(format!(
                        "`{self}` has an empty truth region or an empty complement"
                    )))
                }
            }
            Predicate::HalfSpace { normal, offset, .. } => {
                finite(*offset, "offset")?;
                if normal.iter().any(|v| !v.is_finite()) || normal.iter().all(|v| *v == 0.0) {
                    return Err(StlError::InvalidPredicate("half-space normal must be finite and nonzero".into()));
                }
                Ok(())
            }
            Predicate::SignedDistance(sd) => {
                if sd.lipschitz > 0.0 && sd.lipschitz.is_finite() {
                    Ok(())
                } else {
                    Err(StlError::InvalidPredicate(format!("`{}` needs a positive Lipschitz constant", sd.name)))
                }
            }
        }
    }

    /// Smallest state dimension the predicate can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match self {
            Predicate::Literal(_) => 0,
            Predicate::Coordinate { index, .. } | Predicate::Magnitude { index, .. } => index + 1,
            Predicate::HalfSpace { normal, .. } => normal.len(),
            Predicate::SignedDistance(sd) => sd.dim,
        }
    }

    /// The state coordinate a single-coordinate predicate reads.
    pub fn coordinate_index(&self) -> Option<usize> {
        match self {
            Predicate::Coordinate { index, .. } | Predicate::Magnitude { index, .. } => Some(*index),
            _ => None,
        }
    }

    /// Boolean truth at one state. Used by the monitor; never consults a norm.
    pub fn holds(&self, x: &[f64]) -> bool {
        match self {
            Predicate::Literal(b) => *b,
            Predicate::Coordinate { index, cmp, bound } => cmp.holds(x[*index], *bound),
            Predicate::Magnitude { index, cmp, bound } => cmp.holds(x[*index].abs(), *bound),
            Predicate::HalfSpace { normal, cmp, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(a, v)| a * v).sum();
                cmp.holds(dot, *offset)
            }
            Predicate::SignedDistance(sd) => sd.eval(x) >= 0.0,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Literal(b) => write!(f, "{b}"),
            Predicate::Coordinate { index, cmp, bound } => write!(f, "x[{index}] {} {bound}", cmp.symbol()),
            Predicate::Magnitude { index, cmp, bound } => write!(f, "abs(x[{index}]) {} {bound}", cmp.symbol()),
            Predicate::HalfSpace { normal, cmp, offset } => {
                write!(f, "halfspace(")?;
                for (i, a) in normal.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ") {} {offset}", cmp.symbol())
            }
            Predicate::SignedDistance(sd) => write!(f, "sdf:{}", sd.name),
        }
    }
}

/// Untimed STL formula.
#[derive(Debug, Clone, PartialEq)]
pub enum Spec {
    True,
    False,
    Pred(Predicate),
    Not(Box<Spec>),
    And(Box<Spec>, Box<Spec>),
    Or(Box<Spec>, Box<Spec>),
    Until(Box<Spec>, Box<Spec>),
    /// `true until phi`
    Eventually(Box<Spec>),
    /// `not (true until not phi)`
    Always(Box<Spec>),
}

impl Spec {
    pub fn pred(p: Predicate) -> Self {
        Spec::Pred(p)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(s: Spec) -> Self {
        Spec::Not(Box::new(s))
    }

    pub fn and(a: Spec, b: Spec) -> Self {
        Spec::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Spec, b: Spec) -> Self {
        Spec::Or(Box::new(a), Box::new(b))
    }

    pub fn until(a: Spec, b: Spec) -> Self {
        Spec::Until(Box::new(a), Box::new(b))
    }

    pub fn eventually(s: Spec) -> Self {
        Spec::Eventually(Box::new(s))
    }

    pub fn always(s: Spec) -> Self {
        Spec::Always(Box::new(s))
    }

    /// Whether [`build_measure`] accepts this formula.
    pub fn is_certifiable(&self) -> bool {
        measure::decompose(self).is_some()
    }

    pub fn predicates(&self) -> Vec<&Predicate> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut Vec<&'a Predicate>) {
        match self {
            Spec::True | Spec::False => {}
            Spec::Pred(p) => out.push(p),
            Spec::Not(a) | Spec::Eventually(a) | Spec::Always(a) => a.collect_predicates(out),
            Spec::And(a, b) | Spec::Or(a, b) | Spec::Until(a, b) => {
                a.collect_predicates(out);
                b.collect_predicates(out);
            }
        }
    }
}

impl fmt::Display for Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Spec::True => write!(f, "true"),
            Spec::False => write!(f, "false"),
            Spec::Pred(p) => write!(f, "{p}"),
            Spec::Not(a) => write!(f, "not ({a})"),
            Spec::And(a, b) => write!(f, "({a} and {b})"),
            Spec::Or(a, b) => write!(f, "({a} or {b})"),
            Spec::Until(a, b) => write!(f, "({a} until {b})"),
            Spec::Eventually(a) => write!(f, "eventually ({a})"),
            Spec::Always(a) => write!(f, "always ({a})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magnitude_predicates_need_nontrivial_regions() {
        assert!(Predicate::magnitude(0, Cmp::Le, -1.0).validate().is_err());
        assert!(Predicate::magnitude(0, Cmp::Ge, 0.0).validate().is_err());
        assert!(Predicate::magnitude(0, Cmp::Le, 0.0).validate().is_ok());
        assert!(Predicate::coordinate(0, Cmp::Le, f64::NAN).validate().is_err());
        let hs = Predicate::HalfSpace { normal: vec![0.0, 0.0], cmp: Cmp::Ge, offset: 1.0 };
        assert!(hs.validate().is_err());
    }

    #[test]
    fn display_uses_the_surface_syntax() {
        let s = Spec::always(Spec::pred(Predicate::magnitude(2, Cmp::Le, 0.7)));
        assert_eq!(s.to_string(), "always (abs(x[2]) <= 0.7)");
        let u = Spec::until(Spec::True, Spec::not(Spec::pred(Predicate::coordinate(0, Cmp::Gt, -1.5))));
        assert_eq!(u.to_string(), "(true until not (x[0] > -1.5))");
    }

    #[test]
    fn certifiable_shapes() {
        let p = || Spec::pred(Predicate::coordinate(0, Cmp::Ge, 1.0));
        assert!(Spec::eventually(p()).is_certifiable());
        assert!(Spec::always(p()).is_certifiable());
        assert!(Spec::until(Spec::True, p()).is_certifiable());
        assert!(Spec::not(Spec::until(Spec::True, Spec::not(p()))).is_certifiable());
        assert!(!Spec::and(p(), p()).is_certifiable());
        assert!(!Spec::always(Spec::and(p(), p())).is_certifiable());
        assert!(!Spec::until(p(), p()).is_certifiable());
        assert!(!p().is_certifiable());
    }
}
