//! Boolean satisfaction on the sample grid.
//!
//! Every node is evaluated to a truth vector over sample indices; `until` at index `k` holds when
//! some `j <= k` satisfies the right child while the left child holds at every index before `j`.
//! The final verdict is the root's value at the last sample. Nothing here touches norms or
//! robustness, so it can serve as an oracle for [`robustness`](super::robustness).

use super::{Spec, StlError};
use crate::signals::Trajectory;

/// Whether `s` satisfies `spec` by its final time.
pub fn satisfies(spec: &Spec, s: &Trajectory) -> Result<bool, StlError> {
    for p in spec.predicates() {
        if p.min_dim() > s.dim() {
            return Err(StlError::CoordinateOutOfRange { index: p.min_dim() - 1, dim: s.dim() });
        }
    }
    let truth = evaluate(spec, s);
    Ok(*truth.last().expect("trajectories are non-empty"))
}

fn evaluate(spec: &Spec, s: &Trajectory) -> Vec<bool> {
    let n = s.len();
    match spec {
        Spec::True => vec![true; n],
        Spec::False => vec![false; n],
        Spec::Pred(p) => s.states().iter().map(|x| p.holds(x)).collect(),
        Spec::Not(a) => evaluate(a, s).into_iter().map(|v| !v).collect(),
        Spec::And(a, b) => evaluate(a, s).into_iter().zip(evaluate(b, s)).map(|(x, y)| x && y).collect(),
        Spec::Or(a, b) => evaluate(a, s).into_iter().zip(evaluate(b, s)).map(|(x, y)| x || y).collect(),
        Spec::Until(a, b) => until(&evaluate(a, s), &evaluate(b, s)),
        Spec::Eventually(a) => until(&vec![true; n], &evaluate(a, s)),
        Spec::Always(a) => {
            let negated: Vec<bool> = evaluate(a, s).into_iter().map(|v| !v).collect();
            until(&vec![true; n], &negated).into_iter().map(|v| !v).collect()
        }
    }
}

fn until(lhs: &[bool], rhs: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(lhs.len());
    // lhs held at every index strictly before the current one
    let mut prefix_held = true;
    let mut found = false;
    for (l, r) in lhs.iter().zip(rhs) {
        found |= prefix_held && *r;
        out.push(found);
        prefix_held &= *l;
    }
    out
}
