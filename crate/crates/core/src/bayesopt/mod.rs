//! Bayesian minimization of a black-box objective over a mixed grid/continuous space.

mod acquisition;
mod gp;
mod space;

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acquisition::{ei_from_moments, expected_improvement, propose_next, ProposalBudget, EI_TIE_TOLERANCE};
pub use gp::{gp_fit, GpModel, KernelParams, MAX_JITTER};
pub use space::{Dimension, EnvSpace};

use crate::seeds::{derive_seed, rng_for, stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoError {
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("configuration {0:?} lies outside the space")]
    OutsideSpace(Vec<f64>),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("kernel matrix could not be factorized: {}", .0.join("; "))]
    Factorization(Vec<String>),
    #[error("every objective evaluation failed")]
    AllFailed,
    #[error("history does not match this run at iteration {iteration}: {reason}")]
    ResumeMismatch { iteration: usize, reason: String },
    #[error("history csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoParams {
    /// Total objective evaluations, including the initial design.
    pub budget: usize,
    pub init_count: usize,
    /// Kernel length scale in unit-box coordinates, shared by all dimensions.
    pub length_scale: f64,
    pub jitter: f64,
    pub starts_per_combination: usize,
    pub refined: usize,
}

impl Default for BoParams {
    fn default() -> Self {
        Self { budget: 300, init_count: 10, length_scale: 0.2, jitter: 1e-10, starts_per_combination: 8, refined: 8 }
    }
}

impl BoParams {
    pub fn validate(&self) -> Result<(), BoError> {
        if self.init_count == 0 || self.budget < self.init_count {
            return Err(BoError::InvalidParams(format!(
                "need budget >= init_count >= 1, got budget {} and init_count {}",
                self.budget, self.init_count
            )));
        }
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(BoError::InvalidParams(format!("length scale {}", self.length_scale)));
        }
        if !(self.jitter > 0.0) || self.jitter > MAX_JITTER {
            return Err(BoError::InvalidParams(format!("jitter {} must lie in (0, {MAX_JITTER}]", self.jitter)));
        }
        Ok(())
    }

    fn proposal(&self) -> ProposalBudget {
        ProposalBudget { starts_per_combination: self.starts_per_combination, refined: self.refined }
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub d: Vec<f64>,
    pub value: f64,
    /// Best non-penalized value so far; infinite until the first successful evaluation.
    pub incumbent: f64,
    /// The objective failed and `value` is a stand-in penalty.
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationResult {
    pub h_star: f64,
    pub d_star: Vec<f64>,
    pub history: Vec<Evaluation>,
    pub budget: usize,
}

impl FalsificationResult {
    /// True when the loop ran to its full budget.
    pub fn is_complete(&self) -> bool {
        self.history.len() >= self.budget
    }

    pub fn incumbent_curve(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.incumbent).collect()
    }
}

/// Sequential optimizer whose state is entirely determined by its history and seed, so a run can be
/// stopped after any evaluation and resumed from the recorded history.
#[derive(Debug, Clone)]
pub struct Falsifier {
    space: EnvSpace,
    params: BoParams,
    seed: u64,
    design: Vec<Vec<f64>>,
    history: Vec<Evaluation>,
}

impl Falsifier {
    pub fn new(space: EnvSpace, params: BoParams, seed: u64) -> Result<Self, BoError> {
        params.validate()?;
        let design = space.stratified_sample(params.init_count, &mut rng_for(seed, stream::INITIAL_DESIGN, 0));
        Ok(Self { space, params, seed, design, history: Vec::new() })
    }

    /// Restores a run from a previously recorded history.
    pub fn resume(space: EnvSpace, params: BoParams, seed: u64, history: Vec<Evaluation>) -> Result<Self, BoError> {
        let mut f = Self::new(space, params, seed)?;
        if history.len() > f.params.budget {
            return Err(BoError::ResumeMismatch {
                iteration: f.params.budget,
                reason: format!("history holds {} evaluations but the budget is {}", history.len(), f.params.budget),
            });
        }
        for (i, e) in history.into_iter().enumerate() {
            if e.iteration != i {
                return Err(BoError::ResumeMismatch { iteration: i, reason: format!("recorded as {}", e.iteration) });
            }
            if i < f.design.len() && e.d != f.design[i] {
                return Err(BoError::ResumeMismatch {
                    iteration: i,
                    reason: format!("initial design point {:?} differs from recorded {:?}", f.design[i], e.d),
                });
            }
            f.space.check(&e.d).map_err(|_| BoError::ResumeMismatch {
                iteration: i,
                reason: format!("{:?} lies outside the space", e.d),
            })?;
            f.history.push(e);
        }
        Ok(f)
    }

    pub fn history(&self) -> &[Evaluation] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.history.len() >= self.params.budget
    }

    fn record(&mut self, d: Vec<f64>, outcome: Option<f64>) -> &Evaluation {
        let worst = self.history.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
        let (value, penalized) = match outcome {
            Some(v) if v.is_finite() => (v, false),
            _ => (if worst.is_finite() { worst + 1.0 } else { 1.0 }, true),
        };
        let prev = self.history.last().map_or(f64::INFINITY, |e| e.incumbent);
        let incumbent = if penalized { prev } else { prev.min(value) };
        self.history.push(Evaluation { iteration: self.history.len(), d, value, incumbent, penalized });
        self.history.last().expect("just pushed")
    }

    /// Next configuration to evaluate, or `None` once the budget is spent.
    pub fn next_query(&self) -> Result<Option<Vec<f64>>, BoError> {
        let i = self.history.len();
        if i >= self.params.budget {
            return Ok(None);
        }
        if i < self.design.len() {
            return Ok(Some(self.design[i].clone()));
        }
        let model = self.model()?;
        let best = self.history.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        let seed = derive_seed(self.seed, stream::PROPOSAL, i as u64);
        Ok(Some(propose_next(&model, &self.space, best, self.params.proposal(), seed)))
    }

    /// Kernel parameters, fixed from the initial design for the whole run.
    pub fn kernel_params(&self) -> KernelParams {
        let init: Vec<f64> = self.history.iter().take(self.design.len()).map(|e| e.value).collect();
        let n = init.len().max(1) as f64;
        let mean = init.iter().sum::<f64>() / n;
        let var = if init.len() > 1 { init.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let mut p = KernelParams::isotropic(
            self.space.len(),
            self.params.length_scale,
            if var > 1e-12 && var.is_finite() { var } else { 1.0 },
            mean,
        );
        p.jitter = self.params.jitter;
        p
    }

    fn model(&self) -> Result<GpModel, BoError> {
        let xs: Vec<Vec<f64>> = self.history.iter().map(|e| self.space.normalize(&e.d)).collect();
        let ys: Vec<f64> = self.history.iter().map(|e| e.value).collect();
        gp_fit(&xs, &ys, &self.kernel_params())
    }

    /// Runs the loop until the budget is spent or `on_eval` breaks.
    ///
    /// Initial-design evaluations run in parallel; the rest are sequential. `on_eval` sees every new
    /// evaluation in iteration order.
    pub fn run<F, E>(
        &mut self,
        objective: F,
        mut on_eval: impl FnMut(&Evaluation) -> ControlFlow<()>,
    ) -> Result<FalsificationResult, BoError>
    where
        F: Fn(&[f64]) -> Result<f64, E> + Sync,
    {
        let start = self.history.len();
        if start < self.design.len() {
            let pending = &self.design[start..self.design.len().min(self.params.budget)];
            let outcomes: Vec<Option<f64>> = pending.par_iter().map(|d| objective(d).ok()).collect();
            for (d, outcome) in pending.to_vec().into_iter().zip(outcomes) {
                if on_eval(self.record(d, outcome)).is_break() {
                    return self.result();
                }
            }
        }
        while let Some(d) = self.next_query()? {
            let outcome = objective(&d).ok();
            if on_eval(self.record(d, outcome)).is_break() {
                break;
            }
        }
        self.result()
    }

    pub fn result(&self) -> Result<FalsificationResult, BoError> {
        let best = self
            .history
            .iter()
            .filter(|e| !e.penalized)
            .min_by(|a, b| a.value.total_cmp(&b.value).then(a.iteration.cmp(&b.iteration)))
            .ok_or(BoError::AllFailed)?;
        Ok(FalsificationResult {
            h_star: best.value,
            d_star: best.d.clone(),
            history: self.history.clone(),
            budget: self.params.budget,
        })
    }
}

/// Minimizes `objective` over `space`. Failed evaluations are penalized and never become the
/// incumbent.
pub fn minimize_robustness<F, E>(
    objective: F,
    space: &EnvSpace,
    params: &BoParams,
    seed: u64,
) -> Result<FalsificationResult, BoError>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
{
    Falsifier::new(space.clone(), params.clone(), seed)?.run(objective, |_| ControlFlow::Continue(()))
}

/// Serializes a history as CSV: `iteration,d1..dp,value,incumbent,penalized`.
pub fn history_to_csv(history: &[Evaluation], dim: usize) -> String {
    let mut out = String::from("iteration");
    for i in 1..=dim {
        write!(out, ",d{i}").unwrap();
    }
    out.push_str(",value,incumbent,penalized\n");
    for e in history {
        write!(out, "{}", e.iteration).unwrap();
        for v in &e.d {
            write!(out, ",{v}").unwrap();
        }
        writeln!(out, ",{},{},{}", e.value, e.incumbent, u8::from(e.penalized)).unwrap();
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<Vec<Evaluation>, BoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(BoError::Csv { line: 1, msg: "empty file".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n = cols.len();
    if n < 5 || cols[0] != "iteration" || cols[n - 3..] != ["value", "incumbent", "penalized"] {
        return Err(BoError::Csv { line: 1, msg: format!("unexpected header {header:?}") });
    }
    let dim = n - 4;
    let mut out = Vec::new();
    for (idx, line) in lines {
        let err = |msg: String| BoError::Csv { line: idx + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n {
            return Err(err(format!("expected {n} fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let iteration = fields[0].parse::<usize>().map_err(|e| err(format!("{:?}: {e}", fields[0])))?;
        let d = fields[1..=dim].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        let penalized = match fields[n - 1] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("penalized flag {other:?}"))),
        };
        out.push(Evaluation { iteration, d, value: num(fields[n - 3])?, incumbent: num(fields[n - 2])?, penalized });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval() -> EnvSpace {
        EnvSpace::new(vec![Dimension::Continuous { lo: 0.0, hi: 1.0 }]).unwrap()
    }

    fn params(budget: usize) -> BoParams {
        BoParams { budget, ..BoParams::default() }
    }

    fn quadratic(d: &[f64]) -> Result<f64, ()> {
        Ok((d[0] - 0.3).powi(2))
    }

    #[test]
    fn finds_a_quadratic_minimum() {
        let r = minimize_robustness(quadratic, &unit_interval(), &params(40), 1).unwrap();
        assert!(r.h_star.abs() < 1e-2, "{}", r.h_star);
        assert!((r.d_star[0] - 0.3).abs() <= 0.05, "{:?}", r.d_star);
        let grid_min = (0..10_000).map(|i| quadratic(&[i as f64 / 9999.0]).unwrap()).fold(f64::INFINITY, f64::min);
        assert!(r.h_star - grid_min < 1e-2);
    }

    #[test]
    fn constant_objective() {
        let r = minimize_robustness(|_: &[f64]| Ok::<_, ()>(0.7), &unit_interval(), &params(14), 2).unwrap();
        assert_eq!(r.h_star, 0.7);
        assert_eq!(r.history.len(), 14);
    }

    #[test]
    fn incumbent_is_monotone_and_h_star_is_the_minimum() {
        let space =
            EnvSpace::new(vec![Dimension::integer_range(1, 4), Dimension::Continuous { lo: -1.0, hi: 1.0 }]).unwrap();
        let f = |d: &[f64]| Ok::<_, ()>((d[0] - 2.0).powi(2) * 0.1 + (d[1] + 0.4).powi(2));
        let r = minimize_robustness(f, &space, &params(30), 3).unwrap();
        assert!(r.incumbent_curve().windows(2).all(|w| w[1] <= w[0]));
        let min = r.history.iter().map(|e| e.value).fold(f64::INFINITY, f64::min);
        assert_eq!(r.h_star, min);
        assert_eq!(f(&r.d_star).unwrap(), r.h_star);
        assert!(r.history.iter().all(|e| space.contains(&e.d)));
    }

    #[test]
    fn equal_seeds_give_equal_histories() {
        let a = minimize_robustness(quadratic, &unit_interval(), &params(20), 5).unwrap();
        let b = minimize_robustness(quadratic, &unit_interval(), &params(20), 5).unwrap();
        assert_eq!(a, b);
        let c = minimize_robustness(quadratic, &unit_interval(), &params(20), 6).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn failures_are_penalized_and_skipped() {
        let f = |d: &[f64]| if d[0] > 0.8 { Err("diverged") } else { Ok(d[0]) };
        let r = minimize_robustness(f, &unit_interval(), &params(20), 7).unwrap();
        let failed: Vec<_> = r.history.iter().filter(|e| e.penalized).collect();
        assert!(!failed.is_empty());
        for e in &failed {
            let worst_before = r.history[..e.iteration].iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
            let expected = if worst_before.is_finite() { worst_before + 1.0 } else { 1.0 };
            assert_eq!(e.value, expected);
        }
        assert!(r.d_star[0] <= 0.8);
        assert!(matches!(
            minimize_robustness(|_: &[f64]| Err::<f64, _>(()), &unit_interval(), &params(12), 1),
            Err(BoError::AllFailed)
        ));
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let space = unit_interval();
        let full = minimize_robustness(quadratic, &space, &params(25), 11).unwrap();
        for stop in [4, 10, 17] {
            let mut f = Falsifier::new(space.clone(), params(25), 11).unwrap();
            let partial = f
                .run(quadratic, |e| {
                    if e.iteration + 1 == stop {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                })
                .unwrap();
            assert_eq!(partial.history.len(), stop);
            assert!(!partial.is_complete());
            let csv = history_to_csv(&partial.history, 1);
            let restored = history_from_csv(&csv).unwrap();
            assert_eq!(restored, partial.history);
            let mut g = Falsifier::resume(space.clone(), params(25), 11, restored).unwrap();
            assert_eq!(g.run(quadratic, |_| ControlFlow::Continue(())).unwrap(), full);
        }
    }

    #[test]
    fn resume_rejects_foreign_histories() {
        let space = unit_interval();
        let other = minimize_robustness(quadratic, &space, &params(12), 1).unwrap();
        assert!(matches!(
            Falsifier::resume(space, params(12), 2, other.history),
            Err(BoError::ResumeMismatch { iteration: 0, .. })
        ));
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(history_from_csv("").is_err());
        assert!(history_from_csv("iteration,d1,value,incumbent,penalized\n0,0.5,1,1,2\n").is_err());
        assert!(history_from_csv("a,b\n").is_err());
    }

    #[test]
    fn params_validation() {
        assert!(BoParams { budget: 5, init_count: 10, ..BoParams::default() }.validate().is_err());
        assert!(BoParams { init_count: 0, ..BoParams::default() }.validate().is_err());
        assert!(BoParams::default().validate().is_ok());
    }
}
