use std::cmp::Ordering;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng as _;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use super::space::{Dimension, EnvSpace};
use super::GpModel;
use crate::seeds::{rng_for, stream};

/// EI values closer than this are treated as tied.
pub const EI_TIE_TOLERANCE: f64 = 1e-12;

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Expected improvement below `best` for a Gaussian with mean `mu` and std `sigma` (minimization).
///
/// Evaluated as `max(best - mu, 0) + sigma * g(z)` with `g >= 0`, which equals
/// `(best - mu) * Phi(z) + sigma * phi(z)` and keeps `EI >= max(best - mu, 0)` under rounding.
pub fn ei_from_moments(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = best - mu;
    if !(sigma > 0.0) {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let g = if z >= 0.0 { normal_pdf(z) - z * normal_cdf(-z) } else { normal_pdf(z) + z * normal_cdf(z) };
    gain.max(0.0) + sigma * g.max(0.0)
}

/// EI of the GP posterior at a unit-box input.
pub fn expected_improvement(m: &GpModel, x: &[f64], best: f64) -> f64 {
    let (mu, var) = m.posterior(x);
    ei_from_moments(mu, var.sqrt(), best)
}

/// Search effort for [`propose_next`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalBudget {
    /// Random stratified starts per grid combination on the continuous dimensions.
    pub starts_per_combination: usize,
    /// How many of the best starts get refined by coordinate search.
    pub refined: usize,
}

impl Default for ProposalBudget {
    fn default() -> Self {
        Self { starts_per_combination: 8, refined: 8 }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    config: Vec<f64>,
    unit: Vec<f64>,
    ei: f64,
    mean: f64,
}

impl Candidate {
    fn new(m: &GpModel, space: &EnvSpace, unit: Vec<f64>, best: f64) -> Self {
        let (mean, var) = m.posterior(&unit);
        let ei = ei_from_moments(mean, var.sqrt(), best);
        Self { config: denormalize(space, &unit), unit, ei, mean }
    }
}

fn denormalize(space: &EnvSpace, unit: &[f64]) -> Vec<f64> {
    space
        .dims()
        .iter()
        .zip(unit)
        .map(|(dim, u)| match dim {
            Dimension::Continuous { lo, hi } => (lo + u * (hi - lo)).clamp(*lo, *hi),
            Dimension::Grid { values } => {
                let k = values.len();
                let idx = if k <= 1 { 0 } else { (u * (k - 1) as f64).round() as usize };
                values[idx.min(k - 1)]
            }
        })
        .collect()
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Highest EI wins; near-ties go to the lower posterior mean, then the lexicographically smaller
/// configuration.
fn select(candidates: Vec<Candidate>) -> Candidate {
    let top = candidates.iter().map(|c| c.ei).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .into_iter()
        .filter(|c| c.ei >= top - EI_TIE_TOLERANCE)
        .min_by(|a, b| a.mean.total_cmp(&b.mean).then_with(|| lexicographic(&a.config, &b.config)))
        .expect("at least one candidate")
}

/// Pattern search on the continuous coordinates, keeping grid coordinates fixed.
fn refine(m: &GpModel, space: &EnvSpace, start: Candidate, best: f64, continuous: &[usize]) -> Candidate {
    let mut current = start;
    let mut step = 0.1;
    let mut evaluations = 0;
    while step > 1e-7 && evaluations < 2000 {
        let mut improved = false;
        for &i in continuous {
            for dir in [1.0, -1.0] {
                let mut unit = current.unit.clone();
                unit[i] = (unit[i] + dir * step).clamp(0.0, 1.0);
                if unit[i] == current.unit[i] {
                    continue;
                }
                let c = Candidate::new(m, space, unit, best);
                evaluations += 1;
                if c.ei > current.ei {
                    current = c;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    current
}

/// Maximizes EI over the space.
///
/// Grid dimensions are enumerated exhaustively. For each grid combination, continuous dimensions
/// are seeded with stratified random starts; the best starts overall are then polished by
/// coordinate search. Deterministic for a fixed `seed`.
pub fn propose_next(m: &GpModel, space: &EnvSpace, best: f64, budget: ProposalBudget, seed: u64) -> Vec<f64> {
    let continuous = space.continuous_dims();
    let combos = space.grid_combinations();
    let unit_template = |combo: &[f64]| -> Vec<f64> {
        space
            .dims()
            .iter()
            .zip(combo)
            .map(|(dim, v)| match dim {
                Dimension::Continuous { .. } => 0.0,
                Dimension::Grid { values } => {
                    let idx = values.iter().position(|g| g == v).expect("combination drawn from grid");
                    if values.len() <= 1 {
                        0.0
                    } else {
                        idx as f64 / (values.len() - 1) as f64
                    }
                }
            })
            .collect()
    };

    if continuous.is_empty() {
        let candidates: Vec<Candidate> =
            combos.par_iter().map(|combo| Candidate::new(m, space, unit_template(combo), best)).collect();
        return select(candidates).config;
    }

    let starts = budget.starts_per_combination.max(1);
    let mut candidates: Vec<Candidate> = combos
        .par_iter()
        .enumerate()
        .flat_map_iter(|(ci, combo)| {
            let mut rng = rng_for(seed, stream::PROPOSAL, ci as u64);
            let template = unit_template(combo);
            let mut strata: Vec<Vec<usize>> = continuous.iter().map(|_| (0..starts).collect()).collect();
            for s in &mut strata {
                rand::seq::SliceRandom::shuffle(s.as_mut_slice(), &mut rng);
            }
            let mut out = Vec::with_capacity(starts);
            for k in 0..starts {
                let mut unit = template.clone();
                for (j, &dim) in continuous.iter().enumerate() {
                    unit[dim] = (strata[j][k] as f64 + rng.gen::<f64>()) / starts as f64;
                }
                out.push(Candidate::new(m, space, unit, best));
            }
            out
        })
        .collect();

    candidates.sort_by(|a, b| b.ei.total_cmp(&a.ei).then_with(|| lexicographic(&a.config, &b.config)));
    let refined: Vec<Candidate> = candidates[..budget.refined.min(candidates.len())]
        .par_iter()
        .map(|c| refine(m, space, c.clone(), best, &continuous))
        .collect();
    candidates.extend(refined);
    select(candidates).config
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::{gp_fit, KernelParams};
    use crate::seeds::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn ei_at_zero_z() {
        assert!((ei_from_moments(1.0, 1.0, 1.0) - 0.398942).abs() < 1e-6);
        assert_eq!(ei_from_moments(2.0, 0.0, 1.0), 0.0);
        assert_eq!(ei_from_moments(0.5, 0.0, 1.0), 0.5);
    }

    #[test]
    fn ei_matches_the_textbook_formula() {
        for (mu, sigma, best) in [(0.2, 0.5, 0.4), (1.0, 0.3, 0.1), (-0.3, 2.0, 0.0)] {
            let z: f64 = (best - mu) / sigma;
            let textbook = (best - mu) * normal_cdf(z) + sigma * normal_pdf(z);
            assert!((ei_from_moments(mu, sigma, best) - textbook).abs() < 1e-12);
        }
    }

    #[test]
    fn ei_vanishes_at_the_incumbent() {
        let m = gp_fit(&[vec![0.2], vec![0.7]], &[0.5, 1.0], &KernelParams::isotropic(1, 0.2, 1.0, 0.75)).unwrap();
        assert!(expected_improvement(&m, &[0.2], 0.5) <= 1e-8);
    }

    #[test]
    fn enumerates_a_pure_grid() {
        let space = EnvSpace::new(vec![Dimension::integer_range(1, 5)]).unwrap();
        // observations at 1 and 5 are poor; the middle is unexplored and has the largest variance
        let m = gp_fit(&[vec![0.0], vec![1.0]], &[1.0, 1.0], &KernelParams::isotropic(1, 0.2, 1.0, 1.0)).unwrap();
        let brute = (1..=5)
            .map(|v| (v, expected_improvement(&m, &space.normalize(&[v as f64]), 1.0)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_eq!(brute.0, 3);
        assert_eq!(propose_next(&m, &space, 1.0, ProposalBudget::default(), 0), vec![3.0]);
    }

    #[test]
    fn near_ties_prefer_the_lower_mean() {
        let a = Candidate { config: vec![2.0], unit: vec![0.25], ei: 0.5, mean: 0.3 };
        let b = Candidate { config: vec![1.0], unit: vec![0.0], ei: 0.5 + 5e-13, mean: 0.7 };
        assert_eq!(select(vec![b.clone(), a.clone()]).config, vec![2.0]);
        let c = Candidate { mean: 0.3, ..b };
        assert_eq!(select(vec![a, c]).config, vec![1.0]);
    }

    #[test]
    fn continuous_proposal_beats_random_probes() {
        let space = EnvSpace::new(vec![Dimension::Continuous { lo: 0.0, hi: 1.0 }]).unwrap();
        let m = gp_fit(&[vec![0.2], vec![0.65]], &[0.3, -0.1], &KernelParams::isotropic(1, 0.2, 0.1, 0.1)).unwrap();
        let best = -0.1;
        let proposal = propose_next(&m, &space, best, ProposalBudget::default(), 3);
        let ei = expected_improvement(&m, &space.normalize(&proposal), best);
        let mut rng = Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let probe: f64 = rng.gen();
            assert!(ei >= expected_improvement(&m, &[probe], best), "probe {probe} beats {proposal:?}");
        }
    }

    #[test]
    fn proposals_are_deterministic() {
        let space =
            EnvSpace::new(vec![Dimension::integer_range(1, 3), Dimension::Continuous { lo: 0.0, hi: 10.0 }]).unwrap();
        let xs = vec![vec![0.0, 0.1], vec![0.5, 0.9], vec![1.0, 0.4]];
        let m = gp_fit(&xs, &[0.2, 0.5, -0.1], &KernelParams::isotropic(2, 0.2, 0.1, 0.2)).unwrap();
        let a = propose_next(&m, &space, -0.1, ProposalBudget::default(), 9);
        assert_eq!(a, propose_next(&m, &space, -0.1, ProposalBudget::default(), 9));
        assert!(space.contains(&a));
    }

    proptest! {
        #[test]
        fn ei_is_nonnegative_and_dominates_the_gain(mu in -5.0..5.0f64, sigma in 1e-6..5.0f64, best in -5.0..5.0f64) {
            let ei = ei_from_moments(mu, sigma, best);
            prop_assert!(ei >= 0.0);
            prop_assert!(ei >= best - mu);
        }
    }
}
