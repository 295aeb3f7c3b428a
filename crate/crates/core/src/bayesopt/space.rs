use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::BoError;
use crate::seeds::Rng;

/// One axis of the environment space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Dimension {
    Continuous {
        lo: f64,
        hi: f64,
    },
    /// A finite, ordered set of admissible values.
    Grid {
        values: Vec<f64>,
    },
}

impl Dimension {
    pub fn integer_range(lo: i64, hi: i64) -> Self {
        Dimension::Grid { values: (lo..=hi).map(|v| v as f64).collect() }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            Dimension::Continuous { lo, hi } => (*lo..=*hi).contains(&v),
            Dimension::Grid { values } => values.contains(&v),
        }
    }
}

/// Box of continuous and grid dimensions the configuration `d` ranges over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpace {
    dims: Vec<Dimension>,
}

impl EnvSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self, BoError> {
        if dims.is_empty() {
            return Err(BoError::InvalidSpace("needs at least one dimension".into()));
        }
        for (i, dim) in dims.iter().enumerate() {
            match dim {
                Dimension::Continuous { lo, hi } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(BoError::InvalidSpace(format!("dimension {i}: need finite lo < hi")));
                    }
                }
                Dimension::Grid { values } => {
                    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                        return Err(BoError::InvalidSpace(format!("dimension {i}: grid needs finite values")));
                    }
                    if values.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(BoError::InvalidSpace(format!("dimension {i}: grid must be strictly increasing")));
                    }
                }
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        d.len() == self.dims.len() && self.dims.iter().zip(d).all(|(dim, v)| dim.contains(*v))
    }

    pub fn check(&self, d: &[f64]) -> Result<(), BoError> {
        if self.contains(d) {
            Ok(())
        } else {
            Err(BoError::OutsideSpace(d.to_vec()))
        }
    }

    pub(crate) fn continuous_dims(&self) -> Vec<usize> {
        (0..self.dims.len()).filter(|i| matches!(self.dims[*i], Dimension::Continuous { .. })).collect()
    }

    /// Maps a configuration into the unit box. Grid values map to `index / (k - 1)`.
    pub fn normalize(&self, d: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(d)
            .map(|(dim, v)| match dim {
                Dimension::Continuous { lo, hi } => (v - lo) / (hi - lo),
                Dimension::Grid { values } => {
                    let idx = values.iter().position(|g| g == v).unwrap_or_else(|| nearest(values, *v));
                    grid_coordinate(idx, values.len())
                }
            })
            .collect()
    }

    /// Every combination of grid values, in lexicographic index order. Continuous slots hold NaN.
    pub(crate) fn grid_combinations(&self) -> Vec<Vec<f64>> {
        let mut combos = vec![Vec::with_capacity(self.dims.len())];
        for dim in &self.dims {
            let choices: Vec<f64> = match dim {
                Dimension::Continuous { .. } => vec![f64::NAN],
                Dimension::Grid { values } => values.clone(),
            };
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    choices.iter().map(move |c| {
                        let mut next = prefix.clone();
                        next.push(*c);
                        next
                    })
                })
                .collect();
        }
        combos
    }

    pub fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        self.dims
            .iter()
            .map(|dim| match dim {
                Dimension::Continuous { lo, hi } => rng.gen_range(*lo..=*hi),
                Dimension::Grid { values } => *values.choose(rng).expect("non-empty grid"),
            })
            .collect()
    }

    /// Latin-hypercube style design: each dimension is cut into `n` strata, visited once each in a
    /// shuffled order. Grid dimensions map strata onto their values.
    pub fn stratified_sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        let mut points = vec![Vec::with_capacity(self.dims.len()); n];
        for dim in &self.dims {
            let mut strata: Vec<usize> = (0..n).collect();
            strata.shuffle(rng);
            for (point, s) in points.iter_mut().zip(strata) {
                let u = (s as f64 + rng.gen::<f64>()) / n as f64;
                point.push(match dim {
                    Dimension::Continuous { lo, hi } => lo + u * (hi - lo),
                    Dimension::Grid { values } => values[((u * values.len() as f64) as usize).min(values.len() - 1)],
                });
            }
        }
        points
    }
}

fn grid_coordinate(idx: usize, k: usize) -> f64 {
    if k <= 1 {
        0.0
    } else {
        idx as f64 / (k - 1) as f64
    }
}

fn nearest(values: &[f64], v: f64) -> usize {
    values.iter().enumerate().min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs())).map(|(i, _)| i).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mixed() -> EnvSpace {
        EnvSpace::new(vec![Dimension::integer_range(1, 5), Dimension::Continuous { lo: 0.0, hi: 10.0 }]).unwrap()
    }

    #[test]
    fn validation() {
        assert!(EnvSpace::new(vec![]).is_err());
        assert!(EnvSpace::new(vec![Dimension::Continuous { lo: 1.0, hi: 1.0 }]).is_err());
        assert!(EnvSpace::new(vec![Dimension::Grid { values: vec![2.0, 1.0] }]).is_err());
    }

    #[test]
    fn normalization_maps_grid_indices() {
        let s = mixed();
        assert_eq!(s.normalize(&[1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(s.normalize(&[3.0, 5.0]), vec![0.5, 0.5]);
        assert_eq!(s.normalize(&[5.0, 10.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn combinations_and_samples_stay_inside() {
        let s = mixed();
        assert_eq!(s.grid_combinations().len(), 5);
        let mut rng = Rng::seed_from_u64(4);
        for p in s.stratified_sample(10, &mut rng) {
            assert!(s.contains(&p), "{p:?}");
        }
        for _ in 0..100 {
            assert!(s.contains(&s.sample_uniform(&mut rng)));
        }
        // one point per stratum on the continuous axis
        let design = s.stratified_sample(10, &mut Rng::seed_from_u64(5));
        let mut strata: Vec<usize> = design.iter().map(|p| (p[1]) as usize).collect();
        strata.sort();
        assert_eq!(strata, (0..10).collect::<Vec<_>>());
    }
}
