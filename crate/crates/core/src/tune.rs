//! Differential evolution (DE/rand/1/bin) and the forest hyperparameter
//! search space it is used on.

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{HyperParams, MaxFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Integer,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub low: f64,
    pub high: f64,
    pub kind: BoundKind,
}

impl Bound {
    pub fn integer(low: i64, high: i64) -> Self {
        Bound {
            low: low as f64,
            high: high as f64,
            kind: BoundKind::Integer,
        }
    }

    pub fn real(low: f64, high: f64) -> Self {
        Bound {
            low,
            high,
            kind: BoundKind::Real,
        }
    }

    fn repair(&self, v: f64) -> f64 {
        let v = v.clamp(self.low, self.high);
        match self.kind {
            BoundKind::Integer => v.round().clamp(self.low, self.high),
            BoundKind::Real => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_factor: f64,
    pub crossover_rate: f64,
    pub bounds: Vec<Bound>,
    pub seed: u64,
}

impl DeConfig {
    /// Defaults (population 20, 10 generations, F 0.8, CR 0.9) over `bounds`.
    pub fn new(bounds: Vec<Bound>, seed: u64) -> Self {
        DeConfig {
            population: 20,
            generations: 10,
            mutation_factor: 0.8,
            crossover_rate: 0.9,
            bounds,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config("DE population must be at least 4".into()));
        }
        if !(self.crossover_rate > 0.0 && self.crossover_rate <= 1.0) {
            return Err(Error::Config("DE crossover rate must lie in (0, 1]".into()));
        }
        if !(self.mutation_factor > 0.0 && self.mutation_factor <= 2.0) {
            return Err(Error::Config("DE mutation factor must lie in (0, 2]".into()));
        }
        if self.bounds.is_empty() {
            return Err(Error::Config("DE needs at least one dimension".into()));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !(b.low.is_finite() && b.high.is_finite()) || b.low > b.high {
                return Err(Error::Config(format!("malformed bound on dimension {i}: [{}, {}]", b.low, b.high)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best-so-far fitness after initialization (entry 0) and after each generation.
    pub history: Vec<f64>,
    /// Best member after each entry of `history`.
    pub history_best: Vec<Vec<f64>>,
    pub evaluations: usize,
    /// Evaluations whose fitness was NaN or infinite.
    pub rejected: usize,
}

/// Maximizes `objective` over the box `cfg.bounds`.
///
/// `initial` members, when given, replace the first random members of the
/// starting population (after bound repair). All random draws happen on the
/// calling thread before each batch of evaluations, so the trajectory is
/// fixed by the seed no matter how evaluations are scheduled.
pub fn optimize<F>(objective: F, cfg: &DeConfig, initial: &[Vec<f64>]) -> Result<DeOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let dims = cfg.bounds.len();
    if let Some(bad) = initial.iter().find(|m| m.len() != dims) {
        return Err(Error::Config(format!("initial member has {} dimensions, expected {dims}", bad.len())));
    }
    let repair = |v: &mut Vec<f64>| {
        for (x, b) in v.iter_mut().zip(&cfg.bounds) {
            *x = b.repair(*x);
        }
    };
    let mut rejected = 0usize;
    let mut evaluate = |batch: &[Vec<f64>]| -> Vec<f64> {
        let raw: Vec<f64> = batch.par_iter().map(|m| objective(m)).collect();
        raw.into_iter()
            .map(|f| {
                if f.is_finite() {
                    f
                } else {
                    rejected += 1;
                    f64::NEG_INFINITY
                }
            })
            .collect()
    };

    // Collapsed search space: one point, one evaluation.
    if cfg.bounds.iter().all(|b| b.low == b.high) {
        let point: Vec<f64> = cfg.bounds.iter().map(|b| b.low).collect();
        let f = evaluate(std::slice::from_ref(&point))[0];
        return Ok(DeOutcome {
            best: point.clone(),
            best_fitness: f,
            history: vec![f],
            history_best: vec![point],
            evaluations: 1,
            rejected,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut population: Vec<Vec<f64>> = (0..cfg.population)
        .map(|i| {
            let mut m = match initial.get(i) {
                Some(m) => m.clone(),
                None => cfg.bounds.iter().map(|b| rng.random_range(b.low..=b.high)).collect(),
            };
            repair(&mut m);
            m
        })
        .collect();
    let mut fitness = evaluate(&population);
    let mut evaluations = population.len();

    let argmax = |fit: &[f64]| {
        let mut best = 0;
        for (i, &f) in fit.iter().enumerate() {
            if f > fit[best] {
                best = i;
            }
        }
        best
    };
    let b0 = argmax(&fitness);
    let mut best = population[b0].clone();
    let mut best_fitness = fitness[b0];
    let mut history = vec![best_fitness];
    let mut history_best = vec![best.clone()];

    for _ in 0..cfg.generations {
        let trials: Vec<Vec<f64>> = (0..cfg.population)
            .map(|i| {
                let picks = loop {
                    let p = sample(&mut rng, cfg.population, 3).into_vec();
                    if !p.contains(&i) {
                        break p;
                    }
                };
                let (a, b, c) = (&population[picks[0]], &population[picks[1]], &population[picks[2]]);
                let forced = rng.random_range(0..dims);
                let mut trial = population[i].clone();
                for d in 0..dims {
                    if d == forced || rng.random::<f64>() < cfg.crossover_rate {
                        trial[d] = a[d] + cfg.mutation_factor * (b[d] - c[d]);
                    }
                }
                repair(&mut trial);
                trial
            })
            .collect();
        let trial_fitness = evaluate(&trials);
        evaluations += trials.len();
        for (i, (trial, f)) in trials.into_iter().zip(trial_fitness).enumerate() {
            if f >= fitness[i] {
                population[i] = trial;
                fitness[i] = f;
            }
        }
        let g = argmax(&fitness);
        if fitness[g] > best_fitness {
            best_fitness = fitness[g];
            best = population[g].clone();
        }
        history.push(best_fitness);
        history_best.push(best.clone());
    }
    if rejected > 0 {
        warn!("differential evolution rejected {rejected} non-finite fitness value(s)");
    }
    Ok(DeOutcome {
        best,
        best_fitness,
        history,
        history_best,
        evaluations,
        rejected,
    })
}

/// Encoding of [`HyperParams`] as a DE vector:
/// `[n_trees, max_depth (0 = unlimited), min_samples_split, min_samples_leaf, max_features fraction]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSearchSpace {
    pub n_trees: (i64, i64),
    pub max_depth: (i64, i64),
    pub min_samples_split: (i64, i64),
    pub min_samples_leaf: (i64, i64),
    pub max_features: (f64, f64),
}

impl Default for ForestSearchSpace {
    fn default() -> Self {
        ForestSearchSpace {
            n_trees: (50, 150),
            max_depth: (0, 30),
            min_samples_split: (2, 20),
            min_samples_leaf: (1, 12),
            max_features: (0.01, 1.0),
        }
    }
}

impl ForestSearchSpace {
    pub fn bounds(&self) -> Vec<Bound> {
        vec![
            Bound::integer(self.n_trees.0, self.n_trees.1),
            Bound::integer(self.max_depth.0, self.max_depth.1),
            Bound::integer(self.min_samples_split.0, self.min_samples_split.1),
            Bound::integer(self.min_samples_leaf.0, self.min_samples_leaf.1),
            Bound::real(self.max_features.0, self.max_features.1),
        ]
    }

    pub fn decode(&self, v: &[f64]) -> HyperParams {
        let int = |x: f64| x.round().max(0.0) as usize;
        let depth = int(v[1]);
        HyperParams {
            n_trees: int(v[0]).max(1),
            max_depth: if depth == 0 { None } else { Some(depth) },
            min_samples_split: int(v[2]).max(2),
            min_samples_leaf: int(v[3]).max(1),
            max_features: MaxFeatures::Fraction(v[4].clamp(f64::MIN_POSITIVE, 1.0)),
            bootstrap: true,
        }
    }

    /// Encodes `params` for a feature space of `n_features` columns, so that
    /// the decoded params resolve to the same feature count.
    pub fn encode(&self, params: &HyperParams, n_features: usize) -> Vec<f64> {
        let n = n_features.max(1) as f64;
        let fraction = match params.max_features {
            MaxFeatures::Fraction(f) => f,
            // Centre of the bucket that floors to the wanted count.
            other => (other.resolve(n_features) as f64 + 0.5) / n,
        };
        vec![
            params.n_trees as f64,
            params.max_depth.unwrap_or(0) as f64,
            params.min_samples_split as f64,
            params.min_samples_leaf as f64,
            fraction.clamp(self.max_features.0, self.max_features.1),
        ]
    }
}
