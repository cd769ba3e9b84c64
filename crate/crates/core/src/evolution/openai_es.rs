use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const NOISE_TAG: u64 = 0x6e6f_6973;
const TASK_TAG: u64 = 0x7461_736b;

/// OpenAI-ES search distribution. Noise for generation `g` is drawn from
/// streams derived from `(seed, g)`, so the state alone determines the
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub sigma_decay: f64,
    pub learning_rate: f64,
    pub generation: u64,
    pub seed: u64,
}

impl EsState {
    pub fn new(mean: Vec<f64>, sigma: f64, sigma_decay: f64, learning_rate: f64, seed: u64) -> Result<Self> {
        let state = Self {
            mean,
            sigma,
            sigma_decay,
            learning_rate,
            generation: 0,
            seed,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("ES mean must be non-empty and finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput("ES sigma must be positive".into()));
        }
        if !(self.sigma_decay > 0.0 && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput("ES decay must be positive and learning rate nonnegative".into()));
        }
        Ok(())
    }
}

/// Outcome of evaluating one antithetic generation.
#[derive(Debug, Clone, PartialEq)]
pub struct EsGeneration {
    pub gradient: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

/// Pairwise rank transform: the better member of each pair scores 1, the
/// other 0. NaN or `+inf` on either side is a tie; `-inf` ranks last.
pub fn pair_ranks(plus: f64, minus: f64) -> (f64, f64) {
    if plus.is_nan() || minus.is_nan() || plus == f64::INFINITY || minus == f64::INFINITY {
        return (0.0, 0.0);
    }
    if plus > minus {
        (1.0, 0.0)
    } else if minus > plus {
        (0.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// `(1 / m) sum_i eps_i (rank+_i - rank-_i) / (2 sigma)` over `m` pairs.
pub fn es_gradient(noise: &[Vec<f64>], plus: &[f64], minus: &[f64], sigma: f64) -> Vec<f64> {
    let dim = noise.first().map_or(0, Vec::len);
    let mut grad = vec![0.0; dim];
    let pairs = noise.len() as f64;
    for ((eps, &fp), &fm) in noise.iter().zip(plus).zip(minus) {
        let (rp, rm) = pair_ranks(fp, fm);
        let weight = (rp - rm) / (2.0 * sigma);
        if weight != 0.0 {
            grad.iter_mut().zip(eps).for_each(|(g, e)| *g += e * weight);
        }
    }
    grad.iter_mut().for_each(|g| *g /= pairs);
    grad
}

/// Perturbation for pair `pair` of the state's current generation.
pub fn es_noise(state: &EsState, pair: usize) -> Vec<f64> {
    let mut r = rng::stream(state.seed, &[NOISE_TAG, state.generation, pair as u64]);
    (0..state.mean.len()).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Task seed shared by both members of pair `pair`.
pub fn es_task_seed(state: &EsState, pair: usize) -> u64 {
    rng::derive_seed(state.seed, &[TASK_TAG, state.generation, pair as u64])
}

/// One antithetic generation. `fitness(params, task_seed)` is maximized; both
/// members of a pair see the same task seed. Evaluations run in parallel and
/// are consumed in pair order.
pub fn openai_es_step<F>(state: &EsState, population_size: usize, fitness: &F) -> Result<(EsState, EsGeneration)>
where
    F: Fn(&[f64], u64) -> f64 + Sync,
{
    state.validate()?;
    if population_size < 2 || population_size % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "population size must be even and at least 2, got {population_size}"
        )));
    }
    let pairs = population_size / 2;
    let noise: Vec<Vec<f64>> = (0..pairs).map(|i| es_noise(state, i)).collect();
    let evaluations: Vec<(f64, f64)> = noise
        .par_iter()
        .enumerate()
        .map(|(i, eps)| {
            let task = es_task_seed(state, i);
            let plus: Vec<f64> = state.mean.iter().zip(eps).map(|(m, e)| m + state.sigma * e).collect();
            let minus: Vec<f64> = state.mean.iter().zip(eps).map(|(m, e)| m - state.sigma * e).collect();
            (fitness(&plus, task), fitness(&minus, task))
        })
        .collect();
    let (plus, minus): (Vec<f64>, Vec<f64>) = evaluations.into_iter().unzip();
    for (i, (p, m)) in plus.iter().zip(&minus).enumerate() {
        if p.is_nan() || m.is_nan() {
            log::warn!("generation {} pair {i}: NaN fitness treated as a tie", state.generation);
        }
    }
    let gradient = es_gradient(&noise, &plus, &minus, state.sigma);
    let next = EsState {
        mean: state.mean.iter().zip(&gradient).map(|(m, g)| m + state.learning_rate * g).collect(),
        sigma: state.sigma * state.sigma_decay,
        generation: state.generation + 1,
        ..state.clone()
    };
    Ok((next, EsGeneration { gradient, plus, minus }))
}
