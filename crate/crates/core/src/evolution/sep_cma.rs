use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Lower bound on diagonal covariance entries.
pub const COV_FLOOR: f64 = 1e-20;
const SAMPLE_TAG: u64 = 0x636d_6173;
const TASK_TAG: u64 = 0x636d_6174;

/// Separable CMA-ES state: mean, diagonal covariance, global step size and
/// the two evolution paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SepCmaState {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub sigma: f64,
    pub p_sigma: Vec<f64>,
    pub p_c: Vec<f64>,
    pub weights: Vec<f64>,
    pub generation: u64,
    pub seed: u64,
}

/// Strategy constants for dimension `n` and population `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SepCmaConstants {
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl SepCmaConstants {
    /// Published defaults: log-linear weights over the best `floor(lambda/2)`
    /// samples; `c_sigma = (mu_eff + 2) / (n + mu_eff + 5)`,
    /// `d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma`,
    /// `c_c = (4 + mu_eff / n) / (n + 4 + 2 mu_eff / n)`, and the rank-one and
    /// rank-mu rates of full CMA-ES scaled by `(n + 2) / 3` for the diagonal
    /// model, capped so that `c_1 + c_mu <= 1`.
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let sep = (nf + 2.0) / 3.0;
        let c_1 = (sep * 2.0 / ((nf + 1.3).powi(2) + mu_eff)).min(1.0);
        let c_mu = (sep * 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu: c_mu.max(0.0),
            chi_n,
        }
    }
}

impl SepCmaState {
    pub fn new(mean: Vec<f64>, sigma: f64, population_size: usize, seed: u64) -> Result<Self> {
        if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("CMA mean must be non-empty and finite".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput("CMA sigma must be positive".into()));
        }
        if population_size < 4 {
            return Err(Error::InvalidInput("CMA population must be at least 4".into()));
        }
        let n = mean.len();
        Ok(Self {
            cov: vec![1.0; n],
            p_sigma: vec![0.0; n],
            p_c: vec![0.0; n],
            weights: SepCmaConstants::new(n, population_size).weights,
            mean,
            sigma,
            generation: 0,
            seed,
        })
    }

    /// Candidate `index` of the current generation.
    pub fn sample(&self, index: usize) -> Vec<f64> {
        let mut r = rng::stream(self.seed, &[SAMPLE_TAG, self.generation, index as u64]);
        self.mean
            .iter()
            .zip(&self.cov)
            .map(|(m, c)| {
                let z: f64 = StandardNormal.sample(&mut r);
                m + self.sigma * c.sqrt() * z
            })
            .collect()
    }

    /// Task seed shared by every candidate of the current generation.
    pub fn task_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[TASK_TAG, self.generation])
    }
}

/// Outcome of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaGeneration {
    pub candidates: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
}

/// One sep-CMA-ES generation maximizing `fitness(params, task_seed, index)`.
/// Candidates share the generation's task seed; `index` lets the caller give
/// each its own inner seed. Ties keep candidate order.
pub fn sep_cma_step<F>(state: &SepCmaState, population_size: usize, fitness: &F) -> Result<(SepCmaState, CmaGeneration)>
where
    F: Fn(&[f64], u64, usize) -> f64 + Sync,
{
    if population_size < 4 {
        return Err(Error::InvalidInput("CMA population must be at least 4".into()));
    }
    let n = state.mean.len();
    let k = SepCmaConstants::new(n, population_size);
    if k.weights.len() != state.weights.len() {
        return Err(Error::InvalidInput("population size differs from the one the state was built for".into()));
    }
    let task = state.task_seed();
    let candidates: Vec<Vec<f64>> = (0..population_size).map(|i| state.sample(i)).collect();
    let fitness_values: Vec<f64> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, x)| fitness(x, task, i))
        .collect();
    let mut order: Vec<usize> = (0..population_size).collect();
    let key = |f: f64| if f.is_nan() { f64::NEG_INFINITY } else { f };
    order.sort_by(|&a, &b| key(fitness_values[b]).total_cmp(&key(fitness_values[a])));

    let sigma = state.sigma;
    let steps: Vec<Vec<f64>> = order[..k.mu]
        .iter()
        .map(|&i| candidates[i].iter().zip(&state.mean).map(|(x, m)| (x - m) / sigma).collect())
        .collect();
    let mut y_w = vec![0.0; n];
    for (w, y) in k.weights.iter().zip(&steps) {
        y_w.iter_mut().zip(y).for_each(|(acc, v)| *acc += w * v);
    }
    let mean: Vec<f64> = state.mean.iter().zip(&y_w).map(|(m, y)| m + sigma * y).collect();

    let ps_scale = (k.c_sigma * (2.0 - k.c_sigma) * k.mu_eff).sqrt();
    let p_sigma: Vec<f64> = (0..n)
        .map(|i| (1.0 - k.c_sigma) * state.p_sigma[i] + ps_scale * y_w[i] / state.cov[i].sqrt())
        .collect();
    let ps_norm = p_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
    let generations = (state.generation + 1) as i32;
    let h_sigma = ps_norm / (1.0 - (1.0 - k.c_sigma).powi(2 * generations)).sqrt()
        < (1.4 + 2.0 / (n as f64 + 1.0)) * k.chi_n;
    let h = if h_sigma { 1.0 } else { 0.0 };
    let pc_scale = (k.c_c * (2.0 - k.c_c) * k.mu_eff).sqrt();
    let p_c: Vec<f64> = (0..n)
        .map(|i| (1.0 - k.c_c) * state.p_c[i] + h * pc_scale * y_w[i])
        .collect();
    let mut floored = 0;
    let cov: Vec<f64> = (0..n)
        .map(|i| {
            let rank_mu: f64 = k.weights.iter().zip(&steps).map(|(w, y)| w * y[i] * y[i]).sum();
            let c = (1.0 - k.c_1 - k.c_mu) * state.cov[i]
                + k.c_1 * (p_c[i] * p_c[i] + (1.0 - h) * k.c_c * (2.0 - k.c_c) * state.cov[i])
                + k.c_mu * rank_mu;
            if c < COV_FLOOR {
                floored += 1;
                COV_FLOOR
            } else {
                c
            }
        })
        .collect();
    if floored > 0 {
        log::warn!("generation {}: {floored} covariance entries floored", state.generation);
    }
    let sigma = sigma * ((k.c_sigma / k.d_sigma) * (ps_norm / k.chi_n - 1.0)).exp();
    if !sigma.is_finite() || mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::Numerical("sep-CMA state became non-finite".into()));
    }
    let next = SepCmaState {
        mean,
        cov,
        sigma,
        p_sigma,
        p_c,
        weights: state.weights.clone(),
        generation: state.generation + 1,
        seed: state.seed,
    };
    Ok((
        next,
        CmaGeneration {
            candidates,
            fitness: fitness_values,
        },
    ))
}
