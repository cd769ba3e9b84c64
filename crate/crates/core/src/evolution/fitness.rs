use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ampo::run_ampo;
use crate::error::{Error, Result};
use crate::gridworld::{sample_task, GridDistribution, GridSpec};
use crate::mdp::TabularMdp;
use crate::pmd::{run_pmd, PmdConfig};
use crate::potential::{unit_negentropy_psi, MonotoneNetPotentialInv, OmegaPotential, PiecewisePotential, Potential};
use crate::rng;

/// Smallest segment width a genotype can map to.
pub const MIN_SEGMENT_WIDTH: f64 = 1e-9;

/// Mirror-map parameterization searched by the meta-loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchFamily {
    /// 380 network parameters of the monotone `phi_inv`.
    Neural,
    /// Segment widths of the piecewise-linear `phi`; the genotype maps to
    /// widths through `max(|x|, MIN_SEGMENT_WIDTH)`.
    Piecewise,
}

impl SearchFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Neural => "neural",
            Self::Piecewise => "piecewise",
        }
    }

    /// Near-negative-entropy starting point.
    pub fn initial_genotype(self, segments: usize, seed: u64) -> Result<Vec<f64>> {
        match self {
            Self::Neural => Ok(MonotoneNetPotentialInv::near_negentropy(seed, 1e-4).params().to_vec()),
            Self::Piecewise => unit_negentropy_psi(segments),
        }
    }

    pub fn potential(self, genotype: &[f64]) -> Result<Potential> {
        match self {
            Self::Neural => Ok(Potential::Neural(MonotoneNetPotentialInv::from_params(genotype.to_vec())?)),
            Self::Piecewise => Ok(Potential::Piecewise(PiecewisePotential::new(
                genotype.iter().map(|x| x.abs().max(MIN_SEGMENT_WIDTH)).collect(),
            )?)),
        }
    }
}

impl fmt::Display for SearchFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(Self::Neural),
            "piecewise" => Ok(Self::Piecewise),
            _ => Err(Error::InvalidInput(format!("unknown search family {s:?} (expected neural or piecewise)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    Distribution(GridDistribution),
    Fixed(Vec<GridSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerAlgorithm {
    Pmd,
    Ampo,
}

/// The meta-objective: mean final value `V^T(mu)` of the inner algorithm
/// over `episodes` tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessSpec {
    pub tasks: TaskSource,
    pub pmd: PmdConfig,
    pub algorithm: InnerAlgorithm,
    pub episodes: usize,
    /// Task seed used to score the search mean each generation.
    pub eval_seed: u64,
}

impl FitnessSpec {
    /// Tasks for a task seed: fresh samples from a distribution, or the
    /// fixed list cycled from a seed-dependent offset.
    pub fn tasks_for(&self, task_seed: u64) -> Result<Vec<TabularMdp>> {
        if self.episodes == 0 {
            return Err(Error::InvalidInput("fitness needs at least one episode".into()));
        }
        match &self.tasks {
            TaskSource::Distribution(dist) => (0..self.episodes)
                .map(|e| sample_task(dist, rng::derive_seed(task_seed, &[e as u64]))?.compile())
                .collect(),
            TaskSource::Fixed(list) => {
                if list.is_empty() {
                    return Err(Error::InvalidInput("fixed task list is empty".into()));
                }
                let offset = (task_seed % list.len() as u64) as usize;
                (0..self.episodes).map(|e| list[(offset + e) % list.len()].compile()).collect()
            }
        }
    }

    /// Fitness of a potential, or the first error encountered.
    pub fn try_evaluate<P: OmegaPotential + ?Sized>(&self, pot: &P, task_seed: u64, inner_seed: u64) -> Result<f64> {
        let tasks = self.tasks_for(task_seed)?;
        let mut total = 0.0;
        for (e, mdp) in tasks.iter().enumerate() {
            let config = PmdConfig {
                seed: rng::derive_seed(inner_seed, &[e as u64]),
                track_bounds: false,
                keep_policies: false,
                ..self.pmd.clone()
            };
            let record = match self.algorithm {
                InnerAlgorithm::Pmd => run_pmd(mdp, pot, &config)?,
                InnerAlgorithm::Ampo => run_ampo(mdp, pot, &config)?,
            };
            total += record.final_value;
        }
        Ok(total / tasks.len() as f64)
    }

    /// Fitness of a genotype; failures score `-inf` and are logged.
    pub fn evaluate(&self, family: SearchFamily, genotype: &[f64], task_seed: u64, inner_seed: u64) -> f64 {
        let result = family
            .potential(genotype)
            .and_then(|pot| self.try_evaluate(&pot, task_seed, inner_seed));
        match result {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                log::warn!("candidate fitness {v} replaced by -inf");
                f64::NEG_INFINITY
            }
            Err(e) => {
                log::warn!("candidate failed: {e}");
                f64::NEG_INFINITY
            }
        }
    }
}
