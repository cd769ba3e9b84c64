//! Gradient-free search over mirror-map parameters: OpenAI-ES with
//! antithetic pairs and a pairwise rank transform, separable CMA-ES, and a
//! resumable meta-loop that scores candidates by the final value of inner
//! PMD runs.

mod checkpoint;
mod fitness;
mod openai_es;
mod sep_cma;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{Checkpoint, GenerationStats, Manifest, StrategyState, CHECKPOINT_SCHEMA_VERSION};
pub use fitness::{FitnessSpec, InnerAlgorithm, SearchFamily, TaskSource, MIN_SEGMENT_WIDTH};
pub use openai_es::{es_gradient, es_noise, es_task_seed, openai_es_step, pair_ranks, EsGeneration, EsState};
pub use sep_cma::{sep_cma_step, CmaGeneration, SepCmaConstants, SepCmaState, COV_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    OpenAiEs,
    SepCma,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OpenAiEs => "openai-es",
            Self::SepCma => "sep-cma",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "openai-es" => Ok(Self::OpenAiEs),
            "sep-cma" => Ok(Self::SepCma),
            _ => Err(Error::InvalidInput(format!("unknown strategy {s:?} (expected openai-es or sep-cma)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSettings {
    pub population_size: usize,
    pub sigma0: f64,
    /// OpenAI-ES only.
    pub sigma_decay: f64,
    /// OpenAI-ES only.
    pub learning_rate: f64,
    /// Number of piecewise segments.
    pub segments: usize,
}

impl EvolutionSettings {
    /// OpenAI-ES: population 512, sigma 0.5, decay 0.995, learning rate
    /// 0.01. sep-CMA-ES: population 128, sigma 2.
    pub fn defaults(strategy: Strategy) -> Self {
        match strategy {
            Strategy::OpenAiEs => Self {
                population_size: 512,
                sigma0: 0.5,
                sigma_decay: 0.995,
                learning_rate: 0.01,
                segments: crate::potential::DEFAULT_SEGMENTS,
            },
            Strategy::SepCma => Self {
                population_size: 128,
                sigma0: 2.0,
                sigma_decay: 1.0,
                learning_rate: 0.0,
                segments: crate::potential::DEFAULT_SEGMENTS,
            },
        }
    }
}

/// Default generation counts: 512 for OpenAI-ES, 600 for sep-CMA-ES.
pub fn default_generations(strategy: Strategy) -> u64 {
    match strategy {
        Strategy::OpenAiEs => 512,
        Strategy::SepCma => 600,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionOutcome {
    /// Search mean with the highest evaluation fitness over all generations.
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    /// State after the last generation.
    pub last: Checkpoint,
}

/// Runs the meta-loop for `generations` generations from the
/// near-negative-entropy initialization. With a checkpoint directory a
/// checkpoint is written for every generation, including generation 0.
pub fn evolve_mirror_map(
    family: SearchFamily,
    strategy: Strategy,
    spec: &FitnessSpec,
    settings: &EvolutionSettings,
    generations: u64,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<EvolutionOutcome> {
    let init = family.initial_genotype(settings.segments, seed)?;
    let state = match strategy {
        Strategy::OpenAiEs => StrategyState::OpenAiEs(EsState::new(
            init,
            settings.sigma0,
            settings.sigma_decay,
            settings.learning_rate,
            seed,
        )?),
        Strategy::SepCma => StrategyState::SepCma(SepCmaState::new(init, settings.sigma0, settings.population_size, seed)?),
    };
    let mean_fitness = evaluate_mean(spec, family, state.mean());
    let checkpoint = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        generation: 0,
        strategy,
        family,
        population_size: settings.population_size,
        best_params: state.mean().to_vec(),
        best_fitness: mean_fitness,
        history: vec![GenerationStats {
            generation: 0,
            mean_fitness,
            population_best: f64::NAN,
            sigma: state.sigma(),
        }],
        state,
    };
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        checkpoint::write(dir, &checkpoint)?;
    }
    continue_from(checkpoint, spec, generations, checkpoint_dir)
}

/// Continues the run stored in `dir` until `generations` generations are done.
pub fn resume_mirror_map(dir: &Path, spec: &FitnessSpec, generations: u64) -> Result<EvolutionOutcome> {
    let checkpoint = checkpoint::load_latest(dir)?;
    continue_from(checkpoint, spec, generations, Some(dir))
}

fn evaluate_mean(spec: &FitnessSpec, family: SearchFamily, mean: &[f64]) -> f64 {
    spec.evaluate(family, mean, spec.eval_seed, rng::derive_seed(spec.eval_seed, &[1]))
}

fn continue_from(
    mut checkpoint: Checkpoint,
    spec: &FitnessSpec,
    generations: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<EvolutionOutcome> {
    let family = checkpoint.family;
    let pop = checkpoint.population_size;
    while checkpoint.generation < generations {
        let (state, population_best) = match &checkpoint.state {
            StrategyState::OpenAiEs(es) => {
                let fitness = |x: &[f64], task: u64| spec.evaluate(family, x, task, task);
                let (next, gen) = openai_es_step(es, pop, &fitness)?;
                let best = gen.plus.iter().chain(&gen.minus).cloned().fold(f64::NEG_INFINITY, f64::max);
                (StrategyState::OpenAiEs(next), best)
            }
            StrategyState::SepCma(cma) => {
                let fitness =
                    |x: &[f64], task: u64, i: usize| spec.evaluate(family, x, task, rng::derive_seed(task, &[i as u64]));
                let (next, gen) = sep_cma_step(cma, pop, &fitness)?;
                let best = gen.fitness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (StrategyState::SepCma(next), best)
            }
        };
        let generation = checkpoint.generation + 1;
        let mean_fitness = evaluate_mean(spec, family, state.mean());
        log::info!("generation {generation}: mean fitness {mean_fitness}, population best {population_best}");
        if mean_fitness > checkpoint.best_fitness {
            checkpoint.best_fitness = mean_fitness;
            checkpoint.best_params = state.mean().to_vec();
        }
        checkpoint.history.push(GenerationStats {
            generation,
            mean_fitness,
            population_best,
            sigma: state.sigma(),
        });
        checkpoint.state = state;
        checkpoint.generation = generation;
        if let Some(dir) = checkpoint_dir {
            checkpoint::write(dir, &checkpoint)?;
        }
    }
    Ok(EvolutionOutcome {
        best_params: checkpoint.best_params.clone(),
        best_fitness: checkpoint.best_fitness,
        history: checkpoint.history.clone(),
        last: checkpoint,
    })
}
