//! Experiment configuration for the command-line harness.
//!
//! Settings come from three layers applied in order: built-in defaults, a
//! key-value config file, then command-line flags. Every setting has one
//! dotted key (`pmd.eta`, `evolution.strategy`, ...) shared by the file and
//! the flags, so a flag always overrides the same key in the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evolution::{EvolutionSettings, InnerAlgorithm, SearchFamily, Strategy};
use crate::gridworld::{self, GridDistribution, GridSpec};
use crate::kv;
use crate::pmd::{PmdConfig, QMode, UpdateMode};
use crate::potential::{Family, Potential};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "MIRROR_PMD_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "mirror-pmd-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    RunPmd,
    RunAmpo,
    Evolve,
    Compare,
    CheckBounds,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RunPmd => "run-pmd",
            Self::RunAmpo => "run-ampo",
            Self::Evolve => "evolve",
            Self::Compare => "compare",
            Self::CheckBounds => "check-bounds",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "run-pmd" => Ok(Self::RunPmd),
            "run-ampo" => Ok(Self::RunAmpo),
            "evolve" => Ok(Self::Evolve),
            "compare" => Ok(Self::Compare),
            "check-bounds" => Ok(Self::CheckBounds),
            _ => Err(Error::InvalidInput(format!("unknown mode {s:?}"))),
        }
    }
}

/// Where an environment comes from. Text forms: a held-out name, a path to a
/// `.grid` file, or `sample:SEED` (drawn from the configured distribution).
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSelector {
    HeldOut(String),
    File(PathBuf),
    Sampled(u64),
}

impl EnvSelector {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if let Some(seed) = text.strip_prefix("sample:") {
            return seed
                .parse()
                .map(Self::Sampled)
                .map_err(|_| Error::InvalidInput(format!("bad sample seed in {text:?}")));
        }
        if let Some(path) = text.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(name) = text.strip_prefix("held-out:") {
            return Ok(Self::HeldOut(name.to_string()));
        }
        if gridworld::held_out_names().contains(&text) {
            Ok(Self::HeldOut(text.to_string()))
        } else if text.ends_with(".grid") || Path::new(text).exists() {
            Ok(Self::File(PathBuf::from(text)))
        } else {
            Err(Error::InvalidInput(format!(
                "unknown environment {text:?}; expected one of {:?}, a .grid file or sample:SEED",
                gridworld::held_out_names()
            )))
        }
    }

    /// Short label used in output file names.
    pub fn label(&self) -> String {
        match self {
            Self::HeldOut(name) => name.clone(),
            Self::File(path) => path.file_stem().map_or_else(|| "grid".into(), |s| s.to_string_lossy().into_owned()),
            Self::Sampled(seed) => format!("sample-{seed}"),
        }
    }

    pub fn load(&self, dist: &GridDistribution) -> Result<GridSpec> {
        match self {
            Self::HeldOut(name) => {
                gridworld::held_out(name).ok_or_else(|| Error::InvalidInput(format!("unknown held-out layout {name:?}")))
            }
            Self::File(path) => GridSpec::from_text(&std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidInput(format!("cannot read grid file {}: {e}", path.display()))
            })?),
            Self::Sampled(seed) => gridworld::sample_task(dist, *seed),
        }
    }
}

/// A builtin potential name or a potential parameter file.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSelector {
    Builtin(Family),
    File(PathBuf),
}

impl MapSelector {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        match text.parse::<Family>() {
            Ok(family) => Ok(Self::Builtin(family)),
            Err(_) => Ok(Self::File(PathBuf::from(text))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Builtin(family) => family.as_str().to_string(),
            Self::File(path) => path.file_stem().map_or_else(|| "map".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    pub fn load(&self) -> Result<Potential> {
        match self {
            Self::Builtin(family) => Potential::builtin(family.as_str()),
            Self::File(path) => Potential::from_text(&std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidInput(format!("cannot read potential file {}: {e}", path.display()))
            })?),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub family: SearchFamily,
    pub strategy: Strategy,
    pub generations: Option<u64>,
    pub settings: EvolutionSettings,
    pub episodes: usize,
    pub algorithm: InnerAlgorithm,
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub environments: Vec<EnvSelector>,
    pub distribution: GridDistribution,
    pub maps: Vec<MapSelector>,
    /// Extra learned map appended to the comparison suite.
    pub learned: Option<PathBuf>,
    pub seeds: usize,
    pub pmd: PmdConfig,
    pub evolve: EvolveOptions,
}

impl ExperimentConfig {
    /// Defaults for a mode. The output directory comes from
    /// [`OUTPUT_DIR_ENV`] when set.
    pub fn defaults(mode: Mode) -> Self {
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR), PathBuf::from);
        let maps = match mode {
            Mode::Compare => vec![MapSelector::Builtin(Family::NegEntropy), MapSelector::Builtin(Family::L2)],
            _ => vec![MapSelector::Builtin(Family::NegEntropy)],
        };
        let strategy = Strategy::SepCma;
        Self {
            mode,
            seed: 0,
            output_dir,
            environments: vec![EnvSelector::HeldOut("four-rooms".into())],
            distribution: GridDistribution::default(),
            maps,
            learned: None,
            seeds: 8,
            pmd: PmdConfig::default(),
            evolve: EvolveOptions {
                family: SearchFamily::Piecewise,
                strategy,
                generations: None,
                settings: EvolutionSettings::defaults(strategy),
                episodes: 4,
                algorithm: InnerAlgorithm::Pmd,
                resume: false,
            },
        }
    }

    /// Every key accepted by [`ExperimentConfig::set`].
    pub const KEYS: [&'static str; 36] = [
        "mode",
        "seed",
        "output_dir",
        "env",
        "maps",
        "learned",
        "seeds",
        "distribution.width",
        "distribution.height",
        "distribution.wall_density",
        "distribution.num_objects",
        "distribution.reward_values",
        "distribution.consume_prob",
        "distribution.slip_prob",
        "distribution.gamma",
        "pmd.eta",
        "pmd.iterations",
        "pmd.epochs",
        "pmd.inner_lr",
        "pmd.gae_lambda",
        "pmd.critic_lr",
        "pmd.envs",
        "pmd.unroll",
        "pmd.update",
        "pmd.q",
        "pmd.reset_prob",
        "evolution.family",
        "evolution.strategy",
        "evolution.generations",
        "evolution.population",
        "evolution.sigma0",
        "evolution.sigma_decay",
        "evolution.learning_rate",
        "evolution.segments",
        "evolution.episodes",
        "evolution.algorithm",
    ];

    /// Sets one dotted key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("invalid value {value:?} for {key}")))
        }
        fn pair<T: FromStr + Copy>(key: &str, value: &str) -> Result<(T, T)> {
            let items: Vec<T> = list(value).iter().map(|v| num(key, v)).collect::<Result<_>>()?;
            match items.as_slice() {
                [x] => Ok((*x, *x)),
                [lo, hi] => Ok((*lo, *hi)),
                _ => Err(Error::InvalidInput(format!("{key} expects one value or a `lo hi` pair"))),
            }
        }
        fn list(value: &str) -> Vec<String> {
            value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        }
        match key {
            "mode" => self.mode = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "env" => self.environments = list(value).iter().map(|v| EnvSelector::parse(v)).collect::<Result<_>>()?,
            "maps" => self.maps = list(value).iter().map(|v| MapSelector::parse(v)).collect::<Result<_>>()?,
            "learned" => self.learned = Some(PathBuf::from(value.trim())),
            "seeds" => self.seeds = num(key, value)?,
            "distribution.width" => self.distribution.width = pair(key, value)?,
            "distribution.height" => self.distribution.height = pair(key, value)?,
            "distribution.wall_density" => self.distribution.wall_density = pair(key, value)?,
            "distribution.num_objects" => self.distribution.num_objects = pair(key, value)?,
            "distribution.reward_values" => {
                self.distribution.reward_values = list(value).iter().map(|v| num(key, v)).collect::<Result<_>>()?
            }
            "distribution.consume_prob" => self.distribution.consume_prob = num(key, value)?,
            "distribution.slip_prob" => self.distribution.slip_prob = pair(key, value)?,
            "distribution.gamma" => self.distribution.gamma = num(key, value)?,
            "pmd.eta" => self.pmd.eta = num(key, value)?,
            "pmd.iterations" => self.pmd.num_iterations = num(key, value)?,
            "pmd.epochs" => self.pmd.inner_epochs = num(key, value)?,
            "pmd.inner_lr" => self.pmd.inner_lr = num(key, value)?,
            "pmd.gae_lambda" => self.pmd.gae_lambda = num(key, value)?,
            "pmd.critic_lr" => self.pmd.critic_lr = num(key, value)?,
            "pmd.envs" => self.pmd.num_envs = num(key, value)?,
            "pmd.unroll" => self.pmd.unroll_length = num(key, value)?,
            "pmd.update" => self.pmd.update_mode = value.trim().parse::<UpdateMode>()?,
            "pmd.q" => self.pmd.q_mode = value.trim().parse::<QMode>()?,
            "pmd.reset_prob" => self.pmd.reset.reset_prob = num(key, value)?,
            "evolution.family" => self.evolve.family = value.trim().parse()?,
            "evolution.strategy" => {
                let strategy: Strategy = value.trim().parse()?;
                if strategy != self.evolve.strategy {
                    let segments = self.evolve.settings.segments;
                    self.evolve.settings = EvolutionSettings {
                        segments,
                        ..EvolutionSettings::defaults(strategy)
                    };
                }
                self.evolve.strategy = strategy;
            }
            "evolution.generations" => self.evolve.generations = Some(num(key, value)?),
            "evolution.population" => self.evolve.settings.population_size = num(key, value)?,
            "evolution.sigma0" => self.evolve.settings.sigma0 = num(key, value)?,
            "evolution.sigma_decay" => self.evolve.settings.sigma_decay = num(key, value)?,
            "evolution.learning_rate" => self.evolve.settings.learning_rate = num(key, value)?,
            "evolution.segments" => self.evolve.settings.segments = num(key, value)?,
            "evolution.episodes" => self.evolve.episodes = num(key, value)?,
            "evolution.algorithm" => {
                self.evolve.algorithm = match value.trim() {
                    "pmd" => InnerAlgorithm::Pmd,
                    "ampo" => InnerAlgorithm::Ampo,
                    other => return Err(Error::InvalidInput(format!("unknown inner algorithm {other:?}"))),
                }
            }
            _ => return Err(Error::InvalidInput(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file. Root keys are used as is; keys inside
    /// `[section]` are prefixed with `section.`. Strategy keys are applied
    /// first so that explicit evolution settings are not reset by them.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let doc = kv::parse(text, &[])?;
        let mut entries = Vec::new();
        for section in &doc.sections {
            for entry in &section.entries {
                let key = if section.name.is_empty() {
                    entry.key.clone()
                } else {
                    format!("{}.{}", section.name, entry.key)
                };
                entries.push((key, entry));
            }
        }
        entries.sort_by_key(|(key, _)| key != "evolution.strategy");
        for (key, entry) in entries {
            self.set(&key, &entry.value)
                .map_err(|e| Error::parse(entry.offset, e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pmd.validate()?;
        self.distribution.validate()?;
        if self.environments.is_empty() {
            return Err(Error::InvalidInput("at least one environment is required".into()));
        }
        if self.maps.is_empty() && self.learned.is_none() {
            return Err(Error::InvalidInput("at least one map is required".into()));
        }
        if self.mode == Mode::Compare && self.seeds == 0 {
            return Err(Error::InvalidInput("compare needs at least one seed".into()));
        }
        for env in &self.environments {
            if let EnvSelector::File(path) = env {
                if !path.exists() {
                    return Err(Error::InvalidInput(format!("grid file {} does not exist", path.display())));
                }
            }
        }
        for map in &self.maps {
            if let MapSelector::File(path) = map {
                if !path.exists() {
                    return Err(Error::InvalidInput(format!(
                        "{} is neither a builtin map ({}) nor an existing potential file",
                        path.display(),
                        Family::ALL.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ")
                    )));
                }
            }
        }
        if let Some(path) = &self.learned {
            if !path.exists() {
                return Err(Error::InvalidInput(format!("learned map {} does not exist", path.display())));
            }
        }
        if self.mode == Mode::Evolve {
            let s = &self.evolve.settings;
            let ok = match self.evolve.strategy {
                Strategy::OpenAiEs => s.population_size >= 2 && s.population_size % 2 == 0,
                Strategy::SepCma => s.population_size >= 4,
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "population {} is invalid for {}",
                    s.population_size, self.evolve.strategy
                )));
            }
            if self.evolve.episodes == 0 || (self.evolve.family == SearchFamily::Piecewise && s.segments == 0) {
                return Err(Error::InvalidInput("episodes and segments must be positive".into()));
            }
        }
        Ok(())
    }

    /// Map suite: configured maps plus the learned file, if any.
    pub fn map_suite(&self) -> Vec<MapSelector> {
        let mut maps = self.maps.clone();
        if let Some(path) = &self.learned {
            maps.push(MapSelector::File(path.clone()));
        }
        maps
    }

    /// `PmdConfig` with the run seed applied.
    pub fn pmd_config(&self) -> PmdConfig {
        PmdConfig {
            seed: self.seed,
            ..self.pmd.clone()
        }
    }
}
