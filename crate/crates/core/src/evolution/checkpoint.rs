use std::fs;
use std::path::{Path, PathBuf};

use super::fitness::SearchFamily;
use super::openai_es::EsState;
use super::sep_cma::SepCmaState;
use super::Strategy;
use crate::error::{Error, Result};
use crate::kv::{self, format_f64_list, Section};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.txt";
const BEST_FILE: &str = "best.potential";

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyState {
    OpenAiEs(EsState),
    SepCma(SepCmaState),
}

impl StrategyState {
    pub fn mean(&self) -> &[f64] {
        match self {
            Self::OpenAiEs(s) => &s.mean,
            Self::SepCma(s) => &s.mean,
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Self::OpenAiEs(s) => s.sigma,
            Self::SepCma(s) => s.sigma,
        }
    }

    fn strategy(&self) -> Strategy {
        match self {
            Self::OpenAiEs(_) => Strategy::OpenAiEs,
            Self::SepCma(_) => Strategy::SepCma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationStats {
    pub generation: u64,
    /// Fitness of the search mean on the fixed evaluation tasks.
    pub mean_fitness: f64,
    /// Best candidate fitness of the generation that produced this state;
    /// NaN for generation 0.
    pub population_best: f64,
    pub sigma: f64,
}

/// Everything needed to resume a run, stored as key-value text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub generation: u64,
    pub strategy: Strategy,
    pub family: SearchFamily,
    pub population_size: usize,
    pub state: StrategyState,
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# mirror-pmd checkpoint\nschema_version = {}\ngeneration = {}\nstrategy = {}\nfamily = {}\npopulation_size = {}\nbest_fitness = {:?}\nbest_params = {}\n[state]\n",
            self.schema_version,
            self.generation,
            self.strategy,
            self.family,
            self.population_size,
            self.best_fitness,
            format_f64_list(&self.best_params),
        );
        match &self.state {
            StrategyState::OpenAiEs(s) => {
                out.push_str(&format!(
                    "seed = {}\nmean = {}\nsigma = {:?}\nsigma_decay = {:?}\nlearning_rate = {:?}\n",
                    s.seed,
                    format_f64_list(&s.mean),
                    s.sigma,
                    s.sigma_decay,
                    s.learning_rate
                ));
            }
            StrategyState::SepCma(s) => {
                out.push_str(&format!(
                    "seed = {}\nmean = {}\nsigma = {:?}\ncov = {}\np_sigma = {}\np_c = {}\nweights = {}\n",
                    s.seed,
                    format_f64_list(&s.mean),
                    s.sigma,
                    format_f64_list(&s.cov),
                    format_f64_list(&s.p_sigma),
                    format_f64_list(&s.p_c),
                    format_f64_list(&s.weights)
                ));
            }
        }
        let column = |f: fn(&GenerationStats) -> f64| format_f64_list(&self.history.iter().map(f).collect::<Vec<_>>());
        out.push_str(&format!(
            "[history]\ngeneration = {}\nmean_fitness = {}\npopulation_best = {}\nsigma = {}\n",
            self.history.iter().map(|h| h.generation.to_string()).collect::<Vec<_>>().join(" "),
            column(|h| h.mean_fitness),
            column(|h| h.population_best),
            column(|h| h.sigma),
        ));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = kv::parse(text, &[])?;
        let root = doc.root();
        let version_entry = root.require("schema_version")?;
        let version: u32 = version_entry.parse()?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let generation: u64 = root.require("generation")?.parse()?;
        let strategy: Strategy = parse_str(root, "strategy")?;
        let family: SearchFamily = parse_str(root, "family")?;
        let population_size: usize = root.require("population_size")?.parse()?;
        let best_fitness: f64 = root.require("best_fitness")?.parse()?;
        let best_params: Vec<f64> = root.require("best_params")?.parse_list()?;

        let st = doc.require_section("state")?;
        let seed: u64 = st.require("seed")?.parse()?;
        let mean: Vec<f64> = st.require("mean")?.parse_list()?;
        let sigma: f64 = st.require("sigma")?.parse()?;
        let dim = mean.len();
        let vector = |key: &str| -> Result<Vec<f64>> {
            let entry = st.require(key)?;
            let v: Vec<f64> = entry.parse_list()?;
            if v.len() != dim {
                return Err(Error::parse(entry.offset, format!("{key} has {} entries, expected {dim}", v.len())));
            }
            Ok(v)
        };
        let state = match strategy {
            Strategy::OpenAiEs => StrategyState::OpenAiEs(EsState {
                mean: mean.clone(),
                sigma,
                sigma_decay: st.require("sigma_decay")?.parse()?,
                learning_rate: st.require("learning_rate")?.parse()?,
                generation,
                seed,
            }),
            Strategy::SepCma => StrategyState::SepCma(SepCmaState {
                cov: vector("cov")?,
                p_sigma: vector("p_sigma")?,
                p_c: vector("p_c")?,
                weights: st.require("weights")?.parse_list()?,
                mean: mean.clone(),
                sigma,
                generation,
                seed,
            }),
        };
        if best_params.len() != dim {
            return Err(Error::parse(root.require("best_params")?.offset, "best_params length differs from mean"));
        }

        let hist = doc.require_section("history")?;
        let generations: Vec<u64> = hist.require("generation")?.parse_list()?;
        let columns = ["mean_fitness", "population_best", "sigma"]
            .iter()
            .map(|key| {
                let entry = hist.require(key)?;
                let v: Vec<f64> = entry.parse_list()?;
                if v.len() != generations.len() {
                    return Err(Error::parse(entry.offset, format!("history column {key} has the wrong length")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let history = (0..generations.len())
            .map(|i| GenerationStats {
                generation: generations[i],
                mean_fitness: columns[0][i],
                population_best: columns[1][i],
                sigma: columns[2][i],
            })
            .collect();
        Ok(Self {
            schema_version: version,
            generation,
            strategy,
            family,
            population_size,
            state,
            best_params,
            best_fitness,
            history,
        })
    }
}

fn parse_str<T: std::str::FromStr<Err = Error>>(section: &Section, key: &str) -> Result<T> {
    let entry = section.require(key)?;
    entry.value.parse().map_err(|e: Error| Error::parse(entry.offset, e.to_string()))
}

/// Index of the checkpoints written to a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub strategy: Strategy,
    pub family: SearchFamily,
    pub population_size: usize,
    pub latest_generation: u64,
    pub checkpoints: Vec<String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        format!(
            "# mirror-pmd evolution manifest\nschema_version = {}\nstrategy = {}\nfamily = {}\npopulation_size = {}\nlatest_generation = {}\ncheckpoints = {}\n",
            CHECKPOINT_SCHEMA_VERSION,
            self.strategy,
            self.family,
            self.population_size,
            self.latest_generation,
            self.checkpoints.join(" ")
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = kv::parse(text, &[])?;
        let root = doc.root();
        let version: u32 = root.require("schema_version")?.parse()?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Version {
                found: version.to_string(),
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        Ok(Self {
            strategy: parse_str(root, "strategy")?,
            family: parse_str(root, "family")?,
            population_size: root.require("population_size")?.parse()?,
            latest_generation: root.require("latest_generation")?.parse()?,
            checkpoints: root.require("checkpoints")?.parse_list()?,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }
}

pub fn checkpoint_name(generation: u64) -> String {
    format!("gen-{generation:05}.ckpt")
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.set_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub(super) fn write(dir: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let name = checkpoint_name(checkpoint.generation);
    write_atomic(&dir.join(&name), &checkpoint.to_text())?;
    let best = checkpoint.family.potential(&checkpoint.best_params)?;
    write_atomic(&dir.join(BEST_FILE), &best.to_text())?;
    let mut checkpoints = match Manifest::load(dir) {
        Ok(m) => m.checkpoints,
        Err(Error::Io(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    checkpoints.retain(|c| *c != name);
    checkpoints.push(name);
    let manifest = Manifest {
        strategy: checkpoint.strategy,
        family: checkpoint.family,
        population_size: checkpoint.population_size,
        latest_generation: checkpoint.generation,
        checkpoints,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &manifest.to_text())
}

pub(super) fn load_latest(dir: &Path) -> Result<Checkpoint> {
    let manifest = Manifest::load(dir)?;
    let path = dir.join(checkpoint_name(manifest.latest_generation));
    let checkpoint = Checkpoint::from_text(&fs::read_to_string(&path)?)?;
    if checkpoint.generation != manifest.latest_generation
        || checkpoint.strategy != manifest.strategy
        || checkpoint.family != manifest.family
        || checkpoint.state.strategy() != checkpoint.strategy
    {
        return Err(Error::Validation(format!("{} disagrees with the manifest", path.display())));
    }
    Ok(checkpoint)
}
