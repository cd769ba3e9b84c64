//! Command-line harness for tabular policy mirror descent experiments.
//!
//! [`cli_main`] parses arguments, layers defaults, the optional config file
//! and flags into an [`ExperimentConfig`], runs the requested mode and
//! returns the process exit code: 0 on success, 1 on a runtime failure (or a
//! violated bound in `check-bounds`), 2 on a usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pmd_core::config::{ExperimentConfig, Mode};
use pmd_core::evolution::{
    default_generations, evolve_mirror_map, resume_mirror_map, EvolutionOutcome, FitnessSpec, Manifest, TaskSource,
};
use pmd_core::gridworld::GridSpec;
use pmd_core::mdp::{optimal_policy_oracle, visitation_distribution};
use pmd_core::pmd::{theorem1_check, PmdRunRecord};
use pmd_core::potential::Potential;
use pmd_core::report::{emit_figure, run_comparison, Algorithm, FigureKind};
use pmd_core::rng::derive_seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mirror-pmd", version, about = "Tabular policy mirror descent with learned mirror maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run policy mirror descent and write its curve CSV and run record.
    RunPmd(CommonArgs),
    /// Run AMPO and write its curve CSV and run record.
    RunAmpo(CommonArgs),
    /// Evolve a mirror map and write checkpoints.
    Evolve(EvolveArgs),
    /// Compare mirror maps over several seeds and plot the curves.
    Compare(CommonArgs),
    /// Run PMD and check the per-iteration and averaged bounds.
    CheckBounds(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory (default: $MIRROR_PMD_OUTPUT_DIR or ./mirror-pmd-out).
    #[arg(long)]
    output_dir: Option<String>,
    /// Environments: held-out names, .grid files or sample:SEED, comma separated.
    #[arg(long)]
    env: Option<String>,
    /// Mirror maps: builtin names or potential files, comma separated.
    #[arg(long, alias = "map")]
    maps: Option<String>,
    /// Learned potential file added to the compare suite.
    #[arg(long)]
    learned: Option<String>,
    /// Number of seeds per (environment, map) in compare.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    inner_lr: Option<String>,
    #[arg(long)]
    gae_lambda: Option<String>,
    #[arg(long)]
    critic_lr: Option<String>,
    /// Parallel environments per iteration.
    #[arg(long)]
    envs: Option<String>,
    #[arg(long)]
    unroll: Option<String>,
    /// closed-form or inner-sgd.
    #[arg(long)]
    update: Option<String>,
    /// exact or gae.
    #[arg(long)]
    q: Option<String>,
    /// Shorthand for `--q exact`.
    #[arg(long)]
    exact_q: bool,
    #[arg(long)]
    reset_prob: Option<String>,
    /// Any config key, as KEY=VALUE; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct EvolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// neural or piecewise.
    #[arg(long)]
    family: Option<String>,
    /// openai-es or sep-cma.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    generations: Option<String>,
    #[arg(long)]
    population: Option<String>,
    #[arg(long)]
    sigma0: Option<String>,
    #[arg(long)]
    sigma_decay: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    segments: Option<String>,
    /// Tasks per fitness evaluation.
    #[arg(long)]
    episodes: Option<String>,
    /// Inner algorithm: pmd or ampo.
    #[arg(long)]
    algorithm: Option<String>,
    /// Square grid side for sampled tasks (sets width and height).
    #[arg(long)]
    grid_size: Option<String>,
    /// Continue the run stored in the output directory.
    #[arg(long)]
    resume: bool,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        };
        push("seed", &self.seed);
        push("output_dir", &self.output_dir);
        push("env", &self.env);
        push("maps", &self.maps);
        push("learned", &self.learned);
        push("seeds", &self.seeds);
        push("pmd.eta", &self.eta);
        push("pmd.iterations", &self.iterations);
        push("pmd.epochs", &self.epochs);
        push("pmd.inner_lr", &self.inner_lr);
        push("pmd.gae_lambda", &self.gae_lambda);
        push("pmd.critic_lr", &self.critic_lr);
        push("pmd.envs", &self.envs);
        push("pmd.unroll", &self.unroll);
        push("pmd.update", &self.update);
        push("pmd.q", &self.q);
        push("pmd.reset_prob", &self.reset_prob);
        if self.exact_q {
            out.push(("pmd.q".into(), "exact".into()));
        }
        out
    }
}

impl EvolveArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        // strategy first: switching it resets the other evolution defaults
        let mut out = Vec::new();
        if let Some(v) = &self.strategy {
            out.push(("evolution.strategy".to_string(), v.clone()));
        }
        out.extend(self.common.overrides());
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        };
        push("evolution.family", &self.family);
        push("evolution.generations", &self.generations);
        push("evolution.population", &self.population);
        push("evolution.sigma0", &self.sigma0);
        push("evolution.sigma_decay", &self.sigma_decay);
        push("evolution.learning_rate", &self.learning_rate);
        push("evolution.segments", &self.segments);
        push("evolution.episodes", &self.episodes);
        push("evolution.algorithm", &self.algorithm);
        push("distribution.width", &self.grid_size);
        push("distribution.height", &self.grid_size);
        out
    }
}

/// Builds the configuration: defaults, then the config file, then the
/// generic `--set` entries, then the named flags.
fn build_config(mode: Mode, common: &CommonArgs, flags: Vec<(String, String)>) -> anyhow::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::defaults(mode);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        config
            .apply_text(&text)
            .with_context(|| format!("in config file {}", path.display()))?;
    }
    for item in &common.set {
        let (key, value) = item
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {item:?}"))?;
        config.set(key.trim(), value)?;
    }
    for (key, value) in flags {
        config.set(&key, &value).with_context(|| format!("flag for {key}"))?;
    }
    config.mode = mode;
    config.validate()?;
    Ok(config)
}

/// Runs the command line `argv` (including the program name) and returns
/// the exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (mode, common, flags, resume) = match &cli.command {
        Command::RunPmd(c) => (Mode::RunPmd, c, c.overrides(), false),
        Command::RunAmpo(c) => (Mode::RunAmpo, c, c.overrides(), false),
        Command::Compare(c) => (Mode::Compare, c, c.overrides(), false),
        Command::CheckBounds(c) => (Mode::CheckBounds, c, c.overrides(), false),
        Command::Evolve(e) => (Mode::Evolve, &e.common, e.overrides(), e.resume),
    };
    let mut config = match build_config(mode, common, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    config.evolve.resume = resume;
    match execute(&config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn execute(config: &ExperimentConfig) -> anyhow::Result<i32> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create output directory {}", config.output_dir.display()))?;
    match config.mode {
        Mode::RunPmd => run_single(config, Algorithm::Pmd),
        Mode::RunAmpo => run_single(config, Algorithm::Ampo),
        Mode::Compare => compare(config),
        Mode::CheckBounds => check_bounds(config),
        Mode::Evolve => evolve(config),
    }
}

/// Lowercase alphanumerics and dashes, for file names.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn environments(config: &ExperimentConfig) -> anyhow::Result<Vec<(String, GridSpec)>> {
    config
        .environments
        .iter()
        .map(|e| {
            let grid = e
                .load(&config.distribution)
                .with_context(|| format!("loading environment {}", e.label()))?;
            Ok((e.label(), grid))
        })
        .collect()
}

fn maps(config: &ExperimentConfig) -> anyhow::Result<Vec<(String, Potential)>> {
    let mut out: Vec<(String, Potential)> = Vec::new();
    for m in config.map_suite() {
        let pot = m.load().with_context(|| format!("loading mirror map {}", m.label()))?;
        let mut label = m.label();
        if out.iter().any(|(l, _)| *l == label) {
            label = format!("{label}-{}", out.len());
        }
        out.push((label, pot));
    }
    Ok(out)
}

fn write_record(dir: &Path, stem: &str, record: &PmdRunRecord) -> anyhow::Result<()> {
    write(&dir.join(format!("{stem}.csv")), &record.to_csv()?)?;
    write(&dir.join(format!("{stem}.json")), &record.to_json()?)
}

fn run_single(config: &ExperimentConfig, algorithm: Algorithm) -> anyhow::Result<i32> {
    let pmd = config.pmd_config();
    for (env, grid) in environments(config)? {
        for (map, pot) in maps(config)? {
            let record = algorithm
                .run(&grid, &pot, &pmd)
                .with_context(|| format!("running {map} on {env}"))?;
            let stem = format!("{}__{}", slug(&env), slug(&map));
            write_record(&config.output_dir, &stem, &record)?;
            println!(
                "{env} {map}: final value {:.6} after {} iterations ({} env steps)",
                record.final_value,
                record.num_iterations(),
                pmd.total_steps()
            );
        }
    }
    Ok(EXIT_OK)
}

fn compare(config: &ExperimentConfig) -> anyhow::Result<i32> {
    let envs = environments(config)?;
    let maps = maps(config)?;
    let (report, runs) = run_comparison(&envs, &maps, &config.pmd_config(), config.seeds, Algorithm::Pmd)?;
    let dir = &config.output_dir;
    write(&dir.join("report.json"), &report.to_json()?)?;
    write(&dir.join("compare.csv"), &report.to_csv()?)?;
    for kind in FigureKind::ALL {
        write(&dir.join(format!("{}.svg", kind.as_str())), &emit_figure(&report, kind)?)?;
    }
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for run in &runs {
        let stem = format!("{}__{}__seed{}", slug(&run.environment), slug(&run.map), run.seed_index);
        write_record(&runs_dir, &stem, &run.record)?;
    }
    for e in &report.entries {
        println!(
            "{} {}: final value {:.6} +/- {:.6} over {} seeds",
            e.environment, e.map, e.final_mean, e.final_se, e.seeds
        );
    }
    Ok(EXIT_OK)
}

fn check_bounds(config: &ExperimentConfig) -> anyhow::Result<i32> {
    let mut pmd = config.pmd_config();
    pmd.track_bounds = true;
    let mut all_hold = true;
    for (env, grid) in environments(config)? {
        let mdp = grid.compile()?;
        let (pi_star, _) = optimal_policy_oracle(&mdp, 1e-12)?;
        let d_star = visitation_distribution(&mdp, &pi_star, mdp.start_dist())?;
        for (map, pot) in maps(config)? {
            let record = Algorithm::Pmd.run(&grid, &pot, &pmd)?;
            let report = theorem1_check(&record, &mdp, pot.as_dyn(), &pi_star, &d_star)?;
            let stem = format!("{}__{}", slug(&env), slug(&map));
            write_record(&config.output_dir, &stem, &record)?;
            write(
                &config.output_dir.join(format!("{stem}.bounds.json")),
                &pmd_core::persist::to_json(&report)?,
            )?;
            let mut line = format!(
                "{env} {map}: per-iteration bound violations {}",
                report.improvement_violations.len()
            );
            if report.vacuous {
                line.push_str(", averaged bound vacuous (infinite initial divergence)");
            } else {
                write!(line, ", averaged bound violations {}", report.suboptimality_violations.len())?;
            }
            println!("{line}");
            all_hold &= report.holds();
        }
    }
    Ok(if all_hold { EXIT_OK } else { EXIT_FAILURE })
}

fn evolve(config: &ExperimentConfig) -> anyhow::Result<i32> {
    let opts = &config.evolve;
    let spec = FitnessSpec {
        tasks: TaskSource::Distribution(config.distribution.clone()),
        pmd: config.pmd_config(),
        algorithm: opts.algorithm,
        episodes: opts.episodes,
        eval_seed: derive_seed(config.seed, &[0x6576_616c]),
    };
    let dir = &config.output_dir;
    let outcome: EvolutionOutcome = if opts.resume {
        let manifest = Manifest::load(dir).with_context(|| format!("no resumable run in {}", dir.display()))?;
        if manifest.family != opts.family || manifest.strategy != opts.strategy {
            bail!(
                "checkpoint in {} is {} / {}, not {} / {}",
                dir.display(),
                manifest.family.as_str(),
                manifest.strategy.as_str(),
                opts.family.as_str(),
                opts.strategy.as_str()
            );
        }
        let generations = opts.generations.unwrap_or_else(|| default_generations(manifest.strategy));
        resume_mirror_map(dir, &spec, generations)?
    } else {
        let generations = opts.generations.unwrap_or_else(|| default_generations(opts.strategy));
        evolve_mirror_map(
            opts.family,
            opts.strategy,
            &spec,
            &opts.settings,
            generations,
            config.seed,
            Some(dir),
        )?
    };
    let mut csv = String::from("generation,mean_fitness,population_best,sigma\n");
    for h in &outcome.history {
        writeln!(csv, "{},{:?},{:?},{:?}", h.generation, h.mean_fitness, h.population_best, h.sigma)?;
    }
    write(&dir.join("evolution.csv"), &csv)?;
    println!(
        "{} {} after {} generations: best mean fitness {:.6}",
        opts.family.as_str(),
        opts.strategy.as_str(),
        outcome.last.generation,
        outcome.best_fitness
    );
    Ok(EXIT_OK)
}
