use pmd_core::evolution::{
    evolve_mirror_map, EvolutionSettings, FitnessSpec, InnerAlgorithm, SearchFamily, Strategy, TaskSource,
};
use pmd_core::gridworld::GridDistribution;
use pmd_core::pmd::{run_pmd, PmdConfig, QMode, UpdateMode};
use pmd_core::potential::Potential;

fn spec(episodes: usize) -> FitnessSpec {
    FitnessSpec {
        tasks: TaskSource::Distribution(GridDistribution::square(4)),
        pmd: PmdConfig {
            num_iterations: 16,
            num_envs: 8,
            unroll_length: 16,
            update_mode: UpdateMode::ClosedForm,
            q_mode: QMode::Gae,
            ..PmdConfig::default()
        },
        algorithm: InnerAlgorithm::Pmd,
        episodes,
        eval_seed: 3,
    }
}

#[test]
fn neural_initialization_matches_negentropy_fitness() {
    let spec = spec(8);
    let neural = SearchFamily::Neural
        .potential(&SearchFamily::Neural.initial_genotype(0, 4).unwrap())
        .unwrap();
    let baseline = Potential::negentropy();
    let tasks = spec.tasks_for(11).unwrap();
    let (mut diffs, mut base_values) = (Vec::new(), Vec::new());
    for (e, mdp) in tasks.iter().enumerate() {
        let config = PmdConfig {
            seed: e as u64,
            ..spec.pmd.clone()
        };
        let a = run_pmd(mdp, neural.as_dyn(), &config).unwrap().final_value;
        let b = run_pmd(mdp, baseline.as_dyn(), &config).unwrap().final_value;
        diffs.push(a - b);
        base_values.push(b);
    }
    let n = base_values.len() as f64;
    let mean = base_values.iter().sum::<f64>() / n;
    let sd = (base_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mean_diff = diffs.iter().sum::<f64>() / n;
    assert!(mean_diff.abs() <= 2.0 * sd / n.sqrt(), "difference {mean_diff}, se {}", sd / n.sqrt());
}

#[test]
fn short_sep_cma_run_is_reproducible_and_tracks_history() {
    let spec = spec(2);
    let settings = EvolutionSettings {
        population_size: 6,
        segments: 12,
        ..EvolutionSettings::defaults(Strategy::SepCma)
    };
    let a = evolve_mirror_map(SearchFamily::Piecewise, Strategy::SepCma, &spec, &settings, 3, 5, None).unwrap();
    let b = evolve_mirror_map(SearchFamily::Piecewise, Strategy::SepCma, &spec, &settings, 3, 5, None).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(a.history.len(), 4);
    let best = a.history.iter().map(|h| h.mean_fitness).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.best_fitness, best);
    assert!(SearchFamily::Piecewise.potential(&a.best_params).is_ok());
}
