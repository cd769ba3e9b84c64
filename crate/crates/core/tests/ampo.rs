mod common;

use common::random_mdp;
use pmd_core::ampo::run_ampo;
use pmd_core::gridworld::{sample_task, GridDistribution};
use pmd_core::pmd::{run_pmd, PmdConfig};
use pmd_core::potential::{unit_negentropy_psi, AugmentedPiecewisePotential, PiecewisePotential, Potential};

fn keep(config: PmdConfig) -> PmdConfig {
    PmdConfig {
        keep_policies: true,
        ..config
    }
}

#[test]
fn ampo_value_trajectory_matches_pmd_on_a_grid() {
    let mdp = sample_task(&GridDistribution::square(4), 8).unwrap().compile().unwrap();
    let pot = Potential::negentropy();
    let config = PmdConfig::exact(0.5, 60);
    let pmd = run_pmd(&mdp, pot.as_dyn(), &config).unwrap();
    let ampo = run_ampo(&mdp, pot.as_dyn(), &config).unwrap();
    for (a, b) in pmd.values.iter().zip(&ampo.values) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!((pmd.final_value - ampo.final_value).abs() < 1e-6);
}

#[test]
fn ampo_policies_match_pmd_for_negentropy_and_l2() {
    for pot in [Potential::negentropy(), Potential::l2()] {
        for seed in 0..4u64 {
            let mdp = random_mdp(4, 3, 0.9, 700 + seed);
            let config = keep(PmdConfig::exact(0.3, 50));
            let pmd = run_pmd(&mdp, pot.as_dyn(), &config).unwrap();
            let ampo = run_ampo(&mdp, pot.as_dyn(), &config).unwrap();
            assert_eq!(pmd.policies.len(), ampo.policies.len());
            for (a, b) in pmd.policies.iter().zip(&ampo.policies) {
                assert!(a.max_tv_distance(b) < 1e-7, "{}", pot.family());
            }
        }
    }
}

#[test]
fn raw_and_augmented_piecewise_give_identical_ampo_sequences() {
    let psi = unit_negentropy_psi(40).unwrap();
    let raw = PiecewisePotential::new(psi.clone()).unwrap();
    let aug = AugmentedPiecewisePotential::new(psi).unwrap();
    for seed in 0..4u64 {
        let mdp = random_mdp(5, 3, 0.9, 800 + seed);
        let config = keep(PmdConfig::exact(1.0, 50));
        let a = run_ampo(&mdp, &raw, &config).unwrap();
        let b = run_ampo(&mdp, &aug, &config).unwrap();
        for (x, y) in a.policies.iter().zip(&b.policies) {
            assert!(x.max_tv_distance(y) < 1e-9);
        }
    }
}
