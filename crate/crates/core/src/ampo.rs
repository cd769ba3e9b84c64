//! Tabular approximate mirror policy optimization.
//!
//! The policy is `pi(a|s) = max(phi(eta f(s,a) + lambda_s), 0)` for a score
//! table `f`. Each iteration regresses `f` onto
//! `Q^t + max(eta f^t + lambda^t, phi_inv(0)) / eta`, which a table fits
//! exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::pmd::{normalize_scores, NormalizedPolicy, PmdConfig, PmdRunRecord, Runner};
use crate::potential::OmegaPotential;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    num_states: usize,
    num_actions: usize,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            scores: vec![0.0; num_states * num_actions],
        }
    }

    pub fn new(num_states: usize, num_actions: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != num_states * num_actions {
            return Err(Error::Dimension("score table size mismatch".into()));
        }
        if scores.iter().any(|f| !f.is_finite()) {
            return Err(Error::Numerical("scores must be finite".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            scores,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.scores[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Per-state normalization of `eta f(s, .)`.
pub fn ampo_policy_from_scores<P: OmegaPotential + ?Sized>(
    scores: &ScoreTable,
    pot: &P,
    eta: f64,
) -> Result<NormalizedPolicy> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let (n, k) = (scores.num_states, scores.num_actions);
    let mut probs = Vec::with_capacity(n * k);
    let mut lambdas = Vec::with_capacity(n);
    let mut fallback_states = 0;
    for s in 0..n {
        let z: Vec<f64> = scores.row(s).iter().map(|f| eta * f).collect();
        let row = normalize_scores(pot, &z)?;
        if row.used_fallback {
            fallback_states += 1;
            log::warn!("state {s}: normalization used the unit-slope tail");
        }
        probs.extend(row.probs);
        lambdas.push(row.lambda);
    }
    Ok(NormalizedPolicy {
        policy: TabularPolicy::new(n, k, probs)?,
        lambdas,
        fallback_states,
    })
}

/// Exact minimizer of the score regression:
/// `f'(s,a) = Q(s,a) + max(eta f(s,a) + lambda_s, phi_inv(0)) / eta`.
/// With `phi_inv(0) = -inf` the maximum is always the first argument.
pub fn ampo_score_update<P: OmegaPotential + ?Sized>(
    scores: &ScoreTable,
    q: &[f64],
    lambdas: &[f64],
    pot: &P,
    eta: f64,
) -> Result<ScoreTable> {
    let (n, k) = (scores.num_states, scores.num_actions);
    if q.len() != n * k || lambdas.len() != n {
        return Err(Error::Dimension("Q table or lambda vector has the wrong size".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be positive, got {eta}")));
    }
    let floor = pot.phi_inv_at_zero();
    let updated = (0..n * k)
        .map(|i| {
            let shifted = eta * scores.scores[i] + lambdas[i / k];
            q[i] + shifted.max(floor) / eta
        })
        .collect();
    ScoreTable::new(n, k, updated)
}

/// Runs AMPO from `f = 0`. Shares the record format of PMD runs; the update
/// mode of the config is ignored.
pub fn run_ampo<P: OmegaPotential + ?Sized>(mdp: &TabularMdp, pot: &P, config: &PmdConfig) -> Result<PmdRunRecord> {
    let mut runner = Runner::new(mdp, pot, config, "ampo")?;
    let mut scores = ScoreTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut current = ampo_policy_from_scores(&scores, pot, config.eta)?;
    let mut fallback = current.fallback_states;
    for t in 0..config.num_iterations {
        let inputs = runner.observe(t, &current.policy, false)?;
        scores = ampo_score_update(&scores, &inputs.q_hat, &current.lambdas, pot, config.eta)?;
        let next = ampo_policy_from_scores(&scores, pot, config.eta)?;
        runner.record_step(&inputs, &current.policy, &next.policy, fallback + next.fallback_states);
        fallback = 0;
        current = next;
    }
    runner.finish(current.policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::testing::random_mdp;
    use crate::mdp::exact_q;
    use crate::pmd::pmd_update_closed_form;
    use crate::potential::{negentropy_init_psi, AugmentedPiecewisePotential, PiecewisePotential, Potential};

    #[test]
    fn zero_scores_give_uniform_policy() {
        let scores = ScoreTable::zeros(3, 4);
        for name in ["negentropy", "l2", "piecewise", "augmented-piecewise", "neural"] {
            let pot = Potential::builtin(name).unwrap();
            let out = ampo_policy_from_scores(&scores, &pot, 0.7).unwrap();
            for p in out.policy.probs() {
                assert!((p - 0.25).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn negentropy_scores_give_softmax() {
        let scores = ScoreTable::new(2, 3, vec![0.1, -2.0, 3.5, 7.0, 7.0, -1.0]).unwrap();
        let out = ampo_policy_from_scores(&scores, &Potential::negentropy(), 1.0).unwrap();
        let expected = TabularPolicy::softmax(2, 3, scores.scores()).unwrap();
        for (a, b) in out.policy.probs().iter().zip(expected.probs()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn piecewise_assigns_exact_zero_to_low_scores() {
        let pot = PiecewisePotential::new(negentropy_init_psi(100, 1.0).unwrap()).unwrap();
        let scores = ScoreTable::new(1, 3, vec![1.0, 0.9, -50.0]).unwrap();
        let out = ampo_policy_from_scores(&scores, &pot, 1.0).unwrap();
        assert_eq!(out.policy.prob(0, 2), 0.0);
        assert!(out.policy.prob(0, 0) > out.policy.prob(0, 1));
    }

    #[test]
    fn zero_q_is_a_fixed_point() {
        let pot = Potential::l2();
        let mut scores = ScoreTable::new(3, 3, (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
        let first = ampo_policy_from_scores(&scores, &pot, 2.0).unwrap();
        let mut current = first.clone();
        for _ in 0..5 {
            scores = ampo_score_update(&scores, &[0.0; 9], &current.lambdas, &pot, 2.0).unwrap();
            current = ampo_policy_from_scores(&scores, &pot, 2.0).unwrap();
        }
        assert!(current.policy.max_tv_distance(&first.policy) < 1e-12);
    }

    #[test]
    fn negentropy_scores_accumulate_q_up_to_state_constants() {
        let mdp = random_mdp(4, 2, 0.9, 2);
        let pot = Potential::negentropy();
        let eta = 0.5;
        let mut scores = ScoreTable::zeros(4, 2);
        let mut current = ampo_policy_from_scores(&scores, &pot, eta).unwrap();
        let mut q_sum = vec![0.0; 8];
        for _ in 0..10 {
            let q = exact_q(&mdp, &current.policy).unwrap();
            q_sum.iter_mut().zip(&q).for_each(|(s, q)| *s += q);
            scores = ampo_score_update(&scores, &q, &current.lambdas, &pot, eta).unwrap();
            current = ampo_policy_from_scores(&scores, &pot, eta).unwrap();
        }
        for s in 0..4 {
            let offset = scores.row(s)[0] - q_sum[2 * s];
            assert!((scores.row(s)[1] - q_sum[2 * s + 1] - offset).abs() < 1e-9);
        }
    }

    #[test]
    fn ampo_matches_pmd_for_negentropy() {
        let pot = Potential::negentropy();
        for seed in 0..3 {
            let mdp = random_mdp(4, 3, 0.9, seed);
            let eta = 0.3;
            let mut scores = ScoreTable::zeros(4, 3);
            let mut ampo = ampo_policy_from_scores(&scores, &pot, eta).unwrap();
            let mut pmd = ampo.policy.clone();
            for _ in 0..50 {
                let q = exact_q(&mdp, &ampo.policy).unwrap();
                scores = ampo_score_update(&scores, &q, &ampo.lambdas, &pot, eta).unwrap();
                ampo = ampo_policy_from_scores(&scores, &pot, eta).unwrap();
                let q_pmd = exact_q(&mdp, &pmd).unwrap();
                pmd = pmd_update_closed_form(&pmd, &q_pmd, &pot, eta).unwrap().policy;
                assert!(ampo.policy.max_tv_distance(&pmd) < 1e-7);
            }
        }
    }

    #[test]
    fn raw_and_augmented_piecewise_agree() {
        let psi = negentropy_init_psi(20, 2.0).unwrap();
        let raw = PiecewisePotential::new(psi.clone()).unwrap();
        let aug = AugmentedPiecewisePotential::new(psi).unwrap();
        let mdp = random_mdp(4, 3, 0.9, 5);
        let config = PmdConfig {
            keep_policies: true,
            ..PmdConfig::exact(1.0, 30)
        };
        let a = run_ampo(&mdp, &raw, &config).unwrap();
        let b = run_ampo(&mdp, &aug, &config).unwrap();
        for (x, y) in a.policies.iter().zip(&b.policies) {
            assert!(x.max_tv_distance(y) < 1e-9);
        }
        assert!(a.policies.iter().any(|p| p.probs().contains(&0.0)), "expected some exact zeros");
    }

    #[test]
    fn single_iteration_run() {
        let mdp = random_mdp(3, 2, 0.9, 4);
        let record = run_ampo(&mdp, &Potential::l2(), &PmdConfig::exact(0.2, 1)).unwrap();
        assert_eq!(record.num_iterations(), 1);
        assert_eq!(record.algorithm, "ampo");
    }
}
