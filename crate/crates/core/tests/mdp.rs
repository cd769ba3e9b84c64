mod common;

use common::{draw, gauss_v, random_mdp, random_policy, rng};
use pmd_core::mdp::{
    exact_q, exact_q_state_action, exact_v, optimal_policy_oracle, q_residual, sample_rollouts, value_of,
    visitation_distribution, ResetConvention, TabularPolicy,
};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn q_matches_monte_carlo_within_three_standard_errors() {
    let mdp = random_mdp(5, 3, 0.9, 11);
    let policy = random_policy(5, 3, 1.0, 12);
    let q = exact_q(&mdp, &policy).unwrap();
    let mut r = rng(13);
    let episodes = 100_000;
    for s0 in 0..5 {
        for a0 in 0..3 {
            // Continue with probability gamma and sum undiscounted rewards:
            // an unbiased estimate of the discounted return.
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..episodes {
                let (mut s, mut a, mut ret) = (s0, a0, 0.0);
                loop {
                    ret += mdp.reward(s, a);
                    if r.random::<f64>() >= mdp.gamma() {
                        break;
                    }
                    s = draw(&mut r, mdp.next_dist(s, a));
                    a = draw(&mut r, policy.row(s));
                }
                sum += ret;
                sum_sq += ret * ret;
            }
            let n = episodes as f64;
            let mean = sum / n;
            let se = ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
            let exact = q[s0 * 3 + a0];
            assert!((mean - exact).abs() <= 3.0 * se, "Q({s0},{a0}) = {exact}, estimate {mean} +/- {se}");
        }
    }
}

#[test]
fn visitation_passes_chi_square_against_direct_sampling() {
    let mdp = random_mdp(5, 3, 0.8, 21);
    let policy = random_policy(5, 3, 1.0, 22);
    let d = visitation_distribution(&mdp, &policy, mdp.start_dist()).unwrap();
    let mut r = rng(23);
    let samples = 1_000_000;
    let mut counts = [0usize; 5];
    for _ in 0..samples {
        // Stop at each step with probability 1 - gamma: the stopping state is a draw from d.
        let mut s = draw(&mut r, mdp.start_dist());
        while r.random::<f64>() < mdp.gamma() {
            let a = draw(&mut r, policy.row(s));
            s = draw(&mut r, mdp.next_dist(s, a));
        }
        counts[s] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&d)
        .map(|(&c, &p)| {
            let e = p * samples as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 0.999 quantile of chi-square with 4 degrees of freedom
    assert!(chi2 < 18.47, "chi-square {chi2}");
}

#[test]
fn long_rollouts_with_restarts_track_visitation() {
    let mdp = random_mdp(5, 3, 0.8, 31);
    let policy = random_policy(5, 3, 1.0, 32);
    let d = visitation_distribution(&mdp, &policy, mdp.start_dist()).unwrap();
    let reset = ResetConvention { reset_prob: 1.0 - mdp.gamma() };
    let trajs = sample_rollouts(&mdp, &policy, 100, 10_000, reset, 33).unwrap();
    let mut counts = [0usize; 5];
    // the first state of each env is drawn from mu, later ones follow the restart chain
    for t in &trajs {
        for &s in &t.states {
            counts[s] += 1;
        }
    }
    let total = (100 * 10_000) as f64;
    for (c, p) in counts.iter().zip(&d) {
        assert!((*c as f64 / total - p).abs() < 5e-3, "{counts:?} vs {d:?}");
    }
}

#[test]
fn performance_difference_lemma_holds() {
    for seed in 0..100u64 {
        let (n, k) = (2 + (seed % 5) as usize, 2 + (seed % 3) as usize);
        let mdp = random_mdp(n, k, 0.5 + 0.45 * ((seed % 7) as f64 / 6.0), 1000 + seed);
        let pi = random_policy(n, k, 2.0, 2000 + seed);
        let pi2 = random_policy(n, k, 2.0, 3000 + seed);
        let v = gauss_v(&mdp, &pi);
        let v2 = gauss_v(&mdp, &pi2);
        let q = exact_q(&mdp, &pi).unwrap();
        let d2 = visitation_distribution(&mdp, &pi2, mdp.start_dist()).unwrap();
        let lhs = value_of(&v2, mdp.start_dist()) - value_of(&v, mdp.start_dist());
        let mut rhs = 0.0;
        for s in 0..n {
            for a in 0..k {
                rhs += d2[s] * pi2.prob(s, a) * (q[s * k + a] - v[s]);
            }
        }
        rhs /= 1.0 - mdp.gamma();
        assert!((lhs - rhs).abs() < 1e-8, "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn two_state_hand_solved_values() {
    // state 0: action 0 stays (reward 0), action 1 moves to 1 (reward 0);
    // state 1 is absorbing with reward 1 for both actions.
    let transition = vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let reward = vec![0.0, 0.0, 1.0, 1.0];
    let mdp = pmd_core::mdp::TabularMdp::new(2, 2, transition, reward, 0.5, vec![1.0, 0.0]).unwrap();
    let (pi, v) = optimal_policy_oracle(&mdp, 1e-12).unwrap();
    // V*(1) = 1 / (1 - 0.5) = 2, V*(0) = 0.5 * 2 = 1
    assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] - 2.0).abs() < 1e-9);
    assert_eq!(pi.prob(0, 1), 1.0);
    let uniform = TabularPolicy::uniform(2, 2);
    // V(0) = 0.5 * (0.5 V(0) + 0.5 * 2) -> V(0) = 2/3
    assert!((exact_v(&mdp, &uniform).unwrap()[0] - 2.0 / 3.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluation_invariants(n in 1usize..7, k in 1usize..4, gamma in 0.0f64..0.98, seed in any::<u64>()) {
        let mdp = random_mdp(n, k, gamma, seed);
        let pi = random_policy(n, k, 3.0, seed.wrapping_add(1));
        let v = exact_v(&mdp, &pi).unwrap();
        let v_ref = gauss_v(&mdp, &pi);
        let q = exact_q(&mdp, &pi).unwrap();
        let q_big = exact_q_state_action(&mdp, &pi).unwrap();
        let scale = 1.0 / (1.0 - gamma);
        for s in 0..n {
            prop_assert!((v[s] - v_ref[s]).abs() < 1e-9 * scale);
            prop_assert!(v[s] >= -1e-12 && v[s] <= scale + 1e-9);
            let avg: f64 = (0..k).map(|a| pi.prob(s, a) * q[s * k + a]).sum();
            prop_assert!((avg - v[s]).abs() < 1e-9 * scale);
        }
        for (a, b) in q.iter().zip(&q_big) {
            prop_assert!((a - b).abs() < 1e-8 * scale);
        }
        prop_assert!(q_residual(&mdp, &pi, &q).unwrap() < 1e-9 * scale);
        let d = visitation_distribution(&mdp, &pi, mdp.start_dist()).unwrap();
        prop_assert!(d.iter().all(|x| *x >= -1e-12));
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let (_, v_star) = optimal_policy_oracle(&mdp, 1e-10).unwrap();
        for s in 0..n {
            prop_assert!(v_star[s] >= v[s] - 1e-8);
        }
    }

    #[test]
    fn rollouts_are_consistent_with_the_model(seed in any::<u64>(), envs in 1usize..5, unroll in 1usize..30) {
        let mdp = random_mdp(4, 2, 0.9, seed);
        let pi = random_policy(4, 2, 1.0, seed ^ 1);
        let trajs = sample_rollouts(&mdp, &pi, envs, unroll, ResetConvention { reset_prob: 0.2 }, seed).unwrap();
        prop_assert_eq!(trajs.len(), envs);
        for t in &trajs {
            prop_assert_eq!(t.len(), unroll);
            for i in 0..t.len() {
                prop_assert_eq!(t.rewards[i], mdp.reward(t.states[i], t.actions[i]));
                prop_assert!(mdp.next_dist(t.states[i], t.actions[i])[t.next_states[i]] > 0.0);
                if i + 1 < t.len() && !t.resets[i] {
                    prop_assert_eq!(t.states[i + 1], t.next_states[i]);
                }
            }
        }
        let again = sample_rollouts(&mdp, &pi, envs, unroll, ResetConvention { reset_prob: 0.2 }, seed).unwrap();
        prop_assert_eq!(trajs, again);
    }
}
