#![allow(dead_code)]

use pmd_core::mdp::{TabularMdp, TabularPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense random MDP with exponential-weight rows and rewards in [0, 1].
pub fn random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut r = rng(seed ^ 0x5eed_0001);
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let row: Vec<f64> = (0..num_states).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x| x / total));
    }
    let reward = (0..num_states * num_actions).map(|_| r.random::<f64>()).collect();
    let start: Vec<f64> = (0..num_states).map(|_| r.random::<f64>() + 0.05).collect();
    let total: f64 = start.iter().sum();
    let start = start.iter().map(|x| x / total).collect();
    TabularMdp::new(num_states, num_actions, transition, reward, gamma, start).unwrap()
}

/// Random interior policy from softmax of logits in [-scale, scale].
pub fn random_policy(num_states: usize, num_actions: usize, scale: f64, seed: u64) -> TabularPolicy {
    let mut r = rng(seed ^ 0x5eed_0002);
    let logits: Vec<f64> = (0..num_states * num_actions)
        .map(|_| scale * (2.0 * r.random::<f64>() - 1.0))
        .collect();
    TabularPolicy::softmax(num_states, num_actions, &logits).unwrap()
}

/// Random point in the open simplex.
pub fn random_simplex(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - r.random::<f64>()).ln() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn draw(r: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Solves `(I - gamma P_pi) V = r_pi` by Gaussian elimination with partial
/// pivoting, independently of the library's linear algebra.
pub fn gauss_v(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<f64> {
    let (n, k, g) = (mdp.num_states(), mdp.num_actions(), mdp.gamma());
    let mut m = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        m[s][s] += 1.0;
        for a in 0..k {
            let p = policy.prob(s, a);
            m[s][n] += p * mdp.reward(s, a);
            for (sp, q) in mdp.next_dist(s, a).iter().enumerate() {
                m[s][sp] -= g * p * q;
            }
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        for i in 0..n {
            if i != c {
                let f = m[i][c] / m[c][c];
                for j in c..=n {
                    m[i][j] -= f * m[c][j];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}
