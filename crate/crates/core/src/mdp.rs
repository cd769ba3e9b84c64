//! Exact tabular MDP machinery: policy evaluation by dense linear solves,
//! discounted visitation distributions, a value-iteration oracle and seeded
//! trajectory sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const STOCHASTIC_TOL: f64 = 1e-12;
const POLICY_TOL: f64 = 1e-10;

/// A finite discounted MDP with a dense transition tensor `P[s][a][s']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    start_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` is laid out `[s][a][s']`,
    /// `reward` is laid out `[s][a]`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        start_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidInput("MDP needs at least one state and one action".into()));
        }
        let sa = num_states * num_actions;
        if transition.len() != sa * num_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                sa * num_states
            )));
        }
        if reward.len() != sa {
            return Err(Error::Dimension(format!("reward has {} entries, expected {sa}", reward.len())));
        }
        if start_dist.len() != num_states {
            return Err(Error::Dimension(format!(
                "start distribution has {} entries, expected {num_states}",
                start_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidInput(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidInput(format!("negative or NaN transition entry in row {i}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidInput(format!(
                    "transition row (s={}, a={}) sums to {total}",
                    i / num_actions,
                    i % num_actions
                )));
            }
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidInput(format!("reward {r} outside [0, 1]")));
        }
        if start_dist.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidInput("start distribution has a negative entry".into()));
        }
        let total: f64 = start_dist.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidInput(format!("start distribution sums to {total}")));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            gamma,
            start_dist,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    /// Next-state distribution `P(. | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let n = self.num_states;
        let base = (s * self.num_actions + a) * n;
        &self.transition[base..base + n]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states() != self.num_states || policy.num_actions() != self.num_actions {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.num_states(),
                policy.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    fn check_dist(&self, dist: &[f64]) -> Result<()> {
        if dist.len() != self.num_states {
            return Err(Error::Dimension(format!(
                "distribution has {} entries, MDP has {} states",
                dist.len(),
                self.num_states
            )));
        }
        Ok(())
    }

    /// State-to-state kernel `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)` and the
    /// policy-averaged reward `r_pi[s]`.
    pub fn state_kernel(&self, policy: &TabularPolicy) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_policy(policy)?;
        let n = self.num_states;
        let mut kernel = DMatrix::zeros(n, n);
        let mut r_pi = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r_pi[s] += w * self.reward(s, a);
                for (sp, &p) in self.next_dist(s, a).iter().enumerate() {
                    kernel[(s, sp)] += w * p;
                }
            }
        }
        Ok((kernel, r_pi))
    }
}

/// A row-stochastic `|S| x |A|` matrix of action probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidInput("policy needs at least one state and one action".into()));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidInput(format!("negative or NaN probability in state {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > POLICY_TOL {
                return Err(Error::InvalidInput(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidInput(format!("action {a} out of range in state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, probs)
    }

    /// Per-state softmax of a logit table laid out `[s][a]`.
    pub fn softmax(num_states: usize, num_actions: usize, logits: &[f64]) -> Result<Self> {
        if logits.len() != num_states * num_actions {
            return Err(Error::Dimension("logit table size mismatch".into()));
        }
        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(num_actions) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Numerical("non-finite logits".into()));
            }
            let start = probs.len();
            probs.extend(row.iter().map(|&l| (l - max).exp()));
            let total: f64 = probs[start..].iter().sum();
            probs[start..].iter_mut().for_each(|p| *p /= total);
        }
        Self::new(num_states, num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `max_s ||self_s - other_s||_1`.
    pub fn max_l1_distance(&self, other: &TabularPolicy) -> f64 {
        (0..self.num_states)
            .map(|s| self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max_s TV(self_s, other_s)`.
    pub fn max_tv_distance(&self, other: &TabularPolicy) -> f64 {
        0.5 * self.max_l1_distance(other)
    }
}

/// `P^pi` over state-action pairs: entry `((s,a),(s',a')) = pi(a'|s') P(s'|s,a)`.
pub fn policy_transition_matrix(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
    mdp.check_policy(policy)?;
    let (n, k) = (mdp.num_states, mdp.num_actions);
    let mut m = DMatrix::zeros(n * k, n * k);
    for s in 0..n {
        for a in 0..k {
            for (sp, &p) in mdp.next_dist(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for ap in 0..k {
                    m[(s * k + a, sp * k + ap)] = p * policy.prob(sp, ap);
                }
            }
        }
    }
    Ok(m)
}

fn solve(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// `V^pi` as the solution of `(I - gamma P_pi) V = r_pi`.
pub fn exact_v(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let (kernel, r_pi) = mdp.state_kernel(policy)?;
    let n = mdp.num_states;
    let system = DMatrix::identity(n, n) - kernel * mdp.gamma;
    Ok(solve(system, r_pi)?.iter().copied().collect())
}

/// `Q^pi` laid out `[s][a]`.
///
/// Solves the state-level system for `V^pi` and lifts it with
/// `Q = r + gamma P V`, which is the exact solution of
/// `(I - gamma P^pi) Q = r` at a fraction of the cost of the
/// `|S||A|`-dimensional solve (see [`exact_q_state_action`]).
pub fn exact_q(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let v = exact_v(mdp, policy)?;
    Ok(q_from_v(mdp, &v))
}

/// One-step lookahead `r(s,a) + gamma sum_s' P(s'|s,a) V(s')`.
pub fn q_from_v(mdp: &TabularMdp, v: &[f64]) -> Vec<f64> {
    let (n, k) = (mdp.num_states, mdp.num_actions);
    let mut q = vec![0.0; n * k];
    for s in 0..n {
        for a in 0..k {
            let next: f64 = mdp.next_dist(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
            q[s * k + a] = mdp.reward(s, a) + mdp.gamma * next;
        }
    }
    q
}

/// `Q^pi = (I - gamma P^pi)^{-1} r` solved directly over state-action pairs.
pub fn exact_q_state_action(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let p = policy_transition_matrix(mdp, policy)?;
    let dim = p.nrows();
    let system = DMatrix::identity(dim, dim) - p * mdp.gamma;
    let r = DVector::from_column_slice(&mdp.reward);
    Ok(solve(system, r)?.iter().copied().collect())
}

/// `sup_(s,a) |((I - gamma P^pi) q - r)(s,a)|`.
pub fn q_residual(mdp: &TabularMdp, policy: &TabularPolicy, q: &[f64]) -> Result<f64> {
    let (n, k) = (mdp.num_states, mdp.num_actions);
    let v: Vec<f64> = (0..n).map(|s| (0..k).map(|a| policy.prob(s, a) * q[s * k + a]).sum()).collect();
    let lifted = q_from_v(mdp, &v);
    Ok(q.iter().zip(&lifted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// `V(dist) = sum_s dist(s) V(s)`.
pub fn value_of(v: &[f64], dist: &[f64]) -> f64 {
    v.iter().zip(dist).map(|(v, d)| v * d).sum()
}

/// Discounted state visitation `d = (1 - gamma) start^T (I - gamma P_pi)^{-1}`.
pub fn visitation_distribution(mdp: &TabularMdp, policy: &TabularPolicy, start: &[f64]) -> Result<Vec<f64>> {
    mdp.check_dist(start)?;
    let (kernel, _) = mdp.state_kernel(policy)?;
    let n = mdp.num_states;
    let system = (DMatrix::identity(n, n) - kernel * mdp.gamma).transpose();
    let x = solve(system, DVector::from_column_slice(start))?;
    Ok(x.iter().map(|v| (1.0 - mdp.gamma) * v).collect())
}

/// Value iteration to a sup-norm Bellman residual of `tol (1 - gamma) / gamma`,
/// followed by greedy extraction. Returns the greedy deterministic policy and
/// the value-iteration estimate of `V*`.
pub fn optimal_policy_oracle(mdp: &TabularMdp, tol: f64) -> Result<(TabularPolicy, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("oracle tolerance must be positive".into()));
    }
    let (n, k) = (mdp.num_states, mdp.num_actions);
    let gamma = mdp.gamma;
    let threshold = if gamma > 0.0 { tol * (1.0 - gamma) / gamma } else { f64::INFINITY };
    let mut v = vec![0.0; n];
    loop {
        let q = q_from_v(mdp, &v);
        let next: Vec<f64> = q
            .chunks(k)
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if residual <= threshold {
            break;
        }
    }
    let q = q_from_v(mdp, &v);
    let actions: Vec<usize> = q
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for a in 1..k {
                if row[a] > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    Ok((TabularPolicy::deterministic(k, &actions)?, v))
}

/// How sampled environments restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResetConvention {
    /// Probability of jumping back to a state drawn from `mu` after each
    /// transition. `0` gives continuing rollouts truncated at the unroll
    /// length; `1 - gamma` makes the long-run state frequencies equal to the
    /// discounted visitation distribution.
    pub reset_prob: f64,
}

impl Default for ResetConvention {
    fn default() -> Self {
        Self { reset_prob: 0.0 }
    }
}

/// One environment's rollout. `next_states[t]` is the successor of
/// `states[t]` before any reset, so it can always be used for bootstrapping;
/// `resets[t]` marks that the environment was restarted after step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<usize>,
    pub resets: Vec<bool>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Samples `num_envs` independent rollouts of `unroll_length` steps. Each
/// environment starts from `mu` and draws from its own stream, so the batch
/// does not depend on how the work is scheduled.
pub fn sample_rollouts(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    num_envs: usize,
    unroll_length: usize,
    reset: ResetConvention,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    mdp.check_policy(policy)?;
    if num_envs == 0 || unroll_length == 0 {
        return Err(Error::InvalidInput("num_envs and unroll_length must be at least 1".into()));
    }
    Ok((0..num_envs)
        .into_par_iter()
        .map(|env| {
            let mut rng = rng::stream(seed, &[env as u64]);
            let mut traj = Trajectory {
                states: Vec::with_capacity(unroll_length),
                actions: Vec::with_capacity(unroll_length),
                rewards: Vec::with_capacity(unroll_length),
                next_states: Vec::with_capacity(unroll_length),
                resets: Vec::with_capacity(unroll_length),
            };
            let mut s = rng::sample_index(mdp.start_dist(), rng.random());
            for _ in 0..unroll_length {
                let a = rng::sample_index(policy.row(s), rng.random());
                let sp = rng::sample_index(mdp.next_dist(s, a), rng.random());
                let restart = reset.reset_prob > 0.0 && rng.random::<f64>() < reset.reset_prob;
                traj.states.push(s);
                traj.actions.push(a);
                traj.rewards.push(mdp.reward(s, a));
                traj.next_states.push(sp);
                traj.resets.push(restart);
                s = if restart {
                    rng::sample_index(mdp.start_dist(), rng.random())
                } else {
                    sp
                };
            }
            traj
        })
        .collect())
}
