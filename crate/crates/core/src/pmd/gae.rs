use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;

/// Tabular state-value baseline used by GAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticTable {
    pub values: Vec<f64>,
}

impl CriticTable {
    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: vec![0.0; num_states],
        }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("critic values must be finite".into()));
        }
        Ok(Self { values })
    }
}

/// GAE(lambda) over a batch of rollouts.
///
/// Advantages are accumulated backwards within each rollout and cut at
/// resets and at the unroll boundary; every TD error bootstraps from the
/// critic at the pre-reset successor. `Q(s,a) = V(s) + mean advantage` over
/// visits of `(s,a)`; unvisited pairs get `V(s)`. The critic moves a fraction
/// `critic_lr` toward the mean lambda-return of each visited state.
pub fn estimate_q_gae(
    trajectories: &[Trajectory],
    critic: &CriticTable,
    num_actions: usize,
    gamma: f64,
    lambda: f64,
    critic_lr: f64,
) -> Result<(Vec<f64>, CriticTable)> {
    let n = critic.values.len();
    if trajectories.iter().all(Trajectory::is_empty) {
        return Err(Error::InvalidInput("no transitions to estimate from".into()));
    }
    if num_actions == 0 || n == 0 {
        return Err(Error::InvalidInput("empty state or action space".into()));
    }
    let v = &critic.values;
    let mut adv_sum = vec![0.0; n * num_actions];
    let mut adv_count = vec![0usize; n * num_actions];
    let mut ret_sum = vec![0.0; n];
    let mut ret_count = vec![0usize; n];
    for traj in trajectories {
        let len = traj.len();
        if traj.actions.len() != len || traj.rewards.len() != len || traj.next_states.len() != len || traj.resets.len() != len {
            return Err(Error::Dimension("ragged trajectory".into()));
        }
        let mut next_adv = 0.0;
        for t in (0..len).rev() {
            let (s, a, sp) = (traj.states[t], traj.actions[t], traj.next_states[t]);
            if s >= n || sp >= n || a >= num_actions {
                return Err(Error::InvalidInput(format!("transition {t} references an unknown state or action")));
            }
            let delta = traj.rewards[t] + gamma * v[sp] - v[s];
            let carry = if t + 1 < len && !traj.resets[t] { next_adv } else { 0.0 };
            let adv = delta + gamma * lambda * carry;
            adv_sum[s * num_actions + a] += adv;
            adv_count[s * num_actions + a] += 1;
            ret_sum[s] += adv + v[s];
            ret_count[s] += 1;
            next_adv = adv;
        }
    }
    let mut q_hat = vec![0.0; n * num_actions];
    for s in 0..n {
        for a in 0..num_actions {
            let i = s * num_actions + a;
            q_hat[i] = v[s] + if adv_count[i] > 0 { adv_sum[i] / adv_count[i] as f64 } else { 0.0 };
        }
    }
    let values = (0..n)
        .map(|s| {
            if ret_count[s] > 0 {
                v[s] + critic_lr * (ret_sum[s] / ret_count[s] as f64 - v[s])
            } else {
                v[s]
            }
        })
        .collect();
    Ok((q_hat, CriticTable::new(values)?))
}
