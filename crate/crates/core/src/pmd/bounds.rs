use serde::{Deserialize, Serialize};

use super::run::{initial_divergence, PmdRunRecord};
use crate::error::{Error, Result};
use crate::mdp::{self, TabularMdp, TabularPolicy};
use crate::potential::OmegaPotential;

/// Slack allowed on both inequalities.
pub const BOUND_TOL: f64 = 1e-8;

/// Both sides of the per-iteration improvement bound
/// `V^{t+1} - V^t >= -(1/(1-gamma)) err_t dist_t` and of the averaged
/// suboptimality bound for every prefix length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub improvement_lhs: Vec<f64>,
    pub improvement_rhs: Vec<f64>,
    /// Iterations where the improvement bound fails by more than [`BOUND_TOL`].
    pub improvement_violations: Vec<usize>,
    pub optimal_value: f64,
    /// `sum_s d*(s) D(pi*_s, pi^0_s)`; `None` when infinite.
    pub dstar0: Option<f64>,
    /// The suboptimality bound is vacuous because `dstar0` is infinite.
    pub vacuous: bool,
    /// Entry `t` covers the prefix of length `t + 1`.
    pub suboptimality_lhs: Vec<f64>,
    /// Empty when vacuous.
    pub suboptimality_rhs: Vec<f64>,
    pub suboptimality_violations: Vec<usize>,
}

impl BoundsReport {
    pub fn holds(&self) -> bool {
        self.improvement_violations.is_empty() && self.suboptimality_violations.is_empty()
    }
}

/// Recomputes both bounds from a run record. The record must carry exact
/// estimation errors, which every run records.
pub fn theorem1_check<P: OmegaPotential + ?Sized>(
    record: &PmdRunRecord,
    mdp: &TabularMdp,
    pot: &P,
    pi_star: &TabularPolicy,
    d_star: &[f64],
) -> Result<BoundsReport> {
    let t_max = record.values.len();
    if t_max == 0 || record.q_errors.len() != t_max || record.update_distances.len() != t_max {
        return Err(Error::Validation("record is empty or misaligned".into()));
    }
    if d_star.len() != mdp.num_states() {
        return Err(Error::Dimension("d_star length differs from the state count".into()));
    }
    let gamma = mdp.gamma();
    let eta = record.config.eta;
    let next = record.next_values();

    let improvement_lhs: Vec<f64> = (0..t_max).map(|t| next[t] - record.values[t]).collect();
    let improvement_rhs: Vec<f64> = (0..t_max)
        .map(|t| -record.q_errors[t] * record.update_distances[t] / (1.0 - gamma))
        .collect();
    let improvement_violations = (0..t_max)
        .filter(|&t| improvement_lhs[t] < improvement_rhs[t] - BOUND_TOL)
        .collect();

    let optimal_value = mdp::value_of(&mdp::exact_v(mdp, pi_star)?, mdp.start_dist());
    let dstar0 = initial_divergence(pot, pi_star, &record.initial_policy, d_star)?;
    let scale = 1.0 / ((1.0 - gamma) * (1.0 - gamma));
    let mut suboptimality_lhs = Vec::with_capacity(t_max);
    let mut suboptimality_rhs = Vec::new();
    let mut suboptimality_violations = Vec::new();
    let (mut value_sum, mut max_error) = (0.0, 0.0f64);
    for t in 0..t_max {
        let horizon = (t + 1) as f64;
        value_sum += record.values[t];
        max_error = max_error.max(record.q_errors[t]);
        let lhs = optimal_value - value_sum / horizon;
        suboptimality_lhs.push(lhs);
        if let Some(d) = dstar0 {
            let rhs = (d / (eta * (1.0 - gamma)) + scale) / horizon + 4.0 * max_error * scale;
            if rhs < lhs - BOUND_TOL {
                suboptimality_violations.push(t);
            }
            suboptimality_rhs.push(rhs);
        }
    }
    Ok(BoundsReport {
        improvement_lhs,
        improvement_rhs,
        improvement_violations,
        optimal_value,
        dstar0,
        vacuous: dstar0.is_none(),
        suboptimality_lhs,
        suboptimality_rhs,
        suboptimality_violations,
    })
}
