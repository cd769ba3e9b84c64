//! Tabular policy mirror descent: the exact per-state update, the
//! gradient-based update on softmax logits, GAE critics, the iteration loop
//! and convergence-bound diagnostics.

mod bounds;
mod gae;
mod run;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ResetConvention, TabularPolicy};
use crate::potential::{OmegaPotential, PROB_FLOOR};

pub use bounds::{theorem1_check, BoundsReport, BOUND_TOL};
pub use gae::{estimate_q_gae, CriticTable};
pub use run::{run_pmd, IterationInputs, PmdRunRecord, CSV_COLUMNS, RECORD_SCHEMA_VERSION};
pub(crate) use run::Runner;

/// Row-sum tolerance accepted after bisection, before renormalization.
pub const ROW_SUM_TOL: f64 = 1e-10;
const MAX_BRACKET_EXPANSIONS: usize = 64;
const MAX_BISECTIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    ClosedForm,
    InnerSgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMode {
    Exact,
    Gae,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" | "closed_form" => Ok(Self::ClosedForm),
            "inner-sgd" | "inner_sgd" => Ok(Self::InnerSgd),
            _ => Err(Error::InvalidInput(format!("unknown update mode {s:?}"))),
        }
    }
}

impl std::str::FromStr for QMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "gae" => Ok(Self::Gae),
            _ => Err(Error::InvalidInput(format!("unknown q mode {s:?}"))),
        }
    }
}

impl UpdateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ClosedForm => "closed-form",
            Self::InnerSgd => "inner-sgd",
        }
    }
}

impl QMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Gae => "gae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdConfig {
    pub eta: f64,
    pub num_iterations: usize,
    pub inner_epochs: usize,
    pub inner_lr: f64,
    pub gae_lambda: f64,
    /// Step size of the tabular critic toward the lambda-returns.
    pub critic_lr: f64,
    pub num_envs: usize,
    pub unroll_length: usize,
    pub seed: u64,
    pub update_mode: UpdateMode,
    pub q_mode: QMode,
    pub reset: ResetConvention,
    /// Solve for the optimal policy up front and record the convergence
    /// bound terms each iteration.
    pub track_bounds: bool,
    /// Keep every iterate's policy in the record.
    pub keep_policies: bool,
}

impl Default for PmdConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            num_iterations: 128,
            inner_epochs: 32,
            inner_lr: 40.0,
            gae_lambda: 0.95,
            critic_lr: 0.5,
            num_envs: 64,
            unroll_length: 32,
            seed: 0,
            update_mode: UpdateMode::InnerSgd,
            q_mode: QMode::Gae,
            reset: ResetConvention::default(),
            track_bounds: false,
            keep_policies: false,
        }
    }
}

impl PmdConfig {
    /// Exact Q-values and the closed-form update.
    pub fn exact(eta: f64, num_iterations: usize) -> Self {
        Self {
            eta,
            num_iterations,
            update_mode: UpdateMode::ClosedForm,
            q_mode: QMode::Exact,
            ..Self::default()
        }
    }

    pub fn steps_per_iteration(&self) -> usize {
        match self.q_mode {
            QMode::Exact => 0,
            QMode::Gae => self.num_envs * self.unroll_length,
        }
    }

    /// Environment steps a sampled run consumes.
    pub fn total_steps(&self) -> usize {
        self.steps_per_iteration() * self.num_iterations
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail("eta must be positive and finite");
        }
        if self.num_iterations == 0 {
            return fail("num_iterations must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if !(self.critic_lr > 0.0 && self.critic_lr <= 1.0) {
            return fail("critic_lr must lie in (0, 1]");
        }
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return fail("inner_lr must be nonnegative and finite");
        }
        if self.num_envs == 0 || self.unroll_length == 0 {
            return fail("num_envs and unroll_length must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.reset.reset_prob) {
            return fail("reset_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Outcome of normalizing one row of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRow {
    pub probs: Vec<f64>,
    pub lambda: f64,
    /// The potential never reached a row sum of one and a unit-slope tail
    /// past `phi_inv(1)` was used instead.
    pub used_fallback: bool,
}

fn row_mass<P: OmegaPotential + ?Sized>(pot: &P, z: &[f64], lambda: f64, tail_from: Option<f64>) -> f64 {
    z.iter().map(|&x| extended_phi(pot, x + lambda, tail_from).max(0.0)).sum()
}

fn extended_phi<P: OmegaPotential + ?Sized>(pot: &P, x: f64, tail_from: Option<f64>) -> f64 {
    match tail_from {
        Some(top) if x > top => pot.phi(top) + (x - top),
        _ => pot.phi(x),
    }
}

/// Finds `lambda` with `sum_a max(phi(z_a + lambda), 0) = 1` by bisection and
/// returns the resulting distribution. When the solution set is an interval
/// the left end is returned.
pub fn normalize_scores<P: OmegaPotential + ?Sized>(pot: &P, z: &[f64]) -> Result<NormalizedRow> {
    if z.is_empty() {
        return Err(Error::InvalidInput("empty score row".into()));
    }
    if z.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(Error::Numerical("score row contains NaN or +inf".into()));
    }
    let max_z = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max_z.is_finite() {
        return Err(Error::Numerical("score row has no finite entry".into()));
    }
    match bisect(pot, z, max_z, None) {
        Some(row) => Ok(row),
        None => {
            let top = pot.phi_inv(1.0);
            bisect(pot, z, max_z, Some(top))
                .map(|row| NormalizedRow {
                    used_fallback: true,
                    ..row
                })
                .ok_or_else(|| Error::Numerical("normalization bisection failed to bracket".into()))
        }
    }
}

fn bisect<P: OmegaPotential + ?Sized>(pot: &P, z: &[f64], max_z: f64, tail_from: Option<f64>) -> Option<NormalizedRow> {
    let k = z.len() as f64;
    let mass = |lambda: f64| row_mass(pot, z, lambda, tail_from);
    let mut hi = pot.phi_inv(1.0) - max_z;
    let mut lo = pot.phi_inv(1.0 / k) - max_z - 1.0;
    if !hi.is_finite() || !lo.is_finite() {
        return None;
    }
    let mut step = 1.0;
    let mut expansions = 0;
    while mass(hi) < 1.0 {
        hi += step;
        step *= 2.0;
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS {
            return None;
        }
    }
    step = 1.0;
    while mass(lo) >= 1.0 {
        lo -= step;
        step *= 2.0;
        expansions += 1;
        if expansions > 2 * MAX_BRACKET_EXPANSIONS {
            return None;
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut probs: Vec<f64> = z.iter().map(|&x| extended_phi(pot, x + hi, tail_from).max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    if !((total - 1.0).abs() <= ROW_SUM_TOL) {
        return None;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Some(NormalizedRow {
        probs,
        lambda: hi,
        used_fallback: false,
    })
}

/// A policy produced by per-state normalization, with its multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPolicy {
    pub policy: TabularPolicy,
    pub lambdas: Vec<f64>,
    /// Number of states that needed the unit-slope tail fallback.
    pub fallback_states: usize,
}

fn check_q_shape(policy: &TabularPolicy, q_hat: &[f64]) -> Result<()> {
    if q_hat.len() != policy.num_states() * policy.num_actions() {
        return Err(Error::Dimension(format!(
            "Q table has {} entries, expected {}",
            q_hat.len(),
            policy.num_states() * policy.num_actions()
        )));
    }
    if q_hat.iter().any(|q| !q.is_finite()) {
        return Err(Error::Numerical("non-finite Q estimate".into()));
    }
    Ok(())
}

fn phi_inv_prob<P: OmegaPotential + ?Sized>(pot: &P, p: f64) -> f64 {
    if p <= 0.0 {
        pot.phi_inv_at_zero()
    } else {
        pot.phi_inv(p)
    }
}

/// The exact mirror-descent step
/// `pi+(a|s) = max(phi(phi_inv(pi(a|s)) + eta Q(s,a) + lambda_s), 0)`.
pub fn pmd_update_closed_form<P: OmegaPotential + ?Sized>(
    policy: &TabularPolicy,
    q_hat: &[f64],
    pot: &P,
    eta: f64,
) -> Result<NormalizedPolicy> {
    check_q_shape(policy, q_hat)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("eta must be nonnegative, got {eta}")));
    }
    let (n, k) = (policy.num_states(), policy.num_actions());
    if eta == 0.0 {
        return Ok(NormalizedPolicy {
            policy: policy.clone(),
            lambdas: vec![0.0; n],
            fallback_states: 0,
        });
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut lambdas = Vec::with_capacity(n);
    let mut fallback_states = 0;
    for s in 0..n {
        let z: Vec<f64> = policy
            .row(s)
            .iter()
            .zip(&q_hat[s * k..(s + 1) * k])
            .map(|(&p, &q)| phi_inv_prob(pot, p) + eta * q)
            .collect();
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

/// Per-state objective `eta <q, p> - D(p, prev)`.
pub fn pmd_state_objective<P: OmegaPotential + ?Sized>(
    pot: &P,
    q_row: &[f64],
    prev_row: &[f64],
    p: &[f64],
    eta: f64,
) -> Result<f64> {
    let linear: f64 = q_row.iter().zip(p).map(|(q, x)| q * x).sum();
    Ok(eta * linear - crate::potential::bregman(pot, p, prev_row)?)
}

/// Gradient ascent on the softmax logits of
/// `sum_s w(s) [eta <Q_s, pi_s> - D(pi_s, prev_s)]`, `epochs` full-batch
/// steps of size `lr`. Returns the new logits.
#[allow(clippy::too_many_arguments)]
pub fn pmd_update_inner_sgd<P: OmegaPotential + ?Sized>(
    logits: &[f64],
    prev: &TabularPolicy,
    q_hat: &[f64],
    pot: &P,
    eta: f64,
    epochs: usize,
    lr: f64,
    state_weights: &[f64],
) -> Result<Vec<f64>> {
    check_q_shape(prev, q_hat)?;
    let (n, k) = (prev.num_states(), prev.num_actions());
    if logits.len() != n * k || state_weights.len() != n {
        return Err(Error::Dimension("logit table or state weights have the wrong size".into()));
    }
    let prev_grad: Vec<f64> = prev.probs().iter().map(|&p| pot.phi_inv(p.max(PROB_FLOOR))).collect();
    let mut theta = logits.to_vec();
    let mut grad = vec![0.0; k];
    for _ in 0..epochs {
        let policy = TabularPolicy::softmax(n, k, &theta)?;
        for s in 0..n {
            let w = state_weights[s];
            if w == 0.0 {
                continue;
            }
            let pi = policy.row(s);
            for a in 0..k {
                let i = s * k + a;
                grad[a] = w * (eta * q_hat[i] - (pot.phi_inv(pi[a].max(PROB_FLOOR)) - prev_grad[i]));
            }
            let mean: f64 = pi.iter().zip(&grad).map(|(p, g)| p * g).sum();
            for a in 0..k {
                theta[s * k + a] += lr * pi[a] * (grad[a] - mean);
            }
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("inner gradient step produced non-finite logits".into()));
        }
    }
    Ok(theta)
}
