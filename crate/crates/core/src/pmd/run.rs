use serde::{Deserialize, Serialize};

use super::gae::{estimate_q_gae, CriticTable};
use super::{pmd_update_closed_form, pmd_update_inner_sgd, PmdConfig, QMode, UpdateMode};
use crate::error::{Error, Result};
use crate::mdp::{self, TabularMdp, TabularPolicy};
use crate::potential::{bregman, OmegaPotential};
use crate::rng;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Column order of [`PmdRunRecord::to_csv`]. Frozen.
pub const CSV_COLUMNS: [&str; 11] = [
    "iteration",
    "env_steps",
    "value",
    "next_value",
    "q_error",
    "update_distance",
    "improvement_bound",
    "avg_gap",
    "avg_divergence_term",
    "avg_horizon_term",
    "avg_error_term",
];

/// Per-iteration diagnostics of one run. Iteration `t` covers the update
/// from `pi^t` to `pi^{t+1}`: `values[t]` is `V^t(mu)`, `q_errors[t]` is
/// `max_s ||Qhat^t_s - Q^t_s||_inf` and `update_distances[t]` is
/// `max_s ||pi^{t+1}_s - pi^t_s||_1`. `final_value` is `V^T(mu)`.
///
/// When bounds are tracked, entry `t` of the `avg_*` vectors is the bound
/// for the prefix of length `t + 1`. `avg_divergence_terms` is empty when the
/// initial divergence to the optimal policy is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdRunRecord {
    pub schema_version: u32,
    pub algorithm: String,
    pub potential: String,
    pub config: PmdConfig,
    pub gamma: f64,
    pub values: Vec<f64>,
    pub q_errors: Vec<f64>,
    pub update_distances: Vec<f64>,
    pub improvement_bounds: Vec<f64>,
    pub final_value: f64,
    pub optimal_value: Option<f64>,
    pub dstar0: Option<f64>,
    pub avg_gap: Vec<f64>,
    pub avg_divergence_terms: Vec<f64>,
    pub avg_horizon_terms: Vec<f64>,
    pub avg_error_terms: Vec<f64>,
    /// Count of per-state normalizations that needed the tail fallback.
    pub fallback_states: usize,
    pub initial_policy: TabularPolicy,
    pub final_policy: TabularPolicy,
    /// `pi^0 .. pi^T` when requested by the config, otherwise empty.
    pub policies: Vec<TabularPolicy>,
}

impl PmdRunRecord {
    pub fn num_iterations(&self) -> usize {
        self.values.len()
    }

    /// `V^{t+1}(mu)` for every iteration.
    pub fn next_values(&self) -> Vec<f64> {
        let mut next = self.values[1..].to_vec();
        next.push(self.final_value);
        next
    }

    /// Cumulative environment steps after each iteration.
    pub fn env_steps(&self) -> Vec<usize> {
        let per = self.config.steps_per_iteration();
        (1..=self.values.len()).map(|t| t * per).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_COLUMNS).map_err(csv_error)?;
        let next = self.next_values();
        let steps = self.env_steps();
        let opt = |v: &[f64], t: usize| v.get(t).map(|x| format!("{x:?}")).unwrap_or_default();
        for t in 0..self.values.len() {
            writer
                .write_record([
                    t.to_string(),
                    steps[t].to_string(),
                    format!("{:?}", self.values[t]),
                    format!("{:?}", next[t]),
                    format!("{:?}", self.q_errors[t]),
                    format!("{:?}", self.update_distances[t]),
                    format!("{:?}", self.improvement_bounds[t]),
                    opt(&self.avg_gap, t),
                    opt(&self.avg_divergence_terms, t),
                    opt(&self.avg_horizon_terms, t),
                    opt(&self.avg_error_terms, t),
                ])
                .map_err(csv_error)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        crate::persist::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: Self = crate::persist::from_json(text, RECORD_SCHEMA_VERSION)?;
        record.check()?;
        Ok(record)
    }

    fn check(&self) -> Result<()> {
        let t = self.values.len();
        let aligned = t >= 1
            && self.q_errors.len() == t
            && self.update_distances.len() == t
            && self.improvement_bounds.len() == t
            && [&self.avg_gap, &self.avg_horizon_terms, &self.avg_error_terms]
                .iter()
                .all(|v| v.is_empty() || v.len() == t)
            && (self.avg_divergence_terms.is_empty() || self.avg_divergence_terms.len() == t);
        if aligned {
            Ok(())
        } else {
            Err(Error::Validation("record vectors are not aligned".into()))
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Exact and estimated quantities for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationInputs {
    pub value: f64,
    pub q_true: Vec<f64>,
    pub q_hat: Vec<f64>,
    /// Visitation weights for the update objective: exact `d^t_mu` with
    /// exact Q, empirical state frequencies with sampled Q. Empty unless
    /// requested.
    pub state_weights: Vec<f64>,
}

struct Optimum {
    value: f64,
    dstar0: Option<f64>,
}

/// Shared iteration bookkeeping for PMD and AMPO runs.
pub(crate) struct Runner<'a, P: OmegaPotential + ?Sized> {
    mdp: &'a TabularMdp,
    pot: &'a P,
    config: &'a PmdConfig,
    critic: CriticTable,
    optimum: Option<Optimum>,
    record: PmdRunRecord,
    max_error: f64,
    value_sum: f64,
}

impl<'a, P: OmegaPotential + ?Sized> Runner<'a, P> {
    pub(crate) fn new(mdp: &'a TabularMdp, pot: &'a P, config: &'a PmdConfig, algorithm: &str) -> Result<Self> {
        config.validate()?;
        let (n, k) = (mdp.num_states(), mdp.num_actions());
        let initial = TabularPolicy::uniform(n, k);
        let optimum = if config.track_bounds {
            let (pi_star, _) = mdp::optimal_policy_oracle(mdp, 1e-12)?;
            let value = mdp::value_of(&mdp::exact_v(mdp, &pi_star)?, mdp.start_dist());
            let d_star = mdp::visitation_distribution(mdp, &pi_star, mdp.start_dist())?;
            let dstar0 = initial_divergence(pot, &pi_star, &initial, &d_star)?;
            Some(Optimum { value, dstar0 })
        } else {
            None
        };
        let record = PmdRunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            algorithm: algorithm.to_string(),
            potential: pot.name(),
            config: config.clone(),
            gamma: mdp.gamma(),
            values: Vec::new(),
            q_errors: Vec::new(),
            update_distances: Vec::new(),
            improvement_bounds: Vec::new(),
            final_value: f64::NAN,
            optimal_value: optimum.as_ref().map(|o| o.value),
            dstar0: optimum.as_ref().and_then(|o| o.dstar0),
            avg_gap: Vec::new(),
            avg_divergence_terms: Vec::new(),
            avg_horizon_terms: Vec::new(),
            avg_error_terms: Vec::new(),
            fallback_states: 0,
            initial_policy: initial.clone(),
            final_policy: initial,
            policies: Vec::new(),
        };
        Ok(Self {
            mdp,
            pot,
            config,
            critic: CriticTable::zeros(n),
            optimum,
            record,
            max_error: 0.0,
            value_sum: 0.0,
        })
    }

    pub(crate) fn initial_policy(&self) -> TabularPolicy {
        self.record.initial_policy.clone()
    }

    pub(crate) fn observe(&mut self, t: usize, policy: &TabularPolicy, want_weights: bool) -> Result<IterationInputs> {
        let mdp = self.mdp;
        let v = mdp::exact_v(mdp, policy)?;
        let q_true = mdp::q_from_v(mdp, &v);
        let value = mdp::value_of(&v, mdp.start_dist());
        match self.config.q_mode {
            QMode::Exact => {
                let state_weights = if want_weights {
                    mdp::visitation_distribution(mdp, policy, mdp.start_dist())?
                } else {
                    Vec::new()
                };
                Ok(IterationInputs {
                    value,
                    q_hat: q_true.clone(),
                    q_true,
                    state_weights,
                })
            }
            QMode::Gae => {
                let seed = rng::derive_seed(self.config.seed, &[0x726f_6c6c, t as u64]);
                let trajectories = mdp::sample_rollouts(
                    mdp,
                    policy,
                    self.config.num_envs,
                    self.config.unroll_length,
                    self.config.reset,
                    seed,
                )?;
                let (q_hat, critic) = estimate_q_gae(
                    &trajectories,
                    &self.critic,
                    mdp.num_actions(),
                    mdp.gamma(),
                    self.config.gae_lambda,
                    self.config.critic_lr,
                )?;
                self.critic = critic;
                let mut state_weights = Vec::new();
                if want_weights {
                    state_weights = vec![0.0; mdp.num_states()];
                    let mut total = 0.0;
                    for traj in &trajectories {
                        for &s in &traj.states {
                            state_weights[s] += 1.0;
                            total += 1.0;
                        }
                    }
                    state_weights.iter_mut().for_each(|w| *w /= total);
                }
                Ok(IterationInputs {
                    value,
                    q_true,
                    q_hat,
                    state_weights,
                })
            }
        }
    }

    pub(crate) fn record_step(
        &mut self,
        inputs: &IterationInputs,
        policy: &TabularPolicy,
        next: &TabularPolicy,
        fallback_states: usize,
    ) {
        let gamma = self.mdp.gamma();
        let error = inputs
            .q_hat
            .iter()
            .zip(&inputs.q_true)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let distance = next.max_l1_distance(policy);
        let r = &mut self.record;
        if self.config.keep_policies {
            if r.policies.is_empty() {
                r.policies.push(policy.clone());
            }
            r.policies.push(next.clone());
        }
        r.values.push(inputs.value);
        r.q_errors.push(error);
        r.update_distances.push(distance);
        r.improvement_bounds.push(-error * distance / (1.0 - gamma));
        r.fallback_states += fallback_states;
        self.max_error = self.max_error.max(error);
        self.value_sum += inputs.value;
        if let Some(opt) = &self.optimum {
            let horizon = r.values.len() as f64;
            let scale = 1.0 / ((1.0 - gamma) * (1.0 - gamma));
            r.avg_gap.push(opt.value - self.value_sum / horizon);
            r.avg_horizon_terms.push(scale / horizon);
            r.avg_error_terms.push(4.0 * self.max_error * scale);
            if let Some(d) = opt.dstar0 {
                r.avg_divergence_terms.push(d / (self.config.eta * (1.0 - gamma) * horizon));
            }
        }
    }

    pub(crate) fn finish(mut self, final_policy: TabularPolicy) -> Result<PmdRunRecord> {
        let v = mdp::exact_v(self.mdp, &final_policy)?;
        self.record.final_value = mdp::value_of(&v, self.mdp.start_dist());
        self.record.final_policy = final_policy;
        Ok(self.record)
    }

    pub(crate) fn pot(&self) -> &'a P {
        self.pot
    }
}

/// `sum_s d*(s) D(pi*_s, pi0_s)`, or `None` when a term is infinite.
pub(crate) fn initial_divergence<P: OmegaPotential + ?Sized>(
    pot: &P,
    pi_star: &TabularPolicy,
    pi0: &TabularPolicy,
    d_star: &[f64],
) -> Result<Option<f64>> {
    let mut total = 0.0;
    for (s, &d) in d_star.iter().enumerate() {
        match bregman(pot, pi_star.row(s), pi0.row(s)) {
            Ok(div) if div.is_finite() => total += d * div,
            Ok(_) | Err(Error::Domain(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(total))
}

/// Runs policy mirror descent from the uniform policy.
pub fn run_pmd<P: OmegaPotential + ?Sized>(mdp: &TabularMdp, pot: &P, config: &PmdConfig) -> Result<PmdRunRecord> {
    let mut runner = Runner::new(mdp, pot, config, "pmd")?;
    let (n, k) = (mdp.num_states(), mdp.num_actions());
    let mut policy = runner.initial_policy();
    let mut logits = vec![0.0; n * k];
    for t in 0..config.num_iterations {
        let want_weights = config.update_mode == UpdateMode::InnerSgd;
        let inputs = runner.observe(t, &policy, want_weights)?;
        let (next, fallback) = match config.update_mode {
            UpdateMode::ClosedForm => {
                let update = pmd_update_closed_form(&policy, &inputs.q_hat, runner.pot(), config.eta)?;
                (update.policy, update.fallback_states)
            }
            UpdateMode::InnerSgd => {
                logits = pmd_update_inner_sgd(
                    &logits,
                    &policy,
                    &inputs.q_hat,
                    runner.pot(),
                    config.eta,
                    config.inner_epochs,
                    config.inner_lr,
                    &inputs.state_weights,
                )?;
                (TabularPolicy::softmax(n, k, &logits)?, 0)
            }
        };
        runner.record_step(&inputs, &policy, &next, fallback);
        policy = next;
    }
    runner.finish(policy)
}
