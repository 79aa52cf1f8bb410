//! Return estimates and the two policy-gradient estimators.
//!
//! For one agent's episode with states `s_t`, own actions `u_t` and own rewards `r_t`:
//!
//! - the regular estimator is `sum_t grad log pi(u_t | s_t) * gamma^t * (R_t - b(s_t))`;
//! - the status-quo estimator is `sum_{t>=1} grad log pi(u_{t-1} | s_t) * gamma^t * (Rhat_t - b(s_t))`,
//!   where `Rhat_t` is the return of an imagined episode that repeats the previous joint
//!   action (and therefore `r_{t-1}`) for `kappa_t` steps before continuing as played.
//!
//! Both reuse the critic's `b(s_t)` as baseline.

use rand::Rng;

use super::policy::{check_input, PolicyParameters};
use super::AgentEpisode;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// `R_t = sum_{l >= t} gamma^(l - t) r_l`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `Rhat_t = (1 - gamma^k) / (1 - gamma) * r_{t-1} + gamma^k * R_t` with `k = kappas[t]`.
///
/// Entry 0 is `None`: there is no previous step to repeat.
pub fn imagined_returns(
    rewards: &[f64],
    returns: &[f64],
    kappas: &[u32],
    gamma: f64,
) -> Result<Vec<Option<f64>>> {
    if rewards.len() != returns.len() || kappas.len() != rewards.len() {
        return Err(Error::rejected("rewards, returns and kappas must align"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    let mut out = Vec::with_capacity(rewards.len());
    out.push(None);
    for t in 1..rewards.len() {
        let k = kappas[t];
        if k == 0 {
            return Err(Error::Domain(format!(
                "kappa must be at least 1 (step {t})"
            )));
        }
        let gk = gamma.powi(k as i32);
        out.push(Some(
            (1.0 - gk) / (1.0 - gamma) * rewards[t - 1] + gk * returns[t],
        ));
    }
    Ok(out)
}

/// Draws `kappa_t` from the discrete uniform distribution on `{1, ..., z}`.
pub fn sample_kappas<R: Rng + ?Sized>(len: usize, z: u32, rng: &mut R) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(1..=z)).collect()
}

pub(crate) fn baselines(policy: &PolicyParameters, episode: &AgentEpisode) -> Result<Vec<f64>> {
    episode
        .steps
        .iter()
        .map(|s| policy.value(&s.input))
        .collect()
}

/// Table slot of every step, when the policy is a lookup table and every input is one-hot.
pub(crate) fn table_slots(policy: &PolicyParameters, episode: &AgentEpisode) -> Option<Vec<usize>> {
    if !policy.is_table() {
        return None;
    }
    episode
        .steps
        .iter()
        .map(|s| policy.table_slot(&s.input))
        .collect()
}

/// Regular policy-gradient estimate for one episode.
pub fn policy_gradient(
    policy: &PolicyParameters,
    episode: &AgentEpisode,
    returns: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    let b = baselines(policy, episode)?;
    let mut grad = vec![0.0; policy.actor.parameter_count()];
    accumulate(policy, episode, gamma, &mut grad, |t| {
        Some((episode.steps[t].action, returns[t] - b[t]))
    })?;
    Ok(grad)
}

/// Status-quo policy-gradient estimate for one episode. `imagined[t]` is `None` for steps
/// without a previous action, which contribute nothing.
pub fn sq_policy_gradient(
    policy: &PolicyParameters,
    episode: &AgentEpisode,
    imagined: &[Option<f64>],
    gamma: f64,
) -> Result<Vec<f64>> {
    let b = baselines(policy, episode)?;
    let mut grad = vec![0.0; policy.actor.parameter_count()];
    accumulate(policy, episode, gamma, &mut grad, |t| {
        let hat = imagined[t]?;
        Some((episode.steps[t - 1].action, hat - b[t]))
    })?;
    Ok(grad)
}

/// Adds `sum_t gamma^t * advantage_t * grad log pi(action_t | s_t)` to `grad`, where
/// `term(t)` yields the action and advantage at step `t`.
fn accumulate(
    policy: &PolicyParameters,
    episode: &AgentEpisode,
    gamma: f64,
    grad: &mut [f64],
    mut term: impl FnMut(usize) -> Option<(usize, f64)>,
) -> Result<()> {
    let mut discount = 1.0;
    for (t, step) in episode.steps.iter().enumerate() {
        check_input(policy, &step.input)?;
        if let Some((action, advantage)) = term(t) {
            let weight = discount * advantage;
            if weight != 0.0 {
                let logits = policy.logits(&step.input)?;
                let mut dz = policy.log_prob_logit_gradient(&logits, action);
                dz.iter_mut().for_each(|v| *v *= weight);
                policy.actor.backward_into(&step.input, &dz, grad)?;
            }
        }
        discount *= gamma;
    }
    Ok(())
}

/// Weighted sum of both estimators with a single backward pass per step:
/// `alpha * policy_gradient + beta * sq_policy_gradient`. Skips the status-quo term
/// entirely when `imagined` is `None`. `slots` selects the lookup-table shortcut.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fused_gradient(
    policy: &PolicyParameters,
    episode: &AgentEpisode,
    returns: &[f64],
    imagined: Option<&[Option<f64>]>,
    baselines: &[f64],
    slots: Option<&[usize]>,
    gamma: f64,
    alpha: f64,
    beta: f64,
    grad: &mut [f64],
) -> Result<()> {
    if let Some(slots) = slots {
        let table = policy.actor.parameters();
        let mut discount = 1.0;
        for (t, (step, &slot)) in episode.steps.iter().zip(slots).enumerate() {
            let p = sigmoid(table[slot]);
            let d = |action: usize| if action == 0 { 1.0 - p } else { -p };
            let mut dz = alpha * discount * (returns[t] - baselines[t]) * d(step.action);
            if let Some(Some(hat)) = imagined.map(|im| im[t]) {
                dz += beta * discount * (hat - baselines[t]) * d(episode.steps[t - 1].action);
            }
            grad[slot] += dz;
            discount *= gamma;
        }
        return Ok(());
    }
    let mut discount = 1.0;
    for (t, step) in episode.steps.iter().enumerate() {
        check_input(policy, &step.input)?;
        let logits = policy.logits(&step.input)?;
        let regular = alpha * discount * (returns[t] - baselines[t]);
        let mut dz = policy.log_prob_logit_gradient(&logits, step.action);
        dz.iter_mut().for_each(|v| *v *= regular);
        if let Some(Some(hat)) = imagined.map(|im| im[t]) {
            let sq = beta * discount * (hat - baselines[t]);
            let prev = policy.log_prob_logit_gradient(&logits, episode.steps[t - 1].action);
            dz.iter_mut().zip(prev).for_each(|(d, p)| *d += sq * p);
        }
        if dz.iter().any(|&v| v != 0.0) {
            policy.actor.backward_into(&step.input, &dz, grad)?;
        }
        discount *= gamma;
    }
    Ok(())
}
