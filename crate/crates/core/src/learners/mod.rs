//! Actor-critic learners for two-player games.
//!
//! A [`Learner`] is either the Selfish Learner (plain policy gradient with a critic
//! baseline) or the status-quo learner, which adds the imagined-repetition term scaled by
//! `beta`. [`train_pair`] plays batches of episodes between two [`Agent`]s and lets each
//! update from its own view of the play.

mod gradients;
mod policy;
mod train;

pub(crate) use train::record_own_coin;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gradients::{
    discounted_returns, imagined_returns, policy_gradient, sample_kappas, sq_policy_gradient,
};
pub(crate) use policy::sample_index;
pub use policy::{
    fixed_policy, sample_action, FixedPolicy, PolicyHead, PolicyParameters, META_INPUT_SHAPE,
};
pub use train::{
    play_episode, train_pair, CoinPairEnv, EpochMetrics, MatrixPairEnv, MetricTally,
    PairEnvironment, PairRun,
};

use crate::error::{Error, Result};
use crate::nn::{Direction, OptimizerState};

/// One decision from a single agent's point of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    /// Actor and critic input at this step.
    pub input: Vec<f64>,
    pub action: usize,
    /// The agent's own reward for this step.
    pub reward: f64,
}

/// One agent's view of an episode: its inputs, its actions, its rewards. Nothing about the
/// opponent beyond what the input encodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentEpisode {
    pub steps: Vec<AgentStep>,
}

impl AgentEpisode {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Hyperparameters of a learner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SQConfig {
    /// Upper end of the uniform draw of the imagined repetition length.
    pub z: u32,
    /// Weight of the regular policy-gradient term.
    pub alpha: f64,
    /// Weight of the status-quo term.
    pub beta: f64,
    pub gamma: f64,
    pub actor_step: f64,
    pub critic_step: f64,
    /// Episodes per update.
    pub batch_size: usize,
    pub critic_weighting: CriticWeighting,
}

/// Per-step weights of the critic's squared-error loss within an episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticWeighting {
    /// Every step counts equally.
    Uniform,
    /// Step `t` counts `gamma^t`, rescaled so the weights of an episode sum to its length.
    /// The critic then fits the same `gamma^t`-weighted average return per state that the
    /// policy-gradient estimators weight their advantages by. With a state-only critic over a
    /// finite horizon this keeps the baseline from biasing the status-quo term, whose
    /// previous action is fixed by the state.
    #[default]
    Discounted,
}

impl CriticWeighting {
    pub fn weights(self, len: usize, gamma: f64) -> Vec<f64> {
        match self {
            CriticWeighting::Uniform => vec![1.0; len],
            CriticWeighting::Discounted => {
                let mut w = Vec::with_capacity(len);
                let mut d = 1.0;
                for _ in 0..len {
                    w.push(d);
                    d *= gamma;
                }
                let total: f64 = w.iter().sum();
                if total > 0.0 {
                    let scale = len as f64 / total;
                    w.iter_mut().for_each(|v| *v *= scale);
                }
                w
            }
        }
    }
}

impl Default for SQConfig {
    fn default() -> Self {
        SQConfig {
            z: 10,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.96,
            actor_step: 0.005,
            critic_step: 1.0,
            batch_size: 200,
            critic_weighting: CriticWeighting::Discounted,
        }
    }
}

impl SQConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z < 1 {
            return Err(Error::validation("z", "must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::validation("alpha", "must be a finite value >= 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::validation("beta", "must be a finite value >= 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma", "must lie in [0, 1)"));
        }
        if !(self.actor_step > 0.0 && self.actor_step.is_finite()) {
            return Err(Error::validation("actor_step", "must be positive"));
        }
        if !(self.critic_step > 0.0 && self.critic_step.is_finite()) {
            return Err(Error::validation("critic_step", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Selfish,
    StatusQuo,
}

/// A trainable agent: parameters, update rule and hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub kind: LearnerKind,
    pub policy: PolicyParameters,
    pub config: SQConfig,
}

/// Diagnostics of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Critic mean squared error against the batch returns, before the update.
    pub critic_mse: f64,
    /// Euclidean norm of the applied actor step.
    pub actor_step_norm: f64,
}

impl Learner {
    pub fn new(kind: LearnerKind, policy: PolicyParameters, config: SQConfig) -> Self {
        Learner {
            kind,
            policy,
            config,
        }
    }

    /// Weight actually applied to the status-quo term.
    pub fn effective_beta(&self) -> f64 {
        match self.kind {
            LearnerKind::Selfish => 0.0,
            LearnerKind::StatusQuo => self.config.beta,
        }
    }
}

/// Applies one batch update to `learner`.
///
/// The actor ascends `actor_step * (alpha * g + beta * g_sq)` with both estimators averaged
/// over the batch; the critic descends the mean squared error against the actual returns
/// with `critic_step`. `kappa_rng` supplies the imagined repetition lengths, drawn per step.
pub fn combined_update<R: Rng + ?Sized>(
    learner: &mut Learner,
    batch: &[AgentEpisode],
    kappa_rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::rejected("update needs at least one episode"));
    }
    let cfg = learner.config;
    let beta = learner.effective_beta();
    let policy = &learner.policy;
    let mut actor_grad = vec![0.0; policy.actor.parameter_count()];
    let mut critic_grad = vec![0.0; policy.critic.parameter_count()];
    let total_steps: usize = batch.iter().map(AgentEpisode::len).sum();
    if total_steps == 0 {
        return Err(Error::rejected("update needs at least one step"));
    }
    let mut sq_error = 0.0;
    for episode in batch {
        let rewards = episode.rewards();
        let returns = discounted_returns(&rewards, cfg.gamma);
        let slots = gradients::table_slots(policy, episode);
        let b = match &slots {
            Some(slots) => slots
                .iter()
                .map(|&i| policy.critic.parameters()[i])
                .collect(),
            None => gradients::baselines(policy, episode)?,
        };
        let imagined = match learner.kind {
            LearnerKind::StatusQuo => {
                let kappas = sample_kappas(episode.len(), cfg.z, kappa_rng);
                Some(imagined_returns(&rewards, &returns, &kappas, cfg.gamma)?)
            }
            LearnerKind::Selfish => None,
        };
        gradients::fused_gradient(
            policy,
            episode,
            &returns,
            imagined.as_deref(),
            &b,
            slots.as_deref(),
            cfg.gamma,
            cfg.alpha,
            beta,
            &mut actor_grad,
        )?;
        let weights = cfg.critic_weighting.weights(episode.len(), cfg.gamma);
        for (t, ((step, &value), &target)) in episode.steps.iter().zip(&b).zip(&returns).enumerate()
        {
            let err = value - target;
            sq_error += err * err;
            let g = weights[t] * 2.0 * err / total_steps as f64;
            match &slots {
                Some(slots) => critic_grad[slots[t]] += g,
                None => {
                    policy
                        .critic
                        .backward_into(&step.input, &[g], &mut critic_grad)?;
                }
            }
        }
    }
    let n = batch.len() as f64;
    actor_grad.iter_mut().for_each(|g| *g /= n);
    let actor_step_norm = cfg.actor_step * actor_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    OptimizerState::sgd(cfg.actor_step)?.step(
        &mut learner.policy.actor,
        &actor_grad,
        Direction::Ascend,
    )?;
    OptimizerState::sgd(cfg.critic_step)?.step(
        &mut learner.policy.critic,
        &critic_grad,
        Direction::Descend,
    )?;
    Ok(UpdateStats {
        critic_mse: sq_error / total_steps as f64,
        actor_step_norm,
    })
}

/// A seat in a two-player game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)] // only two seats exist per run
pub enum Agent {
    Learner(Learner),
    Fixed(FixedPolicy),
}

impl Agent {
    pub fn act<R: Rng + ?Sized>(&self, input: &[f64], rng: &mut R) -> Result<usize> {
        match self {
            Agent::Learner(l) => sample_action(&l.policy, input, rng),
            Agent::Fixed(f) => Ok(f.action()),
        }
    }

    /// Updates a learner from its own episodes. Fixed policies have nothing to update.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &[AgentEpisode],
        kappa_rng: &mut R,
    ) -> Result<Option<UpdateStats>> {
        match self {
            Agent::Learner(l) => combined_update(l, batch, kappa_rng).map(Some),
            Agent::Fixed(_) => Ok(None),
        }
    }

    pub fn trainable_parameter_count(&self) -> usize {
        match self {
            Agent::Learner(l) => {
                l.policy.actor.parameter_count() + l.policy.critic.parameter_count()
            }
            Agent::Fixed(_) => 0,
        }
    }

    /// Bitwise fingerprint of all parameters (FNV-1a over the f64 bit patterns).
    pub fn parameter_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bits: u64| {
            for byte in bits.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        match self {
            Agent::Learner(l) => {
                for p in l
                    .policy
                    .actor
                    .parameters()
                    .iter()
                    .chain(l.policy.critic.parameters())
                {
                    feed(p.to_bits());
                }
            }
            Agent::Fixed(f) => feed(f.action() as u64),
        }
        h
    }

    pub fn learner(&self) -> Option<&Learner> {
        match self {
            Agent::Learner(l) => Some(l),
            Agent::Fixed(_) => None,
        }
    }
}

#[cfg(test)]
mod tests;
