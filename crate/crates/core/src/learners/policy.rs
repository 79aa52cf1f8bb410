use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coin_game::{Move, CHANNELS, GRID};
use crate::error::{Error, Result};
use crate::matrix_games::STATE_SLOTS;
use crate::nn::{
    sigmoid, softmax_in_place, Activation, LayerKind, LayerSpec, NetworkModel, Padding, INIT_SCALE,
};

/// How the actor's output becomes an action distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyHead {
    /// One logit; `sigmoid(logit)` is the probability of action 0 (cooperate).
    Bernoulli,
    /// One logit per action, normalised by softmax.
    Categorical,
}

/// Actor and critic of one learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub actor: NetworkModel,
    pub critic: NetworkModel,
    pub head: PolicyHead,
}

/// Input planes of the Coin Game meta-policy: the 4 observation channels plus 5 constant
/// planes holding the previous joint meta-action.
pub const META_INPUT_SHAPE: [usize; 3] = [3, 3, 4 + STATE_SLOTS];

impl PolicyParameters {
    /// Five-entry logit table for the actor and five-entry value table for the critic.
    pub fn matrix_table<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let table = || vec![LayerSpec::table(STATE_SLOTS, 1, Activation::Linear)];
        PolicyParameters {
            actor: NetworkModel::with_uniform_init(table(), rng, INIT_SCALE)
                .expect("static topology"),
            critic: NetworkModel::with_uniform_init(table(), rng, INIT_SCALE)
                .expect("static topology"),
            head: PolicyHead::Bernoulli,
        }
    }

    /// Conv + dense actor choosing between the cooperation and defection oracles, with a
    /// critic of the same shape.
    pub fn coin_meta<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let net = |outputs: usize, rng: &mut R| {
            NetworkModel::with_uniform_init(
                vec![
                    LayerSpec::conv2d(META_INPUT_SHAPE, 16, 3, Padding::Valid, Activation::Relu)
                        .expect("static topology"),
                    LayerSpec::dense(16, 32, Activation::Relu),
                    LayerSpec::dense(32, outputs, Activation::Linear),
                ],
                rng,
                INIT_SCALE,
            )
            .expect("static topology")
        };
        let actor = net(2, rng);
        let critic = net(1, rng);
        PolicyParameters {
            actor,
            critic,
            head: PolicyHead::Categorical,
        }
    }

    /// Conv + dense actor over the four grid moves of the raw Coin Game, with a critic of the
    /// same shape.
    pub fn coin_moves<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let net = |outputs: usize, rng: &mut R| {
            NetworkModel::with_uniform_init(
                vec![
                    LayerSpec::conv2d(
                        [GRID, GRID, CHANNELS],
                        16,
                        3,
                        Padding::Valid,
                        Activation::Relu,
                    )
                    .expect("static topology"),
                    LayerSpec::dense(16, 32, Activation::Relu),
                    LayerSpec::dense(32, outputs, Activation::Linear),
                ],
                rng,
                INIT_SCALE,
            )
            .expect("static topology")
        };
        let actor = net(Move::ALL.len(), rng);
        let critic = net(1, rng);
        PolicyParameters {
            actor,
            critic,
            head: PolicyHead::Categorical,
        }
    }

    pub fn action_count(&self) -> usize {
        match self.head {
            PolicyHead::Bernoulli => 2,
            PolicyHead::Categorical => self.actor.output_len(),
        }
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward_slice(input)
    }

    pub fn probabilities_from_logits(&self, logits: &[f64]) -> Vec<f64> {
        match self.head {
            PolicyHead::Bernoulli => {
                let p = sigmoid(logits[0]);
                vec![p, 1.0 - p]
            }
            PolicyHead::Categorical => {
                let mut p = logits.to_vec();
                softmax_in_place(&mut p);
                p
            }
        }
    }

    pub fn action_probabilities(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probabilities_from_logits(&self.logits(input)?))
    }

    /// d log pi(action | s) / d logits.
    pub fn log_prob_logit_gradient(&self, logits: &[f64], action: usize) -> Vec<f64> {
        match self.head {
            PolicyHead::Bernoulli => {
                let p = sigmoid(logits[0]);
                vec![if action == 0 { 1.0 - p } else { -p }]
            }
            PolicyHead::Categorical => {
                let mut g = self.probabilities_from_logits(logits);
                g.iter_mut().for_each(|v| *v = -*v);
                g[action] += 1.0;
                g
            }
        }
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        if let Some(slot) = self.table_slot(input) {
            return Ok(self.critic.parameters()[slot]);
        }
        Ok(self.critic.forward_slice(input)?[0])
    }

    /// Index of the hot entry when both networks are single-output linear lookup tables and
    /// `input` is one-hot. Lookups then give the same numbers as a full forward pass.
    pub(crate) fn table_slot(&self, input: &[f64]) -> Option<usize> {
        if self.is_table() && input.len() == self.actor.input_len() {
            one_hot_slot(input)
        } else {
            None
        }
    }

    /// True when actor and critic are single-output linear lookup tables with a Bernoulli head.
    pub(crate) fn is_table(&self) -> bool {
        self.head == PolicyHead::Bernoulli
            && is_scalar_table(&self.actor)
            && is_scalar_table(&self.critic)
    }
}

fn one_hot_slot(input: &[f64]) -> Option<usize> {
    let mut hot = None;
    for (i, &v) in input.iter().enumerate() {
        if v == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if v != 0.0 {
            return None;
        }
    }
    hot
}

fn is_scalar_table(net: &NetworkModel) -> bool {
    match net.layers() {
        [layer] => {
            layer.kind == LayerKind::Dense { bias: false }
                && layer.activation == Activation::Linear
                && layer.output_len() == 1
        }
        _ => false,
    }
}

/// Draws an action from the actor's distribution at `input`.
pub fn sample_action<R: Rng + ?Sized>(
    policy: &PolicyParameters,
    input: &[f64],
    rng: &mut R,
) -> Result<usize> {
    if let Some(slot) = policy.table_slot(input) {
        let p = sigmoid(policy.actor.parameters()[slot]);
        return Ok(sample_index(&[p, 1.0 - p], rng));
    }
    let probs = policy.action_probabilities(input)?;
    Ok(sample_index(&probs, rng))
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Opponents that ignore their input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPolicy {
    AlwaysCooperate,
    AlwaysDefect,
}

impl FixedPolicy {
    pub fn action(self) -> usize {
        match self {
            FixedPolicy::AlwaysCooperate => 0,
            FixedPolicy::AlwaysDefect => 1,
        }
    }
}

pub fn fixed_policy(kind: FixedPolicy) -> super::Agent {
    super::Agent::Fixed(kind)
}

pub(crate) fn check_input(policy: &PolicyParameters, input: &[f64]) -> Result<()> {
    if input.len() == policy.actor.input_len() {
        Ok(())
    } else {
        Err(Error::rejected(format!(
            "state has {} values, actor expects {}",
            input.len(),
            policy.actor.input_len()
        )))
    }
}
