//! Multi-head sequence encoder: a shared conv trunk per state, a linear 100-unit embedding
//! over the concatenated trunk outputs, and three heads (picked colour, own reward,
//! opponent reward).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{StateSequence, WINDOW};
use crate::coin_game::{Color, CHANNELS, GRID, OBSERVATION_LEN};
use crate::error::{Error, Result};
use crate::nn::{
    loss_and_gradient, Activation, Direction, LayerSpec, LossKind, NetworkModel, OptimizerState,
    Padding, INIT_SCALE,
};

pub const EMBEDDING_DIM: usize = 100;
const TRUNK_FEATURES: usize = 32;
// Keeps the BCE argument strictly inside (0, 1) when the sigmoid saturates.
const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub trunk: NetworkModel,
    pub embedding: NetworkModel,
    /// Probability that the picked coin was red.
    pub color_head: NetworkModel,
    pub own_head: NetworkModel,
    pub opponent_head: NetworkModel,
}

/// Head outputs for one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderPrediction {
    pub red_probability: f64,
    pub own_reward: f64,
    pub opponent_reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        EncoderTraining {
            epochs: 15,
            learning_rate: 0.003,
            batch_size: 32,
        }
    }
}

struct Grads {
    trunk: Vec<f64>,
    embedding: Vec<f64>,
    heads: [Vec<f64>; 3],
}

impl EncoderModel {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let init = |layers, rng: &mut R| {
            NetworkModel::with_uniform_init(layers, rng, INIT_SCALE).expect("static topology")
        };
        let trunk = init(
            vec![
                LayerSpec::conv2d(
                    [GRID, GRID, CHANNELS],
                    16,
                    3,
                    Padding::Same,
                    Activation::Relu,
                )
                .expect("static topology"),
                LayerSpec::conv2d(
                    [GRID, GRID, 16],
                    TRUNK_FEATURES,
                    3,
                    Padding::Valid,
                    Activation::Relu,
                )
                .expect("static topology"),
            ],
            rng,
        );
        let embedding = init(
            vec![LayerSpec::dense(
                WINDOW * TRUNK_FEATURES,
                EMBEDDING_DIM,
                Activation::Linear,
            )],
            rng,
        );
        let color_head = init(
            vec![LayerSpec::dense(EMBEDDING_DIM, 1, Activation::Sigmoid)],
            rng,
        );
        let own_head = init(
            vec![LayerSpec::dense(EMBEDDING_DIM, 1, Activation::Linear)],
            rng,
        );
        let opponent_head = init(
            vec![LayerSpec::dense(EMBEDDING_DIM, 1, Activation::Linear)],
            rng,
        );
        EncoderModel {
            trunk,
            embedding,
            color_head,
            own_head,
            opponent_head,
        }
    }

    fn heads(&self) -> [&NetworkModel; 3] {
        [&self.color_head, &self.own_head, &self.opponent_head]
    }

    fn trunk_features(&self, seq: &StateSequence) -> Result<Vec<f64>> {
        if seq.states.len() != WINDOW {
            return Err(Error::rejected(format!(
                "a window holds exactly {WINDOW} states"
            )));
        }
        let mut features = Vec::with_capacity(WINDOW * TRUNK_FEATURES);
        for obs in &seq.states {
            features.extend(self.trunk.forward_slice(&obs.0)?);
        }
        Ok(features)
    }

    /// The 100-dimensional embedding of a window (the layer feeding the heads).
    pub fn embed(&self, seq: &StateSequence) -> Result<Vec<f64>> {
        self.embedding.forward_slice(&self.trunk_features(seq)?)
    }

    pub fn predict(&self, seq: &StateSequence) -> Result<EncoderPrediction> {
        let e = self.embed(seq)?;
        Ok(EncoderPrediction {
            red_probability: self.color_head.forward_slice(&e)?[0],
            own_reward: self.own_head.forward_slice(&e)?[0],
            opponent_reward: self.opponent_head.forward_slice(&e)?[0],
        })
    }

    /// Joint loss of one window: BCE on the colour plus MSE on each reward.
    pub fn loss(&self, seq: &StateSequence) -> Result<f64> {
        let p = self.predict(seq)?;
        let (bce, _) = loss_and_gradient(
            &[p.red_probability
                .clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)],
            &[color_target(seq.coin_color_picked)],
            LossKind::Bce,
        )?;
        Ok(bce
            + (p.own_reward - seq.own_reward).powi(2)
            + (p.opponent_reward - seq.opponent_reward).powi(2))
    }

    fn accumulate(&self, seq: &StateSequence, grads: &mut Grads) -> Result<f64> {
        let features = self.trunk_features(seq)?;
        let e = self.embedding.forward_slice(&features)?;
        let targets = [
            (color_target(seq.coin_color_picked), LossKind::Bce),
            (seq.own_reward, LossKind::Mse),
            (seq.opponent_reward, LossKind::Mse),
        ];
        let mut total = 0.0;
        let mut e_grad = vec![0.0; EMBEDDING_DIM];
        for ((head, (target, kind)), acc) in self
            .heads()
            .into_iter()
            .zip(targets)
            .zip(grads.heads.iter_mut())
        {
            let mut out = head.forward_slice(&e)?;
            if kind == LossKind::Bce {
                out[0] = out[0].clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
            }
            let (loss, g) = loss_and_gradient(&out, &[target], kind)?;
            total += loss;
            let back = head.backward_into(&e, &g, acc)?;
            e_grad.iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
        let f_grad = self
            .embedding
            .backward_into(&features, &e_grad, &mut grads.embedding)?;
        for (obs, chunk) in seq.states.iter().zip(f_grad.chunks(TRUNK_FEATURES)) {
            self.trunk.backward_into(&obs.0, chunk, &mut grads.trunk)?;
        }
        Ok(total)
    }
}

fn color_target(c: Color) -> f64 {
    match c {
        Color::Red => 1.0,
        Color::Blue => 0.0,
    }
}

/// Trains a fresh encoder with Adam on minibatches. Returns the model and the mean joint
/// loss of every epoch (measured while training).
pub fn train_encoder<R: Rng + ?Sized>(
    dataset: &[StateSequence],
    training: &EncoderTraining,
    rng: &mut R,
) -> Result<(EncoderModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::rejected(
            "cannot train an encoder on an empty dataset",
        ));
    }
    if training.batch_size == 0 {
        return Err(Error::validation("batch_size", "must be at least 1"));
    }
    if dataset
        .iter()
        .any(|s| s.states.iter().any(|o| o.0.len() != OBSERVATION_LEN))
    {
        return Err(Error::rejected("observation of the wrong size in dataset"));
    }
    let mut model = EncoderModel::new(rng);
    let lr = training.learning_rate;
    let mut opt_trunk = OptimizerState::adam(lr, model.trunk.parameter_count())?;
    let mut opt_embedding = OptimizerState::adam(lr, model.embedding.parameter_count())?;
    let mut opt_heads = [
        OptimizerState::adam(lr, model.color_head.parameter_count())?,
        OptimizerState::adam(lr, model.own_head.parameter_count())?,
        OptimizerState::adam(lr, model.opponent_head.parameter_count())?,
    ];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(training.epochs);
    for _ in 0..training.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(training.batch_size) {
            let mut grads = Grads {
                trunk: vec![0.0; model.trunk.parameter_count()],
                embedding: vec![0.0; model.embedding.parameter_count()],
                heads: [
                    vec![0.0; model.color_head.parameter_count()],
                    vec![0.0; model.own_head.parameter_count()],
                    vec![0.0; model.opponent_head.parameter_count()],
                ],
            };
            for &i in batch {
                epoch_loss += model.accumulate(&dataset[i], &mut grads)?;
            }
            let n = batch.len() as f64;
            let scale = |g: &mut Vec<f64>| g.iter_mut().for_each(|v| *v /= n);
            scale(&mut grads.trunk);
            scale(&mut grads.embedding);
            grads.heads.iter_mut().for_each(scale);
            opt_trunk.step(&mut model.trunk, &grads.trunk, Direction::Descend)?;
            opt_embedding.step(&mut model.embedding, &grads.embedding, Direction::Descend)?;
            let [c, o, p] = &mut opt_heads;
            c.step(&mut model.color_head, &grads.heads[0], Direction::Descend)?;
            o.step(&mut model.own_head, &grads.heads[1], Direction::Descend)?;
            p.step(
                &mut model.opponent_head,
                &grads.heads[2],
                Direction::Descend,
            )?;
        }
        history.push(epoch_loss / dataset.len() as f64);
    }
    Ok((model, history))
}
