//! Skill extraction for the Coin Game.
//!
//! Each agent, on its own, (1) collects windows of the three states ending in one of its
//! picks from random play, (2) trains a multi-head encoder that predicts the picked colour and
//! both agents' rewards from a window, (3) splits the window embeddings in two and labels the
//! cluster whose members cost the opponent more as defection, and (4) fits one state-to-move
//! oracle per cluster. [`meta::CoinMetaEnv`] then lets a learner choose between its two
//! oracles at every step.

pub mod cluster;
pub mod dataset;
pub mod encoder;
pub mod meta;
pub mod oracle;

use serde::{Deserialize, Serialize};

pub use cluster::{
    agreement, cluster_embeddings, label_clusters, principal_projection, purity, ClusterMethod,
    ClusterModel,
};
pub use dataset::{
    collect_rollouts, read_dataset, solo_observation, write_dataset, StateSequence, WINDOW,
};
pub use encoder::{train_encoder, EncoderModel, EncoderPrediction, EncoderTraining, EMBEDDING_DIM};
pub use meta::{meta_action, meta_input, CoinMetaEnv};
pub use oracle::{
    evaluate_oracle_solo, evaluate_solo, read_oracle, train_oracle, write_oracle, OracleModel,
    OracleTraining, SoloProtocol, SoloReport,
};

use crate::coin_game::{Color, DEFAULT_EPISODE_LENGTH};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Behaviour type of a cluster and of the oracle distilled from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Cooperation,
    Defection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Windows collected per agent.
    pub dataset_size: usize,
    /// Length of each random-play episode used for collection.
    pub episode_length: usize,
    pub encoder: EncoderTraining,
    pub oracle: OracleTraining,
    pub method: ClusterMethod,
    pub solo: SoloProtocol,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            dataset_size: 2500,
            episode_length: DEFAULT_EPISODE_LENGTH,
            encoder: EncoderTraining::default(),
            oracle: OracleTraining::default(),
            method: ClusterMethod::Agglomerative,
            solo: SoloProtocol::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size < 2 {
            return Err(Error::validation("dataset_size", "must be at least 2"));
        }
        if self.episode_length == 0 {
            return Err(Error::validation("episode_length", "must be at least 1"));
        }
        for (field, lr) in [
            ("encoder.learning_rate", self.encoder.learning_rate),
            ("oracle.learning_rate", self.oracle.learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::validation(field, "must be positive"));
            }
        }
        if self.encoder.batch_size == 0 {
            return Err(Error::validation(
                "encoder.batch_size",
                "must be at least 1",
            ));
        }
        if self.oracle.batch_size == 0 {
            return Err(Error::validation("oracle.batch_size", "must be at least 1"));
        }
        if !(self.oracle.l2 >= 0.0 && self.oracle.l2.is_finite()) {
            return Err(Error::validation(
                "oracle.l2",
                "must be a finite value >= 0",
            ));
        }
        if self.solo.coin_lifetime == 0 {
            return Err(Error::validation(
                "solo.coin_lifetime",
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Everything one agent's pipeline produced.
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub agent: Color,
    pub dataset: Vec<StateSequence>,
    pub encoder_losses: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    /// The labeled partition from the configured method.
    pub clusters: ClusterModel,
    /// Purity of `clusters` against own/other pick type.
    pub purity: f64,
    /// Share of windows both clustering methods group the same way.
    pub method_agreement: f64,
    pub cooperation: OracleModel,
    pub defection: OracleModel,
    pub cooperation_solo: SoloReport,
    pub defection_solo: SoloReport,
}

impl DistillOutcome {
    pub fn oracles(&self) -> (OracleModel, OracleModel) {
        (self.cooperation.clone(), self.defection.clone())
    }
}

/// Runs the whole pipeline for `agent` from the `Distill` stream of `seed`. Agents share no
/// data: each reads only its own stream.
pub fn distill_agent(agent: Color, config: &DistillConfig, seed: u64) -> Result<DistillOutcome> {
    config.validate()?;
    let mut rng = stream(seed, Stream::Distill(agent.index()));
    let dataset = collect_rollouts(agent, config.dataset_size, config.episode_length, &mut rng)?;
    let (encoder, encoder_losses) = train_encoder(&dataset, &config.encoder, &mut rng)?;
    let embeddings = dataset
        .iter()
        .map(|s| encoder.embed(s))
        .collect::<Result<Vec<_>>>()?;
    let primary = cluster_embeddings(&embeddings, config.method, &mut rng)?;
    let alternative = match config.method {
        ClusterMethod::Agglomerative => ClusterMethod::Kmeans,
        ClusterMethod::Kmeans => ClusterMethod::Agglomerative,
    };
    let secondary = cluster_embeddings(&embeddings, alternative, &mut rng)?;
    let clusters = label_clusters(&primary, &dataset)?;
    let truth: Vec<bool> = dataset.iter().map(StateSequence::picked_other).collect();
    let purity = purity(&clusters.assignments, &truth)?;
    let method_agreement = agreement(&primary.assignments, &secondary.assignments)?;
    let mut oracle_for = |role: Role| -> Result<OracleModel> {
        let id = clusters.cluster_of(role).expect("labeled clusters");
        let members: Vec<&StateSequence> = clusters.members(id).map(|i| &dataset[i]).collect();
        train_oracle(&members, role, &config.oracle, &mut rng)
    };
    let cooperation = oracle_for(Role::Cooperation)?;
    let defection = oracle_for(Role::Defection)?;
    let mut eval_rng = stream(seed, Stream::Distill(2 + agent.index()));
    let cooperation_solo = evaluate_oracle_solo(&cooperation, &config.solo, &mut eval_rng)?;
    let defection_solo = evaluate_oracle_solo(&defection, &config.solo, &mut eval_rng)?;
    Ok(DistillOutcome {
        agent,
        dataset,
        encoder_losses,
        embeddings,
        clusters,
        purity,
        method_agreement,
        cooperation,
        defection,
        cooperation_solo,
        defection_solo,
    })
}

/// Both agents' pipelines, run side by side on disjoint state.
pub fn distill_both(config: &DistillConfig, seed: u64) -> Result<[DistillOutcome; 2]> {
    let (red, blue) = rayon::join(
        || distill_agent(Color::Red, config, seed),
        || distill_agent(Color::Blue, config, seed),
    );
    Ok([red?, blue?])
}
