use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coin_game::CoinGameConfig;
use crate::error::{Error, Result};
use crate::gamedistill::DistillConfig;
use crate::learners::{FixedPolicy, LearnerKind, SQConfig};
use crate::matrix_games::GameKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Ipd,
    Imp,
    Ish,
    /// Learners on the raw Coin Game moves.
    CoinSq,
    /// Skill distillation per agent, then learners choosing between the two oracles.
    CoinGamedistill,
    /// A learner against a fixed opponent on a matrix game.
    Exploitability,
    /// The configured matrix game once per value of `z_values`.
    ZSweep,
}

impl ExperimentKind {
    /// Matrix game played by this experiment, if any. `game` applies to the kinds that do not
    /// name their own.
    pub fn matrix_game(self, game: GameKind) -> Option<GameKind> {
        match self {
            ExperimentKind::Ipd => Some(GameKind::PrisonersDilemma),
            ExperimentKind::Imp => Some(GameKind::MatchingPennies),
            ExperimentKind::Ish => Some(GameKind::StagHunt),
            ExperimentKind::Exploitability | ExperimentKind::ZSweep => Some(game),
            ExperimentKind::CoinSq | ExperimentKind::CoinGamedistill => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Learner in each seat. Seat 1 is ignored by `exploitability`.
    pub learners: [LearnerKind; 2],
    /// Fixed seat-1 policy of `exploitability`.
    pub opponent: FixedPolicy,
    /// Matrix game of `exploitability` and `z_sweep`.
    pub game: GameKind,
    pub sq: SQConfig,
    pub seeds: Vec<u64>,
    /// Update batches per run.
    pub epochs: usize,
    pub output_dir: PathBuf,
    pub coin: CoinGameConfig,
    pub distill: DistillConfig,
    pub z_values: Vec<u32>,
    /// An epoch counts as cooperative when the seed's mean NDR over both agents exceeds this.
    pub cooperation_threshold: f64,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Ipd,
            learners: [LearnerKind::StatusQuo; 2],
            opponent: FixedPolicy::AlwaysDefect,
            game: GameKind::PrisonersDilemma,
            sq: SQConfig::default(),
            seeds: (0..20).collect(),
            epochs: 300,
            output_dir: PathBuf::from("runs"),
            coin: CoinGameConfig::default(),
            distill: DistillConfig::default(),
            z_values: vec![1, 2, 5, 10, 20],
            cooperation_threshold: -1.2,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML document. Absent keys take their defaults; an absent `sq.gamma` takes
    /// the default discount of the experiment's game.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(&e))?;
        let gamma_given = value
            .get("sq")
            .and_then(|sq| sq.as_table())
            .is_some_and(|sq| sq.contains_key("gamma"));
        let mut config: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| parse_error(&e))?;
        if !gamma_given {
            if let Some(game) = config.experiment.matrix_game(config.game) {
                config.sq.gamma = game.default_gamma();
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "must list at least one seed"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        self.sq.validate().map_err(|e| prefix("sq", e))?;
        if self.coin.episode_length == 0 {
            return Err(Error::validation(
                "coin.episode_length",
                "must be at least 1",
            ));
        }
        self.distill.validate().map_err(|e| prefix("distill", e))?;
        if self.z_values.is_empty() || self.z_values.contains(&0) {
            return Err(Error::validation(
                "z_values",
                "must be a nonempty list of values >= 1",
            ));
        }
        if !self.cooperation_threshold.is_finite() {
            return Err(Error::validation("cooperation_threshold", "must be finite"));
        }
        if self.threads == Some(0) {
            return Err(Error::validation("threads", "must be at least 1"));
        }
        Ok(())
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}

fn parse_error(e: &toml::de::Error) -> Error {
    // Unknown keys and type errors surface as validation failures naming the offending key.
    let message = e.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field"))
        .unwrap_or("<document>")
        .to_string();
    Error::Validation { field, message }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Validation { field, .. } => field,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn empty_document_is_the_default_ipd_setup() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c.experiment, ExperimentKind::Ipd);
        assert_eq!(c.sq.gamma, 0.96);
        assert_eq!(c.sq.actor_step, 0.005);
        assert_eq!(c.sq.z, 10);
        assert_eq!(c.seeds.len(), 20);
        assert_eq!(c.learners, [LearnerKind::StatusQuo; 2]);
    }

    #[test]
    fn matching_pennies_defaults_to_its_own_discount() {
        let c = ExperimentConfig::from_toml("experiment = \"imp\"").unwrap();
        assert_eq!(c.sq.gamma, 0.9);
        let c = ExperimentConfig::from_toml("experiment = \"imp\"\n[sq]\ngamma = 0.5").unwrap();
        assert_eq!(c.sq.gamma, 0.5);
        let c =
            ExperimentConfig::from_toml("experiment = \"z_sweep\"\ngame = \"matching_pennies\"")
                .unwrap();
        assert_eq!(c.sq.gamma, 0.9);
    }

    #[test]
    fn out_of_range_values_name_their_field() {
        let e = ExperimentConfig::from_toml("[sq]\ngamma = 1.2").unwrap_err();
        assert_eq!(field_of(e), "sq.gamma");
        let e = ExperimentConfig::from_toml("seeds = []").unwrap_err();
        assert_eq!(field_of(e), "seeds");
        let e = ExperimentConfig::from_toml("z_values = [1, 0]").unwrap_err();
        assert_eq!(field_of(e), "z_values");
        let e = ExperimentConfig::from_toml("[distill.solo]\ncoin_lifetime = 0").unwrap_err();
        assert_eq!(field_of(e), "distill.solo.coin_lifetime");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::from_toml("epochz = 3").unwrap_err();
        assert_eq!(field_of(e), "epochz");
        let e = ExperimentConfig::from_toml("[sq]\nzeta = 3").unwrap_err();
        assert_eq!(field_of(e), "zeta");
        assert!(ExperimentConfig::from_toml("experiment = \"chess\"").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_toml(
            "experiment = \"coin_gamedistill\"\nlearners = [\"selfish\", \"status_quo\"]\n\
             [coin]\nepisode_length = 50\nrespawn = \"board\"",
        )
        .unwrap();
        assert_eq!(c.coin.episode_length, 50);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
