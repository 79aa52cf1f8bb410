//! Per-cluster state-to-move networks, their persistence, and the solo evaluation.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{solo_observation, StateSequence};
use super::Role;
use crate::coin_game::{Cell, Move, Observation, CHANNELS, GRID, OBSERVATION_LEN};
use crate::error::{Error, Result};
use crate::nn::{
    add_l2_gradient, loss_and_gradient, Activation, Direction, LayerSpec, LossKind, NetworkModel,
    OptimizerState, Padding, INIT_SCALE,
};

const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    /// Four sigmoid scores, one per move in `Move::ALL` order.
    pub network: NetworkModel,
    pub role: Role,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleTraining {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Coefficient of `lambda/2 * |params|^2` added to the loss.
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for OracleTraining {
    fn default() -> Self {
        OracleTraining {
            epochs: 30,
            learning_rate: 0.001,
            l2: 1e-4,
            batch_size: 32,
        }
    }
}

pub fn oracle_network<R: Rng + ?Sized>(rng: &mut R) -> NetworkModel {
    NetworkModel::with_uniform_init(
        vec![
            LayerSpec::conv2d(
                [GRID, GRID, CHANNELS],
                16,
                3,
                Padding::Same,
                Activation::Relu,
            )
            .expect("static topology"),
            LayerSpec::conv2d([GRID, GRID, 16], 32, 3, Padding::Valid, Activation::Relu)
                .expect("static topology"),
            LayerSpec::dense(32, 64, Activation::Relu),
            LayerSpec::dense(64, 64, Activation::Relu),
            LayerSpec::dense(64, 32, Activation::Relu),
            LayerSpec::dense(32, Move::ALL.len(), Activation::Sigmoid),
        ],
        rng,
        INIT_SCALE,
    )
    .expect("static topology")
}

impl OracleModel {
    pub fn scores(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.network.forward_slice(&obs.0)
    }

    /// Highest-scoring move; ties go to the earliest move.
    pub fn act(&self, obs: &Observation) -> Result<Move> {
        let s = self.scores(obs)?;
        let mut best = 0;
        for (i, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = i;
            }
        }
        Ok(Move::from_index(best))
    }

    /// Share of `(state, move)` pairs whose logged move is the argmax.
    pub fn accuracy<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a Observation, Move)>,
    ) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for (obs, mv) in pairs {
            hit += usize::from(self.act(obs)? == mv);
            total += 1;
        }
        if total == 0 {
            return Err(Error::rejected("no pairs to score"));
        }
        Ok(hit as f64 / total as f64)
    }
}

/// Every real transition of every window, as `(state, move)` training pairs.
pub fn training_pairs<'a>(sequences: &[&'a StateSequence]) -> Vec<(&'a Observation, Move)> {
    sequences.iter().flat_map(|s| s.transitions()).collect()
}

/// Fits a fresh oracle with BCE against the one-hot logged moves, Adam and an L2 penalty.
pub fn train_oracle<R: Rng + ?Sized>(
    sequences: &[&StateSequence],
    role: Role,
    training: &OracleTraining,
    rng: &mut R,
) -> Result<OracleModel> {
    let pairs = training_pairs(sequences);
    if pairs.is_empty() {
        return Err(Error::rejected(
            "cannot train an oracle on an empty cluster",
        ));
    }
    if training.batch_size == 0 {
        return Err(Error::validation("batch_size", "must be at least 1"));
    }
    if !(training.l2 >= 0.0 && training.l2.is_finite()) {
        return Err(Error::validation("l2", "must be a finite value >= 0"));
    }
    if pairs.iter().any(|(o, _)| o.0.len() != OBSERVATION_LEN) {
        return Err(Error::rejected("observation of the wrong size in cluster"));
    }
    let mut network = oracle_network(rng);
    let mut opt = OptimizerState::adam(training.learning_rate, network.parameter_count())?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut target = [0.0; 4];
    for _ in 0..training.epochs {
        order.shuffle(rng);
        for batch in order.chunks(training.batch_size) {
            let mut grad = vec![0.0; network.parameter_count()];
            for &i in batch {
                let (obs, mv) = pairs[i];
                target.iter_mut().for_each(|t| *t = 0.0);
                target[mv.index()] = 1.0;
                let mut out = network.forward_slice(&obs.0)?;
                out.iter_mut()
                    .for_each(|p| *p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR));
                let (_, g) = loss_and_gradient(&out, &target, LossKind::Bce)?;
                network.backward_into(&obs.0, &g, &mut grad)?;
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            add_l2_gradient(network.parameters(), training.l2, &mut grad);
            opt.step(&mut network, &grad, Direction::Descend)?;
        }
    }
    Ok(OracleModel { network, role })
}

const MODEL_MAGIC: &[u8; 4] = b"SQNM";
const MODEL_VERSION: u32 = 1;

/// Writes magic, version, role, the JSON topology, then the parameters as little-endian f64.
pub fn write_oracle<W: Write>(mut w: W, oracle: &OracleModel) -> Result<()> {
    let topology =
        serde_json::to_vec(oracle.network.layers()).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_VERSION)?;
    w.write_u8(match oracle.role {
        Role::Cooperation => 0,
        Role::Defection => 1,
    })?;
    w.write_u32::<LittleEndian>(topology.len() as u32)?;
    w.write_all(&topology)?;
    w.write_u64::<LittleEndian>(oracle.network.parameter_count() as u64)?;
    for p in oracle.network.parameters() {
        w.write_f64::<LittleEndian>(*p)?;
    }
    Ok(())
}

pub fn read_oracle<R: Read>(mut r: R) -> Result<OracleModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("not an oracle model file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let role = match r.read_u8()? {
        0 => Role::Cooperation,
        1 => Role::Defection,
        b => return Err(Error::Format(format!("bad role byte {b}"))),
    };
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut topology = vec![0u8; len];
    r.read_exact(&mut topology)?;
    let layers: Vec<LayerSpec> =
        serde_json::from_slice(&topology).map_err(|e| Error::Format(e.to_string()))?;
    let mut network = NetworkModel::new(layers).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count != network.parameter_count() {
        return Err(Error::Format(format!(
            "topology needs {} parameters, file has {count}",
            network.parameter_count()
        )));
    }
    r.read_f64_into::<LittleEndian>(network.parameters_mut())?;
    if network.layers().first().map(|l| l.input_len()) != Some(OBSERVATION_LEN)
        || network.output_len() != Move::ALL.len()
    {
        return Err(Error::Format(
            "model does not map a board to four moves".into(),
        ));
    }
    Ok(OracleModel { network, role })
}

/// Single-agent evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoloProtocol {
    pub episodes: usize,
    pub episode_length: usize,
    /// Steps a coin stays on the board before it is replaced. At 10 a uniformly random mover
    /// clears about half of the coins.
    pub coin_lifetime: usize,
}

impl Default for SoloProtocol {
    fn default() -> Self {
        SoloProtocol {
            episodes: 100,
            episode_length: 200,
            coin_lifetime: 10,
        }
    }
}

/// Outcome of a solo evaluation over resolved coins. Rates are `None` when their
/// denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SoloReport {
    pub own_appeared: u64,
    pub other_appeared: u64,
    pub own_picked: u64,
    pub other_picked: u64,
}

impl SoloReport {
    fn record(&mut self, own: bool, picked: bool) {
        let (appeared, picks) = if own {
            (&mut self.own_appeared, &mut self.own_picked)
        } else {
            (&mut self.other_appeared, &mut self.other_picked)
        };
        *appeared += 1;
        *picks += u64::from(picked);
    }

    /// Share of the other agent's coins that were picked before they were replaced.
    pub fn other_color_pick_rate(&self) -> Option<f64> {
        (self.other_appeared > 0).then(|| self.other_picked as f64 / self.other_appeared as f64)
    }

    /// Share of the agent's own coins that were picked before they were replaced.
    pub fn own_color_pick_rate(&self) -> Option<f64> {
        (self.own_appeared > 0).then(|| self.own_picked as f64 / self.own_appeared as f64)
    }

    /// Share of all picks that were of the other agent's colour.
    pub fn other_color_pick_share(&self) -> Option<f64> {
        let picks = self.own_picked + self.other_picked;
        (picks > 0).then(|| self.other_picked as f64 / picks as f64)
    }
}

/// Plays the single-agent game: one agent on the board, a coin of either colour with equal
/// probability on a cell other than the agent's, replaced when picked or after
/// `coin_lifetime` steps. `choose` maps the agent's view to a move.
pub fn evaluate_solo<R: Rng + ?Sized>(
    mut choose: impl FnMut(&Observation, &mut R) -> Result<Move>,
    protocol: &SoloProtocol,
    rng: &mut R,
) -> Result<SoloReport> {
    if protocol.coin_lifetime == 0 {
        return Err(Error::validation("coin_lifetime", "must be at least 1"));
    }
    let cells: Vec<Cell> = Cell::all().collect();
    let mut report = SoloReport::default();
    for _ in 0..protocol.episodes {
        let mut agent = cells[rng.gen_range(0..cells.len())];
        let mut coin: Option<(Cell, bool, usize)> = None;
        for _ in 0..protocol.episode_length {
            let (coin_pos, own, age) = match coin {
                Some(c) => c,
                None => {
                    let free: Vec<Cell> = cells.iter().copied().filter(|&c| c != agent).collect();
                    (free[rng.gen_range(0..free.len())], rng.gen_bool(0.5), 0)
                }
            };
            let mv = choose(&solo_observation(agent, coin_pos, own), rng)?;
            agent = agent.moved(mv);
            let picked = agent == coin_pos;
            // A coin counts once it is picked or expires; one cut off by the episode end does not.
            if picked || age + 1 >= protocol.coin_lifetime {
                report.record(own, picked);
                coin = None;
            } else {
                coin = Some((coin_pos, own, age + 1));
            }
        }
    }
    Ok(report)
}

pub fn evaluate_oracle_solo<R: Rng + ?Sized>(
    oracle: &OracleModel,
    protocol: &SoloProtocol,
    rng: &mut R,
) -> Result<SoloReport> {
    evaluate_solo(|obs, _| oracle.act(obs), protocol, rng)
}
