//! Random-play collection of pick windows and their binary file format.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coin_game::{self, Cell, Color, GridState, Move, Observation, Picker, RespawnMode};
use crate::coin_game::{CHANNELS, GRID, OBSERVATION_LEN};
use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, Activation, LayerSpec, NetworkModel, Padding, INIT_SCALE};

/// States per window.
pub const WINDOW: usize = 3;

/// The last `WINDOW` states before and including one of the agent's own picks, seen from the
/// agent's seat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSequence {
    pub agent: Color,
    /// Oldest first; the last state is the one in which the picking move was made.
    pub states: Vec<Observation>,
    /// The agent's move in each state of the window.
    pub logged_actions: Vec<Move>,
    pub own_reward: f64,
    pub opponent_reward: f64,
    pub coin_color_picked: Color,
    /// Leading entries that repeat the first state of the episode to fill the window.
    pub padding: usize,
    /// Index of the first state showing the coin that was finally picked. Entries before it
    /// are padding or chase an earlier coin. Never below `padding`.
    pub pursuit_start: usize,
}

impl StateSequence {
    /// Ground truth pick type: true when the agent took the other agent's coin.
    pub fn picked_other(&self) -> bool {
        self.coin_color_picked != self.agent
    }

    pub fn is_padded(&self) -> bool {
        self.padding > 0
    }

    /// `(state, move)` pairs for the transitions that really happened in this window while
    /// the finally picked coin was on the board.
    pub fn transitions(&self) -> impl Iterator<Item = (&Observation, Move)> {
        self.states
            .iter()
            .zip(self.logged_actions.iter().copied())
            .skip(self.pursuit_start)
    }

    /// The window flattened state after state, as the encoder consumes it.
    pub fn flat_states(&self) -> Vec<f64> {
        self.states
            .iter()
            .flat_map(|o| o.0.iter().copied())
            .collect()
    }

    fn check(&self) -> Result<()> {
        if self.states.len() != WINDOW || self.logged_actions.len() != WINDOW {
            return Err(Error::rejected(format!(
                "a window holds exactly {WINDOW} states"
            )));
        }
        if self.padding >= WINDOW {
            return Err(Error::rejected("a window needs at least one real state"));
        }
        if self.pursuit_start < self.padding || self.pursuit_start >= WINDOW {
            return Err(Error::rejected(
                "pursuit must start on a real state of the window",
            ));
        }
        if self.states.iter().any(|o| o.0.len() != OBSERVATION_LEN) {
            return Err(Error::rejected("observation of the wrong size in window"));
        }
        Ok(())
    }
}

/// A randomly initialised conv policy over the four moves. Near uniform at this init scale,
/// but state dependent.
pub fn random_move_policy<R: Rng + ?Sized>(rng: &mut R) -> NetworkModel {
    NetworkModel::with_uniform_init(
        vec![
            LayerSpec::conv2d(
                [GRID, GRID, CHANNELS],
                8,
                3,
                Padding::Valid,
                Activation::Relu,
            )
            .expect("static topology"),
            LayerSpec::dense(8, 4, Activation::Linear),
        ],
        rng,
        INIT_SCALE,
    )
    .expect("static topology")
}

fn sample_move<R: Rng + ?Sized>(
    policy: &NetworkModel,
    obs: &Observation,
    rng: &mut R,
) -> Result<Move> {
    let mut p = policy.forward_slice(&obs.0)?;
    softmax_in_place(&mut p);
    Ok(Move::from_index(crate::learners::sample_index(&p, rng)))
}

/// Plays episodes between two freshly initialised random policies and keeps a window every
/// time `agent` picks a coin alone, until `target_count` windows are collected.
///
/// Simultaneous picks are skipped: their rewards mix both reward rules, which would break the
/// link between the picked colour and the opponent's reward.
pub fn collect_rollouts<R: Rng + ?Sized>(
    agent: Color,
    target_count: usize,
    episode_length: usize,
    rng: &mut R,
) -> Result<Vec<StateSequence>> {
    if target_count == 0 {
        return Err(Error::rejected("target_count must be at least 1"));
    }
    if episode_length == 0 {
        return Err(Error::rejected("episode_length must be at least 1"));
    }
    let solo_picker = match agent {
        Color::Red => Picker::Red,
        Color::Blue => Picker::Blue,
    };
    let mut out = Vec::with_capacity(target_count);
    while out.len() < target_count {
        let policies = [random_move_policy(rng), random_move_policy(rng)];
        let mut state = coin_game::reset(rng);
        let mut history: Vec<(Observation, Move)> = Vec::with_capacity(episode_length);
        // History index of the first state showing the current coin.
        let mut coin_since = 0;
        for _ in 0..episode_length {
            let views = [
                coin_game::observe(&state, Color::Red),
                coin_game::observe(&state, Color::Blue),
            ];
            let moves = [
                sample_move(&policies[0], &views[0], rng)?,
                sample_move(&policies[1], &views[1], rng)?,
            ];
            let (next, event) = coin_game::step(&state, moves, RespawnMode::Coin, rng);
            history.push((views[agent.index()].clone(), moves[agent.index()]));
            if event.picker == solo_picker {
                out.push(window(
                    agent,
                    &history,
                    coin_since,
                    event.reward(agent),
                    event.reward(agent.other()),
                    event.coin_color,
                ));
                if out.len() == target_count {
                    break;
                }
            }
            if event.is_pick() {
                coin_since = history.len();
            }
            state = next;
        }
    }
    Ok(out)
}

fn window(
    agent: Color,
    history: &[(Observation, Move)],
    coin_since: usize,
    own_reward: f64,
    opponent_reward: f64,
    coin_color_picked: Color,
) -> StateSequence {
    let available = history.len().min(WINDOW);
    let padding = WINDOW - available;
    let start = history.len() - available;
    let tail = &history[start..];
    let pursuit_start = padding + coin_since.saturating_sub(start);
    let mut states = Vec::with_capacity(WINDOW);
    let mut logged_actions = Vec::with_capacity(WINDOW);
    for _ in 0..padding {
        states.push(tail[0].0.clone());
        logged_actions.push(tail[0].1);
    }
    for (obs, mv) in tail {
        states.push(obs.clone());
        logged_actions.push(*mv);
    }
    StateSequence {
        agent,
        states,
        logged_actions,
        own_reward,
        opponent_reward,
        coin_color_picked,
        padding,
        pursuit_start,
    }
}

/// A board with only the given agent on it, seen from that agent's seat.
pub fn solo_observation(agent_pos: Cell, coin_pos: Cell, coin_is_own: bool) -> Observation {
    let state = GridState {
        red_pos: agent_pos,
        blue_pos: agent_pos,
        coin_pos,
        coin_color: if coin_is_own { Color::Red } else { Color::Blue },
        step_index: 0,
    };
    let mut obs = coin_game::observe(&state, Color::Red);
    for cell in Cell::all() {
        obs.0[cell.index() * CHANNELS + Observation::OTHER] = 0.0;
    }
    obs
}

const DATASET_MAGIC: &[u8; 4] = b"SQDS";
const DATASET_VERSION: u32 = 2;

fn color_byte(c: Color) -> u8 {
    c.index() as u8
}

fn color_from(b: u8) -> Result<Color> {
    match b {
        0 => Ok(Color::Red),
        1 => Ok(Color::Blue),
        _ => Err(Error::Format(format!("bad colour byte {b}"))),
    }
}

/// Writes a dataset: magic, version, record count, window length, observation length, then
/// one fixed-size little-endian record per window.
pub fn write_dataset<W: Write>(mut w: W, dataset: &[StateSequence]) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(DATASET_VERSION)?;
    w.write_u64::<LittleEndian>(dataset.len() as u64)?;
    w.write_u32::<LittleEndian>(WINDOW as u32)?;
    w.write_u32::<LittleEndian>(OBSERVATION_LEN as u32)?;
    for seq in dataset {
        seq.check()?;
        w.write_u8(color_byte(seq.agent))?;
        w.write_u8(color_byte(seq.coin_color_picked))?;
        w.write_u8(seq.padding as u8)?;
        w.write_u8(seq.pursuit_start as u8)?;
        w.write_f64::<LittleEndian>(seq.own_reward)?;
        w.write_f64::<LittleEndian>(seq.opponent_reward)?;
        for m in &seq.logged_actions {
            w.write_u8(m.index() as u8)?;
        }
        for obs in &seq.states {
            for v in &obs.0 {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<StateSequence>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a sequence dataset".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    let window = r.read_u32::<LittleEndian>()? as usize;
    let obs_len = r.read_u32::<LittleEndian>()? as usize;
    if window != WINDOW || obs_len != OBSERVATION_LEN {
        return Err(Error::Format(format!(
            "dataset shape {window}x{obs_len} does not match {WINDOW}x{OBSERVATION_LEN}"
        )));
    }
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let agent = color_from(r.read_u8()?)?;
        let coin_color_picked = color_from(r.read_u8()?)?;
        let padding = r.read_u8()? as usize;
        let pursuit_start = r.read_u8()? as usize;
        let own_reward = r.read_f64::<LittleEndian>()?;
        let opponent_reward = r.read_f64::<LittleEndian>()?;
        let mut logged_actions = Vec::with_capacity(WINDOW);
        for _ in 0..WINDOW {
            let m = r.read_u8()? as usize;
            if m >= 4 {
                return Err(Error::Format(format!("bad move byte {m}")));
            }
            logged_actions.push(Move::from_index(m));
        }
        let mut states = Vec::with_capacity(WINDOW);
        for _ in 0..WINDOW {
            let mut data = vec![0.0; OBSERVATION_LEN];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            states.push(Observation(data));
        }
        let seq = StateSequence {
            agent,
            states,
            logged_actions,
            own_reward,
            opponent_reward,
            coin_color_picked,
            padding,
            pursuit_start,
        };
        seq.check().map_err(|e| Error::Format(e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}
