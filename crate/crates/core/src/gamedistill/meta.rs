//! The Coin Game seen through the oracles: each agent picks, per step, which of its own two
//! oracles moves for it.

use crate::coin_game::{
    self, Cell, CoinGame, CoinGameConfig, Color, GridState, Move, Observation, PickEvent, CHANNELS,
    GRID,
};
use crate::error::{Error, Result};
use crate::learners::{
    record_own_coin, AgentEpisode, MetricTally, PairEnvironment, META_INPUT_SHAPE,
};
use crate::matrix_games::{Action, MatrixState, STATE_SLOTS};
use crate::rng::StreamRng;

use super::oracle::OracleModel;
use super::Role;

/// Meta-action index of each role.
pub fn meta_action(role: Role) -> usize {
    match role {
        Role::Cooperation => 0,
        Role::Defection => 1,
    }
}

const BOARD_KEYS: usize = GRID * GRID * GRID * GRID * GRID * GRID * 2;

/// Oracles of one agent, with their moves memoised per board.
#[derive(Clone, Debug)]
struct OracleSeat {
    oracles: [OracleModel; 2],
    cache: [Vec<Option<Move>>; 2],
}

impl OracleSeat {
    fn new(cooperation: OracleModel, defection: OracleModel) -> Result<Self> {
        if cooperation.role != Role::Cooperation || defection.role != Role::Defection {
            return Err(Error::rejected(
                "oracles must be given as (cooperation, defection)",
            ));
        }
        Ok(OracleSeat {
            oracles: [cooperation, defection],
            cache: [vec![None; BOARD_KEYS], vec![None; BOARD_KEYS]],
        })
    }

    fn act(&mut self, action: usize, state: &GridState, obs: &Observation) -> Result<Move> {
        let key = ((state.red_pos.index() * GRID * GRID + state.blue_pos.index()) * GRID * GRID
            + state.coin_pos.index())
            * 2
            + state.coin_color.index();
        if let Some(m) = self.cache[action][key] {
            return Ok(m);
        }
        let m = self.oracles[action].act(obs)?;
        self.cache[action][key] = Some(m);
        Ok(m)
    }
}

/// Two-agent Coin Game with meta-actions `{0: cooperation oracle, 1: defection oracle}`.
///
/// Each agent's input is its 3x3x4 view stacked with five constant planes holding the
/// previous joint meta-action from its own seat. Records `own_coin` (share of the agent's
/// picks that were its own colour), `defection` (share of defection meta-actions) and
/// `defection_other_coin` (the same share restricted to steps with the opponent's coin on
/// the board).
#[derive(Clone, Debug)]
pub struct CoinMetaEnv {
    game: CoinGame,
    seats: [OracleSeat; 2],
    previous: MatrixState,
    events: Vec<PickEvent>,
    rng: StreamRng,
}

impl CoinMetaEnv {
    /// `oracles[i]` is `(cooperation, defection)` for the agent of colour `Color::from_index(i)`.
    pub fn new(
        config: CoinGameConfig,
        oracles: [(OracleModel, OracleModel); 2],
        mut rng: StreamRng,
    ) -> Result<Self> {
        if config.episode_length == 0 {
            return Err(Error::validation("episode_length", "must be at least 1"));
        }
        let [(rc, rd), (bc, bd)] = oracles;
        let game = CoinGame::new(config, &mut rng);
        Ok(CoinMetaEnv {
            game,
            seats: [OracleSeat::new(rc, rd)?, OracleSeat::new(bc, bd)?],
            previous: MatrixState::Initial,
            events: Vec::new(),
            rng,
        })
    }

    /// Pick events of the current (or last finished) episode.
    pub fn events(&self) -> &[PickEvent] {
        &self.events
    }
}

/// A view stacked with the one-hot previous joint meta-action, broadcast over every cell.
pub fn meta_input(obs: &Observation, previous: MatrixState) -> Vec<f64> {
    let depth = META_INPUT_SHAPE[2];
    let slots = previous.one_hot();
    let mut out = Vec::with_capacity(GRID * GRID * depth);
    for cell in Cell::all() {
        let base = cell.index() * CHANNELS;
        out.extend_from_slice(&obs.0[base..base + CHANNELS]);
        out.extend_from_slice(&slots);
    }
    debug_assert_eq!(depth, CHANNELS + STATE_SLOTS);
    out
}

fn other_coin_on_board(input: &[f64]) -> bool {
    let depth = META_INPUT_SHAPE[2];
    input
        .chunks(depth)
        .any(|cell| cell[Observation::OTHER_COIN] != 0.0)
}

impl PairEnvironment for CoinMetaEnv {
    fn reset(&mut self) {
        self.game.reset(&mut self.rng);
        self.previous = MatrixState::Initial;
        self.events.clear();
    }

    fn is_finished(&self) -> bool {
        self.game.is_finished()
    }

    fn inputs(&self) -> [Vec<f64>; 2] {
        [0, 1].map(|i| {
            let view = self.game.observe(Color::from_index(i));
            meta_input(&view, self.previous.for_agent(i))
        })
    }

    fn step(&mut self, actions: [usize; 2]) -> Result<[f64; 2]> {
        let joint = (
            Action::from_index(actions[0])?,
            Action::from_index(actions[1])?,
        );
        let state = *self.game.state();
        let mut moves = [Move::Up; 2];
        for (i, seat) in self.seats.iter_mut().enumerate() {
            let view = coin_game::observe(&state, Color::from_index(i));
            moves[i] = seat.act(actions[i], &state, &view)?;
        }
        let event = self.game.step(moves, &mut self.rng);
        self.events.push(event);
        self.previous = MatrixState::Played(joint.0, joint.1);
        Ok([event.reward(Color::Red), event.reward(Color::Blue)])
    }

    fn record_episode(&self, episodes: &[AgentEpisode; 2], tally: &mut MetricTally) {
        record_own_coin(&self.events, tally);
        for (i, ep) in episodes.iter().enumerate() {
            let defect = meta_action(Role::Defection);
            let defections = ep.steps.iter().filter(|s| s.action == defect).count();
            tally.add("defection", i, defections as f64, ep.len() as f64);
            let (mut d, mut n) = (0usize, 0usize);
            for s in ep.steps.iter().filter(|s| other_coin_on_board(&s.input)) {
                n += 1;
                d += usize::from(s.action == defect);
            }
            tally.add("defection_other_coin", i, d as f64, n as f64);
            let total: f64 = ep.rewards().iter().sum();
            tally.add_mean("reward", i, total);
        }
    }
}
