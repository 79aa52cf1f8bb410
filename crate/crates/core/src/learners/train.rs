use std::collections::BTreeMap;

use crate::coin_game::{CoinGame, CoinGameConfig, Color, Move, PickEvent};
use crate::error::{Error, Result};
use crate::matrix_games::{ndr, Action, GameKind, MatrixGame};
use crate::rng::{stream, Stream, StreamRng};

use super::{Agent, AgentEpisode, AgentStep};

/// A two-player environment as seen by [`train_pair`]. Each agent gets its own input
/// vector; actions are indices into the agent's action set.
pub trait PairEnvironment {
    fn reset(&mut self);
    fn is_finished(&self) -> bool;
    fn inputs(&self) -> [Vec<f64>; 2];
    /// Applies the joint action and returns each agent's reward.
    fn step(&mut self, actions: [usize; 2]) -> Result<[f64; 2]>;
    /// Adds the metrics of the episode just finished to `tally`.
    fn record_episode(&self, episodes: &[AgentEpisode; 2], tally: &mut MetricTally);
}

/// Ratio metrics accumulated as (numerator, denominator) per agent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTally {
    sums: BTreeMap<String, [(f64, f64); 2]>,
}

impl MetricTally {
    pub fn add(&mut self, name: &str, agent: usize, numerator: f64, denominator: f64) {
        let entry = self.sums.entry(name.to_string()).or_default();
        entry[agent].0 += numerator;
        entry[agent].1 += denominator;
    }

    /// Adds a value that is averaged per episode.
    pub fn add_mean(&mut self, name: &str, agent: usize, value: f64) {
        self.add(name, agent, value, 1.0);
    }

    /// Pooled ratio per agent; `None` when nothing was counted.
    pub fn values(&self) -> BTreeMap<String, [Option<f64>; 2]> {
        self.sums
            .iter()
            .map(|(k, v)| {
                let ratio = |(n, d): (f64, f64)| (d > 0.0).then(|| n / d);
                (k.clone(), [ratio(v[0]), ratio(v[1])])
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub values: BTreeMap<String, [Option<f64>; 2]>,
}

impl EpochMetrics {
    pub fn get(&self, name: &str, agent: usize) -> Option<f64> {
        self.values.get(name).and_then(|v| v[agent])
    }
}

/// Outcome of [`train_pair`]: per-epoch metrics of the batch played before each update,
/// and the agents after the last update.
#[derive(Clone, Debug)]
pub struct PairRun {
    pub epochs: Vec<EpochMetrics>,
    pub agents: [Agent; 2],
}

impl PairRun {
    pub fn last(&self, name: &str, agent: usize) -> Option<f64> {
        self.epochs.last().and_then(|e| e.get(name, agent))
    }
}

/// Plays one episode and returns each agent's own view of it.
pub fn play_episode<E: PairEnvironment>(
    env: &mut E,
    agents: &[Agent; 2],
    rngs: &mut [StreamRng; 2],
) -> Result<[AgentEpisode; 2]> {
    env.reset();
    let mut episodes = [AgentEpisode::default(), AgentEpisode::default()];
    episodes.iter_mut().for_each(|e| e.steps.reserve(256));
    while !env.is_finished() {
        let inputs = env.inputs();
        let [in0, in1] = inputs;
        let actions = [
            agents[0].act(&in0, &mut rngs[0])?,
            agents[1].act(&in1, &mut rngs[1])?,
        ];
        let rewards = env.step(actions)?;
        for (i, input) in [in0, in1].into_iter().enumerate() {
            episodes[i].steps.push(AgentStep {
                input,
                action: actions[i],
                reward: rewards[i],
            });
        }
    }
    Ok(episodes)
}

/// Trains two agents against each other for `epochs` batches of `batch_size` episodes.
///
/// Each agent samples actions from its own stream and updates only from its own episode
/// views; no parameters or gradients pass between seats.
pub fn train_pair<E: PairEnvironment>(
    env: &mut E,
    agents: [Agent; 2],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<PairRun> {
    let mut agents = agents;
    let mut action_rngs = [
        stream(seed, Stream::Agent(0)),
        stream(seed, Stream::Agent(1)),
    ];
    let mut kappa_rngs = [
        stream(seed, Stream::Kappa(0)),
        stream(seed, Stream::Kappa(1)),
    ];
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut batches: [Vec<AgentEpisode>; 2] = [Vec::new(), Vec::new()];
        let mut tally = MetricTally::default();
        for _ in 0..batch_size {
            let episodes = play_episode(env, &agents, &mut action_rngs)?;
            env.record_episode(&episodes, &mut tally);
            let [a, b] = episodes;
            batches[0].push(a);
            batches[1].push(b);
        }
        history.push(EpochMetrics {
            epoch,
            values: tally.values(),
        });
        for (i, agent) in agents.iter_mut().enumerate() {
            agent.update(&batches[i], &mut kappa_rngs[i])?;
        }
    }
    Ok(PairRun {
        epochs: history,
        agents,
    })
}

/// Iterated matrix game where each agent sees the previous joint action from its own seat.
///
/// Records `ndr` and `defection` (share of D moves) per agent.
#[derive(Clone, Debug)]
pub struct MatrixPairEnv {
    game: MatrixGame,
    gamma: f64,
}

impl MatrixPairEnv {
    pub fn new(kind: GameKind, gamma: f64) -> Self {
        MatrixPairEnv {
            game: MatrixGame::new(kind),
            gamma,
        }
    }

    pub fn with_horizon(kind: GameKind, gamma: f64, horizon: usize) -> Self {
        MatrixPairEnv {
            game: MatrixGame::with_horizon(kind, horizon),
            gamma,
        }
    }
}

impl PairEnvironment for MatrixPairEnv {
    fn reset(&mut self) {
        self.game.reset();
    }

    fn is_finished(&self) -> bool {
        self.game.is_finished()
    }

    fn inputs(&self) -> [Vec<f64>; 2] {
        let s = self.game.state();
        [
            s.for_agent(0).one_hot().to_vec(),
            s.for_agent(1).one_hot().to_vec(),
        ]
    }

    fn step(&mut self, actions: [usize; 2]) -> Result<[f64; 2]> {
        let joint = (
            Action::from_index(actions[0])?,
            Action::from_index(actions[1])?,
        );
        let (_, (r0, r1)) = self.game.step(joint)?;
        Ok([r0, r1])
    }

    fn record_episode(&self, episodes: &[AgentEpisode; 2], tally: &mut MetricTally) {
        for (i, ep) in episodes.iter().enumerate() {
            if let Ok(v) = ndr(&ep.rewards(), self.gamma) {
                tally.add_mean("ndr", i, v);
            }
            let defections = ep.steps.iter().filter(|s| s.action == 1).count();
            tally.add("defection", i, defections as f64, ep.len() as f64);
        }
    }
}

/// The raw Coin Game: actions are grid moves, inputs are each agent's own 3x3x4 view.
///
/// Records `own_coin` (share of the agent's picks that were its own colour) and `reward`
/// (undiscounted episode total).
#[derive(Clone, Debug)]
pub struct CoinPairEnv {
    game: CoinGame,
    events: Vec<PickEvent>,
    rng: StreamRng,
}

impl CoinPairEnv {
    pub fn new(config: CoinGameConfig, mut rng: StreamRng) -> Result<Self> {
        if config.episode_length == 0 {
            return Err(Error::validation("episode_length", "must be at least 1"));
        }
        let game = CoinGame::new(config, &mut rng);
        Ok(CoinPairEnv {
            game,
            events: Vec::new(),
            rng,
        })
    }

    pub fn events(&self) -> &[PickEvent] {
        &self.events
    }
}

/// Adds `own_coin` for both colours from the pick events of one episode.
pub(crate) fn record_own_coin(events: &[PickEvent], tally: &mut MetricTally) {
    for color in Color::BOTH {
        let (own, picks) = events
            .iter()
            .filter(|e| e.picked_by(color))
            .fold((0usize, 0usize), |(o, n), e| {
                (o + usize::from(e.coin_color == color), n + 1)
            });
        tally.add("own_coin", color.index(), own as f64, picks as f64);
    }
}

impl PairEnvironment for CoinPairEnv {
    fn reset(&mut self) {
        self.game.reset(&mut self.rng);
        self.events.clear();
    }

    fn is_finished(&self) -> bool {
        self.game.is_finished()
    }

    fn inputs(&self) -> [Vec<f64>; 2] {
        Color::BOTH.map(|c| self.game.observe(c).0)
    }

    fn step(&mut self, actions: [usize; 2]) -> Result<[f64; 2]> {
        if actions.iter().any(|&a| a >= Move::ALL.len()) {
            return Err(Error::rejected("move index must be below 4"));
        }
        let moves = actions.map(Move::from_index);
        let event = self.game.step(moves, &mut self.rng);
        self.events.push(event);
        Ok(event.rewards)
    }

    fn record_episode(&self, episodes: &[AgentEpisode; 2], tally: &mut MetricTally) {
        record_own_coin(&self.events, tally);
        for (i, ep) in episodes.iter().enumerate() {
            tally.add_mean("reward", i, ep.rewards().iter().sum());
        }
    }
}
