//! The two-agent Coin Game on a 3x3 grid.
//!
//! A red and a blue agent move simultaneously. Whoever steps onto the coin picks it up and
//! gets +1; if the coin belongs to the other agent, that agent gets -2. After a pick the
//! coin respawns (by default only the coin, see [`RespawnMode`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const GRID: usize = 3;
pub const CHANNELS: usize = 4;
pub const OBSERVATION_LEN: usize = GRID * GRID * CHANNELS;
pub const DEFAULT_EPISODE_LENGTH: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    pub const BOTH: [Color; 2] = [Color::Red, Color::Blue];

    pub fn index(self) -> usize {
        match self {
            Color::Red => 0,
            Color::Blue => 1,
        }
    }

    pub fn from_index(i: usize) -> Color {
        if i == 0 {
            Color::Red
        } else {
            Color::Blue
        }
    }

    pub fn other(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        debug_assert!(row < GRID && col < GRID);
        Cell { row, col }
    }

    pub fn index(self) -> usize {
        self.row * GRID + self.col
    }

    pub fn from_index(i: usize) -> Self {
        Cell::new(i / GRID, i % GRID)
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..GRID * GRID).map(Cell::from_index)
    }

    /// Moving off the grid leaves the position unchanged.
    pub fn moved(self, m: Move) -> Cell {
        let (r, c) = (self.row, self.col);
        match m {
            Move::Up => Cell::new(r.saturating_sub(1), c),
            Move::Down => Cell::new((r + 1).min(GRID - 1), c),
            Move::Left => Cell::new(r, c.saturating_sub(1)),
            Move::Right => Cell::new(r, (c + 1).min(GRID - 1)),
        }
    }

    pub fn manhattan(self, other: Cell) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Move {
        Move::ALL[i % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub red_pos: Cell,
    pub blue_pos: Cell,
    pub coin_pos: Cell,
    pub coin_color: Color,
    pub step_index: usize,
}

impl GridState {
    pub fn position(&self, agent: Color) -> Cell {
        match agent {
            Color::Red => self.red_pos,
            Color::Blue => self.blue_pos,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Picker {
    None,
    Red,
    Blue,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickEvent {
    pub picker: Picker,
    pub coin_color: Color,
    /// `[red, blue]`.
    pub rewards: [f64; 2],
}

impl PickEvent {
    pub fn picked_by(&self, agent: Color) -> bool {
        matches!(
            (self.picker, agent),
            (Picker::Both, _) | (Picker::Red, Color::Red) | (Picker::Blue, Color::Blue)
        )
    }

    pub fn is_pick(&self) -> bool {
        self.picker != Picker::None
    }

    pub fn reward(&self, agent: Color) -> f64 {
        self.rewards[agent.index()]
    }
}

/// Rewards for a set of pickers: +1 per pick, -2 to the owner for every pick of its coin by
/// the other agent.
pub fn pick_rewards(red_picks: bool, blue_picks: bool, coin: Color) -> [f64; 2] {
    let mut rewards = [0.0; 2];
    for (agent, picks) in [(Color::Red, red_picks), (Color::Blue, blue_picks)] {
        if picks {
            rewards[agent.index()] += 1.0;
            if coin != agent {
                rewards[coin.index()] -= 2.0;
            }
        }
    }
    rewards
}

/// What happens after a coin is picked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RespawnMode {
    /// New coin with random color on a random cell free of agents; agents stay put.
    #[default]
    Coin,
    /// Agents and coin are all re-placed as on reset.
    Board,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoinGameConfig {
    pub episode_length: usize,
    pub respawn: RespawnMode,
}

impl Default for CoinGameConfig {
    fn default() -> Self {
        CoinGameConfig {
            episode_length: DEFAULT_EPISODE_LENGTH,
            respawn: RespawnMode::Coin,
        }
    }
}

/// Places both agents and the coin on three distinct uniformly chosen cells.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> GridState {
    let red = rng.gen_range(0..GRID * GRID);
    let mut blue = rng.gen_range(0..GRID * GRID - 1);
    if blue >= red {
        blue += 1;
    }
    let red_pos = Cell::from_index(red);
    let blue_pos = Cell::from_index(blue);
    GridState {
        red_pos,
        blue_pos,
        coin_pos: free_cell(rng, &[red_pos, blue_pos]),
        coin_color: random_color(rng),
        step_index: 0,
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> Color {
    if rng.gen_bool(0.5) {
        Color::Red
    } else {
        Color::Blue
    }
}

fn free_cell<R: Rng + ?Sized>(rng: &mut R, occupied: &[Cell]) -> Cell {
    let free: Vec<Cell> = Cell::all().filter(|c| !occupied.contains(c)).collect();
    free[rng.gen_range(0..free.len())]
}

/// Advances one simultaneous move. `rng` is only consumed when a coin respawns.
pub fn step<R: Rng + ?Sized>(
    state: &GridState,
    moves: [Move; 2],
    respawn: RespawnMode,
    rng: &mut R,
) -> (GridState, PickEvent) {
    let red_pos = state.red_pos.moved(moves[0]);
    let blue_pos = state.blue_pos.moved(moves[1]);
    let red_picks = red_pos == state.coin_pos;
    let blue_picks = blue_pos == state.coin_pos;
    let picker = match (red_picks, blue_picks) {
        (false, false) => Picker::None,
        (true, false) => Picker::Red,
        (false, true) => Picker::Blue,
        (true, true) => Picker::Both,
    };
    let event = PickEvent {
        picker,
        coin_color: state.coin_color,
        rewards: pick_rewards(red_picks, blue_picks, state.coin_color),
    };
    let mut next = GridState {
        red_pos,
        blue_pos,
        coin_pos: state.coin_pos,
        coin_color: state.coin_color,
        step_index: state.step_index + 1,
    };
    if event.is_pick() {
        match respawn {
            RespawnMode::Coin => {
                next.coin_pos = free_cell(rng, &[red_pos, blue_pos]);
                next.coin_color = random_color(rng);
            }
            RespawnMode::Board => {
                let fresh = reset(rng);
                next = GridState {
                    step_index: next.step_index,
                    ..fresh
                };
            }
        }
    }
    (next, event)
}

/// A 3x3x4 one-hot view in HWC order. Channels: self, other agent, own coin, other coin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub const SELF: usize = 0;
    pub const OTHER: usize = 1;
    pub const OWN_COIN: usize = 2;
    pub const OTHER_COIN: usize = 3;

    pub fn at(&self, cell: Cell, channel: usize) -> f64 {
        self.0[cell.index() * CHANNELS + channel]
    }

    pub fn channel_sum(&self, channel: usize) -> f64 {
        Cell::all().map(|c| self.at(c, channel)).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn observe(state: &GridState, perspective: Color) -> Observation {
    let mut data = vec![0.0; OBSERVATION_LEN];
    let me = state.position(perspective);
    let other = state.position(perspective.other());
    data[me.index() * CHANNELS + Observation::SELF] = 1.0;
    data[other.index() * CHANNELS + Observation::OTHER] = 1.0;
    let coin_channel = if state.coin_color == perspective {
        Observation::OWN_COIN
    } else {
        Observation::OTHER_COIN
    };
    data[state.coin_pos.index() * CHANNELS + coin_channel] = 1.0;
    Observation(data)
}

/// Share of `agent`'s picks that were of its own color. `None` when it picked nothing.
pub fn own_coin_probability<'a>(
    events: impl IntoIterator<Item = &'a PickEvent>,
    agent: Color,
) -> Option<f64> {
    let (mut own, mut total) = (0usize, 0usize);
    for e in events {
        if e.picked_by(agent) {
            total += 1;
            if e.coin_color == agent {
                own += 1;
            }
        }
    }
    (total > 0).then(|| own as f64 / total as f64)
}

/// A running two-agent game with a fixed episode length.
#[derive(Clone, Debug)]
pub struct CoinGame {
    config: CoinGameConfig,
    state: GridState,
}

impl CoinGame {
    pub fn new<R: Rng + ?Sized>(config: CoinGameConfig, rng: &mut R) -> Self {
        CoinGame {
            config,
            state: reset(rng),
        }
    }

    pub fn config(&self) -> &CoinGameConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> GridState {
        self.state = reset(rng);
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.step_index >= self.config.episode_length
    }

    pub fn observe(&self, perspective: Color) -> Observation {
        observe(&self.state, perspective)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, moves: [Move; 2], rng: &mut R) -> PickEvent {
        let (next, event) = step(&self.state, moves, self.config.respawn, rng);
        self.state = next;
        event
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn state(
        red: (usize, usize),
        blue: (usize, usize),
        coin: (usize, usize),
        color: Color,
    ) -> GridState {
        GridState {
            red_pos: Cell::new(red.0, red.1),
            blue_pos: Cell::new(blue.0, blue.1),
            coin_pos: Cell::new(coin.0, coin.1),
            coin_color: color,
            step_index: 0,
        }
    }

    #[test]
    fn reset_is_seeded_and_places_on_distinct_cells() {
        assert_eq!(
            reset(&mut stream(3, Stream::Env)),
            reset(&mut stream(3, Stream::Env))
        );
        let mut rng = stream(4, Stream::Env);
        let mut red = 0;
        for _ in 0..10_000 {
            let s = reset(&mut rng);
            assert_ne!(s.red_pos, s.blue_pos);
            assert_ne!(s.red_pos, s.coin_pos);
            assert_ne!(s.blue_pos, s.coin_pos);
            if s.coin_color == Color::Red {
                red += 1;
            }
        }
        let frac = red as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.02, "red fraction {frac}");
    }

    #[test]
    fn own_pick_pays_picker_only() {
        let mut rng = stream(0, Stream::Env);
        let s = state((0, 0), (2, 2), (0, 1), Color::Red);
        let (next, e) = step(&s, [Move::Right, Move::Up], RespawnMode::Coin, &mut rng);
        assert_eq!(e.picker, Picker::Red);
        assert_eq!(e.rewards, [1.0, 0.0]);
        assert_eq!(next.red_pos, Cell::new(0, 1));
        assert_ne!(next.coin_pos, next.red_pos);
        assert_ne!(next.coin_pos, next.blue_pos);
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn cross_pick_costs_the_owner_two() {
        let mut rng = stream(0, Stream::Env);
        let s = state((0, 0), (2, 2), (1, 0), Color::Blue);
        let (_, e) = step(&s, [Move::Down, Move::Left], RespawnMode::Coin, &mut rng);
        assert_eq!(e.rewards, [1.0, -2.0]);
        let s = state((0, 0), (2, 2), (2, 1), Color::Red);
        let (_, e) = step(&s, [Move::Up, Move::Left], RespawnMode::Coin, &mut rng);
        assert_eq!(e.picker, Picker::Blue);
        assert_eq!(e.rewards, [-2.0, 1.0]);
    }

    #[test]
    fn simultaneous_pick_sums_both_rules() {
        let mut rng = stream(0, Stream::Env);
        let s = state((1, 0), (1, 2), (1, 1), Color::Red);
        let (_, e) = step(&s, [Move::Right, Move::Left], RespawnMode::Coin, &mut rng);
        assert_eq!(e.picker, Picker::Both);
        assert_eq!(e.rewards, [-1.0, 1.0]);
    }

    #[test]
    fn no_pick_leaves_coin_and_rng_alone() {
        let mut rng = stream(0, Stream::Env);
        let s = state((0, 0), (2, 2), (1, 1), Color::Blue);
        let before = rng.clone();
        let (next, e) = step(&s, [Move::Up, Move::Down], RespawnMode::Coin, &mut rng);
        assert_eq!(e.rewards, [0.0, 0.0]);
        assert_eq!(e.picker, Picker::None);
        assert_eq!((next.coin_pos, next.coin_color), (s.coin_pos, s.coin_color));
        assert_eq!((next.red_pos, next.blue_pos), (s.red_pos, s.blue_pos));
        assert_eq!(rng, before);
    }

    #[test]
    fn board_respawn_replaces_everything() {
        let mut rng = stream(9, Stream::Env);
        let s = state((0, 0), (2, 2), (0, 1), Color::Red);
        let (next, _) = step(&s, [Move::Right, Move::Up], RespawnMode::Board, &mut rng);
        assert_eq!(next.step_index, 1);
        assert_ne!(next.red_pos, next.blue_pos);
        assert_ne!(next.coin_pos, next.red_pos);
    }

    /// Reward table and single-coin invariant over every move pair and many random states.
    #[test]
    fn exhaustive_reward_table() {
        let mut rng = stream(1, Stream::Env);
        for cells in 0..9usize.pow(3) {
            let (r, b, c) = (cells % 9, (cells / 9) % 9, cells / 81);
            if r == c || b == c {
                continue;
            }
            for color in Color::BOTH {
                let s = GridState {
                    red_pos: Cell::from_index(r),
                    blue_pos: Cell::from_index(b),
                    coin_pos: Cell::from_index(c),
                    coin_color: color,
                    step_index: 0,
                };
                for mr in Move::ALL {
                    for mb in Move::ALL {
                        let (next, e) = step(&s, [mr, mb], RespawnMode::Coin, &mut rng);
                        let red_on = s.red_pos.moved(mr) == s.coin_pos;
                        let blue_on = s.blue_pos.moved(mb) == s.coin_pos;
                        let mut expect = [0.0; 2];
                        if red_on {
                            expect[0] += 1.0;
                            if color == Color::Blue {
                                expect[1] -= 2.0;
                            }
                        }
                        if blue_on {
                            expect[1] += 1.0;
                            if color == Color::Red {
                                expect[0] -= 2.0;
                            }
                        }
                        assert_eq!(e.rewards, expect);
                        assert_eq!(e.picked_by(Color::Red), red_on);
                        assert_eq!(e.picked_by(Color::Blue), blue_on);
                        let obs = observe(&next, Color::Red);
                        assert_eq!(obs.channel_sum(2) + obs.channel_sum(3), 1.0);
                        if e.is_pick() {
                            assert_ne!(next.coin_pos, next.red_pos);
                            assert_ne!(next.coin_pos, next.blue_pos);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn observation_channels() {
        let s = state((0, 0), (1, 2), (2, 1), Color::Blue);
        let red = observe(&s, Color::Red);
        assert_eq!(red.at(Cell::new(0, 0), 0), 1.0);
        assert_eq!(red.channel_sum(0), 1.0);
        assert_eq!(red.channel_sum(Observation::OTHER_COIN), 1.0);
        assert_eq!(red.channel_sum(Observation::OWN_COIN), 0.0);
        let blue = observe(&s, Color::Blue);
        for cell in Cell::all() {
            assert_eq!(blue.at(cell, 0), red.at(cell, 1));
            assert_eq!(blue.at(cell, 1), red.at(cell, 0));
            assert_eq!(blue.at(cell, 2), red.at(cell, 3));
        }
        assert_eq!(red.0.iter().sum::<f64>(), 3.0);
        assert_eq!(blue.0.iter().sum::<f64>(), 3.0);
    }

    #[test]
    fn own_coin_probability_examples() {
        let own = PickEvent {
            picker: Picker::Red,
            coin_color: Color::Red,
            rewards: [1.0, 0.0],
        };
        let other = PickEvent {
            picker: Picker::Red,
            coin_color: Color::Blue,
            rewards: [1.0, -2.0],
        };
        let nothing = PickEvent {
            picker: Picker::None,
            coin_color: Color::Blue,
            rewards: [0.0, 0.0],
        };
        assert_eq!(own_coin_probability(&[own; 4], Color::Red), Some(1.0));
        assert_eq!(
            own_coin_probability(&[own, other, nothing], Color::Red),
            Some(0.5)
        );
        assert_eq!(own_coin_probability(&[own, other], Color::Blue), None);
    }

    #[test]
    fn random_movers_pick_own_coin_half_the_time() {
        let mut env_rng = stream(21, Stream::Env);
        let mut move_rng = stream(21, Stream::Agent(0));
        let mut game = CoinGame::new(
            CoinGameConfig {
                episode_length: 100_000,
                ..Default::default()
            },
            &mut env_rng,
        );
        let mut events = Vec::new();
        while !game.is_finished() {
            let moves = [
                Move::from_index(move_rng.gen_range(0..4)),
                Move::from_index(move_rng.gen_range(0..4)),
            ];
            events.push(game.step(moves, &mut env_rng));
            let s = game.state();
            assert_ne!(s.coin_pos, s.red_pos);
            assert_ne!(s.coin_pos, s.blue_pos);
        }
        for agent in Color::BOTH {
            let p = own_coin_probability(&events, agent).unwrap();
            assert!((p - 0.5).abs() < 0.05, "{agent:?}: {p}");
        }
    }
}
