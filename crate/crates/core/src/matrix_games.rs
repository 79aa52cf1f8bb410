//! Iterated 2x2 matrix games: prisoner's dilemma, matching pennies and stag hunt.
//!
//! The state seen by an agent is the joint action of the previous iteration, with a fifth
//! `Initial` slot for the first move. Agents are never told how many iterations remain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint steps in one episode.
pub const EPISODE_LENGTH: usize = 200;

/// Width of the one-hot state encoding.
pub const STATE_SLOTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    PrisonersDilemma,
    MatchingPennies,
    StagHunt,
}

impl GameKind {
    pub const ALL: [GameKind; 3] = [
        GameKind::PrisonersDilemma,
        GameKind::MatchingPennies,
        GameKind::StagHunt,
    ];

    /// Discount used for this game unless configured otherwise.
    pub fn default_gamma(self) -> f64 {
        match self {
            GameKind::MatchingPennies => 0.9,
            _ => 0.96,
        }
    }
}

/// The two moves of a matrix game. In matching pennies `C` reads as heads and `D` as tails.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    C,
    D,
}

impl Action {
    pub fn from_index(i: usize) -> Result<Action> {
        match i {
            0 => Ok(Action::C),
            1 => Ok(Action::D),
            _ => Err(Error::rejected(format!("action index {i} is not 0 or 1"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::C => 0,
            Action::D => 1,
        }
    }

    /// Parses the table label of a move: `C`/`D` for PD and SH, `H`/`T` for MP.
    pub fn parse(kind: GameKind, label: &str) -> Result<Action> {
        match (kind, label) {
            (GameKind::MatchingPennies, "H") => Ok(Action::C),
            (GameKind::MatchingPennies, "T") => Ok(Action::D),
            (GameKind::PrisonersDilemma | GameKind::StagHunt, "C") => Ok(Action::C),
            (GameKind::PrisonersDilemma | GameKind::StagHunt, "D") => Ok(Action::D),
            _ => Err(Error::rejected(format!(
                "`{label}` is not a move in {kind:?}"
            ))),
        }
    }

    pub fn label(self, kind: GameKind) -> &'static str {
        match (kind, self) {
            (GameKind::MatchingPennies, Action::C) => "H",
            (GameKind::MatchingPennies, Action::D) => "T",
            (_, Action::C) => "C",
            (_, Action::D) => "D",
        }
    }
}

/// `(row reward, column reward)` for one iteration.
pub fn payoff(kind: GameKind, joint: (Action, Action)) -> (f64, f64) {
    use Action::{C, D};
    match kind {
        GameKind::PrisonersDilemma => match joint {
            (C, C) => (-1.0, -1.0),
            (C, D) => (-3.0, 0.0),
            (D, C) => (0.0, -3.0),
            (D, D) => (-2.0, -2.0),
        },
        GameKind::MatchingPennies => match joint {
            (C, C) | (D, D) => (1.0, -1.0),
            (C, D) | (D, C) => (-1.0, 1.0),
        },
        GameKind::StagHunt => match joint {
            (C, C) => (0.0, 0.0),
            (C, D) => (-4.0, -1.0),
            (D, C) => (-1.0, -4.0),
            (D, D) => (-3.0, -3.0),
        },
    }
}

/// [`payoff`] addressed by move labels.
pub fn payoff_by_label(kind: GameKind, row: &str, column: &str) -> Result<(f64, f64)> {
    Ok(payoff(
        kind,
        (Action::parse(kind, row)?, Action::parse(kind, column)?),
    ))
}

/// The previous joint action, or `Initial` before the first move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixState {
    Initial,
    Played(Action, Action),
}

impl MatrixState {
    /// Slot in the encoding `{initial, CC, CD, DC, DD}`.
    pub fn index(self) -> usize {
        match self {
            MatrixState::Initial => 0,
            MatrixState::Played(a, b) => 1 + 2 * a.index() + b.index(),
        }
    }

    pub fn one_hot(self) -> [f64; STATE_SLOTS] {
        let mut v = [0.0; STATE_SLOTS];
        v[self.index()] = 1.0;
        v
    }

    /// The same state seen from the column player's seat (own move first).
    pub fn swapped(self) -> MatrixState {
        match self {
            MatrixState::Initial => MatrixState::Initial,
            MatrixState::Played(a, b) => MatrixState::Played(b, a),
        }
    }

    /// The state from `agent`'s seat (0 = row player, 1 = column player).
    pub fn for_agent(self, agent: usize) -> MatrixState {
        if agent == 0 {
            self
        } else {
            self.swapped()
        }
    }
}

/// One played episode. `states[t]` is the state in which `joint_actions[t]` was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: GameKind,
    pub states: Vec<MatrixState>,
    pub joint_actions: Vec<(Action, Action)>,
    pub rewards: [Vec<f64>; 2],
}

impl Trajectory {
    pub fn new(kind: GameKind) -> Self {
        Trajectory {
            kind,
            states: Vec::new(),
            joint_actions: Vec::new(),
            rewards: [Vec::new(), Vec::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.joint_actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_actions.is_empty()
    }

    /// True when lengths align and every reward is the payoff of its joint action.
    pub fn is_consistent(&self) -> bool {
        let n = self.joint_actions.len();
        self.states.len() == n
            && self.rewards.iter().all(|r| r.len() == n)
            && self.joint_actions.iter().enumerate().all(|(t, &joint)| {
                let (r0, r1) = payoff(self.kind, joint);
                self.rewards[0][t] == r0 && self.rewards[1][t] == r1
            })
    }
}

/// A single iterated-game episode in progress.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    kind: GameKind,
    horizon: usize,
    step_index: usize,
    state: MatrixState,
}

impl MatrixGame {
    pub fn new(kind: GameKind) -> Self {
        MatrixGame::with_horizon(kind, EPISODE_LENGTH)
    }

    pub fn with_horizon(kind: GameKind, horizon: usize) -> Self {
        MatrixGame {
            kind,
            horizon,
            step_index: 0,
            state: MatrixState::Initial,
        }
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self) -> MatrixState {
        self.state
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_finished(&self) -> bool {
        self.step_index >= self.horizon
    }

    pub fn reset(&mut self) -> MatrixState {
        self.step_index = 0;
        self.state = MatrixState::Initial;
        self.state
    }

    pub fn step(&mut self, joint: (Action, Action)) -> Result<(MatrixState, (f64, f64))> {
        if self.is_finished() {
            return Err(Error::EpisodeComplete);
        }
        let rewards = payoff(self.kind, joint);
        self.state = MatrixState::Played(joint.0, joint.1);
        self.step_index += 1;
        Ok((self.state, rewards))
    }
}

/// Normalised discounted reward `(1 - gamma) * sum_t gamma^t r_t`.
pub fn ndr(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    if rewards.is_empty() {
        return Err(Error::rejected("ndr of an empty reward list"));
    }
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok((1.0 - gamma) * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use Action::{C, D};

    #[test]
    fn table_cells() {
        assert_eq!(payoff(GameKind::PrisonersDilemma, (C, C)), (-1.0, -1.0));
        assert_eq!(payoff(GameKind::PrisonersDilemma, (D, C)), (0.0, -3.0));
        assert_eq!(
            payoff_by_label(GameKind::MatchingPennies, "H", "T").unwrap(),
            (-1.0, 1.0)
        );
        assert_eq!(payoff(GameKind::StagHunt, (D, D)), (-3.0, -3.0));
    }

    #[test]
    fn unknown_labels_are_rejected() {
        assert!(payoff_by_label(GameKind::MatchingPennies, "C", "H").is_err());
        assert!(payoff_by_label(GameKind::PrisonersDilemma, "H", "C").is_err());
        assert!(payoff_by_label(GameKind::StagHunt, "x", "D").is_err());
    }

    #[test]
    fn symmetry_and_zero_sum() {
        for a in [C, D] {
            for b in [C, D] {
                for kind in [GameKind::PrisonersDilemma, GameKind::StagHunt] {
                    let (r0, r1) = payoff(kind, (a, b));
                    assert_eq!(payoff(kind, (b, a)), (r1, r0));
                }
                let (r0, r1) = payoff(GameKind::MatchingPennies, (a, b));
                assert_eq!(r0 + r1, 0.0);
            }
        }
    }

    #[test]
    fn step_from_initial_state() {
        let mut g = MatrixGame::new(GameKind::PrisonersDilemma);
        assert_eq!(g.state().one_hot(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        let (s, r) = g.step((C, D)).unwrap();
        assert_eq!(s, MatrixState::Played(C, D));
        assert_eq!(s.one_hot(), [0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(r, (-3.0, 0.0));
        assert_eq!(g.step_index(), 1);
    }

    #[test]
    fn mutual_cooperation_is_a_fixed_point() {
        for kind in GameKind::ALL {
            let mut g = MatrixGame::new(kind);
            for _ in 0..10 {
                let (s, _) = g.step((C, C)).unwrap();
                assert_eq!(s.index(), 1);
            }
        }
        let mut g = MatrixGame::new(GameKind::StagHunt);
        assert_eq!(g.step((D, D)).unwrap().1, (-3.0, -3.0));
    }

    #[test]
    fn stepping_a_finished_episode_fails() {
        let mut g = MatrixGame::new(GameKind::StagHunt);
        for _ in 0..EPISODE_LENGTH {
            g.step((C, D)).unwrap();
        }
        assert!(g.is_finished());
        assert!(matches!(g.step((C, C)), Err(Error::EpisodeComplete)));
        g.reset();
        assert!(g.step((C, C)).is_ok());
    }

    #[test]
    fn swapped_state_puts_own_move_first() {
        let s = MatrixState::Played(C, D);
        assert_eq!(s.for_agent(1), MatrixState::Played(D, C));
        assert_eq!(MatrixState::Initial.for_agent(1), MatrixState::Initial);
    }

    #[test]
    fn ndr_examples() {
        assert_eq!(ndr(&[0.0; 200], 0.96).unwrap(), 0.0);
        // closed form of the geometric sum
        let expect = -2.0 * (1.0 - 0.96f64.powi(200));
        assert_relative_eq!(ndr(&[-2.0; 200], 0.96).unwrap(), expect, epsilon = 1e-12);
        let summed: f64 = (0..200).map(|t| -2.0 * 0.96f64.powi(t)).sum::<f64>() * 0.04;
        assert_relative_eq!(ndr(&[-2.0; 200], 0.96).unwrap(), summed, epsilon = 1e-12);
        assert_relative_eq!(ndr(&[-2.0; 200], 0.96).unwrap(), -1.999431, epsilon = 1e-6);
        assert_relative_eq!(ndr(&[-1.0; 200], 0.96).unwrap(), -0.999715, epsilon = 1e-6);
    }

    #[test]
    fn ndr_rejects_bad_gamma() {
        assert!(matches!(ndr(&[1.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(ndr(&[1.0], -0.1), Err(Error::Domain(_))));
        assert!(ndr(&[], 0.5).is_err());
    }

    fn actions() -> impl Strategy<Value = Vec<(Action, Action)>> {
        proptest::collection::vec(
            (prop_oneof![Just(C), Just(D)], prop_oneof![Just(C), Just(D)]),
            1..300,
        )
    }

    proptest! {
        #[test]
        fn matching_pennies_ndr_sums_to_zero(joint in actions(), gamma in 0.0f64..0.999) {
            let mut g = MatrixGame::with_horizon(GameKind::MatchingPennies, joint.len());
            let mut r0 = Vec::new();
            let mut r1 = Vec::new();
            for &j in &joint {
                let (_, (a, b)) = g.step(j).unwrap();
                r0.push(a);
                r1.push(b);
            }
            prop_assert_eq!(ndr(&r0, gamma).unwrap() + ndr(&r1, gamma).unwrap(), 0.0);
        }

        #[test]
        fn ndr_is_bounded_by_table_extremes(joint in actions(), gamma in 0.0f64..0.999) {
            for kind in GameKind::ALL {
                let cells: Vec<f64> = [C, D].iter()
                    .flat_map(|&a| [C, D].map(|b| payoff(kind, (a, b)).0))
                    .collect();
                let lo = cells.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let rewards: Vec<f64> = joint.iter().map(|&j| payoff(kind, j).0).collect();
                let v = ndr(&rewards, gamma).unwrap();
                let mass = 1.0 - gamma.powi(rewards.len() as i32);
                prop_assert!(v >= mass * lo - 1e-9 && v <= mass * hi + 1e-9);
            }
        }
    }
}
