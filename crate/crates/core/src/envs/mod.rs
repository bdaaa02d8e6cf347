//! Game environments behind one stepping interface.
//!
//! Every environment reseeds its own RNG on [`Environment::reset`], so an
//! identical `(seed, action sequence)` reproduces the same trajectory.

mod blackjack;
mod connect_four;
mod observation;
mod snake;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use blackjack::{Blackjack, BlackjackRules};
pub use connect_four::{completes_line, drop_token, landing_row, legal_columns, opponent_move, Board, Cell, ConnectFour, OpponentPolicy, COLS, ROWS};
pub use observation::{BlackjackObs, ConnectFourObs, Observation, SnakeObs};
pub use snake::{neighbor as snake_neighbor, Snake, SnakeRules, GRID};

/// Position in an environment's action dictionary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Bit set of currently legal actions (at most 32 actions).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LegalMask(u32);

impl LegalMask {
    pub fn all(count: usize) -> Self {
        assert!(count <= 32);
        if count == 32 {
            Self(u32::MAX)
        } else {
            Self((1u32 << count) - 1)
        }
    }

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn with(mut self, action: ActionId) -> Self {
        self.0 |= 1 << action.0;
        self
    }

    pub fn contains(&self, action: ActionId) -> bool {
        action.0 < 32 && self.0 & (1 << action.0) != 0
    }

    pub fn count(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionId> + '_ {
        let bits = self.0;
        (0..32).filter(move |i| bits & (1 << i) != 0).map(ActionId)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("action {action} is not applicable in the current state")]
    IllegalAction { action: ActionId },
    #[error("action {action} out of range (action count {count})")]
    ActionOutOfRange { action: ActionId, count: usize },
    #[error("episode finished; call reset before stepping")]
    EpisodeFinished,
    #[error("environment has not been reset")]
    NotReset,
}

/// Single-agent stepping interface shared by all games.
pub trait Environment: Send {
    fn kind(&self) -> EnvKind;

    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError>;

    fn action_count(&self) -> usize {
        self.kind().action_count()
    }

    /// Legal actions in the current state.
    fn legal_actions(&self) -> LegalMask;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Blackjack,
    ConnectFour,
    Snake,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Blackjack, EnvKind::ConnectFour, EnvKind::Snake];

    pub fn action_count(self) -> usize {
        match self {
            EnvKind::Blackjack => 2,
            EnvKind::ConnectFour => COLS,
            EnvKind::Snake => 4,
        }
    }

    /// Length of the flattened feature vector fed to the networks.
    pub fn feature_len(self) -> usize {
        match self {
            EnvKind::Blackjack => 3,
            EnvKind::ConnectFour => 2 * ROWS * COLS,
            EnvKind::Snake => GRID * GRID + 4,
        }
    }

    pub fn action_names(self) -> Vec<String> {
        match self {
            EnvKind::Blackjack => vec!["stick".into(), "hit".into()],
            EnvKind::ConnectFour => (0..COLS).map(|c| format!("drop a token in column {c}")).collect(),
            EnvKind::Snake => vec!["up".into(), "down".into(), "left".into(), "right".into()],
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            EnvKind::Blackjack => "Blackjack",
            EnvKind::ConnectFour => "Connect Four",
            EnvKind::Snake => "Snake",
        }
    }

    pub fn observation_description(self) -> &'static str {
        match self {
            EnvKind::Blackjack => {
                "player's current hand value, the value of the dealer's visible card \
                 (1 stands for an ace) and whether the player holds a usable ace"
            }
            EnvKind::ConnectFour => {
                "6x7 board of the game where X marks the agent's tokens, O marks the \
                 opponent's tokens and . marks an empty cell; row 0 is the top row"
            }
            EnvKind::Snake => {
                "10x10 grid of the snake game where 0 is an empty cell, 1 is the food \
                 and -1 is a cell occupied by the snake, together with the positions \
                 of the snake's head and the food"
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Blackjack => "blackjack",
            EnvKind::ConnectFour => "connect_four",
            EnvKind::Snake => "snake",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "blackjack" => Ok(EnvKind::Blackjack),
            "connect_four" => Ok(EnvKind::ConnectFour),
            "snake" => Ok(EnvKind::Snake),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

/// Per-environment rule knobs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOptions {
    pub opponent: OpponentPolicy,
    pub snake: SnakeRules,
    pub blackjack: BlackjackRules,
}

pub fn make_env(kind: EnvKind, options: &EnvOptions) -> Box<dyn Environment> {
    match kind {
        EnvKind::Blackjack => Box::new(Blackjack::new(options.blackjack.clone())),
        EnvKind::ConnectFour => Box::new(ConnectFour::new(options.opponent)),
        EnvKind::Snake => Box::new(Snake::new(options.snake.clone())),
    }
}
