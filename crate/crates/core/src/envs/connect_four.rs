use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observation::ConnectFourObs;
use super::{ActionId, EnvError, EnvKind, Environment, LegalMask, Observation, StepResult};

pub const ROWS: usize = 6;
pub const COLS: usize = 7;

pub type Board = [[Cell; COLS]; ROWS];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    #[default]
    Empty,
    Agent,
    Opponent,
}

impl Cell {
    pub fn code(self) -> u8 {
        match self {
            Cell::Empty => 0,
            Cell::Agent => 1,
            Cell::Opponent => 2,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Cell::Empty => '.',
            Cell::Agent => 'X',
            Cell::Opponent => 'O',
        }
    }

    pub fn other(self) -> Cell {
        match self {
            Cell::Agent => Cell::Opponent,
            Cell::Opponent => Cell::Agent,
            Cell::Empty => Cell::Empty,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentPolicy {
    /// Uniform over non-full columns.
    #[default]
    Random,
    /// Win if possible, else block an immediate agent win, else random.
    Heuristic,
}

pub fn legal_columns(board: &Board) -> LegalMask {
    (0..COLS).filter(|&c| board[0][c] == Cell::Empty).fold(LegalMask::empty(), |m, c| m.with(ActionId(c)))
}

/// Row the token lands in, or `None` for a full column.
pub fn landing_row(board: &Board, col: usize) -> Option<usize> {
    (0..ROWS).rev().find(|&r| board[r][col] == Cell::Empty)
}

pub fn drop_token(board: &mut Board, col: usize, who: Cell) -> Option<usize> {
    let row = landing_row(board, col)?;
    board[row][col] = who;
    Some(row)
}

/// Whether the token at `(row, col)` completes a line of four.
pub fn completes_line(board: &Board, row: usize, col: usize) -> bool {
    let who = board[row][col];
    if who == Cell::Empty {
        return false;
    }
    const DIRS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
    DIRS.iter().any(|&(dr, dc)| {
        let count_dir = |sign: isize| {
            let mut n = 0;
            let (mut r, mut c) = (row as isize + sign * dr, col as isize + sign * dc);
            while (0..ROWS as isize).contains(&r) && (0..COLS as isize).contains(&c) && board[r as usize][c as usize] == who {
                n += 1;
                r += sign * dr;
                c += sign * dc;
            }
            n
        };
        1 + count_dir(1) + count_dir(-1) >= 4
    })
}

fn winning_column(board: &Board, who: Cell) -> Option<usize> {
    legal_columns(board).iter().map(|a| a.0).find(|&col| {
        let mut probe = *board;
        let row = drop_token(&mut probe, col, who).expect("legal column");
        completes_line(&probe, row, col)
    })
}

/// Chooses the opponent's column. Requires at least one open column.
pub fn opponent_move<R: Rng>(board: &Board, policy: OpponentPolicy, rng: &mut R) -> ActionId {
    let open: Vec<ActionId> = legal_columns(board).iter().collect();
    assert!(!open.is_empty(), "opponent asked to move on a full board");
    if policy == OpponentPolicy::Heuristic {
        if let Some(col) = winning_column(board, Cell::Opponent) {
            return ActionId(col);
        }
        if let Some(col) = winning_column(board, Cell::Agent) {
            return ActionId(col);
        }
    }
    *open.choose(rng).expect("non-empty")
}

/// Connect Four against a scripted opponent. The agent always moves first;
/// the opponent replies inside the same step.
pub struct ConnectFour {
    opponent: OpponentPolicy,
    rng: ChaCha8Rng,
    board: Board,
    started: bool,
    finished: bool,
}

impl ConnectFour {
    pub fn new(opponent: OpponentPolicy) -> Self {
        Self { opponent, rng: ChaCha8Rng::seed_from_u64(0), board: [[Cell::Empty; COLS]; ROWS], started: false, finished: false }
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    /// Starts from an arbitrary (legal) board with the agent to move.
    pub fn with_board(opponent: OpponentPolicy, board: Board, seed: u64) -> Self {
        let mut env = Self::new(opponent);
        env.board = board;
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        env.started = true;
        env
    }

    pub fn observation(&self) -> Observation {
        Observation::ConnectFour(ConnectFourObs { board: self.board, to_move: Cell::Agent })
    }

    fn board_full(&self) -> bool {
        legal_columns(&self.board).is_empty()
    }
}

impl Environment for ConnectFour {
    fn kind(&self) -> EnvKind {
        EnvKind::ConnectFour
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.board = [[Cell::Empty; COLS]; ROWS];
        self.started = true;
        self.finished = false;
        self.observation()
    }

    fn step(&mut self, action: ActionId) -> Result<StepResult, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.finished {
            return Err(EnvError::EpisodeFinished);
        }
        if action.0 >= COLS {
            return Err(EnvError::ActionOutOfRange { action, count: COLS });
        }
        let row = drop_token(&mut self.board, action.0, Cell::Agent).ok_or(EnvError::IllegalAction { action })?;
        let (reward, terminated) = if completes_line(&self.board, row, action.0) {
            (1.0, true)
        } else if self.board_full() {
            (0.0, true)
        } else {
            let reply = opponent_move(&self.board, self.opponent, &mut self.rng);
            let row = drop_token(&mut self.board, reply.0, Cell::Opponent).expect("opponent picks open column");
            if completes_line(&self.board, row, reply.0) {
                (-1.0, true)
            } else if self.board_full() {
                (0.0, true)
            } else {
                (0.0, false)
            }
        };
        self.finished = terminated;
        Ok(StepResult { observation: self.observation(), reward, terminated, truncated: false })
    }

    fn legal_actions(&self) -> LegalMask {
        legal_columns(&self.board)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scan of every length-4 window on the board.
    fn brute_force_winner(board: &Board) -> Option<Cell> {
        let mut found = None;
        for r in 0..ROWS as isize {
            for c in 0..COLS as isize {
                for (dr, dc) in [(0, 1), (1, 0), (1, 1), (1, -1)] {
                    let cells: Vec<Cell> = (0..4)
                        .filter_map(|k| {
                            let (rr, cc) = (r + k * dr, c + k * dc);
                            ((0..ROWS as isize).contains(&rr) && (0..COLS as isize).contains(&cc)).then(|| board[rr as usize][cc as usize])
                        })
                        .collect();
                    if cells.len() == 4 && cells[0] != Cell::Empty && cells.iter().all(|&x| x == cells[0]) {
                        found = Some(cells[0]);
                    }
                }
            }
        }
        found
    }

    fn supported(board: &Board) -> bool {
        (0..COLS).all(|c| {
            let mut seen = false;
            (0..ROWS).all(|r| {
                if board[r][c] != Cell::Empty {
                    seen = true;
                    true
                } else {
                    !seen
                }
            })
        })
    }

    #[test]
    fn reset_gives_empty_board() {
        let mut env = ConnectFour::new(OpponentPolicy::Random);
        for seed in 0..5 {
            let obs = env.reset(seed);
            match obs {
                Observation::ConnectFour(o) => {
                    assert!(o.board.iter().flatten().all(|&c| c == Cell::Empty));
                    assert_eq!(o.to_move, Cell::Agent);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn full_column_is_illegal() {
        let mut env = ConnectFour::new(OpponentPolicy::Random);
        env.reset(0);
        let mut board = [[Cell::Empty; COLS]; ROWS];
        for r in 0..ROWS {
            board[r][2] = if r % 2 == 0 { Cell::Agent } else { Cell::Opponent };
        }
        let mut env = ConnectFour::with_board(OpponentPolicy::Random, board, 3);
        assert_eq!(env.step(ActionId(2)), Err(EnvError::IllegalAction { action: ActionId(2) }));
        assert!(!env.legal_actions().contains(ActionId(2)));
        assert!(env.step(ActionId(3)).is_ok());
    }

    #[test]
    fn forced_opponent_move() {
        let mut board = [[Cell::Empty; COLS]; ROWS];
        let mut who = Cell::Agent;
        for c in 0..COLS {
            if c == 3 {
                continue;
            }
            for r in 0..ROWS {
                board[r][c] = who;
                who = who.other();
            }
            who = who.other();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for policy in [OpponentPolicy::Random, OpponentPolicy::Heuristic] {
            assert_eq!(opponent_move(&board, policy, &mut rng), ActionId(3));
        }
    }

    #[test]
    fn opponent_is_reproducible() {
        let board = [[Cell::Empty; COLS]; ROWS];
        let a = opponent_move(&board, OpponentPolicy::Random, &mut ChaCha8Rng::seed_from_u64(5));
        let b = opponent_move(&board, OpponentPolicy::Random, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn heuristic_takes_immediate_win() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for trial in 0..200 {
            // random legal position, then check against a one-ply scan
            let mut board = [[Cell::Empty; COLS]; ROWS];
            let mut who = Cell::Agent;
            for _ in 0..(trial % 20) {
                let open: Vec<_> = legal_columns(&board).iter().collect();
                let col = open.choose(&mut rng).unwrap().0;
                let row = drop_token(&mut board, col, who).unwrap();
                if completes_line(&board, row, col) {
                    board[row][col] = Cell::Empty;
                    break;
                }
                who = who.other();
            }
            let oracle: Vec<usize> = (0..COLS)
                .filter(|&c| {
                    let mut b = board;
                    drop_token(&mut b, c, Cell::Opponent).is_some() && brute_force_winner(&b) == Some(Cell::Opponent)
                })
                .collect();
            if legal_columns(&board).is_empty() {
                continue;
            }
            let chosen = opponent_move(&board, OpponentPolicy::Heuristic, &mut rng).0;
            if !oracle.is_empty() {
                assert!(oracle.contains(&chosen), "trial {trial}");
            }
        }
    }

    #[test]
    fn reported_wins_are_real_and_boards_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..300 {
            let mut env = ConnectFour::new(if seed % 2 == 0 { OpponentPolicy::Random } else { OpponentPolicy::Heuristic });
            env.reset(seed);
            loop {
                let open: Vec<_> = env.legal_actions().iter().collect();
                let a = *open.choose(&mut rng).unwrap();
                let r = env.step(a).unwrap();
                assert!(supported(env.board()));
                assert!(r.observation.is_legal());
                if r.terminated {
                    match r.reward {
                        x if x > 0.0 => assert_eq!(brute_force_winner(env.board()), Some(Cell::Agent)),
                        x if x < 0.0 => assert_eq!(brute_force_winner(env.board()), Some(Cell::Opponent)),
                        _ => {
                            assert_eq!(brute_force_winner(env.board()), None);
                            assert!(legal_columns(env.board()).is_empty());
                        }
                    }
                    assert_eq!(env.step(a), Err(EnvError::EpisodeFinished));
                    break;
                } else {
                    assert_eq!(brute_force_winner(env.board()), None);
                }
            }
        }
    }
}
