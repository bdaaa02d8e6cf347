use serde::{Deserialize, Serialize};

use super::connect_four::{Cell, COLS, ROWS};
use super::snake::GRID;
use super::{ActionId, EnvKind, LegalMask};

/// Closing instructions shared by every state prompt.
const INSTRUCTION: &str = "Please clarify the current state of the game and determine what\n\
the agent should do in this current state. \n\
Finally, please suggest the correct action and\n\
output its index in the <action></action> tags. \n\
Do not provide reasoning.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlackjackObs {
    pub player_sum: u8,
    /// 1 for an ace, 10 for any ten-valued card.
    pub dealer_card: u8,
    pub usable_ace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConnectFourObs {
    /// Row 0 is the top row.
    pub board: [[Cell; COLS]; ROWS],
    pub to_move: Cell,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnakeObs {
    /// 0 empty, 1 food, -1 snake (head included).
    pub grid: [[i8; GRID]; GRID],
    pub head: (usize, usize),
    pub food: (usize, usize),
}

/// Environment state snapshot, one variant per game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Blackjack(BlackjackObs),
    ConnectFour(ConnectFourObs),
    Snake(SnakeObs),
}

impl Observation {
    pub fn kind(&self) -> EnvKind {
        match self {
            Observation::Blackjack(_) => EnvKind::Blackjack,
            Observation::ConnectFour(_) => EnvKind::ConnectFour,
            Observation::Snake(_) => EnvKind::Snake,
        }
    }

    /// Flattened real-valued encoding used as network input.
    pub fn features(&self) -> Vec<f64> {
        match self {
            Observation::Blackjack(o) => vec![f64::from(o.player_sum) / 32.0, f64::from(o.dealer_card) / 10.0, if o.usable_ace { 1.0 } else { 0.0 }],
            Observation::ConnectFour(o) => {
                let mut out = vec![0.0; 2 * ROWS * COLS];
                for (r, row) in o.board.iter().enumerate() {
                    for (c, cell) in row.iter().enumerate() {
                        let idx = r * COLS + c;
                        match cell {
                            Cell::Agent => out[idx] = 1.0,
                            Cell::Opponent => out[ROWS * COLS + idx] = 1.0,
                            Cell::Empty => {}
                        }
                    }
                }
                out
            }
            Observation::Snake(o) => {
                let mut out = Vec::with_capacity(GRID * GRID + 4);
                out.extend(o.grid.iter().flatten().map(|&v| f64::from(v)));
                let scale = (GRID - 1) as f64;
                out.push(o.head.0 as f64 / scale);
                out.push(o.head.1 as f64 / scale);
                out.push(o.food.0 as f64 / scale);
                out.push(o.food.1 as f64 / scale);
                out
            }
        }
    }

    /// Injective, process-stable byte encoding used as the advice cache key.
    pub fn canonical_key(&self) -> Vec<u8> {
        match self {
            Observation::Blackjack(o) => vec![0, o.player_sum, o.dealer_card, u8::from(o.usable_ace)],
            Observation::ConnectFour(o) => {
                let mut key = Vec::with_capacity(2 + ROWS * COLS);
                key.push(1);
                key.extend(o.board.iter().flatten().map(|c| c.code()));
                key.push(o.to_move.code());
                key
            }
            Observation::Snake(o) => {
                let mut key = Vec::with_capacity(5 + GRID * GRID);
                key.push(2);
                key.extend([o.head.0 as u8, o.head.1 as u8, o.food.0 as u8, o.food.1 as u8]);
                key.extend(o.grid.iter().flatten().map(|&v| v as u8));
                key
            }
        }
    }

    /// Legal actions implied by the observation alone.
    pub fn legal_actions(&self) -> LegalMask {
        match self {
            Observation::ConnectFour(o) => (0..COLS).filter(|&c| o.board[0][c] == Cell::Empty).fold(LegalMask::empty(), |m, c| m.with(ActionId(c))),
            other => LegalMask::all(other.kind().action_count()),
        }
    }

    /// Natural-language rendering of the state for the tutor.
    pub fn to_prompt(&self) -> String {
        match self {
            Observation::Blackjack(o) => blackjack_prompt(o),
            Observation::ConnectFour(o) => connect_four_prompt(o),
            Observation::Snake(o) => snake_prompt(o),
        }
    }

    /// Checks the structural invariants of the variant.
    pub fn is_legal(&self) -> bool {
        match self {
            Observation::Blackjack(o) => {
                (4..=31).contains(&o.player_sum) && (1..=10).contains(&o.dealer_card) && (!o.usable_ace || (12..=21).contains(&o.player_sum))
            }
            Observation::ConnectFour(o) => {
                let (mut agent, mut opp) = (0i32, 0i32);
                for c in 0..COLS {
                    let mut seen_token = false;
                    for r in 0..ROWS {
                        match o.board[r][c] {
                            Cell::Empty if seen_token => return false,
                            Cell::Empty => {}
                            Cell::Agent => {
                                seen_token = true;
                                agent += 1;
                            }
                            Cell::Opponent => {
                                seen_token = true;
                                opp += 1;
                            }
                        }
                    }
                }
                (agent - opp).abs() <= 1 && o.to_move != Cell::Empty
            }
            Observation::Snake(o) => {
                let mut food = 0;
                for row in &o.grid {
                    for &v in row {
                        if !(-1..=1).contains(&v) {
                            return false;
                        }
                        if v == 1 {
                            food += 1;
                        }
                    }
                }
                food == 1 && o.grid[o.food.0][o.food.1] == 1 && o.grid[o.head.0][o.head.1] == -1
            }
        }
    }
}

fn blackjack_prompt(o: &BlackjackObs) -> String {
    let dealer = if o.dealer_card == 1 { "an ace (value 1 or 11)".to_string() } else { format!("a card with value {}", o.dealer_card) };
    let ace =
        if o.usable_ace { "The player holds a usable ace, counted as 11 in the total above." } else { "The player does not hold a usable ace." };
    format!(
        "This is the current state of the Blackjack game:\n\
         The player's hand has a total value of {}.\n\
         The dealer is showing {dealer}.\n\
         {ace}\n\
         {INSTRUCTION}",
        o.player_sum
    )
}

fn connect_four_prompt(o: &ConnectFourObs) -> String {
    let mut out = String::from("This is the current board of the Connect Four game:\n");
    out.push_str("  ");
    out.push_str(&(0..COLS).map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
    out.push('\n');
    for (r, row) in o.board.iter().enumerate() {
        out.push_str(&r.to_string());
        for cell in row {
            out.push(' ');
            out.push(cell.symbol());
        }
        out.push('\n');
    }
    let open: Vec<String> = Observation::ConnectFour(*o).legal_actions().iter().map(|a| a.to_string()).collect();
    let mover = if o.to_move == Cell::Agent { "agent (X)" } else { "opponent (O)" };
    out.push_str(&format!(
        "Row 0 is the top of the board and tokens fall to the lowest empty row. \
         The agent plays X, the opponent plays O and . is an empty cell.\n\
         It is the {mover}'s turn. The columns that can still take a token are: {}.\n",
        open.join(", ")
    ));
    out.push_str(INSTRUCTION);
    out
}

/// Row-wise rendering in the style of a printed integer matrix: each row
/// pads its entries to the widest entry of that row.
fn render_grid(grid: &[[i8; GRID]; GRID]) -> String {
    let mut out = String::new();
    for (r, row) in grid.iter().enumerate() {
        let width = row.iter().map(|v| v.to_string().len()).max().unwrap_or(1);
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>width$}")).collect();
        if r == 0 {
            out.push('[');
        }
        out.push('[');
        out.push_str(&cells.join(" "));
        out.push(']');
        if r + 1 == GRID {
            out.push(']');
        }
        out.push('\n');
    }
    out
}

fn snake_prompt(o: &SnakeObs) -> String {
    format!(
        "This is the current 2D grid of the snake game:\n\
         {}\
         The snake's head is located at row {}, column {}, and the food\n\
         is located at row {}, column {}. The rest of the snake's body\n\
         is represented by -1.\n\
         {INSTRUCTION}",
        render_grid(&o.grid),
        o.head.0,
        o.head.1,
        o.food.0,
        o.food.1
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn listing_state() -> SnakeObs {
        let mut grid = [[0i8; GRID]; GRID];
        grid[1][4] = 1;
        grid[4][5] = -1;
        grid[5][3] = -1;
        grid[5][4] = -1;
        grid[5][5] = -1;
        SnakeObs { grid, head: (4, 5), food: (1, 4) }
    }

    #[test]
    fn snake_prompt_matches_reference_layout() {
        let expected = "This is the current 2D grid of the snake game:
[[0 0 0 0 0 0 0 0 0 0]
[0 0 0 0 1 0 0 0 0 0]
[0 0 0 0 0 0 0 0 0 0]
[0 0 0 0 0 0 0 0 0 0]
[ 0  0  0  0  0 -1  0  0  0  0]
[ 0  0  0 -1 -1 -1  0  0  0  0]
[0 0 0 0 0 0 0 0 0 0]
[0 0 0 0 0 0 0 0 0 0]
[0 0 0 0 0 0 0 0 0 0]
[0 0 0 0 0 0 0 0 0 0]]
The snake's head is located at row 4, column 5, and the food
is located at row 1, column 4. The rest of the snake's body
is represented by -1.
Please clarify the current state of the game and determine what
the agent should do in this current state. \nFinally, please suggest the correct action and
output its index in the <action></action> tags. \nDo not provide reasoning.";
        assert_eq!(Observation::Snake(listing_state()).to_prompt(), expected);
    }

    #[test]
    fn blackjack_prompt_names_fields() {
        let obs = Observation::Blackjack(BlackjackObs { player_sum: 14, dealer_card: 10, usable_ace: false });
        let p = obs.to_prompt();
        assert!(p.contains("total value of 14"));
        assert!(p.contains("card with value 10"));
        assert!(p.contains("does not hold a usable ace"));
        assert!(p.contains("<action></action>"));
    }

    #[test]
    fn empty_connect_four_prompt() {
        let obs = Observation::ConnectFour(ConnectFourObs { board: [[Cell::Empty; COLS]; ROWS], to_move: Cell::Agent });
        let p = obs.to_prompt();
        let rows: Vec<&str> = p.lines().filter(|l| l.ends_with(". . . . . . .")).collect();
        assert_eq!(rows.len(), 6);
        assert!(p.contains("0, 1, 2, 3, 4, 5, 6."));
        assert!(p.contains("Do not provide reasoning."));
    }

    #[test]
    fn blackjack_keys_are_injective_over_all_states() {
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        for player_sum in 4..=31u8 {
            for dealer_card in 1..=10u8 {
                for usable_ace in [false, true] {
                    let obs = Observation::Blackjack(BlackjackObs { player_sum, dealer_card, usable_ace });
                    assert!(seen.insert(obs.canonical_key()));
                    count += 1;
                }
            }
        }
        assert_eq!(seen.len(), count);
        let a = BlackjackObs { player_sum: 14, dealer_card: 10, usable_ace: false };
        let b = BlackjackObs { usable_ace: true, ..a };
        assert_ne!(Observation::Blackjack(a).canonical_key(), Observation::Blackjack(b).canonical_key());
    }

    #[test]
    fn keys_are_stable_bytes() {
        let obs = Observation::Blackjack(BlackjackObs { player_sum: 14, dealer_card: 10, usable_ace: true });
        assert_eq!(obs.canonical_key(), vec![0, 14, 10, 1]);
        let snake = Observation::Snake(listing_state());
        let key = snake.canonical_key();
        assert_eq!(&key[..5], &[2, 4, 5, 1, 4]);
        assert_eq!(key.len(), 105);
        assert_eq!(snake.canonical_key(), Observation::Snake(listing_state()).canonical_key());
    }

    #[test]
    fn feature_lengths() {
        assert_eq!(Observation::Snake(listing_state()).features().len(), EnvKind::Snake.feature_len());
        let c4 = Observation::ConnectFour(ConnectFourObs { board: [[Cell::Empty; COLS]; ROWS], to_move: Cell::Agent });
        assert_eq!(c4.features().len(), 84);
    }

    #[test]
    fn listing_state_is_legal() {
        assert!(Observation::Snake(listing_state()).is_legal());
    }
}
