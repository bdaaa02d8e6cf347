//! Rule-based tutors for each game.

use std::collections::VecDeque;

use rand::seq::IteratorRandom;
use rand::Rng;

use crate::envs::{
    completes_line, drop_token, legal_columns, snake_neighbor, ActionId, BlackjackObs, Board, Cell, ConnectFourObs, LegalMask, Observation, SnakeObs,
    GRID,
};

const CENTER_FIRST: [usize; 7] = [3, 2, 4, 1, 5, 0, 6];

pub fn optimal(obs: &Observation) -> ActionId {
    match obs {
        Observation::Blackjack(o) => blackjack_basic_strategy(o),
        Observation::ConnectFour(o) => connect_four_tactical(o),
        Observation::Snake(o) => snake_safe_greedy(o),
    }
}

pub fn heuristic(obs: &Observation) -> ActionId {
    match obs {
        Observation::Blackjack(o) => ActionId(usize::from(o.player_sum < 17)),
        Observation::ConnectFour(o) => {
            let legal = legal_columns(&o.board);
            CENTER_FIRST.iter().map(|&c| ActionId(c)).find(|&a| legal.contains(a)).unwrap_or(ActionId(0))
        }
        Observation::Snake(o) => {
            let dist = |p: (usize, usize)| p.0.abs_diff(o.food.0) + p.1.abs_diff(o.food.1);
            (0..4)
                .filter_map(|a| snake_neighbor(o.head, ActionId(a)).map(|n| (ActionId(a), dist(n))))
                .min_by_key(|&(a, d)| (d, a.0))
                .map(|(a, _)| a)
                .unwrap_or(ActionId(0))
        }
    }
}

pub fn adversarial(obs: &Observation) -> ActionId {
    match obs {
        Observation::Blackjack(o) => ActionId(1 - blackjack_basic_strategy(o).0),
        Observation::ConnectFour(o) => {
            let legal = legal_columns(&o.board);
            let non_winning: Vec<usize> =
                CENTER_FIRST.iter().rev().copied().filter(|&c| legal.contains(ActionId(c)) && !wins_now(&o.board, c, Cell::Agent)).collect();
            let fallback = legal.iter().next().map(|a| a.0).unwrap_or(0);
            ActionId(non_winning.first().copied().unwrap_or(fallback))
        }
        Observation::Snake(o) => {
            let fatal = (0..4).map(ActionId).find(|&a| match snake_neighbor(o.head, a) {
                None => true,
                Some(n) => o.grid[n.0][n.1] == -1,
            });
            fatal.unwrap_or_else(|| {
                let dist = |p: (usize, usize)| p.0.abs_diff(o.food.0) + p.1.abs_diff(o.food.1);
                (0..4)
                    .filter_map(|a| snake_neighbor(o.head, ActionId(a)).map(|n| (ActionId(a), dist(n))))
                    .max_by_key(|&(a, d)| (d, std::cmp::Reverse(a.0)))
                    .map(|(a, _)| a)
                    .unwrap_or(ActionId(0))
            })
        }
    }
}

pub fn random_legal<R: Rng>(legal: LegalMask, rng: &mut R) -> ActionId {
    legal.iter().choose(rng).unwrap_or(ActionId(0))
}

/// Stick/hit basic strategy for an infinite deck with the dealer standing on 17.
pub fn blackjack_basic_strategy(o: &BlackjackObs) -> ActionId {
    const STICK: ActionId = ActionId(0);
    const HIT: ActionId = ActionId(1);
    let dealer = o.dealer_card;
    let stick = if o.usable_ace {
        match o.player_sum {
            19.. => true,
            18 => (2..=8).contains(&dealer),
            _ => false,
        }
    } else {
        match o.player_sum {
            17.. => true,
            13..=16 => (2..=6).contains(&dealer),
            12 => (4..=6).contains(&dealer),
            _ => false,
        }
    };
    if stick {
        STICK
    } else {
        HIT
    }
}

fn wins_now(board: &Board, col: usize, who: Cell) -> bool {
    let mut probe = *board;
    match drop_token(&mut probe, col, who) {
        Some(row) => completes_line(&probe, row, col),
        None => false,
    }
}

/// Win, else block, else avoid handing the opponent a win, center first.
fn connect_four_tactical(o: &ConnectFourObs) -> ActionId {
    let legal = legal_columns(&o.board);
    let open: Vec<usize> = CENTER_FIRST.iter().copied().filter(|&c| legal.contains(ActionId(c))).collect();
    if let Some(&c) = open.iter().find(|&&c| wins_now(&o.board, c, Cell::Agent)) {
        return ActionId(c);
    }
    if let Some(&c) = open.iter().find(|&&c| wins_now(&o.board, c, Cell::Opponent)) {
        return ActionId(c);
    }
    let safe = open.iter().copied().find(|&c| {
        let mut probe = o.board;
        drop_token(&mut probe, c, Cell::Agent);
        !wins_now(&probe, c, Cell::Opponent)
    });
    ActionId(safe.or_else(|| open.first().copied()).unwrap_or(0))
}

/// Free cells reachable from `start` without crossing the snake.
fn reachable_area(grid: &[[i8; GRID]; GRID], start: (usize, usize)) -> usize {
    let mut seen = [[false; GRID]; GRID];
    let mut queue = VecDeque::from([start]);
    seen[start.0][start.1] = true;
    let mut count = 0;
    while let Some(p) = queue.pop_front() {
        count += 1;
        for a in 0..4 {
            if let Some(n) = snake_neighbor(p, ActionId(a)) {
                if !seen[n.0][n.1] && grid[n.0][n.1] != -1 {
                    seen[n.0][n.1] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    count
}

/// Greedy Manhattan approach to the food that never steps into a wall or the
/// body, and prefers moves leaving enough room for the snake's length.
fn snake_safe_greedy(o: &SnakeObs) -> ActionId {
    let length = o.grid.iter().flatten().filter(|&&v| v == -1).count();
    let dist = |p: (usize, usize)| p.0.abs_diff(o.food.0) + p.1.abs_diff(o.food.1);
    let candidates: Vec<(ActionId, usize, usize)> = (0..4)
        .filter_map(|a| {
            let n = snake_neighbor(o.head, ActionId(a))?;
            (o.grid[n.0][n.1] != -1).then(|| (ActionId(a), dist(n), reachable_area(&o.grid, n)))
        })
        .collect();
    let roomy: Vec<&(ActionId, usize, usize)> = candidates.iter().filter(|c| c.2 >= length).collect();
    if !roomy.is_empty() {
        return roomy.iter().min_by_key(|c| (c.1, std::cmp::Reverse(c.2), c.0 .0)).map(|c| c.0).expect("non-empty");
    }
    candidates.iter().max_by_key(|c| (c.2, std::cmp::Reverse(c.1), std::cmp::Reverse(c.0 .0))).map(|c| c.0).unwrap_or(ActionId(0))
}
