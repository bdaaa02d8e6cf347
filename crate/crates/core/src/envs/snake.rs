use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observation::SnakeObs;
use super::{ActionId, EnvError, EnvKind, Environment, LegalMask, Observation, StepResult};

pub const GRID: usize = 10;

pub const UP: ActionId = ActionId(0);
pub const DOWN: ActionId = ActionId(1);
pub const LEFT: ActionId = ActionId(2);
pub const RIGHT: ActionId = ActionId(3);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeRules {
    pub initial_length: usize,
    /// Episode is truncated after this many steps without eating.
    pub max_steps_without_food: usize,
    pub food_reward: f64,
    pub death_reward: f64,
}

impl Default for SnakeRules {
    fn default() -> Self {
        Self { initial_length: 3, max_steps_without_food: 200, food_reward: 1.0, death_reward: -1.0 }
    }
}

/// Cell reached by moving one step from `pos`, if still on the grid.
pub fn neighbor(pos: (usize, usize), action: ActionId) -> Option<(usize, usize)> {
    let (r, c) = pos;
    match action {
        UP => r.checked_sub(1).map(|r| (r, c)),
        DOWN => (r + 1 < GRID).then_some((r + 1, c)),
        LEFT => c.checked_sub(1).map(|c| (r, c)),
        RIGHT => (c + 1 < GRID).then_some((r, c + 1)),
        _ => None,
    }
}

pub struct Snake {
    rules: SnakeRules,
    rng: ChaCha8Rng,
    /// Head first.
    body: VecDeque<(usize, usize)>,
    food: (usize, usize),
    steps_since_food: usize,
    started: bool,
    finished: bool,
}

impl Snake {
    pub fn new(rules: SnakeRules) -> Self {
        assert!(rules.initial_length >= 1 && rules.initial_length <= GRID);
        Self { rules, rng: ChaCha8Rng::seed_from_u64(0), body: VecDeque::new(), food: (0, 0), steps_since_food: 0, started: false, finished: false }
    }

    /// Starts from an explicit body (head first) and food cell.
    pub fn with_state(rules: SnakeRules, body: Vec<(usize, usize)>, food: (usize, usize), seed: u64) -> Self {
        let mut env = Self::new(rules);
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        env.body = body.into();
        env.food = food;
        env.started = true;
        env
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn head(&self) -> (usize, usize) {
        self.body[0]
    }

    pub fn observation(&self) -> Observation {
        let mut grid = [[0i8; GRID]; GRID];
        for &(r, c) in &self.body {
            grid[r][c] = -1;
        }
        grid[self.food.0][self.food.1] = 1;
        Observation::Snake(SnakeObs { grid, head: self.head(), food: self.food })
    }

    /// Uniform over free cells; `None` when the snake fills the grid.
    fn place_food(&mut self) -> Option<(usize, usize)> {
        let free: Vec<(usize, usize)> = (0..GRID).flat_map(|r| (0..GRID).map(move |c| (r, c))).filter(|p| !self.body.contains(p)).collect();
        free.choose(&mut self.rng).copied()
    }
}

impl Environment for Snake {
    fn kind(&self) -> EnvKind {
        EnvKind::Snake
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let len = self.rules.initial_length;
        let row = self.rng.gen_range(0..GRID);
        let head_col = self.rng.gen_range(len - 1..GRID);
        self.body = (0..len).map(|k| (row, head_col - k)).collect();
        self.food = self.place_food().expect("grid larger than initial snake");
        self.steps_since_food = 0;
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
        if action.0 >= 4 {
            return Err(EnvError::ActionOutOfRange { action, count: 4 });
        }
        let death = |env: &mut Self| {
            env.finished = true;
            Ok(StepResult { observation: env.observation(), reward: env.rules.death_reward, terminated: true, truncated: false })
        };
        let Some(next) = neighbor(self.head(), action) else {
            return death(self);
        };
        let eating = next == self.food;
        // The tail cell frees up this step unless the snake grows.
        let tail = *self.body.back().expect("non-empty body");
        let hits_body = self.body.iter().any(|&p| p == next) && (eating || next != tail);
        if hits_body {
            return death(self);
        }
        self.body.push_front(next);
        let mut reward = 0.0;
        let mut terminated = false;
        if eating {
            reward = self.rules.food_reward;
            self.steps_since_food = 0;
            match self.place_food() {
                Some(food) => self.food = food,
                None => terminated = true,
            }
        } else {
            self.body.pop_back();
            self.steps_since_food += 1;
        }
        let truncated = !terminated && self.steps_since_food >= self.rules.max_steps_without_food;
        self.finished = terminated || truncated;
        Ok(StepResult { observation: self.observation(), reward, terminated, truncated })
    }

    fn legal_actions(&self) -> LegalMask {
        LegalMask::all(4)
    }
}
