use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observation::BlackjackObs;
use super::{ActionId, EnvError, EnvKind, Environment, LegalMask, Observation, StepResult};

pub const STICK: ActionId = ActionId(0);
pub const HIT: ActionId = ActionId(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackjackRules {
    /// Dealer draws while below this total.
    pub dealer_stands_on: u8,
}

impl Default for BlackjackRules {
    fn default() -> Self {
        Self { dealer_stands_on: 17 }
    }
}

/// Card values with aces counted as 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Hand {
    hard_total: u8,
    has_ace: bool,
}

impl Hand {
    pub fn add(&mut self, card: u8) {
        self.hard_total += card;
        self.has_ace |= card == 1;
    }

    pub fn usable_ace(&self) -> bool {
        self.has_ace && self.hard_total + 10 <= 21
    }

    pub fn total(&self) -> u8 {
        if self.usable_ace() {
            self.hard_total + 10
        } else {
            self.hard_total
        }
    }

    pub fn is_bust(&self) -> bool {
        self.total() > 21
    }
}

/// Infinite-deck draw: 2..9 at face value, ten and court cards as 10, ace as 1.
pub fn draw_card<R: Rng>(rng: &mut R) -> u8 {
    let rank: u8 = rng.gen_range(1..=13);
    rank.min(10)
}

/// Simplified Blackjack: stick or hit, dealer stands on 17, no naturals bonus.
pub struct Blackjack {
    rules: BlackjackRules,
    rng: ChaCha8Rng,
    player: Hand,
    dealer_showing: u8,
    dealer_hole: u8,
    started: bool,
    finished: bool,
}

impl Blackjack {
    pub fn new(rules: BlackjackRules) -> Self {
        Self { rules, rng: ChaCha8Rng::seed_from_u64(0), player: Hand::default(), dealer_showing: 0, dealer_hole: 0, started: false, finished: false }
    }

    /// Puts the environment into a chosen mid-episode state; the dealer's
    /// hole card and later draws come from `seed`.
    pub fn with_state(rules: BlackjackRules, player_hard_total: u8, player_has_ace: bool, dealer_showing: u8, seed: u64) -> Self {
        let mut env = Self::new(rules);
        env.rng = ChaCha8Rng::seed_from_u64(seed);
        env.player = Hand { hard_total: player_hard_total, has_ace: player_has_ace };
        env.dealer_showing = dealer_showing;
        env.dealer_hole = draw_card(&mut env.rng);
        env.started = true;
        env
    }

    pub fn observation(&self) -> Observation {
        Observation::Blackjack(BlackjackObs {
            player_sum: self.player.total(),
            dealer_card: self.dealer_showing,
            usable_ace: self.player.usable_ace(),
        })
    }

    fn dealer_play(&mut self) -> u8 {
        let mut dealer = Hand::default();
        dealer.add(self.dealer_showing);
        dealer.add(self.dealer_hole);
        while dealer.total() < self.rules.dealer_stands_on {
            let card = draw_card(&mut self.rng);
            dealer.add(card);
        }
        dealer.total()
    }
}

impl Environment for Blackjack {
    fn kind(&self) -> EnvKind {
        EnvKind::Blackjack
    }

    fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.player = Hand::default();
        let first = draw_card(&mut self.rng);
        self.player.add(first);
        self.dealer_showing = draw_card(&mut self.rng);
        let second = draw_card(&mut self.rng);
        self.player.add(second);
        self.dealer_hole = draw_card(&mut self.rng);
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
        let (reward, terminated) = match action {
            HIT => {
                let card = draw_card(&mut self.rng);
                self.player.add(card);
                if self.player.is_bust() {
                    (-1.0, true)
                } else {
                    (0.0, false)
                }
            }
            STICK => {
                let player = self.player.total();
                let dealer = self.dealer_play();
                let reward = if dealer > 21 || player > dealer {
                    1.0
                } else if player < dealer {
                    -1.0
                } else {
                    0.0
                };
                (reward, true)
            }
            other => return Err(EnvError::ActionOutOfRange { action: other, count: 2 }),
        };
        self.finished = terminated;
        Ok(StepResult { observation: self.observation(), reward, terminated, truncated: false })
    }

    fn legal_actions(&self) -> LegalMask {
        LegalMask::all(2)
    }
}
