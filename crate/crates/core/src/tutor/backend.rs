use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policies;
use crate::envs::{LegalMask, Observation};

/// Everything a backend may look at for one query.
pub struct TutorRequest<'a> {
    pub system: &'a str,
    pub prompt: &'a str,
    pub observation: &'a Observation,
    pub legal: LegalMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TutorReply {
    pub text: String,
    pub latency_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("tutor request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

pub trait TutorBackend: Send {
    fn query(&mut self, request: &TutorRequest<'_>) -> Result<TutorReply, BackendError>;

    fn describe(&self) -> String;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptPolicy {
    Optimal,
    Heuristic,
    Random,
    Adversarial,
    /// Never emits action tags.
    Malformed,
}

impl ScriptPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ScriptPolicy::Optimal => "optimal",
            ScriptPolicy::Heuristic => "heuristic",
            ScriptPolicy::Random => "random",
            ScriptPolicy::Adversarial => "adversarial",
            ScriptPolicy::Malformed => "malformed",
        }
    }
}

impl fmt::Display for ScriptPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScriptPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "optimal" => Ok(ScriptPolicy::Optimal),
            "heuristic" => Ok(ScriptPolicy::Heuristic),
            "random" => Ok(ScriptPolicy::Random),
            "adversarial" => Ok(ScriptPolicy::Adversarial),
            "malformed" => Ok(ScriptPolicy::Malformed),
            other => Err(format!("unknown scripted policy `{other}`")),
        }
    }
}

pub const DEFAULT_SCRIPTED_LATENCY: f64 = 0.01;

const MALFORMED_REPLIES: [&str; 3] = ["The snake should probably go somewhere safe.", "Action: 2", "<action>maybe one</action>"];

/// Deterministic stand-in for a language model. Latency is simulated:
/// it is reported, not slept.
pub struct ScriptedBackend {
    policy: ScriptPolicy,
    latency_seconds: f64,
    malformed_rate: f64,
    rng: ChaCha8Rng,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptPolicy, seed: u64) -> Self {
        Self { policy, latency_seconds: DEFAULT_SCRIPTED_LATENCY, malformed_rate: 0.0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn with_latency(mut self, seconds: f64) -> Self {
        self.latency_seconds = seconds;
        self
    }

    /// Fraction of replies replaced by untagged or unparsable text.
    pub fn with_malformed_rate(mut self, rate: f64) -> Self {
        self.malformed_rate = rate.clamp(0.0, 1.0);
        self
    }

    fn malformed(&mut self) -> String {
        MALFORMED_REPLIES[self.rng.gen_range(0..MALFORMED_REPLIES.len())].to_string()
    }
}

impl TutorBackend for ScriptedBackend {
    fn query(&mut self, request: &TutorRequest<'_>) -> Result<TutorReply, BackendError> {
        let garble = self.malformed_rate > 0.0 && self.rng.gen::<f64>() < self.malformed_rate;
        let text = if self.policy == ScriptPolicy::Malformed || garble {
            self.malformed()
        } else {
            let action = match self.policy {
                ScriptPolicy::Optimal => policies::optimal(request.observation),
                ScriptPolicy::Heuristic => policies::heuristic(request.observation),
                ScriptPolicy::Adversarial => policies::adversarial(request.observation),
                ScriptPolicy::Random => policies::random_legal(request.legal, &mut self.rng),
                ScriptPolicy::Malformed => unreachable!(),
            };
            format!("<action>{action}</action>")
        };
        Ok(TutorReply { text, latency_seconds: self.latency_seconds })
    }

    fn describe(&self) -> String {
        format!("scripted:{}", self.policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Environment, Snake, SnakeObs, SnakeRules, GRID};
    use crate::tutor::parse_action;

    fn listing_obs() -> Observation {
        let mut grid = [[0i8; GRID]; GRID];
        grid[1][4] = 1;
        for (r, c) in [(4, 5), (5, 3), (5, 4), (5, 5)] {
            grid[r][c] = -1;
        }
        Observation::Snake(SnakeObs { grid, head: (4, 5), food: (1, 4) })
    }

    fn ask(backend: &mut ScriptedBackend, obs: &Observation) -> TutorReply {
        let req = TutorRequest { system: "", prompt: "", observation: obs, legal: obs.legal_actions() };
        backend.query(&req).unwrap()
    }

    #[test]
    fn optimal_snake_reduces_distance() {
        let obs = listing_obs();
        let mut backend = ScriptedBackend::new(ScriptPolicy::Optimal, 0);
        let reply = ask(&mut backend, &obs);
        assert_eq!(reply.latency_seconds, DEFAULT_SCRIPTED_LATENCY);
        let action = parse_action(&reply.text, 4).unwrap();
        let next = crate::envs::snake_neighbor((4, 5), action).unwrap();
        let dist = |p: (usize, usize)| p.0.abs_diff(1) + p.1.abs_diff(4);
        assert!(dist(next) < dist((4, 5)));
    }

    #[test]
    fn malformed_emitter_has_no_valid_tags() {
        let obs = listing_obs();
        let mut backend = ScriptedBackend::new(ScriptPolicy::Malformed, 0).with_latency(0.25);
        for _ in 0..20 {
            let reply = ask(&mut backend, &obs);
            assert!(parse_action(&reply.text, 4).is_err());
            assert_eq!(reply.latency_seconds, 0.25);
        }
    }

    #[test]
    fn scripted_replies_are_reproducible() {
        let mut env = Snake::new(SnakeRules::default());
        let obs = env.reset(4);
        let run = |seed| {
            let mut b = ScriptedBackend::new(ScriptPolicy::Random, seed).with_malformed_rate(0.3);
            (0..30).map(|_| ask(&mut b, &obs).text).collect::<Vec<_>>()
        };
        assert_eq!(run(8), run(8));
    }

    #[test]
    fn policy_names_parse() {
        for p in [ScriptPolicy::Optimal, ScriptPolicy::Heuristic, ScriptPolicy::Random, ScriptPolicy::Adversarial, ScriptPolicy::Malformed] {
            assert_eq!(p.as_str().parse::<ScriptPolicy>().unwrap(), p);
        }
    }
}
