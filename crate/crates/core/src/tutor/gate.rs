//! Probabilistic tutor engagement with a budgeted advice cache.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::{BackendError, TutorBackend, TutorRequest};
use super::parse::{parse_action, ParseFailure};
use super::policies::random_legal;
use super::prompt::system_prompt_for;
use super::schedule::TutorSchedule;
use crate::envs::{ActionId, EnvKind, LegalMask, Observation};

pub const DEFAULT_BUDGET: u32 = 3;
pub const DEFAULT_RETRY_CAP: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdviceEntry {
    pub action: ActionId,
    /// Remaining reuses.
    pub budget: u32,
    /// Latency of the reply that produced this advice.
    pub latency_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TutorStats {
    /// Backend calls, retries included.
    pub queries: u64,
    /// Calls to `set_action` answered by a fresh valid reply.
    pub fresh_advice: u64,
    pub reuses: u64,
    pub missing_tags: u64,
    pub not_integer: u64,
    pub out_of_range: u64,
    /// Parsed in range but not legal in the current state.
    pub inapplicable: u64,
    pub timeouts: u64,
    pub transport_failures: u64,
    pub random_fallbacks: u64,
    /// Latency of every backend call, in seconds.
    pub latencies: Vec<f64>,
    /// For each reuse, the latency of the reply being reused.
    pub reuse_latencies: Vec<f64>,
}

impl TutorStats {
    pub fn parse_failures(&self) -> u64 {
        self.missing_tags + self.not_integer + self.out_of_range
    }

    pub fn total_latency(&self) -> f64 {
        self.latencies.iter().sum()
    }

    pub fn mean_latency(&self) -> Option<f64> {
        (!self.latencies.is_empty()).then(|| self.total_latency() / self.latencies.len() as f64)
    }

    fn record_parse_failure(&mut self, failure: ParseFailure) {
        match failure {
            ParseFailure::MissingTags => self.missing_tags += 1,
            ParseFailure::NotInteger => self.not_integer += 1,
            ParseFailure::OutOfRange => self.out_of_range += 1,
        }
    }
}

/// Advice keyed by the observation's canonical key.
#[derive(Clone, Debug)]
pub struct AdviceCache {
    entries: HashMap<Vec<u8>, AdviceEntry>,
    reuse_enabled: bool,
    budget: u32,
}

impl AdviceCache {
    pub fn new(reuse_enabled: bool, budget: u32) -> Self {
        Self { entries: HashMap::new(), reuse_enabled, budget }
    }

    pub fn reuse_enabled(&self) -> bool {
        self.reuse_enabled
    }

    pub fn set_reuse_enabled(&mut self, enabled: bool) {
        self.reuse_enabled = enabled;
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn peek(&self, key: &[u8]) -> Option<&AdviceEntry> {
        self.entries.get(key)
    }

    /// Spends one reuse if allowed. Never touches the map when reuse is off.
    fn take_reuse(&mut self, key: &[u8]) -> Option<AdviceEntry> {
        if !self.reuse_enabled {
            return None;
        }
        let entry = self.entries.get_mut(key)?;
        if entry.budget == 0 {
            return None;
        }
        entry.budget -= 1;
        Some(*entry)
    }

    fn store(&mut self, key: Vec<u8>, action: ActionId, latency_seconds: f64) {
        self.entries.insert(key, AdviceEntry { action, budget: self.budget, latency_seconds });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceSource {
    Fresh,
    Reused,
    RandomFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Advice {
    pub action: ActionId,
    pub source: AdviceSource,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TutorError {
    #[error("no valid advice after {attempts} attempts")]
    RetriesExhausted { attempts: u32 },
    #[error("observation has no legal actions")]
    NoLegalActions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TutorConfig {
    pub p_initial: f64,
    pub p_final: f64,
    pub theta: u64,
    pub budget: u32,
    pub retry_cap: u32,
    pub reuse: bool,
}

impl Default for TutorConfig {
    fn default() -> Self {
        Self { p_initial: 1.0, p_final: 0.1, theta: 1000, budget: DEFAULT_BUDGET, retry_cap: DEFAULT_RETRY_CAP, reuse: true }
    }
}

pub struct TutorGate {
    schedule: TutorSchedule,
    cache: AdviceCache,
    backend: Box<dyn TutorBackend>,
    retry_cap: u32,
    rng: ChaCha8Rng,
    stats: TutorStats,
    system_prompts: HashMap<EnvKind, String>,
}

impl TutorGate {
    pub fn new(config: &TutorConfig, backend: Box<dyn TutorBackend>, seed: u64) -> Self {
        Self::with_schedule(TutorSchedule::new(config.p_initial, config.p_final, config.theta), config, backend, seed)
    }

    pub fn with_schedule(schedule: TutorSchedule, config: &TutorConfig, backend: Box<dyn TutorBackend>, seed: u64) -> Self {
        Self {
            schedule,
            cache: AdviceCache::new(config.reuse, config.budget),
            backend,
            retry_cap: config.retry_cap.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: TutorStats::default(),
            system_prompts: HashMap::new(),
        }
    }

    pub fn schedule(&self) -> &TutorSchedule {
        &self.schedule
    }

    pub fn cache(&self) -> &AdviceCache {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut AdviceCache {
        &mut self.cache
    }

    pub fn stats(&self) -> &TutorStats {
        &self.stats
    }

    pub fn describe_backend(&self) -> String {
        self.backend.describe()
    }

    /// One uniform draw against the current engagement probability.
    pub fn engage(&mut self) -> bool {
        let u: f64 = self.rng.gen();
        u < self.schedule.current_probability()
    }

    /// Counts one agent step.
    pub fn advance(&mut self) {
        self.schedule.advance();
    }

    /// Cached or freshly queried advice for `obs`; errors once the retry cap is hit.
    pub fn set_action(&mut self, obs: &Observation, legal: LegalMask) -> Result<Advice, TutorError> {
        if legal.is_empty() {
            return Err(TutorError::NoLegalActions);
        }
        let key = obs.canonical_key();
        if let Some(entry) = self.cache.take_reuse(&key) {
            self.stats.reuses += 1;
            self.stats.reuse_latencies.push(entry.latency_seconds);
            return Ok(Advice { action: entry.action, source: AdviceSource::Reused });
        }
        let kind = obs.kind();
        let system = self.system_prompts.entry(kind).or_insert_with(|| system_prompt_for(kind)).clone();
        let prompt = obs.to_prompt();
        let request = TutorRequest { system: &system, prompt: &prompt, observation: obs, legal };
        for _ in 0..self.retry_cap {
            self.stats.queries += 1;
            let reply = match self.backend.query(&request) {
                Ok(reply) => reply,
                Err(BackendError::Timeout) => {
                    self.stats.timeouts += 1;
                    continue;
                }
                Err(BackendError::Transport(_)) => {
                    self.stats.transport_failures += 1;
                    continue;
                }
            };
            self.stats.latencies.push(reply.latency_seconds);
            match parse_action(&reply.text, kind.action_count()) {
                Err(failure) => self.stats.record_parse_failure(failure),
                Ok(action) if !legal.contains(action) => self.stats.inapplicable += 1,
                Ok(action) => {
                    self.stats.fresh_advice += 1;
                    self.cache.store(key, action, reply.latency_seconds);
                    return Ok(Advice { action, source: AdviceSource::Fresh });
                }
            }
        }
        Err(TutorError::RetriesExhausted { attempts: self.retry_cap })
    }

    /// Like `set_action`, substituting a uniform legal action when retries run out.
    pub fn advise(&mut self, obs: &Observation, legal: LegalMask) -> Advice {
        match self.set_action(obs, legal) {
            Ok(advice) => advice,
            Err(_) => {
                self.stats.random_fallbacks += 1;
                Advice { action: random_legal(legal, &mut self.rng), source: AdviceSource::RandomFallback }
            }
        }
    }
}
