//! The teacher side: engagement schedule, advice cache, prompting and backends.

mod backend;
mod gate;
pub mod http;
mod parse;
pub mod policies;
mod prompt;
mod schedule;
pub mod stub;

pub use backend::{BackendError, ScriptPolicy, ScriptedBackend, TutorBackend, TutorReply, TutorRequest, DEFAULT_SCRIPTED_LATENCY};
pub use gate::{Advice, AdviceCache, AdviceEntry, AdviceSource, TutorConfig, TutorError, TutorGate, TutorStats, DEFAULT_BUDGET, DEFAULT_RETRY_CAP};
pub use http::HttpLlmBackend;
pub use parse::{parse_action, ParseFailure};
pub use prompt::{build_system_prompt, model_file, render_action_dictionary, system_prompt_for, PromptError};
pub use schedule::TutorSchedule;
pub use stub::{StubConfig, StubServer};
