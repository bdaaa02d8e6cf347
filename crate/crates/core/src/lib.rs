pub mod agents;
pub mod envs;
pub mod metrics;
pub mod nn;
pub mod runner;
pub mod tutor;
