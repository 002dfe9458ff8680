//! Scenario generation, Monte Carlo benchmarking, convergence sweeps, CSV
//! output, and the verification suite behind the CLI.

pub mod bench;
pub mod config;
pub mod episode;
pub mod montecarlo;
pub mod output;
pub mod scenario;
pub mod sweep;
pub mod verify;

pub use config::ScenarioConfig;
pub use episode::{run_episode, EpisodeOutput, Method, MetricsRow};
pub use scenario::{generate_scenario, Scenario};
