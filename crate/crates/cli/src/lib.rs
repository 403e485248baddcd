//! Experiment harness: configuration, seeded replicate runs, reports, and a
//! language-model expert adapter.

pub mod config;
pub mod error;
pub mod experiment;
pub mod llm;

pub use config::{parse_override, Aggregation, CrowdGroup, DesignConfig, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use experiment::{aggregate, run_experiment, ExperimentReport, ReplicateRow, Summary};
pub use llm::{llm_elicit, LlmExpertConfig, LlmMode, Transcript};
