//! GRPO-lambda: group-relative policy optimization that applies a length
//! penalty only to the best-performing fraction of each batch.
//!
//! Every step, groups of completions are ranked by correctness ratio. The
//! top `lambda` fraction is scored with a length-penalty reward, the rest
//! with the plain 0/1 outcome reward, and advantages are normalized within
//! each group as in GRPO. A three-parameter toy environment stands in for
//! an LLM so the training dynamics can be run on a laptop.

pub mod adam;
pub mod advantage;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod reward;
pub mod scorer;
pub mod seed;
pub mod selector;
pub mod trainer;

pub use advantage::{broadcast_to_tokens, group_advantages, AdvantageVector};
pub use config::{ExperimentConfig, OutputConfig};
pub use env::{EnvConfig, PolicyParams, ToyQuery};
pub use error::{Error, Result};
pub use metrics::{detect_collapse, CsvSink, MetricsSink, RunSummary, StepMetrics};
pub use reward::{Completion, Group, QueryId, RewardConfig, RewardMode, StdConvention, Strategy};
pub use scorer::{score_batch, BatchSummary, RolloutRecord};
pub use selector::{select_top_lambda, Batch};
pub use trainer::{run_experiment, ExperimentResult, TrainConfig, Trainer};
