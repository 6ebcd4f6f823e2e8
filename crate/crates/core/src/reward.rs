//! Completion/group data model and the two per-completion reward rules.
//!
//! Accuracy-priority groups are scored with the binary outcome reward.
//! Efficiency-priority groups are scored with a length penalty: a correct
//! completion earns `1 - alpha * logistic(z)`, where `z` standardizes its
//! length against the lengths of the group's other correct completions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque query identifier. Ordered lexicographically for tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub String);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QueryId {
    fn from(s: &str) -> Self {
        QueryId(s.to_string())
    }
}

impl From<String> for QueryId {
    fn from(s: String) -> Self {
        QueryId(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Think,
    Answer,
}

/// One sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Empty for completions loaded from offline logs.
    pub actions: Vec<Action>,
    pub length: usize,
    pub correct: bool,
    /// Trajectory log-probability under the sampling policy; 0 offline.
    pub logprob: f64,
    pub reward: Option<f64>,
    pub advantage: Option<f64>,
}

impl Completion {
    /// A completion known only by its length and outcome.
    pub fn offline(length: usize, correct: bool) -> Self {
        Completion {
            actions: Vec::new(),
            length,
            correct,
            logprob: 0.0,
            reward: None,
            advantage: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Length-penalty reward.
    #[serde(rename = "efficiency")]
    EfficiencyPriority,
    /// Binary outcome reward.
    #[serde(rename = "accuracy")]
    AccuracyPriority,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::EfficiencyPriority => "efficiency",
            Strategy::AccuracyPriority => "accuracy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One query plus its sampled completions.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub query_id: QueryId,
    pub completions: Vec<Completion>,
    pub correctness_ratio: Option<f64>,
    pub strategy: Option<Strategy>,
}

impl Group {
    pub fn new(query_id: impl Into<QueryId>, completions: Vec<Completion>) -> Self {
        Group {
            query_id: query_id.into(),
            completions,
            correctness_ratio: None,
            strategy: None,
        }
    }

    pub fn len(&self) -> usize {
        self.completions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.completions.is_empty()
    }

    pub fn num_correct(&self) -> usize {
        self.completions.iter().filter(|c| c.correct).count()
    }

    pub fn mean_length(&self) -> f64 {
        if self.completions.is_empty() {
            return 0.0;
        }
        let total: usize = self.completions.iter().map(|c| c.length).sum();
        total as f64 / self.completions.len() as f64
    }
}

/// Which reward pipeline the trainer and scorer run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardMode {
    /// Top-lambda groups by correctness ratio get the length penalty.
    #[serde(rename = "grpo-lambda")]
    GrpoLambda,
    /// Outcome reward everywhere.
    #[serde(rename = "grpo")]
    PureGrpo,
    /// Length penalty everywhere; the collapsing baseline.
    #[serde(rename = "all-length-penalty")]
    AllGroupsLengthPenalty,
}

impl RewardMode {
    pub const ALL: [RewardMode; 3] = [
        RewardMode::PureGrpo,
        RewardMode::AllGroupsLengthPenalty,
        RewardMode::GrpoLambda,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::GrpoLambda => "grpo-lambda",
            RewardMode::PureGrpo => "grpo",
            RewardMode::AllGroupsLengthPenalty => "all-length-penalty",
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grpo-lambda" => Ok(RewardMode::GrpoLambda),
            "grpo" => Ok(RewardMode::PureGrpo),
            "all-length-penalty" => Ok(RewardMode::AllGroupsLengthPenalty),
            other => Err(Error::config(
                "mode",
                format!("unknown mode {other:?}, expected grpo | grpo-lambda | all-length-penalty"),
            )),
        }
    }
}

/// Divisor used when computing a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdConvention {
    /// Divide by n - 1.
    Sample,
    /// Divide by n.
    Population,
}

impl StdConvention {
    /// Standard deviation of `values` around `mean`. Returns 0 when the
    /// divisor would be zero.
    pub fn std(self, values: &[f64], mean: f64) -> f64 {
        let n = values.len();
        let divisor = match self {
            StdConvention::Sample => n.saturating_sub(1),
            StdConvention::Population => n,
        };
        if divisor == 0 {
            return 0.0;
        }
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / divisor as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub lambda_frac: f64,
    pub mode: RewardMode,
    pub length_std: StdConvention,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.2,
            lambda_frac: 0.2,
            mode: RewardMode::GrpoLambda,
            length_std: StdConvention::Sample,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("reward.alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda_frac) {
            return Err(Error::config(
                "reward.lambda_frac",
                format!("must lie in [0, 1], got {}", self.lambda_frac),
            ));
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fraction of correct completions; also stored on the group.
pub fn correctness_ratio(group: &mut Group) -> Result<f64> {
    if group.completions.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let ratio = group.num_correct() as f64 / group.completions.len() as f64;
    group.correctness_ratio = Some(ratio);
    Ok(ratio)
}

pub fn outcome_reward(completion: &Completion) -> f64 {
    if completion.correct {
        1.0
    } else {
        0.0
    }
}

/// Mean and standard deviation of the lengths of a group's correct completions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectLengthStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl CorrectLengthStats {
    pub fn from_group(group: &Group, convention: StdConvention) -> Result<Self> {
        let lengths: Vec<f64> = group
            .completions
            .iter()
            .filter(|c| c.correct)
            .map(|c| c.length as f64)
            .collect();
        if lengths.is_empty() {
            return Err(Error::NoCorrectReference);
        }
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let std = convention.std(&lengths, mean);
        Ok(CorrectLengthStats {
            mean,
            std,
            count: lengths.len(),
        })
    }
}

/// Length-penalty reward. Wrong completions earn 0; a correct one earns
/// `1 - alpha * logistic((length - mean) / std)`, with `z = 0` when
/// `std == 0`.
pub fn length_penalty_reward(completion: &Completion, mean: f64, std: f64, alpha: f64) -> f64 {
    if !completion.correct {
        return 0.0;
    }
    let z = if std > 0.0 {
        (completion.length as f64 - mean) / std
    } else {
        0.0
    };
    1.0 - alpha * logistic(z)
}

/// What `assign_group_rewards` actually did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardOutcome {
    Outcome,
    LengthPenalty,
    /// Efficiency priority was requested but the group had no correct
    /// completion; outcome rewards (all zero) were assigned instead.
    FellBackToOutcome,
}

/// Strategy a group is scored with under `config.mode`. Only GRPO-lambda
/// defers to the label set by the batch selector.
pub fn effective_strategy(group: &Group, config: &RewardConfig) -> Result<Strategy> {
    match config.mode {
        RewardMode::PureGrpo => Ok(Strategy::AccuracyPriority),
        RewardMode::AllGroupsLengthPenalty => Ok(Strategy::EfficiencyPriority),
        RewardMode::GrpoLambda => group
            .strategy
            .ok_or_else(|| Error::StrategyUnassigned(group.query_id.to_string())),
    }
}

pub fn assign_group_rewards(group: &mut Group, config: &RewardConfig) -> Result<RewardOutcome> {
    if group.completions.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let strategy = effective_strategy(group, config)?;
    group.strategy = Some(strategy);

    let outcome = match strategy {
        Strategy::AccuracyPriority => RewardOutcome::Outcome,
        Strategy::EfficiencyPriority => match CorrectLengthStats::from_group(group, config.length_std) {
            Ok(stats) => {
                for c in &mut group.completions {
                    c.reward = Some(length_penalty_reward(c, stats.mean, stats.std, config.alpha));
                }
                return Ok(RewardOutcome::LengthPenalty);
            }
            Err(Error::NoCorrectReference) => {
                log::warn!(
                    "query {}: efficiency priority with no correct completion, using outcome rewards",
                    group.query_id
                );
                RewardOutcome::FellBackToOutcome
            }
            Err(e) => return Err(e),
        },
    };
    for c in &mut group.completions {
        c.reward = Some(outcome_reward(c));
    }
    Ok(outcome)
}
