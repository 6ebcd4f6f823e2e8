//! Ratio, selection, reward and advantage stages applied to one batch.

use crate::advantage::group_advantages;
use crate::error::Result;
use crate::reward::{assign_group_rewards, correctness_ratio, RewardConfig, RewardOutcome};
use crate::selector::{select_top_lambda, Batch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PipelineReport {
    pub selected_count: usize,
    /// Efficiency-priority groups that had no correct completion.
    pub fallbacks: usize,
}

/// Runs every stage in order. Rewards and advantages end up on the
/// completions; strategies and ratios on the groups.
pub fn process_batch(batch: &mut Batch, config: &RewardConfig) -> Result<PipelineReport> {
    batch.group_size()?;
    for g in &mut batch.groups {
        correctness_ratio(g)?;
    }
    select_top_lambda(batch, config)?;
    let mut fallbacks = 0;
    for g in &mut batch.groups {
        if assign_group_rewards(g, config)? == RewardOutcome::FellBackToOutcome {
            fallbacks += 1;
        }
        group_advantages(g)?;
    }
    Ok(PipelineReport {
        selected_count: batch.selected_count,
        fallbacks,
    })
}
