//! Group-normalized advantages.

use crate::error::{Error, Result};
use crate::reward::{Group, StdConvention};

/// Added to the reward standard deviation before dividing.
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdvantageVector {
    pub per_completion: Vec<f64>,
    /// Filled by [`broadcast_to_tokens`]; one constant row per completion.
    pub per_token: Vec<Vec<f64>>,
}

/// Normalizes `rewards` to zero mean and (approximately) unit deviation.
/// A group whose rewards are all equal gets exact zeros.
pub fn normalize_rewards(rewards: &[f64], convention: StdConvention) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return vec![0.0; rewards.len()];
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let std = convention.std(rewards, mean);
    rewards
        .iter()
        .map(|r| (r - mean) / (std + ADVANTAGE_EPS))
        .collect()
}

/// Advantages over the group's rewards with the population deviation.
/// Results are also stored on the completions.
pub fn group_advantages(group: &mut Group) -> Result<AdvantageVector> {
    group_advantages_with(group, StdConvention::Population)
}

pub fn group_advantages_with(group: &mut Group, convention: StdConvention) -> Result<AdvantageVector> {
    if group.completions.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let rewards = group
        .completions
        .iter()
        .map(|c| c.reward.ok_or(Error::RewardsNotAssigned))
        .collect::<Result<Vec<f64>>>()?;
    let per_completion = normalize_rewards(&rewards, convention);
    for (c, &a) in group.completions.iter_mut().zip(&per_completion) {
        c.advantage = Some(a);
    }
    Ok(AdvantageVector {
        per_completion,
        per_token: Vec::new(),
    })
}

pub fn broadcast_to_tokens(group: &Group, mut adv: AdvantageVector) -> AdvantageVector {
    adv.per_token = group
        .completions
        .iter()
        .zip(&adv.per_completion)
        .map(|(c, &a)| vec![a; c.length])
        .collect();
    adv
}
