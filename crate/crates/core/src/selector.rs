//! Batch-wise top-lambda selection.
//!
//! Groups are ranked by correctness ratio (descending). Ties go to the
//! group with the larger mean completion length, then to the smaller query
//! id, so the selected set never depends on batch order.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::reward::{correctness_ratio, Group, RewardConfig, RewardMode, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub groups: Vec<Group>,
    pub selected_count: usize,
}

impl Batch {
    pub fn new(groups: Vec<Group>) -> Self {
        Batch {
            groups,
            selected_count: 0,
        }
    }

    /// Completions per group, checking that every group agrees.
    pub fn group_size(&self) -> Result<usize> {
        let first = self.groups.first().ok_or(Error::EmptyBatch)?;
        let m = first.len();
        if m == 0 {
            return Err(Error::EmptyGroup);
        }
        for g in &self.groups[1..] {
            if g.len() != m {
                return Err(Error::UnequalGroupSize {
                    query_id: g.query_id.to_string(),
                    expected: m,
                    found: g.len(),
                });
            }
        }
        Ok(m)
    }
}

/// `floor(lambda * k)`. The small slack absorbs products such as
/// `0.29 * 100 = 28.999999999999996`.
pub fn efficiency_quota(lambda_frac: f64, k: usize) -> usize {
    let raw = (lambda_frac * k as f64 + 1e-9).floor();
    (raw.max(0.0) as usize).min(k)
}

fn rank_order(a: &Group, b: &Group) -> Ordering {
    let ra = a.correctness_ratio.unwrap_or(0.0);
    let rb = b.correctness_ratio.unwrap_or(0.0);
    rb.total_cmp(&ra)
        .then_with(|| b.mean_length().total_cmp(&a.mean_length()))
        .then_with(|| a.query_id.cmp(&b.query_id))
}

/// Indices of `groups` in rank order, best first.
pub fn ranking(groups: &[Group]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&i, &j| rank_order(&groups[i], &groups[j]));
    order
}

/// Labels every group with a strategy. Group order is left untouched.
pub fn select_top_lambda(batch: &mut Batch, config: &RewardConfig) -> Result<()> {
    batch.group_size()?;
    for g in &mut batch.groups {
        if g.correctness_ratio.is_none() {
            correctness_ratio(g)?;
        }
    }

    let k = batch.groups.len();
    let quota = match config.mode {
        RewardMode::GrpoLambda => efficiency_quota(config.lambda_frac, k),
        RewardMode::PureGrpo => 0,
        RewardMode::AllGroupsLengthPenalty => k,
    };

    let order = ranking(&batch.groups);
    for (rank, &idx) in order.iter().enumerate() {
        batch.groups[idx].strategy = Some(if rank < quota {
            Strategy::EfficiencyPriority
        } else {
            Strategy::AccuracyPriority
        });
    }
    batch.selected_count = quota;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::Completion;

    /// Group of `m` completions with `correct` of them right, all of `length`.
    fn group(id: &str, m: usize, correct: usize, length: usize) -> Group {
        Group::new(
            id,
            (0..m).map(|i| Completion::offline(length, i < correct)).collect(),
        )
    }

    fn cfg(mode: RewardMode, lambda_frac: f64) -> RewardConfig {
        RewardConfig {
            mode,
            lambda_frac,
            ..RewardConfig::default()
        }
    }

    fn selected_ids(batch: &Batch) -> Vec<String> {
        let mut ids: Vec<String> = batch
            .groups
            .iter()
            .filter(|g| g.strategy == Some(Strategy::EfficiencyPriority))
            .map(|g| g.query_id.to_string())
            .collect();
        ids.sort();
        ids
    }

    #[test]
    fn ten_distinct_ratios() {
        let groups = (0..10)
            .map(|i| group(&format!("g{i}"), 10, 10 - i, 50))
            .collect();
        let mut batch = Batch::new(groups);
        select_top_lambda(&mut batch, &cfg(RewardMode::GrpoLambda, 0.2)).unwrap();
        assert_eq!(batch.selected_count, 2);
        assert_eq!(selected_ids(&batch), vec!["g0", "g1"]);
        for g in &batch.groups[2..] {
            assert_eq!(g.strategy, Some(Strategy::AccuracyPriority));
        }
    }

    #[test]
    fn five_groups_selects_the_best_one() {
        let groups = vec![
            group("a", 4, 1, 5),
            group("b", 4, 3, 5),
            group("c", 4, 2, 5),
            group("d", 4, 0, 5),
            group("e", 4, 2, 5),
        ];
        let mut batch = Batch::new(groups);
        select_top_lambda(&mut batch, &cfg(RewardMode::GrpoLambda, 0.2)).unwrap();
        assert_eq!(selected_ids(&batch), vec!["b"]);
    }

    #[test]
    fn tie_prefers_longer_mean_length() {
        // Ranking by hand: (0.75, 800, "t800"), (0.75, 400, "t400"), 0.5, 0.25.
        let groups = vec![
            group("t400", 4, 3, 400),
            group("half", 4, 2, 100),
            group("t800", 4, 3, 800),
            group("quarter", 4, 1, 100),
        ];
        let mut batch = Batch::new(groups);
        select_top_lambda(&mut batch, &cfg(RewardMode::GrpoLambda, 0.25)).unwrap();
        assert_eq!(selected_ids(&batch), vec!["t800"]);
        // Order is preserved.
        assert_eq!(batch.groups[0].query_id.0, "t400");
        assert_eq!(batch.groups[2].query_id.0, "t800");
    }

    #[test]
    fn tie_on_length_falls_back_to_query_id() {
        let groups = vec![group("zeta", 2, 1, 3), group("alpha", 2, 1, 3)];
        let mut batch = Batch::new(groups);
        select_top_lambda(&mut batch, &cfg(RewardMode::GrpoLambda, 0.5)).unwrap();
        assert_eq!(selected_ids(&batch), vec!["alpha"]);
    }

    #[test]
    fn modes_override_lambda() {
        let groups: Vec<Group> = (0..6).map(|i| group(&format!("g{i}"), 3, i % 4, 9)).collect();
        let mut pure = Batch::new(groups.clone());
        select_top_lambda(&mut pure, &cfg(RewardMode::PureGrpo, 0.9)).unwrap();
        assert_eq!(pure.selected_count, 0);
        assert!(selected_ids(&pure).is_empty());

        let mut all = Batch::new(groups);
        select_top_lambda(&mut all, &cfg(RewardMode::AllGroupsLengthPenalty, 0.0)).unwrap();
        assert_eq!(all.selected_count, 6);
        assert_eq!(selected_ids(&all).len(), 6);
    }

    #[test]
    fn empty_batch_errors() {
        let mut batch = Batch::new(vec![]);
        let err = select_top_lambda(&mut batch, &RewardConfig::default()).unwrap_err();
        assert_eq!(err, Error::EmptyBatch);
        assert_eq!(err.to_string(), "empty batch");
    }

    #[test]
    fn unequal_group_sizes_error() {
        let mut batch = Batch::new(vec![group("a", 4, 1, 2), group("b", 3, 1, 2)]);
        assert!(matches!(
            select_top_lambda(&mut batch, &RewardConfig::default()),
            Err(Error::UnequalGroupSize { .. })
        ));
    }

    #[test]
    fn quota_floors() {
        assert_eq!(efficiency_quota(0.2, 10), 2);
        assert_eq!(efficiency_quota(0.2, 5), 1);
        assert_eq!(efficiency_quota(0.2, 4), 0);
        assert_eq!(efficiency_quota(0.29, 100), 29);
        assert_eq!(efficiency_quota(0.2, 128), 25);
        assert_eq!(efficiency_quota(1.0, 7), 7);
        assert_eq!(efficiency_quota(0.0, 7), 0);
    }
}
