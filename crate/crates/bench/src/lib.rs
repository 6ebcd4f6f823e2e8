//! Inputs shared by the benchmarks under `benches/`.

use grpol_core::env::{sample_completion, sample_query_pool};
use grpol_core::seed;
use grpol_core::{Batch, EnvConfig, Group, PolicyParams, RolloutRecord};

/// A batch of `k` groups of `m` completions sampled from the toy
/// environment under the default initial policy.
pub fn toy_batch(k: usize, m: usize, base: u64) -> Batch {
    let env = EnvConfig::default();
    let params = PolicyParams::default();
    let groups = sample_query_pool(&env, k, base)
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let completions = (0..m)
                .map(|j| sample_completion(&params, q, &env, seed::derive(base, &[i as u64, j as u64])))
                .collect();
            Group::new(q.query_id.clone(), completions)
        })
        .collect();
    Batch::new(groups)
}

/// The same batch flattened into offline-scorer records.
pub fn toy_records(k: usize, m: usize, base: u64) -> Vec<RolloutRecord> {
    toy_batch(k, m, base)
        .groups
        .iter()
        .flat_map(|g| {
            g.completions.iter().enumerate().map(move |(j, c)| RolloutRecord {
                query_id: g.query_id.to_string(),
                completion_index: j as u64,
                length: c.length as u64,
                correct: c.correct,
            })
        })
        .collect()
}
