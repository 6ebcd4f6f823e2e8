//! Offline scoring of externally produced rollout logs.
//!
//! Input is line-delimited JSON, one record per completion with the fields
//! `query_id`, `completion_index`, `length` and `correct` (0/1 or a JSON
//! boolean). A batch is a whole file, or one blank-line-delimited block
//! when streaming. Each output line is the input line, unchanged, with
//! `correctness_ratio`, `strategy`, `reward` and `advantage` appended.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::pipeline::process_batch;
use crate::reward::{Completion, Group, RewardConfig, Strategy};
use crate::selector::Batch;

/// Names of the fields added on output. Input records may not carry them.
pub const OUTPUT_FIELDS: [&str; 4] = ["correctness_ratio", "strategy", "reward", "advantage"];

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RolloutRecord {
    pub query_id: String,
    pub completion_index: u64,
    pub length: u64,
    #[serde(deserialize_with = "flag")]
    pub correct: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Wire {
        Bool(bool),
        Int(u64),
    }
    match Wire::deserialize(de)? {
        Wire::Bool(b) => Ok(b),
        Wire::Int(0) => Ok(false),
        Wire::Int(1) => Ok(true),
        Wire::Int(n) => Err(serde::de::Error::custom(format!("correct must be 0 or 1, got {n}"))),
    }
}

/// One input line: its 1-based number in the file, the raw text and the
/// parsed record.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub number: usize,
    pub raw: String,
    pub record: RolloutRecord,
}

pub fn parse_line(number: usize, raw: &str) -> Result<Line> {
    let parse_err = |message: String| Error::Parse {
        line: number,
        message,
    };
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| parse_err("expected a JSON object".to_string()))?;
    if let Some(field) = OUTPUT_FIELDS.iter().find(|f| object.contains_key(**f)) {
        return Err(parse_err(format!("record already has output field `{field}`")));
    }
    let record = RolloutRecord::deserialize(value).map_err(|e| parse_err(e.to_string()))?;
    Ok(Line {
        number,
        raw: raw.to_string(),
        record,
    })
}

/// Fields appended to one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub correctness_ratio: f64,
    pub strategy: Strategy,
    pub reward: f64,
    pub advantage: f64,
}

impl Annotation {
    /// The input line with the annotation spliced in before its closing brace.
    pub fn apply(&self, raw: &str) -> String {
        let body = raw.trim_end();
        let body = body.strip_suffix('}').unwrap_or(body);
        let sep = if body.trim_end().ends_with('{') { "" } else { "," };
        format!(
            "{body}{sep}\"correctness_ratio\":{},\"strategy\":\"{}\",\"reward\":{},\"advantage\":{}}}",
            json_number(self.correctness_ratio),
            self.strategy.as_str(),
            json_number(self.reward),
            json_number(self.advantage),
        )
    }
}

fn json_number(x: f64) -> String {
    serde_json::to_string(&x).expect("finite f64 serializes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    /// Number of groups.
    pub k: usize,
    /// Completions per group.
    pub m: usize,
    pub selected: usize,
    /// `histogram[j]` counts groups with exactly `j` correct completions.
    pub histogram: Vec<usize>,
}

impl fmt::Display for BatchSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "K={} m={}, selected {} of {}", self.k, self.m, self.selected, self.k)?;
        write!(f, "ratio histogram:")?;
        for (j, count) in self.histogram.iter().enumerate() {
            if *count > 0 {
                write!(f, " {j}/{}:{count}", self.m)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    /// One entry per input record, in input order.
    pub annotations: Vec<Annotation>,
    pub summary: BatchSummary,
}

/// Groups records by query (first appearance order) and checks the batch
/// shape: no duplicate indices, equal group sizes, indices in `0..m`.
/// Returns each group's record positions ordered by `completion_index`.
fn assemble(records: &[RolloutRecord]) -> Result<Vec<Vec<usize>>> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let g = *slot.entry(r.query_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        if groups[g].iter().any(|&j| records[j].completion_index == r.completion_index) {
            return Err(Error::DuplicateRecord {
                query_id: r.query_id.clone(),
                completion_index: r.completion_index,
            });
        }
        groups[g].push(i);
    }
    let m = groups[0].len();
    for members in &groups {
        let query_id = &records[members[0]].query_id;
        if members.len() != m {
            return Err(Error::RaggedGroup {
                query_id: query_id.clone(),
                expected: m,
                found: members.len(),
            });
        }
    }
    for members in &mut groups {
        if let Some(&bad) = members.iter().find(|&&j| records[j].completion_index >= m as u64) {
            return Err(Error::IndexOutOfRange {
                query_id: records[bad].query_id.clone(),
                completion_index: records[bad].completion_index,
                m,
            });
        }
        members.sort_by_key(|&j| records[j].completion_index);
    }
    Ok(groups)
}

/// Runs the full reward pipeline on one batch of records.
pub fn score_batch(records: &[RolloutRecord], config: &RewardConfig) -> Result<ScoredBatch> {
    config.validate()?;
    let members = assemble(records)?;
    let groups = members
        .iter()
        .map(|idx| {
            let completions = idx
                .iter()
                .map(|&j| Completion::offline(records[j].length as usize, records[j].correct))
                .collect();
            Group::new(records[idx[0]].query_id.as_str(), completions)
        })
        .collect();
    let mut batch = Batch::new(groups);
    let report = process_batch(&mut batch, config)?;

    let m = members[0].len();
    let mut histogram = vec![0; m + 1];
    let mut annotations = vec![None; records.len()];
    for (group, idx) in batch.groups.iter().zip(&members) {
        histogram[group.num_correct()] += 1;
        let ratio = group.correctness_ratio.ok_or(Error::EmptyGroup)?;
        let strategy = group
            .strategy
            .ok_or_else(|| Error::StrategyUnassigned(group.query_id.to_string()))?;
        for (c, &j) in group.completions.iter().zip(idx) {
            annotations[j] = Some(Annotation {
                correctness_ratio: ratio,
                strategy,
                reward: c.reward.ok_or(Error::RewardsNotAssigned)?,
                advantage: c.advantage.ok_or(Error::RewardsNotAssigned)?,
            });
        }
    }
    Ok(ScoredBatch {
        annotations: annotations.into_iter().map(|a| a.expect("every record belongs to a group")).collect(),
        summary: BatchSummary {
            k: batch.groups.len(),
            m,
            selected: report.selected_count,
            histogram,
        },
    })
}

/// Scores parsed lines and returns the annotated output lines.
pub fn score_lines(lines: &[Line], config: &RewardConfig) -> Result<(Vec<String>, BatchSummary)> {
    let records: Vec<RolloutRecord> = lines.iter().map(|l| l.record.clone()).collect();
    let scored = score_batch(&records, config)?;
    let out = lines
        .iter()
        .zip(&scored.annotations)
        .map(|(l, a)| a.apply(&l.raw))
        .collect();
    Ok((out, scored.summary))
}

/// Scores a stream of blank-line-delimited batches. Blank lines are copied
/// through so the output has the same block structure as the input.
pub fn score_stream<R: BufRead, W: Write>(input: R, mut output: W, config: &RewardConfig) -> Result<Vec<BatchSummary>> {
    let mut summaries = Vec::new();
    let mut pending: Vec<Line> = Vec::new();
    let mut flush = |pending: &mut Vec<Line>, output: &mut W| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let (lines, summary) = score_lines(pending, config)?;
        for line in lines {
            writeln!(output, "{line}")?;
        }
        summaries.push(summary);
        pending.clear();
        Ok(())
    };
    for (i, raw) in input.lines().enumerate() {
        let raw = raw?;
        if raw.trim().is_empty() {
            flush(&mut pending, &mut output)?;
            writeln!(output)?;
        } else {
            pending.push(parse_line(i + 1, &raw)?);
        }
    }
    flush(&mut pending, &mut output)?;
    output.flush()?;
    if summaries.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(summaries)
}
