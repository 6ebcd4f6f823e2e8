//! Per-step training metrics, CSV output and collapse detection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_accuracy: f64,
    pub mean_length: f64,
    /// Mean length relative to the first step's.
    pub compression_rate: f64,
    pub selected_fraction: f64,
    pub mean_reward: f64,
    pub mean_advantage_magnitude: f64,
}

pub const CSV_HEADER: &str =
    "step,mean_accuracy,mean_length,compression_rate,selected_fraction,mean_reward,mean_advantage_magnitude";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.mean_accuracy,
            self.mean_length,
            self.compression_rate,
            self.selected_fraction,
            self.mean_reward,
            self.mean_advantage_magnitude
        )
    }
}

pub trait MetricsSink {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

impl MetricsSink for Vec<StepMetrics> {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()> {
        self.push(*metrics);
        Ok(())
    }
}

/// Append-only CSV writer; the header goes out on construction.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{CSV_HEADER}")?;
        Ok(CsvSink { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()> {
        writeln!(self.out, "{}", metrics.csv_row())?;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Trailing means: entry `i` averages `values[i + 1 - window ..= i]`.
/// The first `window - 1` positions have no full window and are skipped,
/// so the result has `values.len() - window + 1` entries.
pub fn trailing_means(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// First index at which the trailing windowed accuracy falls more than
/// `drop_threshold` below the best windowed accuracy seen so far.
pub fn detect_collapse_in(accuracy: &[f64], window: usize, drop_threshold: f64) -> Option<usize> {
    let window = window.max(1);
    let mut peak = f64::NEG_INFINITY;
    for (offset, mean) in trailing_means(accuracy, window).into_iter().enumerate() {
        peak = peak.max(mean);
        if mean < peak - drop_threshold {
            return Some(offset + window - 1);
        }
    }
    None
}

/// Collapse step (the `step` field of the offending entry), if any.
pub fn detect_collapse(metrics: &[StepMetrics], window: usize, drop_threshold: f64) -> Option<usize> {
    let acc: Vec<f64> = metrics.iter().map(|m| m.mean_accuracy).collect();
    detect_collapse_in(&acc, window, drop_threshold).map(|i| metrics[i].step)
}

/// Window and drop used when reporting collapse.
pub const COLLAPSE_WINDOW: usize = 5;
pub const COLLAPSE_DROP: f64 = 0.2;
/// Trailing steps averaged for "final" accuracy and compression.
pub const FINAL_WINDOW: usize = 10;

fn tail_mean(metrics: &[StepMetrics], f: impl Fn(&StepMetrics) -> f64) -> f64 {
    let tail = &metrics[metrics.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub final_accuracy: f64,
    pub final_compression: f64,
    pub collapse_step: Option<usize>,
}

impl RunSummary {
    pub fn new(metrics: &[StepMetrics]) -> Option<Self> {
        if metrics.is_empty() {
            return None;
        }
        Some(RunSummary {
            steps: metrics.len(),
            final_accuracy: tail_mean(metrics, |m| m.mean_accuracy),
            final_compression: tail_mean(metrics, |m| m.compression_rate),
            collapse_step: detect_collapse(metrics, COLLAPSE_WINDOW, COLLAPSE_DROP),
        })
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "final accuracy {:.3}, compression rate {:.3}, ",
            self.final_accuracy, self.final_compression
        )?;
        match self.collapse_step {
            Some(step) => write!(f, "collapse at step {step}"),
            None => write!(f, "stable"),
        }
    }
}

/// Mean accuracy of two methods in one mean-length bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinComparison {
    /// Bin `b` covers lengths in `[ratio^b, ratio^(b+1))`.
    pub bin: i64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

fn bin_means(runs: &[&[StepMetrics]], ratio: f64) -> BTreeMap<i64, (f64, usize)> {
    let mut bins = BTreeMap::new();
    for m in runs.iter().flat_map(|r| r.iter()) {
        let b = (m.mean_length.ln() / ratio.ln()).floor() as i64;
        let e: &mut (f64, usize) = bins.entry(b).or_default();
        e.0 += m.mean_accuracy;
        e.1 += 1;
    }
    bins
}

/// Pools the step points of each method, bins them by mean length on a
/// log scale and compares bin-mean accuracy wherever both methods have at
/// least `min_points` points.
pub fn compare_by_length(a: &[&[StepMetrics]], b: &[&[StepMetrics]], ratio: f64, min_points: usize) -> Vec<BinComparison> {
    let (ma, mb) = (bin_means(a, ratio), bin_means(b, ratio));
    ma.iter()
        .filter_map(|(&bin, &(sa, na))| {
            let &(sb, nb) = mb.get(&bin)?;
            (na >= min_points && nb >= min_points).then(|| BinComparison {
                bin,
                accuracy_a: sa / na as f64,
                accuracy_b: sb / nb as f64,
            })
        })
        .collect()
}
