//! Reasoning-trace statistics and the length-accuracy scaling fit.
//!
//! [`trace_stats`] groups traces by correctness and reports, per group, the
//! average whitespace-token length, the top-k word frequencies and the
//! aggregate frequency of a transition-word set ("but", "wait" by default).
//! Words come from a separate rule from token counting: lowercase, split on
//! non-alphanumeric, empties dropped; frequencies are word count over all
//! words in the group.
//!
//! [`fit_scaling`] performs ordinary least squares of accuracy against
//! log2(length level), the form under which a log-linear trend is a line.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least two distinct levels for a fit")]
    DegenerateInput,
    #[error("no traces given")]
    NoTraces,
    #[error("io failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
}

/// Default transition-word set.
pub fn default_transition_words() -> BTreeSet<String> {
    ["but", "wait"].iter().map(|s| s.to_string()).collect()
}

/// Default number of ranked words reported per group.
pub const DEFAULT_TOP_K: usize = 10;

/// Statistics for one correctness group of traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStatsReport {
    /// Group label: "correct" or "wrong" (callers may prefix a level).
    pub label: String,
    pub trace_count: usize,
    /// Mean whitespace-token count per trace.
    pub average_tokens: f64,
    /// Top-k `(word, frequency)` pairs, frequency descending, ties broken
    /// lexicographically. Frequencies are word count / total words.
    pub top_words: Vec<(String, f64)>,
    /// Sum of the transition words' frequencies.
    pub transition_rate: f64,
}

/// The word rule for Table-style statistics (distinct from token counting).
pub fn split_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

fn group_stats(
    label: &str,
    traces: &[&str],
    transition_words: &BTreeSet<String>,
    k: usize,
) -> TraceStatsReport {
    let total_tokens: usize = traces
        .iter()
        .map(|t| t.split_whitespace().count())
        .sum();
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut total_words = 0u64;
    for trace in traces {
        for word in split_words(trace) {
            *counts.entry(word).or_insert(0) += 1;
            total_words += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let freq = |count: u64| {
        if total_words == 0 {
            0.0
        } else {
            count as f64 / total_words as f64
        }
    };
    let transition_rate = ranked
        .iter()
        .filter(|(w, _)| transition_words.contains(w))
        .map(|(_, c)| freq(*c))
        .sum();
    let top_words = ranked
        .into_iter()
        .take(k)
        .map(|(w, c)| (w, freq(c)))
        .collect();

    TraceStatsReport {
        label: label.to_string(),
        trace_count: traces.len(),
        average_tokens: total_tokens as f64 / traces.len() as f64,
        top_words,
        transition_rate,
    }
}

/// Per-correctness-group statistics over `(trace, correct)` pairs. Reports
/// come out in the order correct, wrong; an empty group is omitted.
pub fn trace_stats(
    traces: &[(String, bool)],
    transition_words: &BTreeSet<String>,
    k: usize,
) -> Result<Vec<TraceStatsReport>, StatsError> {
    if traces.is_empty() {
        return Err(StatsError::NoTraces);
    }
    let mut reports = Vec::new();
    for (label, want) in [("correct", true), ("wrong", false)] {
        let group: Vec<&str> = traces
            .iter()
            .filter(|(_, c)| *c == want)
            .map(|(t, _)| t.as_str())
            .collect();
        if !group.is_empty() {
            reports.push(group_stats(label, &group, transition_words, k));
        }
    }
    Ok(reports)
}

/// Ordinary-least-squares fit of accuracy against log2(level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// The fitted `(level, accuracy)` points.
    pub points: Vec<(f64, f64)>,
    /// Accuracy gain per doubling of length.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    /// Fitted accuracy at a given level.
    pub fn predict(&self, level: f64) -> f64 {
        self.slope * level.log2() + self.intercept
    }
}

/// Least squares of accuracy on log2(level). Needs two distinct levels.
/// `r_squared` is defined as 1 when the accuracies have no variance.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit, StatsError> {
    let distinct: BTreeSet<u64> = points.iter().map(|(l, _)| l.to_bits()).collect();
    if points.len() < 2 || distinct.len() < 2 {
        return Err(StatsError::DegenerateInput);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(l, _)| l.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, a)| *a).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ScalingFit {
        points: points.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

/// Write fit data in a columnar text format:
/// `level<TAB>accuracy<TAB>series`, series `point` for the data and `fit`
/// for the fitted line sampled at the same levels (omitted when
/// `include_line` is false). Values print with six decimal places.
pub fn emit_plot_data(
    fit: &ScalingFit,
    path: &Path,
    include_line: bool,
) -> Result<(), StatsError> {
    let io_err = |e: std::io::Error| StatsError::IoFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    writeln!(file, "# level\taccuracy\tseries").map_err(io_err)?;
    for (level, acc) in &fit.points {
        writeln!(file, "{level:.6}\t{acc:.6}\tpoint").map_err(io_err)?;
    }
    if include_line {
        for (level, _) in &fit.points {
            writeln!(file, "{level:.6}\t{:.6}\tfit", fit.predict(*level)).map_err(io_err)?;
        }
    }
    Ok(())
}
