//! Parse model outputs, extract and normalize final answers, and score
//! pass@1 over repeated trials.
//!
//! Extraction never fails: it searches the solution span (text between the
//! solution tag markers) when one is present, otherwise the whole output;
//! within that region the last `\boxed{...}` group wins (recursing into
//! nested boxes), falling back to the last non-empty line of the solution
//! span; anything else is absence, which simply scores incorrect.
//!
//! Normalization is exact-rational where both sides parse as integers,
//! finite decimals or fractions, and canonical-string equality otherwise;
//! no symbolic algebra. It is idempotent by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::weave::{SOLUTION_BEGIN, SOLUTION_END};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("trials disagree on item ids; missing: {missing:?}")]
    TrialMismatch { missing: Vec<String> },
    #[error("no records to score")]
    NoRecords,
    #[error("cannot read {path}: {reason}")]
    FileUnreadable { path: PathBuf, reason: String },
    #[error("bad eval record at line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Math500,
    Aime,
    Gpqa,
    Custom,
}

/// One model output to score. `raw_output` may be empty; empty outputs are
/// scored wrong, never rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub trial: u32,
    pub raw_output: String,
    pub gold: String,
    pub benchmark: Benchmark,
}

/// Per-item verdict after extraction and comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub id: String,
    pub trial: u32,
    pub benchmark: Benchmark,
    pub extracted: Option<String>,
    pub correct: bool,
}

/// Aggregated scores: pass@1 is the arithmetic mean of per-trial accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub trial_count: usize,
    pub per_trial_accuracy: Vec<(u32, f64)>,
    pub pass_at_1: f64,
    pub per_benchmark: BTreeMap<Benchmark, f64>,
    pub verdicts: Vec<ItemVerdict>,
}

/// Content of the last balanced `\boxed{...}` group, recursing into nested
/// boxes. An unclosed group swallows the rest of the text.
fn last_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut found: Option<String> = None;
    let mut cursor = 0;
    while let Some(rel) = text[cursor..].find(MARKER) {
        let open = cursor + rel + MARKER.len();
        let mut depth = 1usize;
        let mut end = text.len();
        for (i, c) in text[open..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = open + i;
                        break;
                    }
                }
                _ => {}
            }
        }
        found = Some(text[open..end].to_string());
        // step past the closing brace (or to the end when unclosed)
        cursor = (end + 1).min(text.len());
    }
    found.map(|content| last_boxed(&content).unwrap_or(content))
}

fn solution_span(text: &str) -> Option<&str> {
    let start = text.find(SOLUTION_BEGIN)? + SOLUTION_BEGIN.len();
    let rest = &text[start..];
    match rest.find(SOLUTION_END) {
        Some(end) => Some(&rest[..end]),
        None => Some(rest),
    }
}

/// Extract the candidate final answer from a raw model output.
pub fn extract_answer(raw_output: &str, _benchmark: Benchmark) -> Option<String> {
    let span = solution_span(raw_output);
    let region = span.unwrap_or(raw_output);
    if let Some(boxed) = last_boxed(region) {
        return Some(boxed);
    }
    let span = span?;
    span.lines()
        .rev()
        .map(str::trim)
        .find(|line| !line.is_empty())
        .map(str::to_string)
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact rational (num, den), den > 0, fully reduced.
fn parse_rational(s: &str) -> Option<(i128, i128)> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((num, den)) = s.split_once('/') {
        let num = parse_signed_int(num)?;
        let den = parse_unsigned_int(den)?;
        if den == 0 {
            return None;
        }
        return Some(reduce(num, den));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        let (sign, int_digits) = split_sign(int_part);
        if !int_digits.chars().all(|c| c.is_ascii_digit())
            || frac_part.is_empty()
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return None;
        }
        let den = 10i128.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
        let int_val: i128 = if int_digits.is_empty() {
            0
        } else {
            int_digits.parse().ok()?
        };
        let frac_val: i128 = frac_part.parse().ok()?;
        let num = int_val.checked_mul(den)?.checked_add(frac_val)?;
        return Some(reduce(sign * num, den));
    }
    parse_signed_int(s).map(|n| (n, 1))
}

fn split_sign(s: &str) -> (i128, &str) {
    if let Some(rest) = s.strip_prefix('-') {
        (-1, rest)
    } else if let Some(rest) = s.strip_prefix('+') {
        (1, rest)
    } else {
        (1, s)
    }
}

fn parse_signed_int(s: &str) -> Option<i128> {
    let (sign, digits) = split_sign(s.trim());
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse::<i128>().ok().map(|n| sign * n)
}

fn parse_unsigned_int(s: &str) -> Option<i128> {
    let s = s.trim();
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn reduce(num: i128, den: i128) -> (i128, i128) {
    if num == 0 {
        return (0, 1);
    }
    let g = gcd(num, den);
    (num / g, den / g)
}

fn strip_math_delimiters(s: &str) -> String {
    let mut out = s.trim();
    loop {
        let next = if out.len() >= 2 && out.starts_with('$') && out.ends_with('$') {
            &out[1..out.len() - 1]
        } else if out.len() >= 4 && out.starts_with("\\(") && out.ends_with("\\)") {
            &out[2..out.len() - 2]
        } else if out.len() >= 4 && out.starts_with("\\[") && out.ends_with("\\]") {
            &out[2..out.len() - 2]
        } else {
            break;
        };
        out = next.trim();
    }
    out.to_string()
}

fn strip_text_wrapper(s: &str) -> String {
    if let Some(inner) = s.strip_prefix("\\text{").and_then(|r| r.strip_suffix('}')) {
        if !inner.contains('{') && !inner.contains('}') {
            return inner.trim().to_string();
        }
    }
    s.to_string()
}

/// Rewrite every balanced `\frac{a}{b}` (also `\dfrac`, `\tfrac`) as `a/b`.
/// Unbalanced input is left untouched.
fn rewrite_fracs(s: &str) -> String {
    fn take_group(text: &str) -> Option<(&str, &str)> {
        let rest = text.strip_prefix('{')?;
        let mut depth = 1usize;
        for (i, c) in rest.char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some((&rest[..i], &rest[i + 1..]));
                    }
                }
                _ => {}
            }
        }
        None
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    loop {
        let Some(pos) = ["\\frac", "\\dfrac", "\\tfrac"]
            .iter()
            .filter_map(|m| rest.find(m).map(|p| (p, m.len())))
            .min()
        else {
            out.push_str(rest);
            return out;
        };
        let (at, marker_len) = pos;
        let after = &rest[at + marker_len..];
        match take_group(after).and_then(|(a, r)| take_group(r).map(|(b, r2)| (a, b, r2))) {
            Some((a, b, r2)) => {
                out.push_str(&rest[..at]);
                out.push_str(a);
                out.push('/');
                out.push_str(b);
                rest = r2;
            }
            None => {
                out.push_str(&rest[..at + marker_len]);
                rest = after;
            }
        }
    }
}

fn strip_digit_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            continue;
        }
        out.push(c);
    }
    out
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Canonicalize an answer string. Idempotent:
/// `normalize_answer(normalize_answer(x, b), b) == normalize_answer(x, b)`.
pub fn normalize_answer(answer: &str, benchmark: Benchmark) -> String {
    let s = strip_math_delimiters(answer.trim());
    let s = strip_text_wrapper(&s);
    let s = s.replace("\\left", "").replace("\\right", "");
    let s = rewrite_fracs(&s);
    let s = strip_digit_commas(s.trim());
    let s = s.trim().trim_end_matches('.').trim().to_string();

    if let Some((num, den)) = parse_rational(&s) {
        return if den == 1 {
            format!("{num}")
        } else {
            format!("{num}/{den}")
        };
    }
    if benchmark == Benchmark::Gpqa {
        let trimmed = s.trim();
        if trimmed.len() == 1 && trimmed.chars().all(|c| c.is_ascii_alphabetic()) {
            return trimmed.to_ascii_uppercase();
        }
    }
    collapse_whitespace(&s)
}

/// Score grouped trials. Every trial must cover the same item ids.
pub fn score(items: &[EvalItem]) -> Result<EvalOutcome, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut trials: BTreeMap<u32, Vec<&EvalItem>> = BTreeMap::new();
    for item in items {
        trials.entry(item.trial).or_default().push(item);
    }

    // coverage check: every trial must carry the union of all ids
    let union: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let mut missing: BTreeSet<String> = BTreeSet::new();
    for trial_items in trials.values() {
        let ids: BTreeSet<&str> = trial_items.iter().map(|i| i.id.as_str()).collect();
        for id in union.difference(&ids) {
            missing.insert((*id).to_string());
        }
    }
    if !missing.is_empty() {
        return Err(EvalError::TrialMismatch {
            missing: missing.into_iter().collect(),
        });
    }

    let mut verdicts = Vec::with_capacity(items.len());
    let mut per_trial_accuracy = Vec::with_capacity(trials.len());
    let mut benchmark_trial_acc: BTreeMap<Benchmark, Vec<f64>> = BTreeMap::new();
    for (&trial, trial_items) in &trials {
        let mut sorted: Vec<&&EvalItem> = trial_items.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let mut correct_total = 0usize;
        let mut bench_counts: BTreeMap<Benchmark, (usize, usize)> = BTreeMap::new();
        for item in sorted {
            let extracted = extract_answer(&item.raw_output, item.benchmark);
            let correct = extracted
                .as_deref()
                .map(|e| {
                    normalize_answer(e, item.benchmark)
                        == normalize_answer(&item.gold, item.benchmark)
                })
                .unwrap_or(false);
            correct_total += usize::from(correct);
            let slot = bench_counts.entry(item.benchmark).or_insert((0, 0));
            slot.0 += usize::from(correct);
            slot.1 += 1;
            verdicts.push(ItemVerdict {
                id: item.id.clone(),
                trial,
                benchmark: item.benchmark,
                extracted,
                correct,
            });
        }
        per_trial_accuracy.push((trial, correct_total as f64 / trial_items.len() as f64));
        for (bench, (c, t)) in bench_counts {
            benchmark_trial_acc
                .entry(bench)
                .or_default()
                .push(c as f64 / t as f64);
        }
    }

    let pass_at_1 = per_trial_accuracy.iter().map(|(_, a)| a).sum::<f64>()
        / per_trial_accuracy.len() as f64;
    let per_benchmark = benchmark_trial_acc
        .into_iter()
        .map(|(b, accs)| (b, accs.iter().sum::<f64>() / accs.len() as f64))
        .collect();

    Ok(EvalOutcome {
        trial_count: trials.len(),
        per_trial_accuracy,
        pass_at_1,
        per_benchmark,
        verdicts,
    })
}

/// Load eval items from line-delimited JSON
/// (`{id, trial, raw_output, gold, benchmark}`).
pub fn load_eval_items(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let file = fs::File::open(path).map_err(|e| EvalError::FileUnreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut items = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EvalError::FileUnreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| EvalError::BadRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(items)
}

/// Plain-text score table: one row per benchmark plus an overall row.
pub fn render_text_report(outcome: &EvalOutcome) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>7} {:>9}\n",
        "benchmark", "trials", "pass@1"
    ));
    for (bench, acc) in &outcome.per_benchmark {
        let name = match bench {
            Benchmark::Math500 => "math500",
            Benchmark::Aime => "aime",
            Benchmark::Gpqa => "gpqa",
            Benchmark::Custom => "custom",
        };
        out.push_str(&format!(
            "{:<12} {:>7} {:>8.2}%\n",
            name,
            outcome.trial_count,
            acc * 100.0
        ));
    }
    out.push_str(&format!(
        "{:<12} {:>7} {:>8.2}%\n",
        "overall",
        outcome.trial_count,
        outcome.pass_at_1 * 100.0
    ));
    out
}
