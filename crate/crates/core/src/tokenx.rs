//! Pluggable tokenization and token-length measurement.
//!
//! Every "reasoning length" quantity in this crate is a token count under a
//! declared tokenizer, and the tokenizer id is recorded into every dataset
//! manifest, so counts are always attributable. Two kinds are supported:
//!
//! * `whitespace` — tokens are maximal runs of non-whitespace (Unicode
//!   whitespace, i.e. `str::split_whitespace`).
//! * `bpe` — words are first split on whitespace, then each word is reduced
//!   by greedy byte-pair merges: the merge file is consulted for the
//!   lowest-ranked adjacent symbol pair, all its occurrences are merged
//!   left-to-right, and the process repeats until no listed pair remains.
//!   The token count of a word is its final symbol count.
//!
//! The merge file is plain UTF-8 text, one space-separated symbol pair per
//! line in rank order; lines starting with `#` are ignored. This is the
//! `merges.txt` half of the common vocab/merges pair; the vocabulary itself
//! is not needed for counting.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SourceProblem};
use crate::rng::{derive_seed, sample_indices};

#[derive(Debug, thiserror::Error)]
pub enum TokenxError {
    #[error("failed to load vocab from {path}: {reason}")]
    VocabLoadFailure { path: PathBuf, reason: String },
    #[error("tokenizer spec invalid: {0}")]
    InvalidSpec(String),
    #[error("level {level}: found {found} eligible records, {required} required")]
    InsufficientEligible {
        level: u64,
        found: usize,
        required: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Whitespace,
    Bpe,
}

/// Declares which tokenizer a build uses. The `id` string is recorded into
/// every manifest built under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub vocab_source: Option<PathBuf>,
    pub id: String,
}

impl TokenizerSpec {
    pub fn whitespace() -> TokenizerSpec {
        TokenizerSpec {
            kind: TokenizerKind::Whitespace,
            vocab_source: None,
            id: "whitespace".to_string(),
        }
    }

    pub fn bpe(merges: impl Into<PathBuf>) -> TokenizerSpec {
        let path: PathBuf = merges.into();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "vocab".to_string());
        TokenizerSpec {
            kind: TokenizerKind::Bpe,
            vocab_source: Some(path),
            id: format!("bpe:{stem}"),
        }
    }

    /// Parse a CLI-style spec string: `whitespace` or `bpe:<merges path>`.
    pub fn parse(s: &str) -> Result<TokenizerSpec, TokenxError> {
        if s == "whitespace" {
            Ok(TokenizerSpec::whitespace())
        } else if let Some(path) = s.strip_prefix("bpe:") {
            if path.is_empty() {
                return Err(TokenxError::InvalidSpec(
                    "bpe spec requires a merges path".to_string(),
                ));
            }
            Ok(TokenizerSpec::bpe(path))
        } else {
            Err(TokenxError::InvalidSpec(format!(
                "unknown tokenizer {s:?} (expected `whitespace` or `bpe:<path>`)"
            )))
        }
    }

    fn validate(&self) -> Result<(), TokenxError> {
        match (self.kind, &self.vocab_source) {
            (TokenizerKind::Bpe, None) => Err(TokenxError::InvalidSpec(
                "bpe kind requires vocab_source".to_string(),
            )),
            (TokenizerKind::Whitespace, Some(_)) => Err(TokenxError::InvalidSpec(
                "whitespace kind forbids vocab_source".to_string(),
            )),
            _ => Ok(()),
        }
    }
}

/// A loaded, immutable tokenizer. Counting is pure and thread-safe.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    id: String,
    backend: Backend,
}

#[derive(Debug, Clone)]
enum Backend {
    Whitespace,
    Bpe { ranks: HashMap<(String, String), usize> },
}

impl Tokenizer {
    pub fn load(spec: &TokenizerSpec) -> Result<Tokenizer, TokenxError> {
        spec.validate()?;
        let backend = match spec.kind {
            TokenizerKind::Whitespace => Backend::Whitespace,
            TokenizerKind::Bpe => {
                let path = spec.vocab_source.as_ref().expect("validated");
                let text =
                    std::fs::read_to_string(path).map_err(|e| TokenxError::VocabLoadFailure {
                        path: path.clone(),
                        reason: e.to_string(),
                    })?;
                let mut ranks = HashMap::new();
                for (i, line) in text.lines().enumerate() {
                    let line = line.trim_end();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let mut parts = line.split(' ');
                    match (parts.next(), parts.next(), parts.next()) {
                        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                            let rank = ranks.len();
                            ranks
                                .entry((a.to_string(), b.to_string()))
                                .or_insert(rank);
                        }
                        _ => {
                            return Err(TokenxError::VocabLoadFailure {
                                path: path.clone(),
                                reason: format!("line {}: expected `left right`", i + 1),
                            })
                        }
                    }
                }
                Backend::Bpe { ranks }
            }
        };
        Ok(Tokenizer {
            id: spec.id.clone(),
            backend,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> TokenizerKind {
        match self.backend {
            Backend::Whitespace => TokenizerKind::Whitespace,
            Backend::Bpe { .. } => TokenizerKind::Bpe,
        }
    }

    /// Deterministic token count; empty text counts 0.
    pub fn count(&self, text: &str) -> usize {
        match &self.backend {
            Backend::Whitespace => text.split_whitespace().count(),
            Backend::Bpe { ranks } => text
                .split_whitespace()
                .map(|word| bpe_symbol_count(word, ranks))
                .sum(),
        }
    }
}

fn bpe_symbol_count(word: &str, ranks: &HashMap<(String, String), usize>) -> usize {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    loop {
        let mut best: Option<(usize, usize)> = None; // (rank, position)
        for i in 0..symbols.len().saturating_sub(1) {
            if let Some(&rank) = ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) {
                if best.map_or(true, |(r, _)| rank < r) {
                    best = Some((rank, i));
                }
            }
        }
        let Some((rank, _)) = best else { break };
        // merge every occurrence of the chosen pair, left to right
        let (a, b) = ranks
            .iter()
            .find(|(_, &r)| r == rank)
            .map(|((a, b), _)| (a.clone(), b.clone()))
            .expect("rank came from the map");
        let mut merged = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                merged.push(format!("{a}{b}"));
                i += 2;
            } else {
                merged.push(symbols[i].clone());
                i += 1;
            }
        }
        symbols = merged;
    }
    symbols.len()
}

/// Convenience wrapper over [`Tokenizer::count`] for one-off measurements.
pub fn count_tokens(text: &str, tok: &Tokenizer) -> usize {
    tok.count(text)
}

/// Target token-length levels for bucketed dataset construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucketSpec {
    /// Target token counts, strictly increasing.
    pub levels: Vec<u64>,
    /// Records per level.
    pub per_level: usize,
    /// Window half-width as a fraction of the level.
    pub tolerance: f64,
}

/// Default window half-width when none is given.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

impl LengthBucketSpec {
    pub fn new(levels: Vec<u64>, per_level: usize, tolerance: f64) -> Result<Self, TokenxError> {
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TokenxError::InvalidSpec(
                "levels must be non-empty and strictly increasing".to_string(),
            ));
        }
        if per_level == 0 {
            return Err(TokenxError::InvalidSpec("per_level must be >= 1".to_string()));
        }
        if !(tolerance > 0.0 && tolerance < 1.0) {
            return Err(TokenxError::InvalidSpec(
                "tolerance must lie in (0, 1)".to_string(),
            ));
        }
        Ok(LengthBucketSpec {
            levels,
            per_level,
            tolerance,
        })
    }

    /// The four-level, 300-sample configuration used for scaling runs.
    pub fn scaling_default() -> Self {
        LengthBucketSpec::new(vec![1500, 3000, 6000, 12000], 300, DEFAULT_TOLERANCE)
            .expect("default spec is valid")
    }
}

/// Window membership rule shared by bucketing, pair selection and manifest
/// checks: a count `c` is within the window of `target` iff
/// `|c - target| <= target * tolerance`, evaluated in f64. Both endpoints
/// are inclusive.
pub fn within_window(count: usize, target: u64, tolerance: f64) -> bool {
    let c = count as f64;
    let t = target as f64;
    (c - t).abs() <= t * tolerance
}

/// Group corpus records into length levels.
///
/// Levels are processed in ascending order; for each, the records whose
/// `thought` token count falls in the level window (and which no earlier
/// level claimed) form the eligible set, from which `per_level` records are
/// chosen by a seeded shuffle (stream = level index, see
/// [`crate::rng::derive_seed`]). No record appears in two levels.
pub fn bucket_by_length(
    corpus: &Corpus,
    spec: &LengthBucketSpec,
    tok: &Tokenizer,
    seed: u64,
) -> Result<BTreeMap<u64, Vec<SourceProblem>>, TokenxError> {
    if corpus.is_empty() {
        return Err(TokenxError::EmptyCorpus);
    }
    let counts: Vec<usize> = corpus
        .records()
        .iter()
        .map(|r| tok.count(&r.thought))
        .collect();
    let mut claimed = vec![false; corpus.len()];
    let mut out = BTreeMap::new();
    for (level_idx, &level) in spec.levels.iter().enumerate() {
        let eligible: Vec<usize> = (0..corpus.len())
            .filter(|&i| !claimed[i] && within_window(counts[i], level, spec.tolerance))
            .collect();
        if eligible.len() < spec.per_level {
            return Err(TokenxError::InsufficientEligible {
                level,
                found: eligible.len(),
                required: spec.per_level,
            });
        }
        let level_seed = derive_seed(seed, 2000 + level_idx as u64);
        let picks = sample_indices(eligible.len(), spec.per_level, level_seed);
        let mut chosen = Vec::with_capacity(spec.per_level);
        for p in picks {
            let record_idx = eligible[p];
            claimed[record_idx] = true;
            chosen.push(corpus.records()[record_idx].clone());
        }
        out.insert(level, chosen);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use std::collections::BTreeSet;

    fn tok_ws() -> Tokenizer {
        Tokenizer::load(&TokenizerSpec::whitespace()).unwrap()
    }

    fn problem_with_thought(id: &str, words: usize) -> SourceProblem {
        SourceProblem {
            id: id.to_string(),
            question: format!("q {id}"),
            thought: "w ".repeat(words).trim_end().to_string(),
            solution: format!("s {id}"),
            source: "test".to_string(),
            domain: Domain::Math,
            extra: Default::default(),
        }
    }

    #[test]
    fn empty_text_counts_zero() {
        assert_eq!(tok_ws().count(""), 0);
    }

    #[test]
    fn whitespace_splits_words() {
        assert_eq!(tok_ws().count("a b c"), 3);
        assert_eq!(tok_ws().count("  a\t b \n c  "), 3);
    }

    #[test]
    fn paragraph_matches_split_oracle() {
        // 200-word paragraph; oracle is an independent split-and-count.
        let words: Vec<String> = (0..200).map(|i| format!("word{i}")).collect();
        let paragraph = words.join(" ");
        let oracle = paragraph.split_whitespace().count();
        assert_eq!(tok_ws().count(&paragraph), oracle);
        assert_eq!(oracle, 200);
    }

    #[test]
    fn bpe_merges_reduce_counts() {
        let dir = tempfile::tempdir().unwrap();
        let merges = dir.path().join("merges.txt");
        std::fs::write(&merges, "# test merges\na b\nab c\n").unwrap();
        let tok = Tokenizer::load(&TokenizerSpec::bpe(&merges)).unwrap();
        // "abc" -> [a,b,c] -> [ab,c] -> [abc]
        assert_eq!(tok.count("abc"), 1);
        // "abd": a+b merge applies, d stays
        assert_eq!(tok.count("abd"), 2);
        // no applicable merges
        assert_eq!(tok.count("xyz"), 3);
        // whitespace still separates words
        assert_eq!(tok.count("abc abc"), 2);
    }

    #[test]
    fn bpe_missing_file_is_vocab_load_failure() {
        let spec = TokenizerSpec::bpe("/nonexistent/merges.txt");
        match Tokenizer::load(&spec).unwrap_err() {
            TokenxError::VocabLoadFailure { .. } => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bpe_malformed_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let merges = dir.path().join("merges.txt");
        std::fs::write(&merges, "a b c\n").unwrap();
        assert!(Tokenizer::load(&TokenizerSpec::bpe(&merges)).is_err());
    }

    #[test]
    fn spec_kind_invariants_enforced() {
        let bad = TokenizerSpec {
            kind: TokenizerKind::Bpe,
            vocab_source: None,
            id: "bpe:none".to_string(),
        };
        assert!(Tokenizer::load(&bad).is_err());
        let bad = TokenizerSpec {
            kind: TokenizerKind::Whitespace,
            vocab_source: Some("x".into()),
            id: "whitespace".to_string(),
        };
        assert!(Tokenizer::load(&bad).is_err());
    }

    #[test]
    fn scaling_default_is_paper_configuration() {
        let spec = LengthBucketSpec::scaling_default();
        assert_eq!(spec.levels, vec![1500, 3000, 6000, 12000]);
        assert_eq!(spec.per_level, 300);
        assert_eq!(spec.tolerance, 0.10);
    }

    #[test]
    fn window_is_inclusive_at_decimal_endpoints() {
        assert!(within_window(1350, 1500, 0.10));
        assert!(within_window(1650, 1500, 0.10));
        assert!(!within_window(1349, 1500, 0.10));
        assert!(!within_window(1651, 1500, 0.10));
        assert!(within_window(28800, 32000, 0.10));
        assert!(within_window(35200, 32000, 0.10));
    }

    #[test]
    fn all_eligible_corpus_fully_returned() {
        let corpus = Corpus::from_records(
            (0..8)
                .map(|i| problem_with_thought(&format!("p{i}"), 1500))
                .collect(),
        )
        .unwrap();
        let spec = LengthBucketSpec::new(vec![1500], 8, 0.1).unwrap();
        let buckets = bucket_by_length(&corpus, &spec, &tok_ws(), 1).unwrap();
        assert_eq!(buckets[&1500].len(), 8);
        let ids: BTreeSet<&str> = buckets[&1500].iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn bucket_membership_matches_window_scan_oracle() {
        let lengths = [140, 150, 160, 170, 290, 300, 310, 340, 600, 660, 900];
        let corpus = Corpus::from_records(
            lengths
                .iter()
                .enumerate()
                .map(|(i, &n)| problem_with_thought(&format!("p{i}"), n))
                .collect(),
        )
        .unwrap();
        let spec = LengthBucketSpec::new(vec![150, 300, 600], 2, 0.1).unwrap();
        let tok = tok_ws();
        let buckets = bucket_by_length(&corpus, &spec, &tok, 9).unwrap();

        // Brute-force eligibility oracle: exhaustive window scan.
        for (&level, members) in &buckets {
            assert_eq!(members.len(), 2);
            for m in members {
                let c = tok.count(&m.thought);
                assert!(
                    (c as f64 - level as f64).abs() <= level as f64 * 0.1,
                    "record {} count {} outside level {}",
                    m.id,
                    c,
                    level
                );
            }
        }
        // Disjointness across levels.
        let mut seen = BTreeSet::new();
        for members in buckets.values() {
            for m in members {
                assert!(seen.insert(m.id.clone()), "{} in two levels", m.id);
            }
        }
    }

    #[test]
    fn insufficient_eligible_reports_level() {
        let corpus = Corpus::from_records(vec![problem_with_thought("a", 100)]).unwrap();
        let spec = LengthBucketSpec::new(vec![1000], 1, 0.1).unwrap();
        match bucket_by_length(&corpus, &spec, &tok_ws(), 0).unwrap_err() {
            TokenxError::InsufficientEligible {
                level,
                found,
                required,
            } => {
                assert_eq!((level, found, required), (1000, 0, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
