//! Build complete datasets from declarative mixture plans.
//!
//! A [`MixturePlan`] names legs (pair-woven or single), per-leg counts,
//! target lengths and source corpora; [`build_dataset`] turns a plan plus
//! loaded corpora into samples and a [`DatasetManifest`] deterministically:
//! equal `(plan, corpora, toolkit version)` reproduce byte-identical data
//! files and manifests, except for the manifest's `built_at` timestamp.
//!
//! Legs build independently (leg `k` draws from the stream
//! `derive_seed(plan.seed, 1000 + k)`); a final merge step enforces that no
//! constituent problem id appears in two samples of one build and fails the
//! build on collision. Sample ordinals are global across the dataset and
//! drive connective choice.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{manifest_path, Corpus, Domain, SourceProblem};
use crate::rng::{derive_seed, sample_indices, SplitMix64};
use crate::tokenx::{
    bucket_by_length, LengthBucketSpec, Tokenizer, TokenizerSpec, TokenxError, DEFAULT_TOLERANCE,
};
use crate::weave::{
    render_pair_with_choice, render_single, ConnectiveBank, ConnectiveChoice, PairLenMeasure,
    WeaveError, WovenSample,
};

#[derive(Debug, thiserror::Error)]
pub enum ComposeError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("leg {leg}: unknown source corpus {key:?}")]
    UnknownSource { leg: String, key: String },
    #[error("leg {leg}: needs {requested} records, source has {available}")]
    NotEnoughRecords {
        leg: String,
        requested: usize,
        available: usize,
    },
    #[error("leg {leg}: {source}")]
    Weave {
        leg: String,
        #[source]
        source: WeaveError,
    },
    #[error(transparent)]
    Tokenizer(#[from] TokenxError),
    #[error("constituent {id:?} appears in two samples within one build")]
    ConstituentCollision { id: String },
    #[error("io failure on {path}: {reason}")]
    IoFailure { path: PathBuf, reason: String },
    #[error("training file {path} line {line}: {reason}")]
    BadTrainingFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegKind {
    Pair,
    Single,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// One leg of a mixture plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureLeg {
    pub name: String,
    pub kind: LegKind,
    pub count: usize,
    /// Target rendered-output token length; required for pair legs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_len: Option<u64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Key into the corpora map passed to [`build_dataset`].
    pub source: String,
    /// Optional domain filter applied to the source corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
}

/// Declarative recipe from which a dataset is built deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub name: String,
    pub seed: u64,
    /// Tokenizer spec string: `whitespace` or `bpe:<merges path>`.
    pub tokenizer: String,
    #[serde(default)]
    pub legs: Vec<MixtureLeg>,
}

impl MixturePlan {
    /// The default 1000-sample recipe: 800 woven pairs at 32k tokens from
    /// the `openthoughts` corpus (math domain) plus 200 singles from `s1`.
    pub fn long1k(seed: u64) -> MixturePlan {
        MixturePlan {
            name: "long1k".to_string(),
            seed,
            tokenizer: "whitespace".to_string(),
            legs: vec![
                MixtureLeg {
                    name: "woven".to_string(),
                    kind: LegKind::Pair,
                    count: 800,
                    target_len: Some(32_000),
                    tolerance: DEFAULT_TOLERANCE,
                    source: "openthoughts".to_string(),
                    domain: Some(Domain::Math),
                },
                MixtureLeg {
                    name: "singles".to_string(),
                    kind: LegKind::Single,
                    count: 200,
                    target_len: None,
                    tolerance: DEFAULT_TOLERANCE,
                    source: "s1".to_string(),
                    domain: Some(Domain::Math),
                },
            ],
        }
    }

    pub fn total_count(&self) -> usize {
        self.legs.iter().map(|l| l.count).sum()
    }

    pub fn validate(&self) -> Result<(), ComposeError> {
        let mut names = BTreeSet::new();
        for leg in &self.legs {
            if leg.count == 0 {
                return Err(ComposeError::InvalidPlan(format!(
                    "leg {} has count 0",
                    leg.name
                )));
            }
            if leg.kind == LegKind::Pair && leg.target_len.is_none() {
                return Err(ComposeError::InvalidPlan(format!(
                    "pair leg {} requires target_len",
                    leg.name
                )));
            }
            if !(leg.tolerance > 0.0 && leg.tolerance < 1.0) {
                return Err(ComposeError::InvalidPlan(format!(
                    "leg {} tolerance must lie in (0, 1)",
                    leg.name
                )));
            }
            if !names.insert(leg.name.as_str()) {
                return Err(ComposeError::InvalidPlan(format!(
                    "duplicate leg name {}",
                    leg.name
                )));
            }
        }
        TokenizerSpec::parse(&self.tokenizer)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<MixturePlan, ComposeError> {
        toml::from_str(text).map_err(|e| ComposeError::InvalidPlan(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_file(path: &Path) -> Result<MixturePlan, ComposeError> {
        let text = fs::read_to_string(path).map_err(|e| ComposeError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        MixturePlan::from_toml_str(&text)
    }
}

/// Achieved token-length statistics for one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegStats {
    pub name: String,
    pub count: usize,
    pub min_len: usize,
    pub mean_len: f64,
    pub max_len: usize,
}

/// One manifest row per sample: which problems it wove and how long it came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub index: usize,
    pub leg: String,
    pub parts: Vec<String>,
    pub token_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectives: Option<ConnectiveChoice>,
}

/// Build provenance for a dataset. `built_at` is the only
/// non-deterministic field and is excluded from byte-equality checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub toolkit_version: String,
    pub built_at: String,
    pub tokenizer_id: String,
    pub plan: MixturePlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u64>,
    pub leg_stats: Vec<LegStats>,
    pub ledger: Vec<LedgerEntry>,
}

/// A built dataset: rendered samples plus their manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<WovenSample>,
    pub manifest: DatasetManifest,
}

fn leg_stats(name: &str, lens: &[usize]) -> LegStats {
    let count = lens.len();
    let min_len = lens.iter().copied().min().unwrap_or(0);
    let max_len = lens.iter().copied().max().unwrap_or(0);
    let mean_len = if count == 0 {
        0.0
    } else {
        lens.iter().sum::<usize>() as f64 / count as f64
    };
    LegStats {
        name: name.to_string(),
        count,
        min_len,
        mean_len,
        max_len,
    }
}

fn filtered_pool<'a>(corpus: &'a Corpus, domain: Option<Domain>) -> Cow<'a, [SourceProblem]> {
    match domain {
        None => Cow::Borrowed(corpus.records()),
        Some(d) if corpus.records().iter().all(|r| r.domain == d) => {
            Cow::Borrowed(corpus.records())
        }
        Some(d) => Cow::Owned(
            corpus
                .records()
                .iter()
                .filter(|r| r.domain == d)
                .cloned()
                .collect(),
        ),
    }
}

/// Build a dataset from a plan and its source corpora.
pub fn build_dataset(
    plan: &MixturePlan,
    corpora: &BTreeMap<String, Corpus>,
) -> Result<Dataset, ComposeError> {
    plan.validate()?;
    let tok_spec = TokenizerSpec::parse(&plan.tokenizer)?;
    let tok = Tokenizer::load(&tok_spec)?;
    let bank = ConnectiveBank::new(plan.seed);

    let mut samples: Vec<WovenSample> = Vec::with_capacity(plan.total_count());
    let mut ledger: Vec<LedgerEntry> = Vec::with_capacity(plan.total_count());
    let mut stats: Vec<LegStats> = Vec::with_capacity(plan.legs.len());
    let mut ordinal_base = 0u64;

    for (leg_idx, leg) in plan.legs.iter().enumerate() {
        let corpus = corpora
            .get(&leg.source)
            .ok_or_else(|| ComposeError::UnknownSource {
                leg: leg.name.clone(),
                key: leg.source.clone(),
            })?;
        let pool = filtered_pool(corpus, leg.domain);
        let leg_seed = derive_seed(plan.seed, 1000 + leg_idx as u64);
        let mut lens = Vec::with_capacity(leg.count);

        match leg.kind {
            LegKind::Single => {
                if leg.count > pool.len() {
                    return Err(ComposeError::NotEnoughRecords {
                        leg: leg.name.clone(),
                        requested: leg.count,
                        available: pool.len(),
                    });
                }
                for idx in sample_indices(pool.len(), leg.count, leg_seed) {
                    let sample = render_single(&pool[idx], &bank, &tok);
                    lens.push(sample.token_len);
                    ledger.push(LedgerEntry {
                        index: samples.len(),
                        leg: leg.name.clone(),
                        parts: sample.parts.clone(),
                        token_len: sample.token_len,
                        connectives: None,
                    });
                    samples.push(sample);
                }
            }
            LegKind::Pair => {
                let target = leg.target_len.expect("validated");
                if leg.count * 2 > pool.len() {
                    return Err(ComposeError::NotEnoughRecords {
                        leg: leg.name.clone(),
                        requested: leg.count * 2,
                        available: pool.len(),
                    });
                }
                let measure = PairLenMeasure::new(&pool, &tok);
                let mut remaining: Vec<usize> = (0..pool.len()).collect();
                let mut rng = SplitMix64::new(leg_seed);
                for s in 0..leg.count {
                    let ordinal = ordinal_base + s as u64;
                    let choice = bank.choice_for(ordinal);
                    let (a_pos, b_pos) = crate::weave::select_pair_positions(
                        &pool,
                        &remaining,
                        &measure,
                        &bank,
                        &choice,
                        target,
                        leg.tolerance,
                        &tok,
                        &mut rng,
                    )
                    .map_err(|source| ComposeError::Weave {
                        leg: leg.name.clone(),
                        source,
                    })?;
                    let (first, second) = (remaining[a_pos], remaining[b_pos]);
                    let sample =
                        render_pair_with_choice(&pool[first], &pool[second], &bank, choice, &tok)
                            .map_err(|source| ComposeError::Weave {
                                leg: leg.name.clone(),
                                source,
                            })?;
                    // remove the higher position first so the lower stays valid
                    let (hi, lo) = if a_pos > b_pos {
                        (a_pos, b_pos)
                    } else {
                        (b_pos, a_pos)
                    };
                    remaining.swap_remove(hi);
                    remaining.swap_remove(lo);
                    lens.push(sample.token_len);
                    ledger.push(LedgerEntry {
                        index: samples.len(),
                        leg: leg.name.clone(),
                        parts: sample.parts.clone(),
                        token_len: sample.token_len,
                        connectives: sample.connective_choice,
                    });
                    samples.push(sample);
                }
            }
        }
        stats.push(leg_stats(&leg.name, &lens));
        ordinal_base += leg.count as u64;
    }

    // merge step: constituent uniqueness across the whole build
    let mut used = BTreeSet::new();
    for sample in &samples {
        for id in &sample.parts {
            if !used.insert(id.clone()) {
                return Err(ComposeError::ConstituentCollision { id: id.clone() });
            }
        }
    }

    Ok(Dataset {
        samples,
        manifest: DatasetManifest {
            name: plan.name.clone(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            built_at: chrono::Utc::now().to_rfc3339(),
            tokenizer_id: tok.id().to_string(),
            plan: plan.clone(),
            level: None,
            leg_stats: stats,
            ledger,
        },
    })
}

/// Build one single-sample dataset per length level (see
/// [`bucket_by_length`] for the grouping rule). Each manifest records its
/// level and echoes a synthesized one-leg plan.
pub fn build_length_levels(
    spec: &LengthBucketSpec,
    corpus: &Corpus,
    tok_spec: &TokenizerSpec,
    seed: u64,
) -> Result<BTreeMap<u64, Dataset>, ComposeError> {
    let tok = Tokenizer::load(tok_spec)?;
    let bank = ConnectiveBank::new(seed);
    let buckets = bucket_by_length(corpus, spec, &tok, seed)?;
    let mut out = BTreeMap::new();
    for (&level, members) in &buckets {
        let plan = MixturePlan {
            name: format!("level_{level}"),
            seed,
            tokenizer: tok_spec.id.clone(),
            legs: vec![MixtureLeg {
                name: "bucketed".to_string(),
                kind: LegKind::Single,
                count: members.len(),
                target_len: Some(level),
                tolerance: spec.tolerance,
                source: "corpus".to_string(),
                domain: None,
            }],
        };
        let mut samples = Vec::with_capacity(members.len());
        let mut ledger = Vec::with_capacity(members.len());
        let mut lens = Vec::with_capacity(members.len());
        for member in members {
            let sample = render_single(member, &bank, &tok);
            lens.push(sample.token_len);
            ledger.push(LedgerEntry {
                index: samples.len(),
                leg: "bucketed".to_string(),
                parts: sample.parts.clone(),
                token_len: sample.token_len,
                connectives: None,
            });
            samples.push(sample);
        }
        let stats = leg_stats("bucketed", &lens);
        out.insert(
            level,
            Dataset {
                samples,
                manifest: DatasetManifest {
                    name: plan.name.clone(),
                    toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
                    built_at: chrono::Utc::now().to_rfc3339(),
                    tokenizer_id: tok.id().to_string(),
                    plan,
                    level: Some(level),
                    leg_stats: vec![stats],
                    ledger,
                },
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingLine {
    text: String,
}

/// Write a dataset as a training file plus manifest sidecar; returns the
/// manifest path.
///
/// The data file holds one JSON object per line with a single `text` key
/// whose value is the full chat-framed record
/// (`<|im_start|>system\n` + system + `<|im_end|>\n`, then the user block,
/// then the output block). Provenance lives in the manifest; together the
/// two files round-trip the dataset exactly.
pub fn write_training_file(dataset: &Dataset, path: &Path) -> Result<PathBuf, ComposeError> {
    let io_err = |e: std::io::Error| ComposeError::IoFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for sample in &dataset.samples {
        let line = serde_json::to_string(&TrainingLine {
            text: sample.to_chat_text(),
        })
        .expect("training line serializes");
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)?;

    let manifest = manifest_path(path);
    let body =
        serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&manifest, body).map_err(|e| ComposeError::IoFailure {
        path: manifest.clone(),
        reason: e.to_string(),
    })?;
    Ok(manifest)
}

/// Read back a dataset written by [`write_training_file`].
pub fn read_training_file(path: &Path) -> Result<Dataset, ComposeError> {
    let manifest_file = manifest_path(path);
    let manifest: DatasetManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_file).map_err(|e| ComposeError::IoFailure {
            path: manifest_file.clone(),
            reason: e.to_string(),
        })?,
    )
    .map_err(|e| ComposeError::IoFailure {
        path: manifest_file.clone(),
        reason: e.to_string(),
    })?;

    let file = fs::File::open(path).map_err(|e| ComposeError::IoFailure {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ComposeError::IoFailure {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrainingLine =
            serde_json::from_str(&line).map_err(|e| ComposeError::BadTrainingFile {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        let (system, user, output) = WovenSample::sections_from_chat_text(&parsed.text)
            .ok_or_else(|| ComposeError::BadTrainingFile {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: "chat framing not recognized".to_string(),
            })?;
        let entry =
            manifest
                .ledger
                .get(idx)
                .ok_or_else(|| ComposeError::BadTrainingFile {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: "no ledger entry for line".to_string(),
                })?;
        samples.push(WovenSample {
            system,
            user,
            output,
            token_len: entry.token_len,
            parts: entry.parts.clone(),
            connective_choice: entry.connectives,
        });
    }
    if samples.len() != manifest.ledger.len() {
        return Err(ComposeError::BadTrainingFile {
            path: path.to_path_buf(),
            line: samples.len(),
            reason: format!(
                "data file has {} records, ledger has {}",
                samples.len(),
                manifest.ledger.len()
            ),
        });
    }
    Ok(Dataset { samples, manifest })
}

/// Declarative fine-tuning run description for an external trainer.
///
/// Throughout this toolkit "32k" means 32000 tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub base_model: String,
    pub epochs: u32,
    pub per_device_batch_size: u32,
    pub learning_rate: f64,
    pub lr_scheduler: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub max_output_tokens: u64,
    pub dataset_path: String,
    pub tokenizer_id: String,
}

impl FinetuneConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<FinetuneConfig, ComposeError> {
        toml::from_str(text).map_err(|e| ComposeError::InvalidPlan(e.to_string()))
    }
}

/// Emit the default training configuration for a built dataset:
/// 3 epochs, per-device batch 2, learning rate 2e-4, cosine scheduler,
/// adapter rank 16 / alpha 32, 32k-token maximum output length.
pub fn emit_finetune_config(manifest: &DatasetManifest, dataset_path: &str) -> FinetuneConfig {
    FinetuneConfig {
        base_model: "Qwen2.5-32B-Instruct".to_string(),
        epochs: 3,
        per_device_batch_size: 2,
        learning_rate: 2e-4,
        lr_scheduler: "cosine".to_string(),
        lora_rank: 16,
        lora_alpha: 32,
        max_output_tokens: 32_000,
        dataset_path: dataset_path.to_string(),
        tokenizer_id: manifest.tokenizer_id.clone(),
    }
}
