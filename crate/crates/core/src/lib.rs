//! longweave: synthesize long chain-of-thought training datasets by weaving
//! problem pairs with templated connectives, build length-bucketed datasets,
//! analyze reasoning-trace statistics, and score benchmark outputs.
//!
//! The pipeline, end to end:
//!
//! 1. [`corpus`] ingests line-delimited JSON problem corpora.
//! 2. [`tokenx`] measures reasoning lengths under a declared tokenizer and
//!    groups records into length buckets.
//! 3. [`weave`] renders single and pair-woven samples from byte-exact chat
//!    templates with a diversified connective bank.
//! 4. [`compose`] builds whole datasets from declarative mixture plans,
//!    writes training files with manifests, and emits a fine-tuning config
//!    for an external trainer.
//! 5. [`promptforge`] constructs knowledge-point extraction and composite
//!    synthesis prompts and drives them through a mockable generation
//!    client.
//! 6. [`evalharness`] extracts and normalizes final answers and scores
//!    pass@1 over repeated trials.
//! 7. [`lenstats`] reports trace statistics and fits the length-accuracy
//!    scaling trend.
//!
//! Every random decision flows from explicit seeds through the documented
//! generator in [`rng`], so builds are reproducible bit for bit.

pub mod corpus;
pub mod compose;
pub mod evalharness;
pub mod lenstats;
pub mod promptforge;
pub mod rng;
pub mod tokenx;
pub mod weave;

pub use corpus::{load_corpus, write_corpus, Corpus, CorpusError, Domain, RecordFormat, SourceProblem};
pub use compose::{
    build_dataset, build_length_levels, emit_finetune_config, read_training_file,
    write_training_file, ComposeError, Dataset, DatasetManifest, FinetuneConfig, LegKind,
    LegStats, LedgerEntry, MixtureLeg, MixturePlan,
};
pub use evalharness::{
    extract_answer, load_eval_items, normalize_answer, render_text_report, score, Benchmark,
    EvalError, EvalItem, EvalOutcome, ItemVerdict,
};
pub use lenstats::{
    default_transition_words, emit_plot_data, fit_scaling, trace_stats, ScalingFit, StatsError,
    TraceStatsReport, DEFAULT_TOP_K,
};
pub use promptforge::{
    build_composite_prompt, build_extraction_prompt, parse_knowledge_points, prompt_hash,
    run_generation, run_generation_batch, synthesize_composite, CompositeKind, EndpointConfig,
    ForgeError, GenerationClient, HttpGenerationClient, KnowledgePointSet, MockGenerationClient,
    RetryPolicy,
};
pub use tokenx::{
    bucket_by_length, count_tokens, within_window, LengthBucketSpec, Tokenizer, TokenizerKind,
    TokenizerSpec, TokenxError, DEFAULT_TOLERANCE,
};
pub use weave::{
    render_pair, render_pair_with_choice, render_single, select_pair_for_target, ConnectiveBank,
    ConnectiveChoice, WeaveError, WovenSample,
};
