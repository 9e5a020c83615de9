//! Prompt construction for knowledge-point extraction and composite problem
//! synthesis, plus a mockable text-generation client to drive them.
//!
//! The prompt templates live as versioned files under `templates/` and are
//! embedded at compile time. Prompt builders are pure: equal inputs produce
//! byte-equal prompts. Generation goes through the [`GenerationClient`]
//! trait; the shipped implementations are an HTTP client for a live
//! endpoint and a deterministic in-memory mock keyed by prompt hash, so the
//! whole synthesis pipeline runs offline end to end.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SourceProblem;

/// Knowledge points used per synthesized question.
pub const DEFAULT_KNOWLEDGE_POINTS: usize = 4;

pub const EXTRACTION_TEMPLATE: &str = include_str!("../templates/extract_knowledge_points.txt");
pub const COMPOSITE_LONG_TEMPLATE: &str = include_str!("../templates/composite_long.txt");
pub const COMPOSITE_DIFFICULT_TEMPLATE: &str =
    include_str!("../templates/composite_difficult.txt");

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("expected {expected} knowledge points, got {got}")]
    WrongPointCount { expected: usize, got: usize },
    #[error("knowledge point set must be non-empty")]
    EmptyPointSet,
    #[error("generation timed out after {0:?}")]
    Timeout(Duration),
    #[error("remote endpoint returned status {0}")]
    RemoteFailure(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("generation failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("no scripted response for prompt hash {0}")]
    Unscripted(String),
}

/// Atomic concept statements extracted from source problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePointSet {
    pub points: Vec<String>,
    pub origin_ids: Vec<String>,
}

impl KnowledgePointSet {
    pub fn new(points: Vec<String>, origin_ids: Vec<String>) -> Result<Self, ForgeError> {
        if points.is_empty() {
            return Err(ForgeError::EmptyPointSet);
        }
        Ok(KnowledgePointSet { points, origin_ids })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositeKind {
    /// Several numbered sub-questions, each relatively easy.
    Long,
    /// One single integrated problem.
    Difficult,
}

/// Deterministic prompt asking for the knowledge points of one problem.
pub fn build_extraction_prompt(problem: &SourceProblem) -> String {
    EXTRACTION_TEMPLATE.replace("{problem}", &problem.question)
}

fn points_block(points: &KnowledgePointSet) -> String {
    points
        .points
        .iter()
        .map(|p| format!("- {p}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Composite-synthesis prompt over exactly [`DEFAULT_KNOWLEDGE_POINTS`] points.
pub fn build_composite_prompt(
    points: &KnowledgePointSet,
    kind: CompositeKind,
) -> Result<String, ForgeError> {
    build_composite_prompt_n(points, kind, DEFAULT_KNOWLEDGE_POINTS)
}

/// Composite-synthesis prompt with a configurable required point count.
pub fn build_composite_prompt_n(
    points: &KnowledgePointSet,
    kind: CompositeKind,
    required: usize,
) -> Result<String, ForgeError> {
    if points.points.len() != required {
        return Err(ForgeError::WrongPointCount {
            expected: required,
            got: points.points.len(),
        });
    }
    let template = match kind {
        CompositeKind::Long => COMPOSITE_LONG_TEMPLATE,
        CompositeKind::Difficult => COMPOSITE_DIFFICULT_TEMPLATE,
    };
    Ok(template.replace("{points}", &points_block(points)))
}

/// Parse an extraction response: lines prefixed `- ` (or `* ` / `1.`-style
/// numbering) become points; blank lines are skipped.
pub fn parse_knowledge_points(
    response: &str,
    origin_ids: Vec<String>,
) -> Result<KnowledgePointSet, ForgeError> {
    let points: Vec<String> = response
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            if line.is_empty() {
                return None;
            }
            let stripped = line
                .strip_prefix("- ")
                .or_else(|| line.strip_prefix("* "))
                .or_else(|| {
                    line.split_once(". ")
                        .filter(|(n, _)| n.chars().all(|c| c.is_ascii_digit()))
                        .map(|(_, rest)| rest)
                })
                .unwrap_or(line);
            Some(stripped.trim().to_string())
        })
        .filter(|p| !p.is_empty())
        .collect();
    KnowledgePointSet::new(points, origin_ids)
}

/// Hex SHA-256 of a prompt; the key for mock scripting and call logging.
pub fn prompt_hash(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hex_encode(&hasher.finalize())
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Retry schedule for generation calls: `max_retries` retries after the
/// first attempt, sleeping `backoff_base * 2^attempt` between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
        }
    }
}

/// A text-generation backend. `generate_once` is a single attempt;
/// [`run_generation`] adds the retry loop and logging.
pub trait GenerationClient: Send + Sync {
    fn generate_once(&self, prompt: &str) -> Result<String, ForgeError>;

    fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }
}

/// Run one generation with retries, exponential backoff and hash logging.
pub fn run_generation(client: &dyn GenerationClient, prompt: &str) -> Result<String, ForgeError> {
    let policy = client.retry_policy();
    let hash = prompt_hash(prompt);
    let attempts = policy.max_retries + 1;
    let mut last_error = String::new();
    for attempt in 0..attempts {
        log::info!("generation call prompt_hash={hash} attempt={}", attempt + 1);
        match client.generate_once(prompt) {
            Ok(text) => {
                log::info!("generation ok prompt_hash={hash}");
                return Ok(text);
            }
            Err(err) => {
                log::warn!("generation failed prompt_hash={hash}: {err}");
                last_error = err.to_string();
                if attempt + 1 < attempts {
                    let backoff = policy.backoff_base * 2u32.saturating_pow(attempt);
                    std::thread::sleep(backoff);
                }
            }
        }
    }
    Err(ForgeError::RetriesExhausted {
        attempts,
        last: last_error,
    })
}

/// Run a batch of prompts with at most `max_in_flight` concurrent calls.
/// Results are returned in prompt order.
pub fn run_generation_batch(
    client: &dyn GenerationClient,
    prompts: &[String],
    max_in_flight: usize,
) -> Vec<Result<String, ForgeError>> {
    assert!(max_in_flight > 0, "max_in_flight must be positive");
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<String, ForgeError>>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..max_in_flight.min(prompts.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= prompts.len() {
                    break;
                }
                let outcome = run_generation(client, &prompts[i]);
                *results[i].lock().unwrap() = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|cell| cell.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

/// Wire request for the live endpoint (`POST {base_url}/v1/generate`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
}

/// Wire response from the live endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

/// Endpoint configuration for the live client. Credentials are referenced
/// by environment-variable name, never stored.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_tokens: u32,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> EndpointConfig {
        EndpointConfig {
            base_url: base_url.into(),
            api_key_env: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_tokens: 4096,
        }
    }
}

/// Live HTTP generation client.
pub struct HttpGenerationClient {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl HttpGenerationClient {
    pub fn new(config: EndpointConfig) -> Result<HttpGenerationClient, ForgeError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ForgeError::Transport(e.to_string()))?;
        Ok(HttpGenerationClient { config, http })
    }

    fn bearer_token(&self) -> Option<String> {
        self.config
            .api_key_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok())
    }
}

impl GenerationClient for HttpGenerationClient {
    fn generate_once(&self, prompt: &str) -> Result<String, ForgeError> {
        let url = format!("{}/v1/generate", self.config.base_url.trim_end_matches('/'));
        let request = GenerationRequest {
            prompt: prompt.to_string(),
            max_tokens: self.config.max_tokens,
        };
        let mut builder = self.http.post(&url).json(&request);
        if let Some(token) = self.bearer_token() {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                ForgeError::Timeout(self.config.timeout)
            } else {
                ForgeError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(ForgeError::RemoteFailure(status.as_u16()));
        }
        let parsed: GenerationResponse = response
            .json()
            .map_err(|e| ForgeError::Transport(e.to_string()))?;
        Ok(parsed.text)
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.config.retry
    }
}

type Script = VecDeque<Result<String, String>>;

/// Deterministic offline client. Responses are scripted per prompt hash;
/// an optional default answers unscripted prompts. Tests never touch the
/// network.
#[derive(Default)]
pub struct MockGenerationClient {
    scripts: Mutex<HashMap<String, Script>>,
    default_response: Option<String>,
    policy: RetryPolicy,
}

impl MockGenerationClient {
    pub fn new() -> MockGenerationClient {
        MockGenerationClient {
            scripts: Mutex::new(HashMap::new()),
            default_response: None,
            policy: RetryPolicy {
                max_retries: 2,
                backoff_base: Duration::from_millis(0),
            },
        }
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Queue a successful response for a prompt.
    pub fn script_ok(&self, prompt: &str, response: impl Into<String>) {
        self.scripts
            .lock()
            .unwrap()
            .entry(prompt_hash(prompt))
            .or_default()
            .push_back(Ok(response.into()));
    }

    /// Queue a failure for a prompt.
    pub fn script_failure(&self, prompt: &str, message: impl Into<String>) {
        self.scripts
            .lock()
            .unwrap()
            .entry(prompt_hash(prompt))
            .or_default()
            .push_back(Err(message.into()));
    }
}

impl GenerationClient for MockGenerationClient {
    fn generate_once(&self, prompt: &str) -> Result<String, ForgeError> {
        let hash = prompt_hash(prompt);
        let mut scripts = self.scripts.lock().unwrap();
        if let Some(queue) = scripts.get_mut(&hash) {
            if let Some(outcome) = queue.pop_front() {
                return outcome.map_err(ForgeError::Transport);
            }
        }
        match &self.default_response {
            Some(text) => Ok(text.clone()),
            None => Err(ForgeError::Unscripted(hash)),
        }
    }

    fn retry_policy(&self) -> RetryPolicy {
        self.policy
    }
}

/// Full offline-capable composite pipeline: extract knowledge points from
/// the given problems, pool the first [`DEFAULT_KNOWLEDGE_POINTS`] of them,
/// and synthesize one composite problem of the requested kind.
pub fn synthesize_composite(
    client: &dyn GenerationClient,
    problems: &[SourceProblem],
    kind: CompositeKind,
) -> Result<String, ForgeError> {
    let mut pooled = Vec::new();
    let mut origin_ids = Vec::new();
    for problem in problems {
        let prompt = build_extraction_prompt(problem);
        let response = run_generation(client, &prompt)?;
        let set = parse_knowledge_points(&response, vec![problem.id.clone()])?;
        pooled.extend(set.points);
        origin_ids.push(problem.id.clone());
        if pooled.len() >= DEFAULT_KNOWLEDGE_POINTS {
            break;
        }
    }
    pooled.truncate(DEFAULT_KNOWLEDGE_POINTS);
    let set = KnowledgePointSet::new(pooled, origin_ids)?;
    let prompt = build_composite_prompt(&set, kind)?;
    run_generation(client, &prompt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use std::collections::BTreeMap;

    fn problem(id: &str, question: &str) -> SourceProblem {
        SourceProblem {
            id: id.to_string(),
            question: question.to_string(),
            thought: "t".to_string(),
            solution: "s".to_string(),
            source: "test".to_string(),
            domain: Domain::Math,
            extra: BTreeMap::new(),
        }
    }

    fn four_points() -> KnowledgePointSet {
        KnowledgePointSet::new(
            vec![
                "arithmetic mean of two numbers".to_string(),
                "geometric mean of two numbers".to_string(),
                "harmonic mean of two numbers".to_string(),
                "rotation matrices in the plane".to_string(),
            ],
            vec!["a".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn extraction_prompt_matches_golden() {
        let p = problem("a", "Compute the arithmetic mean of 3 and 5.");
        let prompt = build_extraction_prompt(&p);
        let golden = include_str!("../tests/fixtures/prompt_extraction_golden.txt");
        assert_eq!(prompt, golden);
    }

    #[test]
    fn composite_prompts_match_goldens() {
        let points = four_points();
        let long = build_composite_prompt(&points, CompositeKind::Long).unwrap();
        let difficult = build_composite_prompt(&points, CompositeKind::Difficult).unwrap();
        assert_eq!(
            long,
            include_str!("../tests/fixtures/prompt_long_golden.txt")
        );
        assert_eq!(
            difficult,
            include_str!("../tests/fixtures/prompt_difficult_golden.txt")
        );
    }

    #[test]
    fn prompts_differ_only_in_problem_slot() {
        let a = build_extraction_prompt(&problem("a", "ALPHA"));
        let b = build_extraction_prompt(&problem("b", "BETA"));
        assert_eq!(a.replace("ALPHA", "BETA"), b);
    }

    #[test]
    fn both_kinds_share_points_block_verbatim() {
        let points = four_points();
        let block = points_block(&points);
        let long = build_composite_prompt(&points, CompositeKind::Long).unwrap();
        let difficult = build_composite_prompt(&points, CompositeKind::Difficult).unwrap();
        assert!(long.contains(&block));
        assert!(difficult.contains(&block));
        // diff oracle: removing the shared block leaves the kind-specific text
        assert_ne!(long.replace(&block, ""), difficult.replace(&block, ""));
    }

    #[test]
    fn wrong_point_count_rejected() {
        let three = KnowledgePointSet::new(
            vec!["a".to_string(), "b".to_string(), "c".to_string()],
            vec![],
        )
        .unwrap();
        match build_composite_prompt(&three, CompositeKind::Long).unwrap_err() {
            ForgeError::WrongPointCount { expected, got } => {
                assert_eq!((expected, got), (4, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prompt_builders_are_pure() {
        let p = problem("a", "Same question");
        assert_eq!(build_extraction_prompt(&p), build_extraction_prompt(&p));
        let points = four_points();
        assert_eq!(
            build_composite_prompt(&points, CompositeKind::Long).unwrap(),
            build_composite_prompt(&points, CompositeKind::Long).unwrap()
        );
    }

    #[test]
    fn parse_points_accepts_bullets_and_numbers() {
        let set = parse_knowledge_points(
            "- first point\n* second point\n3. third point\n\nfourth point\n",
            vec!["x".to_string()],
        )
        .unwrap();
        assert_eq!(
            set.points,
            vec!["first point", "second point", "third point", "fourth point"]
        );
    }

    #[test]
    fn mock_passthrough() {
        let client = MockGenerationClient::new();
        client.script_ok("hello", "OK");
        assert_eq!(run_generation(&client, "hello").unwrap(), "OK");
    }

    #[test]
    fn scripted_failures_exhaust_retries() {
        let client = MockGenerationClient::new().with_policy(RetryPolicy {
            max_retries: 2,
            backoff_base: Duration::from_millis(0),
        });
        for _ in 0..3 {
            client.script_failure("p", "boom");
        }
        match run_generation(&client, "p").unwrap_err() {
            ForgeError::RetriesExhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn retry_recovers_after_transient_failure() {
        let client = MockGenerationClient::new();
        client.script_failure("p", "transient");
        client.script_ok("p", "recovered");
        assert_eq!(run_generation(&client, "p").unwrap(), "recovered");
    }

    #[test]
    fn request_serialization_matches_wire_fixture() {
        let request = GenerationRequest {
            prompt: "Solve x^2 = 4.".to_string(),
            max_tokens: 4096,
        };
        let got = serde_json::to_string_pretty(&request).unwrap();
        let fixture = include_str!("../tests/fixtures/generation_request.json");
        assert_eq!(got.trim_end(), fixture.trim_end());
    }

    #[test]
    fn composite_pipeline_runs_offline() {
        let problems = vec![problem("a", "What is 2 + 2?")];
        let extraction = build_extraction_prompt(&problems[0]);
        let client = MockGenerationClient::new();
        client.script_ok(
            &extraction,
            "- addition of small integers\n- place value\n- commutativity of addition\n- equality",
        );
        let set = KnowledgePointSet::new(
            vec![
                "addition of small integers".to_string(),
                "place value".to_string(),
                "commutativity of addition".to_string(),
                "equality".to_string(),
            ],
            vec!["a".to_string()],
        )
        .unwrap();
        let composite = build_composite_prompt(&set, CompositeKind::Long).unwrap();
        client.script_ok(&composite, "A synthesized multi-part problem.");
        let result = synthesize_composite(&client, &problems, CompositeKind::Long).unwrap();
        assert_eq!(result, "A synthesized multi-part problem.");
    }

    #[test]
    fn batch_respects_order() {
        let client = MockGenerationClient::new().with_default("D");
        let prompts: Vec<String> = (0..8).map(|i| format!("prompt {i}")).collect();
        client.script_ok("prompt 3", "special");
        let results = run_generation_batch(&client, &prompts, 3);
        assert_eq!(results.len(), 8);
        assert_eq!(results[3].as_ref().unwrap(), "special");
        for (i, r) in results.iter().enumerate() {
            if i != 3 {
                assert_eq!(r.as_ref().unwrap(), "D");
            }
        }
    }
}
