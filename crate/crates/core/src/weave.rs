//! Render single and pair-woven training samples from fixed chat templates.
//!
//! The template text, including its original spellings ("THINGKING",
//! "as belows", "userwith") and every space and newline, is an external
//! contract: rendering with all connective indices at 0 reproduces the
//! canonical single and pair layouts byte for byte (see the golden-file
//! tests). Cleaned-up paraphrases live at higher connective indices; they
//! diversify the joining language without touching the skeleton.
//!
//! A sample's `output` section always contains exactly one thought span and
//! one solution span, in that order, delimited by the four tag markers.
//! Constituent problem texts are expected not to contain the reserved
//! markers.

use serde::{Deserialize, Serialize};

use crate::corpus::SourceProblem;
use crate::rng::{derive_seed, SplitMix64};
use crate::tokenx::{within_window, Tokenizer, TokenizerKind};

#[derive(Debug, thiserror::Error)]
pub enum WeaveError {
    #[error("cannot weave problem {0:?} with itself")]
    SamePairedProblem(String),
    #[error("no feasible pair for target {target} (tolerance {tolerance}) after {attempts} attempts")]
    NoFeasiblePair {
        target: u64,
        tolerance: f64,
        attempts: usize,
    },
    #[error("pair selection needs a pool of at least 2 records, got {0}")]
    PoolTooSmall(usize),
    #[error("connective index {index} out of range for {slot} (len {len})")]
    BadConnectiveIndex {
        slot: &'static str,
        index: usize,
        len: usize,
    },
    #[error("connective phrasing must contain {0}")]
    MissingPlaceholder(&'static str),
}

pub const IM_START: &str = "<|im_start|>";
pub const IM_END: &str = "<|im_end|>";
pub const THOUGHT_BEGIN: &str = "<|begin_of_thought|>";
pub const THOUGHT_END: &str = "<|end_of_thought|>";
pub const SOLUTION_BEGIN: &str = "<|begin_of_solution|>";
pub const SOLUTION_END: &str = "<|end_of_solution|>";

/// System text for pair samples.
pub const PAIR_SYSTEM: &str = "A conversation between User and Assistant. The user asks a question, and the Assistant solves it. The assistant first thinks about the reasoning process in the mind and then provides the userwith the answer. The reasoning process and answer are enclosed within <|begin_of_thought|> <|end_of_thought|> and <|begin_of_solution|> <|end_of_solution|> tags, respectively, i.e., <|begin_of_thought|> reasoning process here <|end_of_thought|> <|begin_of_solution|> answer here <|end_of_solution|>.";

/// System text for single samples (differs from [`PAIR_SYSTEM`] only in the
/// missing space after "solves it.").
pub const SINGLE_SYSTEM: &str = "A conversation between User and Assistant. The user asks a question, and the Assistant solves it.The assistant first thinks about the reasoning process in the mind and then provides the userwith the answer. The reasoning process and answer are enclosed within <|begin_of_thought|> <|end_of_thought|> and <|begin_of_solution|> <|end_of_solution|> tags, respectively, i.e., <|begin_of_thought|> reasoning process here <|end_of_thought|> <|begin_of_solution|> answer here <|end_of_solution|>.";

/// User template for single samples; `{problem}` is the question slot.
pub const SINGLE_USER_TEMPLATE: &str =
    "Help me to solve the following problem. \"{problem}\".";

/// Output template for single samples.
pub const SINGLE_OUTPUT_TEMPLATE: &str = "<|begin_of_thought|>\n\n The thinking process for problem as follows. {thought} <|end_of_thought|>\n\n<|begin_of_solution|>\n\n  {solution} <|end_of_solution|>";

// Fixed skeleton around the pair connectives. Concatenation order:
//   PAIR_THOUGHT_PREFIX  thought_open  THOUGHT1  thought_switch  THOUGHT2
//   PAIR_THOUGHT_SUFFIX  PAIR_SOLUTION_PREFIX  solution_first  SOLUTION1
//   solution_second  SOLUTION2  PAIR_SOLUTION_SUFFIX
pub const PAIR_THOUGHT_PREFIX: &str = "<|begin_of_thought|>\n\n";
pub const PAIR_THOUGHT_SUFFIX: &str = ". <|end_of_thought|>\n\n";
pub const PAIR_SOLUTION_PREFIX: &str = "<|begin_of_solution|>\n\n";
pub const PAIR_SOLUTION_SUFFIX: &str = ". <|end_of_solution|>";

/// Canonical index-0 phrasings. Each carries the spacing and punctuation
/// that make pure concatenation reproduce the canonical pair layout.
pub const CANON_PAIR_INTRO: &str =
    "I need help with two problems.The first one is {problem1}, and the second one is {problem2}.";
pub const CANON_THOUGHT_OPEN: &str =
    " I will handle these two problems one by one. \nI will start with the first problem. ";
pub const CANON_THOUGHT_SWITCH: &str = ".\n Now I will turn to the second problem. ";
pub const CANON_SOLUTION_FIRST: &str = "  The solution for the first problem is as belows. ";
pub const CANON_SOLUTION_SECOND: &str = ".\n The solution for the second problem is as belows. ";

/// Connective indices used by one pair render, in drawing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectiveChoice {
    pub pair_intro: usize,
    pub thought_open: usize,
    pub thought_switch: usize,
    pub solution_first: usize,
    pub solution_second: usize,
}

impl ConnectiveChoice {
    /// All-canonical choice (index 0 everywhere).
    pub fn canonical() -> ConnectiveChoice {
        ConnectiveChoice {
            pair_intro: 0,
            thought_open: 0,
            thought_switch: 0,
            solution_first: 0,
            solution_second: 0,
        }
    }
}

/// Bank of connective phrasings for pair weaving.
///
/// Index 0 of every list is the canonical phrasing; paraphrases can only be
/// appended after it, so the canonical text is always available and chosen
/// whenever indices are forced to 0. Index selection for a sample is
/// deterministic given `(seed, ordinal)`: a generator seeded with
/// `derive_seed(seed, ordinal)` draws one index per slot, in the field
/// order below, each as `next_u64() % len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveBank {
    pair_intro: Vec<String>,
    thought_open: Vec<String>,
    thought_switch: Vec<String>,
    solution_first: Vec<String>,
    solution_second: Vec<String>,
    pub seed: u64,
}

impl ConnectiveBank {
    /// The shipped bank: canonical phrasings plus six paraphrases per slot.
    pub fn new(seed: u64) -> ConnectiveBank {
        ConnectiveBank {
            pair_intro: vec![
                CANON_PAIR_INTRO.to_string(),
                "Please help me solve these two problems. The first problem is {problem1}. The second problem is {problem2}.".to_string(),
                "I have two questions for you. First: {problem1}. Second: {problem2}.".to_string(),
                "Could you work through the following two problems? Problem one is {problem1}, and problem two is {problem2}.".to_string(),
                "Here are two problems I would like solved. The first is {problem1}, while the second is {problem2}.".to_string(),
                "Two problems need solving. The first one reads {problem1}, and the second one reads {problem2}.".to_string(),
                "I am stuck on two problems. To begin with, {problem1}. After that, {problem2}.".to_string(),
            ],
            thought_open: vec![
                CANON_THOUGHT_OPEN.to_string(),
                " Let me work through these two problems in order. \nStarting with the first problem. ".to_string(),
                " There are two problems here, so I will take them in turn. \nFirst, the opening problem. ".to_string(),
                " I will address each problem separately. \nBeginning with the first one. ".to_string(),
                " Two problems are posed, and I will reason about them sequentially. \nHere is the first. ".to_string(),
                " I plan to finish the first problem before touching the second. \nOn to the first problem. ".to_string(),
                " Both problems deserve careful treatment, one at a time. \nThe first problem comes first. ".to_string(),
            ],
            thought_switch: vec![
                CANON_THOUGHT_SWITCH.to_string(),
                ".\n With the first problem done, I move on to the second problem. ".to_string(),
                ".\n That settles the first one; next comes the second problem. ".to_string(),
                ".\n Turning now to the second problem. ".to_string(),
                ".\n Having finished the first problem, I will consider the second. ".to_string(),
                ".\n The first problem is complete, so let me tackle the second problem. ".to_string(),
                ".\n Time to switch to the second problem. ".to_string(),
            ],
            solution_first: vec![
                CANON_SOLUTION_FIRST.to_string(),
                "  Here is the solution to the first problem. ".to_string(),
                "  The first problem resolves as follows. ".to_string(),
                "  Solution to problem one. ".to_string(),
                "  For the first problem, the answer is presented below. ".to_string(),
                "  The first problem admits the following solution. ".to_string(),
                "  To summarize the first problem. ".to_string(),
            ],
            solution_second: vec![
                CANON_SOLUTION_SECOND.to_string(),
                ".\n And here is the solution to the second problem. ".to_string(),
                ".\n The second problem resolves as follows. ".to_string(),
                ".\n Solution to problem two. ".to_string(),
                ".\n For the second problem, the answer is presented below. ".to_string(),
                ".\n The second problem admits the following solution. ".to_string(),
                ".\n To summarize the second problem. ".to_string(),
            ],
            seed,
        }
    }

    pub fn pair_intro(&self) -> &[String] {
        &self.pair_intro
    }
    pub fn thought_open(&self) -> &[String] {
        &self.thought_open
    }
    pub fn thought_switch(&self) -> &[String] {
        &self.thought_switch
    }
    pub fn solution_first(&self) -> &[String] {
        &self.solution_first
    }
    pub fn solution_second(&self) -> &[String] {
        &self.solution_second
    }

    /// Append a user-prompt phrasing; must contain both problem slots.
    pub fn push_pair_intro(&mut self, phrasing: String) -> Result<(), WeaveError> {
        if !phrasing.contains("{problem1}") {
            return Err(WeaveError::MissingPlaceholder("{problem1}"));
        }
        if !phrasing.contains("{problem2}") {
            return Err(WeaveError::MissingPlaceholder("{problem2}"));
        }
        self.pair_intro.push(phrasing);
        Ok(())
    }

    pub fn push_thought_open(&mut self, phrasing: String) {
        self.thought_open.push(phrasing);
    }
    pub fn push_thought_switch(&mut self, phrasing: String) {
        self.thought_switch.push(phrasing);
    }
    pub fn push_solution_first(&mut self, phrasing: String) {
        self.solution_first.push(phrasing);
    }
    pub fn push_solution_second(&mut self, phrasing: String) {
        self.solution_second.push(phrasing);
    }

    /// Deterministic per-sample connective draw (see type docs for the rule).
    pub fn choice_for(&self, ordinal: u64) -> ConnectiveChoice {
        let mut rng = SplitMix64::new(derive_seed(self.seed, ordinal));
        let mut draw = |len: usize| rng.next_below(len);
        ConnectiveChoice {
            pair_intro: draw(self.pair_intro.len()),
            thought_open: draw(self.thought_open.len()),
            thought_switch: draw(self.thought_switch.len()),
            solution_first: draw(self.solution_first.len()),
            solution_second: draw(self.solution_second.len()),
        }
    }

    fn check(&self, choice: &ConnectiveChoice) -> Result<(), WeaveError> {
        let slots: [(&'static str, usize, usize); 5] = [
            ("pair_intro", choice.pair_intro, self.pair_intro.len()),
            ("thought_open", choice.thought_open, self.thought_open.len()),
            (
                "thought_switch",
                choice.thought_switch,
                self.thought_switch.len(),
            ),
            (
                "solution_first",
                choice.solution_first,
                self.solution_first.len(),
            ),
            (
                "solution_second",
                choice.solution_second,
                self.solution_second.len(),
            ),
        ];
        for (slot, index, len) in slots {
            if index >= len {
                return Err(WeaveError::BadConnectiveIndex { slot, index, len });
            }
        }
        Ok(())
    }
}

/// A fully rendered training record.
///
/// `system`, `user` and `output` are section bodies without chat framing;
/// [`WovenSample::to_chat_text`] produces the framed record. `token_len`
/// is the token count of the rendered `output` section under the tokenizer
/// the sample was built with. `parts` lists constituent problem ids
/// (length 1 for singles, 2 for pairs); `connective_choice` is present
/// exactly for pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WovenSample {
    pub system: String,
    pub user: String,
    pub output: String,
    pub token_len: usize,
    pub parts: Vec<String>,
    pub connective_choice: Option<ConnectiveChoice>,
}

impl WovenSample {
    /// Full chat-framed record text.
    pub fn to_chat_text(&self) -> String {
        format!(
            "{IM_START}system\n{}{IM_END}\n{IM_START}user\n{}{IM_END}\n{IM_START}system\n{}{IM_END}",
            self.system, self.user, self.output
        )
    }

    /// Inverse of [`WovenSample::to_chat_text`] for the three section bodies.
    pub fn sections_from_chat_text(text: &str) -> Option<(String, String, String)> {
        let rest = text.strip_prefix(&format!("{IM_START}system\n"))?;
        let (system, rest) =
            rest.split_once(&format!("{IM_END}\n{IM_START}user\n"))?;
        let (user, rest) =
            rest.split_once(&format!("{IM_END}\n{IM_START}system\n"))?;
        let output = rest.strip_suffix(IM_END)?;
        Some((system.to_string(), user.to_string(), output.to_string()))
    }
}

fn fill_one(template: &str, marker: &str, value: &str) -> String {
    let (before, after) = template
        .split_once(marker)
        .expect("template carries its marker");
    let mut out = String::with_capacity(before.len() + value.len() + after.len());
    out.push_str(before);
    out.push_str(value);
    out.push_str(after);
    out
}

fn fill_pair_intro(template: &str, q1: &str, q2: &str) -> String {
    // Split on both markers before substituting, so question text that
    // happens to contain a marker is never re-expanded.
    let (before, rest) = template
        .split_once("{problem1}")
        .expect("validated at insertion");
    let (middle, after) = rest
        .split_once("{problem2}")
        .expect("validated at insertion");
    let mut out =
        String::with_capacity(before.len() + q1.len() + middle.len() + q2.len() + after.len());
    out.push_str(before);
    out.push_str(q1);
    out.push_str(middle);
    out.push_str(q2);
    out.push_str(after);
    out
}

fn pair_output_pieces<'a>(
    bank: &'a ConnectiveBank,
    choice: &ConnectiveChoice,
    p1: &'a SourceProblem,
    p2: &'a SourceProblem,
) -> [&'a str; 12] {
    [
        PAIR_THOUGHT_PREFIX,
        &bank.thought_open[choice.thought_open],
        &p1.thought,
        &bank.thought_switch[choice.thought_switch],
        &p2.thought,
        PAIR_THOUGHT_SUFFIX,
        PAIR_SOLUTION_PREFIX,
        &bank.solution_first[choice.solution_first],
        &p1.solution,
        &bank.solution_second[choice.solution_second],
        &p2.solution,
        PAIR_SOLUTION_SUFFIX,
    ]
}

/// Render one problem as a single sample. The single template has no
/// diversified slots, so the bank only supplies contract parity with pair
/// rendering; the text is always the canonical single layout.
pub fn render_single(p: &SourceProblem, _bank: &ConnectiveBank, tok: &Tokenizer) -> WovenSample {
    let user = fill_one(SINGLE_USER_TEMPLATE, "{problem}", &p.question);
    let output = fill_one(
        &fill_one(SINGLE_OUTPUT_TEMPLATE, "{thought}", &p.thought),
        "{solution}",
        &p.solution,
    );
    let token_len = tok.count(&output);
    WovenSample {
        system: SINGLE_SYSTEM.to_string(),
        user,
        output,
        token_len,
        parts: vec![p.id.clone()],
        connective_choice: None,
    }
}

/// Render a pair sample with connectives drawn for `ordinal`
/// (see [`ConnectiveBank::choice_for`]).
pub fn render_pair(
    p1: &SourceProblem,
    p2: &SourceProblem,
    bank: &ConnectiveBank,
    ordinal: u64,
    tok: &Tokenizer,
) -> Result<WovenSample, WeaveError> {
    render_pair_with_choice(p1, p2, bank, bank.choice_for(ordinal), tok)
}

/// Render a pair sample with an explicit connective choice.
pub fn render_pair_with_choice(
    p1: &SourceProblem,
    p2: &SourceProblem,
    bank: &ConnectiveBank,
    choice: ConnectiveChoice,
    tok: &Tokenizer,
) -> Result<WovenSample, WeaveError> {
    if p1.id == p2.id {
        return Err(WeaveError::SamePairedProblem(p1.id.clone()));
    }
    bank.check(&choice)?;
    let user = fill_pair_intro(&bank.pair_intro[choice.pair_intro], &p1.question, &p2.question);
    let output = pair_output_pieces(bank, &choice, p1, p2).concat();
    let token_len = tok.count(&output);
    Ok(WovenSample {
        system: PAIR_SYSTEM.to_string(),
        user,
        output,
        token_len,
        parts: vec![p1.id.clone(), p2.id.clone()],
        connective_choice: Some(choice),
    })
}

// --- pair length measurement -------------------------------------------------

/// Whitespace-token statistics of a text piece, enough to count the tokens
/// of a concatenation without building it: gluing two pieces merges one
/// token exactly when the left piece ends in non-whitespace and the right
/// piece starts with non-whitespace.
#[derive(Debug, Clone, Copy)]
struct PieceStat {
    tokens: usize,
    starts_nonws: bool,
    ends_nonws: bool,
    empty: bool,
}

impl PieceStat {
    fn of(s: &str) -> PieceStat {
        PieceStat {
            tokens: s.split_whitespace().count(),
            starts_nonws: s.chars().next().is_some_and(|c| !c.is_whitespace()),
            ends_nonws: s.chars().next_back().is_some_and(|c| !c.is_whitespace()),
            empty: s.is_empty(),
        }
    }
}

fn ws_concat_tokens<I: IntoIterator<Item = PieceStat>>(stats: I) -> usize {
    let mut tokens = 0usize;
    let mut prev_ends_nonws = false;
    let mut any = false;
    for stat in stats {
        if stat.empty {
            continue;
        }
        let merge = any && prev_ends_nonws && stat.starts_nonws;
        tokens += stat.tokens - usize::from(merge);
        prev_ends_nonws = stat.ends_nonws;
        any = true;
    }
    tokens
}

/// Token-length measurement for candidate pairs over a fixed pool.
///
/// Under the whitespace tokenizer, lengths are computed compositionally
/// from precomputed per-record statistics; other tokenizers fall back to
/// rendering the output text and counting it.
pub(crate) struct PairLenMeasure {
    ws_stats: Option<Vec<(PieceStat, PieceStat)>>,
}

impl PairLenMeasure {
    pub(crate) fn new(pool: &[SourceProblem], tok: &Tokenizer) -> PairLenMeasure {
        let ws_stats = (tok.kind() == TokenizerKind::Whitespace).then(|| {
            pool.iter()
                .map(|p| (PieceStat::of(&p.thought), PieceStat::of(&p.solution)))
                .collect()
        });
        PairLenMeasure { ws_stats }
    }

    /// Token length of the rendered pair output for pool records `i`, `j`.
    pub(crate) fn output_len(
        &self,
        pool: &[SourceProblem],
        bank: &ConnectiveBank,
        choice: &ConnectiveChoice,
        tok: &Tokenizer,
        i: usize,
        j: usize,
    ) -> usize {
        match &self.ws_stats {
            Some(stats) => {
                let (t1, s1) = stats[i];
                let (t2, s2) = stats[j];
                let pieces = [
                    PieceStat::of(PAIR_THOUGHT_PREFIX),
                    PieceStat::of(&bank.thought_open[choice.thought_open]),
                    t1,
                    PieceStat::of(&bank.thought_switch[choice.thought_switch]),
                    t2,
                    PieceStat::of(PAIR_THOUGHT_SUFFIX),
                    PieceStat::of(PAIR_SOLUTION_PREFIX),
                    PieceStat::of(&bank.solution_first[choice.solution_first]),
                    s1,
                    PieceStat::of(&bank.solution_second[choice.solution_second]),
                    s2,
                    PieceStat::of(PAIR_SOLUTION_SUFFIX),
                ];
                ws_concat_tokens(pieces)
            }
            None => {
                let output = pair_output_pieces(bank, choice, &pool[i], &pool[j]).concat();
                tok.count(&output)
            }
        }
    }
}

/// Attempts of first-element draws before giving up on pair selection.
pub const PAIR_SELECT_ATTEMPTS: usize = 32;

/// Core pair selection: pick a first element at random from `remaining`
/// (positions into `pool`), gather every partner whose rendered pair output
/// falls inside the target window, and pick one of those at random. Returns
/// positions within `remaining`.
pub(crate) fn select_pair_positions(
    pool: &[SourceProblem],
    remaining: &[usize],
    measure: &PairLenMeasure,
    bank: &ConnectiveBank,
    choice: &ConnectiveChoice,
    target: u64,
    tolerance: f64,
    tok: &Tokenizer,
    rng: &mut SplitMix64,
) -> Result<(usize, usize), WeaveError> {
    if remaining.len() < 2 {
        return Err(WeaveError::PoolTooSmall(remaining.len()));
    }
    for _ in 0..PAIR_SELECT_ATTEMPTS {
        let first_pos = rng.next_below(remaining.len());
        let first = remaining[first_pos];
        let eligible: Vec<usize> = (0..remaining.len())
            .filter(|&pos| {
                pos != first_pos
                    && within_window(
                        measure.output_len(pool, bank, choice, tok, first, remaining[pos]),
                        target,
                        tolerance,
                    )
            })
            .collect();
        if !eligible.is_empty() {
            let partner_pos = eligible[rng.next_below(eligible.len())];
            return Ok((first_pos, partner_pos));
        }
    }
    Err(WeaveError::NoFeasiblePair {
        target,
        tolerance,
        attempts: PAIR_SELECT_ATTEMPTS,
    })
}

/// Choose a problem pair whose rendered output token length (template
/// overhead included, measured with the canonical index-0 connectives)
/// falls within `target * (1 +/- tolerance)`.
pub fn select_pair_for_target(
    pool: &[SourceProblem],
    target: u64,
    tolerance: f64,
    tok: &Tokenizer,
    seed: u64,
) -> Result<(SourceProblem, SourceProblem), WeaveError> {
    let bank = ConnectiveBank::new(seed);
    let choice = ConnectiveChoice::canonical();
    let measure = PairLenMeasure::new(pool, tok);
    let remaining: Vec<usize> = (0..pool.len()).collect();
    let mut rng = SplitMix64::new(seed);
    let (a, b) = select_pair_positions(
        pool, &remaining, &measure, &bank, &choice, target, tolerance, tok, &mut rng,
    )?;
    Ok((pool[remaining[a]].clone(), pool[remaining[b]].clone()))
}
