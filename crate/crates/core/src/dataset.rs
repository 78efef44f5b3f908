//! Prompt-pair corpus: loading, invariant checks, annotator filtering and
//! deterministic train/val/test splitting.
//!
//! Records are line-delimited JSON objects:
//!
//! ```text
//! {"id": "bre-0001", "dialect": "BrE", "lexeme_sae": "bathroom", "lexeme_dialect": "loo",
//!  "sae_prompt": "a spacious bathroom", "dialect_prompt": "a spacious loo", "style": "concise"}
//! ```
//!
//! `polysemy_prompt` is optional.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Upper token bound for concise prompts.
pub const CONCISE_MAX_TOKENS: usize = 6;
/// Lower token bound for detailed prompts.
pub const DETAILED_MIN_TOKENS: usize = 9;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("{} invariant violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("pair {pair_id} has {count} annotation(s), expected exactly 2")]
    AnnotationCount { pair_id: String, count: usize },
    #[error("pair {pair_id} annotated twice by {annotator_id}")]
    DuplicateAnnotation { pair_id: String, annotator_id: String },
    #[error("annotation references unknown pair {0}")]
    UnknownAnnotatedPair(String),
    #[error("cannot split an empty pair set")]
    EmptySplit,
    #[error("invalid split ratios: {0}")]
    BadRatios(String),
}

/// A dialect code. Only codes present in a [`DialectRegistry`] are accepted
/// by the loader.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DialectId(String);

impl DialectId {
    pub const SAE: &'static str = "SAE";

    pub fn new(code: impl Into<String>) -> Self {
        DialectId(code.into())
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    pub fn is_sae(&self) -> bool {
        self.0 == Self::SAE
    }
}

impl fmt::Display for DialectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Known dialect codes. The standard registry holds SAE plus the five
/// benchmark dialects; more can be registered.
#[derive(Debug, Clone)]
pub struct DialectRegistry {
    codes: BTreeSet<String>,
}

impl DialectRegistry {
    pub fn standard() -> Self {
        let codes = ["SAE", "AAE", "BrE", "ChE", "InE", "SgE"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        DialectRegistry { codes }
    }

    pub fn register(&mut self, code: impl Into<String>) {
        self.codes.insert(code.into());
    }

    pub fn lookup(&self, code: &str) -> Option<DialectId> {
        self.codes.get(code).map(|c| DialectId(c.clone()))
    }

    /// Registered non-SAE codes in sorted order.
    pub fn dialects(&self) -> Vec<DialectId> {
        self.codes
            .iter()
            .filter(|c| c.as_str() != DialectId::SAE)
            .map(|c| DialectId(c.clone()))
            .collect()
    }
}

impl Default for DialectRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptStyle {
    Concise,
    Detailed,
}

impl PromptStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concise" => Some(PromptStyle::Concise),
            "detailed" => Some(PromptStyle::Detailed),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::Concise => "concise",
            PromptStyle::Detailed => "detailed",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPair {
    pub id: String,
    pub dialect: DialectId,
    pub lexeme_sae: String,
    pub lexeme_dialect: String,
    pub sae_prompt: String,
    pub dialect_prompt: String,
    pub polysemy_prompt: Option<String>,
    pub style: PromptStyle,
}

impl PromptPair {
    /// Number of prompt texts this pair contributes (SAE, dialect, and the
    /// optional polysemy prompt).
    pub fn prompt_count(&self) -> usize {
        2 + usize::from(self.polysemy_prompt.is_some())
    }
}

/// Lowercased word tokens with surrounding punctuation trimmed;
/// punctuation-only tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleViolation {
    pub style: PromptStyle,
    pub tokens: usize,
    pub bound: usize,
}

impl fmt::Display for StyleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.style {
            PromptStyle::Concise => write!(f, "concise prompt has {} tokens (> {})", self.tokens, self.bound),
            PromptStyle::Detailed => write!(f, "detailed prompt has {} tokens (< {})", self.tokens, self.bound),
        }
    }
}

/// Checks the token-count bound of `style`. Violations are warnings, not
/// errors.
pub fn validate_prompt_style(text: &str, style: PromptStyle) -> Vec<StyleViolation> {
    let tokens = tokenize(text).len();
    let (ok, bound) = match style {
        PromptStyle::Concise => (tokens <= CONCISE_MAX_TOKENS, CONCISE_MAX_TOKENS),
        PromptStyle::Detailed => (tokens >= DETAILED_MIN_TOKENS, DETAILED_MIN_TOKENS),
    };
    if ok {
        Vec::new()
    } else {
        vec![StyleViolation { style, tokens, bound }]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    DuplicateId,
    UnknownDialect(String),
    SaeDialect,
    UnknownStyle(String),
    EmptyField(&'static str),
    /// The SAE and dialect prompts differ somewhere other than a single
    /// lexeme slot. Each entry is `(sae_token, dialect_token)`.
    PromptDiff(Vec<(String, String)>),
    /// The prompts differ in one slot, but not by the declared lexemes.
    LexemeMismatch {
        sae: String,
        dialect: String,
    },
    PolysemyMissingLexeme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub line: usize,
    pub id: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} ({}): ", self.line, self.id)?;
        match &self.kind {
            ViolationKind::DuplicateId => write!(f, "duplicate id {}", self.id),
            ViolationKind::UnknownDialect(c) => write!(f, "unknown dialect code {c:?}"),
            ViolationKind::SaeDialect => f.write_str("pair dialect must be non-SAE"),
            ViolationKind::UnknownStyle(s) => write!(f, "unknown style {s:?}"),
            ViolationKind::EmptyField(name) => write!(f, "field {name} is empty"),
            ViolationKind::PromptDiff(diffs) => {
                write!(f, "prompts differ in {} token slots:", diffs.len())?;
                for (a, b) in diffs {
                    write!(f, " {a:?}->{b:?}")?;
                }
                Ok(())
            }
            ViolationKind::LexemeMismatch { sae, dialect } => {
                write!(f, "prompts differ by {sae:?}->{dialect:?}, not by the declared lexemes")
            }
            ViolationKind::PolysemyMissingLexeme => f.write_str("polysemy prompt does not contain the dialect lexeme"),
        }
    }
}

/// Checks that the two prompts differ in exactly one lexeme slot filled by
/// the declared lexemes. Multi-word lexemes are matched as token spans.
fn check_lexeme_slot(pair: &PromptPair) -> Option<ViolationKind> {
    let sae = tokenize(&pair.sae_prompt);
    let dia = tokenize(&pair.dialect_prompt);
    let lex_sae = tokenize(&pair.lexeme_sae);
    let lex_dia = tokenize(&pair.lexeme_dialect);

    if sae.len() == dia.len() {
        let diffs: Vec<(String, String)> = sae
            .iter()
            .zip(&dia)
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.clone(), b.clone()))
            .collect();
        if diffs.len() == 1 && lex_sae.len() == 1 && lex_dia.len() == 1 {
            let (a, b) = &diffs[0];
            if *a == lex_sae[0] && *b == lex_dia[0] {
                return None;
            }
            return Some(ViolationKind::LexemeMismatch {
                sae: a.clone(),
                dialect: b.clone(),
            });
        }
        if diffs.len() != 1 && (lex_sae.len() == 1 && lex_dia.len() == 1 || diffs.is_empty()) {
            return Some(ViolationKind::PromptDiff(diffs));
        }
    }

    let prefix = sae.iter().zip(&dia).take_while(|(a, b)| a == b).count();
    let max_suffix = sae.len().min(dia.len()) - prefix;
    let suffix = sae
        .iter()
        .rev()
        .zip(dia.iter().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    let sae_span = &sae[prefix..sae.len() - suffix];
    let dia_span = &dia[prefix..dia.len() - suffix];
    if sae_span == lex_sae.as_slice() && dia_span == lex_dia.as_slice() {
        None
    } else {
        Some(ViolationKind::LexemeMismatch {
            sae: sae_span.join(" "),
            dialect: dia_span.join(" "),
        })
    }
}

fn contains_span(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Runs the per-record invariants (everything except id uniqueness).
pub fn check_pair(pair: &PromptPair) -> Vec<ViolationKind> {
    let mut out = Vec::new();
    if pair.dialect.is_sae() {
        out.push(ViolationKind::SaeDialect);
    }
    for (name, value) in [
        ("id", &pair.id),
        ("lexeme_sae", &pair.lexeme_sae),
        ("lexeme_dialect", &pair.lexeme_dialect),
        ("sae_prompt", &pair.sae_prompt),
        ("dialect_prompt", &pair.dialect_prompt),
    ] {
        if tokenize(value).is_empty() {
            out.push(ViolationKind::EmptyField(name));
        }
    }
    if !out.iter().any(|k| matches!(k, ViolationKind::EmptyField(_))) {
        if let Some(v) = check_lexeme_slot(pair) {
            out.push(v);
        }
    }
    if let Some(p) = &pair.polysemy_prompt {
        if !contains_span(&tokenize(p), &tokenize(&pair.lexeme_dialect)) {
            out.push(ViolationKind::PolysemyMissingLexeme);
        }
    }
    out
}

/// An immutable, validated collection of prompt pairs, ordered by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pairs: Vec<PromptPair>,
}

impl PairSet {
    /// Builds a set from already-constructed pairs, enforcing every record
    /// invariant. Line numbers in violations are 1-based input positions.
    pub fn new(pairs: Vec<PromptPair>) -> Result<Self, DatasetError> {
        let mut violations = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, p) in pairs.iter().enumerate() {
            if !seen.insert(p.id.clone()) {
                violations.push(Violation {
                    line: i + 1,
                    id: p.id.clone(),
                    kind: ViolationKind::DuplicateId,
                });
            }
            for kind in check_pair(p) {
                violations.push(Violation {
                    line: i + 1,
                    id: p.id.clone(),
                    kind,
                });
            }
        }
        if !violations.is_empty() {
            return Err(DatasetError::Invalid(violations));
        }
        Ok(Self::from_sorted(pairs))
    }

    fn from_sorted(mut pairs: Vec<PromptPair>) -> Self {
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        PairSet { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptPair> {
        self.pairs.iter()
    }

    pub fn pairs(&self) -> &[PromptPair] {
        &self.pairs
    }

    pub fn get(&self, id: &str) -> Option<&PromptPair> {
        self.pairs
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn polysemy_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.polysemy_prompt.is_some()).count()
    }

    /// Total prompt texts: SAE + dialect + polysemy.
    pub fn prompt_count(&self) -> usize {
        self.pairs.iter().map(PromptPair::prompt_count).sum()
    }

    pub fn per_dialect(&self) -> BTreeMap<DialectId, usize> {
        let mut out = BTreeMap::new();
        for p in &self.pairs {
            *out.entry(p.dialect.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Style warnings for every prompt in the set, as `(pair id, which
    /// prompt, violation)`.
    pub fn style_warnings(&self) -> Vec<(String, &'static str, StyleViolation)> {
        let mut out = Vec::new();
        for p in &self.pairs {
            for (which, text) in [("sae_prompt", &p.sae_prompt), ("dialect_prompt", &p.dialect_prompt)] {
                for v in validate_prompt_style(text, p.style) {
                    out.push((p.id.clone(), which, v));
                }
            }
        }
        out
    }

    /// Keeps pairs whose id is in `keep`.
    pub fn retain_ids(&self, keep: &BTreeSet<String>) -> PairSet {
        PairSet {
            pairs: self.pairs.iter().filter(|p| keep.contains(&p.id)).cloned().collect(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    id: String,
    dialect: String,
    lexeme_sae: String,
    lexeme_dialect: String,
    sae_prompt: String,
    dialect_prompt: String,
    #[serde(default)]
    polysemy_prompt: Option<String>,
    style: String,
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a prompt file using the standard dialect registry.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<PairSet, DatasetError> {
    load_dataset_with(path, &DialectRegistry::standard())
}

pub fn load_dataset_with(path: impl AsRef<Path>, registry: &DialectRegistry) -> Result<PairSet, DatasetError> {
    parse_dataset(&read_text(path.as_ref())?, registry)
}

/// Parses prompt records from text. Blank lines are skipped but still
/// counted for line numbers.
pub fn parse_dataset(text: &str, registry: &DialectRegistry) -> Result<PairSet, DatasetError> {
    let mut pairs = Vec::new();
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPair = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut bad = |kind| {
            violations.push(Violation {
                line: line_no,
                id: raw.id.clone(),
                kind,
            })
        };
        if !seen.insert(raw.id.clone()) {
            bad(ViolationKind::DuplicateId);
        }
        let Some(dialect) = registry.lookup(&raw.dialect) else {
            bad(ViolationKind::UnknownDialect(raw.dialect.clone()));
            continue;
        };
        let Some(style) = PromptStyle::parse(&raw.style) else {
            bad(ViolationKind::UnknownStyle(raw.style.clone()));
            continue;
        };
        let pair = PromptPair {
            id: raw.id.clone(),
            dialect,
            lexeme_sae: raw.lexeme_sae,
            lexeme_dialect: raw.lexeme_dialect,
            sae_prompt: raw.sae_prompt,
            dialect_prompt: raw.dialect_prompt,
            polysemy_prompt: raw.polysemy_prompt,
            style,
        };
        for kind in check_pair(&pair) {
            violations.push(Violation {
                line: line_no,
                id: pair.id.clone(),
                kind,
            });
        }
        pairs.push(pair);
    }
    if !violations.is_empty() {
        return Err(DatasetError::Invalid(violations));
    }
    Ok(PairSet::from_sorted(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
    #[serde(alias = "dont_know", alias = "idk")]
    DontKnow,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub pair_id: String,
    pub annotator_id: String,
    pub q1: Answer,
    pub q2: Answer,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let text = read_text(path.as_ref())?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    /// An annotator answered No to the meaning question.
    NotSynonymous,
    /// An annotator answered Yes to the ambiguity question.
    Ambiguous,
    /// An annotator answered "don't know" to either question.
    Uncertain,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::NotSynonymous => "not_synonymous",
            RejectReason::Ambiguous => "ambiguous",
            RejectReason::Uncertain => "uncertain",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: PairSet,
    pub rejected: BTreeMap<RejectReason, Vec<String>>,
}

impl FilterOutcome {
    pub fn rejected_count(&self) -> usize {
        self.rejected.values().map(Vec::len).sum()
    }
}

fn reject_reason(records: &[&AnnotationRecord]) -> Option<RejectReason> {
    if records.iter().any(|r| r.q1 == Answer::No) {
        Some(RejectReason::NotSynonymous)
    } else if records.iter().any(|r| r.q2 == Answer::Yes) {
        Some(RejectReason::Ambiguous)
    } else if records
        .iter()
        .any(|r| r.q1 == Answer::DontKnow || r.q2 == Answer::DontKnow)
    {
        Some(RejectReason::Uncertain)
    } else {
        None
    }
}

/// Retains a pair iff both of its two annotators answered Yes to the meaning
/// question and No to the ambiguity question.
pub fn apply_annotation_filter(
    pairs: &PairSet,
    annotations: &[AnnotationRecord],
) -> Result<FilterOutcome, DatasetError> {
    let mut by_pair: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        if !pairs.contains(&a.pair_id) {
            return Err(DatasetError::UnknownAnnotatedPair(a.pair_id.clone()));
        }
        let slot = by_pair.entry(a.pair_id.as_str()).or_default();
        if slot.iter().any(|r| r.annotator_id == a.annotator_id) {
            return Err(DatasetError::DuplicateAnnotation {
                pair_id: a.pair_id.clone(),
                annotator_id: a.annotator_id.clone(),
            });
        }
        slot.push(a);
    }

    let mut keep = BTreeSet::new();
    let mut rejected: BTreeMap<RejectReason, Vec<String>> = BTreeMap::new();
    for p in pairs.iter() {
        let records = by_pair.get(p.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if records.len() != 2 {
            return Err(DatasetError::AnnotationCount {
                pair_id: p.id.clone(),
                count: records.len(),
            });
        }
        match reject_reason(records) {
            None => {
                keep.insert(p.id.clone());
            }
            Some(reason) => rejected.entry(reason).or_default().push(p.id.clone()),
        }
    }
    Ok(FilterOutcome {
        retained: pairs.retain_ids(&keep),
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const DEFAULT: SplitRatios = SplitRatios {
        train: 0.8,
        val: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(DatasetError::BadRatios(format!(
                "ratios must be nonnegative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Floor-apportioned `(train, val, test)` sizes for `n` items; the
    /// remainder goes to train.
    pub fn apportion(&self, n: usize) -> (usize, usize, usize) {
        // The 1e-9 slack absorbs representation error, e.g. 0.7 * 10.
        let cut = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = cut(self.val);
        let test = cut(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitGranularity {
    #[default]
    Pair,
    /// Keeps every pair sharing a `(dialect, lexeme_sae, lexeme_dialect)`
    /// triple in the same split.
    Lexeme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, pair_id: &str) -> Option<Split> {
        self.assignment.get(pair_id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.assignment.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Pair ids of one split, in id order.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.iter().filter(|(_, s)| *s == split).map(|(id, _)| id).collect()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.assignment.values().filter(|v| **v == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// `pair_id<TAB>split` lines in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, s) in self.iter() {
            out.push_str(id);
            out.push('\t');
            out.push_str(s.as_str());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_tsv().as_bytes())
    }

    pub fn parse_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut assignment = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| DatasetError::Malformed { line: idx + 1, message };
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected pair_id<TAB>split".into()))?;
            let split = Split::parse(split.trim()).ok_or_else(|| malformed(format!("unknown split {split:?}")))?;
            if assignment.insert(id.to_string(), split).is_some() {
                return Err(malformed(format!("pair {id} assigned twice")));
            }
        }
        Ok(SplitAssignment {
            seed: 0,
            ratios: SplitRatios::DEFAULT,
            assignment,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::parse_tsv(&read_text(path.as_ref())?)
    }
}

/// Deterministic split: pairs ordered by id, shuffled with ChaCha8 seeded by
/// `seed`, then cut at floor-apportioned boundaries.
pub fn split_dataset(pairs: &PairSet, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, DatasetError> {
    split_dataset_with(pairs, ratios, seed, SplitGranularity::Pair)
}

pub fn split_dataset_with(
    pairs: &PairSet,
    ratios: SplitRatios,
    seed: u64,
    granularity: SplitGranularity,
) -> Result<SplitAssignment, DatasetError> {
    ratios.validate()?;
    if pairs.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Groups of pair ids in id order; singleton groups in pair mode.
    let mut groups: Vec<Vec<&str>> = match granularity {
        SplitGranularity::Pair => pairs.iter().map(|p| vec![p.id.as_str()]).collect(),
        SplitGranularity::Lexeme => {
            let mut by_key: BTreeMap<(&str, &str, &str), Vec<&str>> = BTreeMap::new();
            for p in pairs.iter() {
                by_key
                    .entry((p.dialect.code(), &p.lexeme_sae, &p.lexeme_dialect))
                    .or_default()
                    .push(&p.id);
            }
            by_key.into_values().collect()
        }
    };
    groups.shuffle(&mut rng);

    let (n_train, n_val, _) = ratios.apportion(pairs.len());
    let mut assignment = BTreeMap::new();
    let mut placed = 0usize;
    for group in groups {
        // A group goes to the split containing the position of its first
        // member; in pair mode this reproduces the exact cut points.
        let split = if placed < n_train {
            Split::Train
        } else if placed < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        placed += group.len();
        for id in group {
            assignment.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment {
        seed,
        ratios,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, sae: &str, dia: &str, ls: &str, ld: &str) -> PromptPair {
        PromptPair {
            id: id.into(),
            dialect: DialectId::new("BrE"),
            lexeme_sae: ls.into(),
            lexeme_dialect: ld.into(),
            sae_prompt: sae.into(),
            dialect_prompt: dia.into(),
            polysemy_prompt: None,
            style: PromptStyle::Concise,
        }
    }

    fn line(id: &str, dialect: &str, sae: &str, dia: &str, ls: &str, ld: &str) -> String {
        serde_json::json!({
            "id": id, "dialect": dialect, "lexeme_sae": ls, "lexeme_dialect": ld,
            "sae_prompt": sae, "dialect_prompt": dia, "style": "concise"
        })
        .to_string()
    }

    fn violations(err: DatasetError) -> Vec<Violation> {
        match err {
            DatasetError::Invalid(v) => v,
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn loads_three_valid_records() {
        let text = [
            line("a", "BrE", "a spacious bathroom", "a spacious loo", "bathroom", "loo"),
            line("b", "AAE", "brand new sneakers", "brand new kicks", "sneakers", "kicks"),
            line(
                "c",
                "SgE",
                "a squid on a counter",
                "a sotong on a counter",
                "squid",
                "sotong",
            ),
        ]
        .join("\n");
        let set = parse_dataset(&text, &DialectRegistry::standard()).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.get("b").unwrap().lexeme_dialect, "kicks");
    }

    #[test]
    fn sae_dialect_is_rejected() {
        let text = line("a", "SAE", "a spacious bathroom", "a spacious loo", "bathroom", "loo");
        let v = violations(parse_dataset(&text, &DialectRegistry::standard()).unwrap_err());
        assert_eq!(v[0].kind, ViolationKind::SaeDialect);
        assert!(v[0].to_string().contains("pair dialect must be non-SAE"));
    }

    #[test]
    fn two_token_difference_names_both_tokens() {
        let text = line("a", "BrE", "a big red truck", "a small red lorry", "truck", "lorry");
        let v = violations(parse_dataset(&text, &DialectRegistry::standard()).unwrap_err());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].line, 1);
        assert_eq!(
            v[0].kind,
            ViolationKind::PromptDiff(vec![("big".into(), "small".into()), ("truck".into(), "lorry".into())])
        );
        let msg = v[0].to_string();
        assert!(msg.contains("\"big\"->\"small\"") && msg.contains("\"truck\"->\"lorry\""));
    }

    #[test]
    fn malformed_and_unknown_dialect_report_line_numbers() {
        let good = line("a", "BrE", "a spacious bathroom", "a spacious loo", "bathroom", "loo");
        let err = parse_dataset(&format!("{good}\n{{not json"), &DialectRegistry::standard()).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 2, .. }));

        let text = format!("{good}\n\n{}", line("b", "ScE", "a x", "a y", "x", "y"));
        let v = violations(parse_dataset(&text, &DialectRegistry::standard()).unwrap_err());
        assert_eq!(v[0].line, 3);
        assert_eq!(v[0].kind, ViolationKind::UnknownDialect("ScE".into()));

        let mut reg = DialectRegistry::standard();
        reg.register("ScE");
        assert_eq!(parse_dataset(&text, &reg).unwrap().len(), 2);
    }

    #[test]
    fn duplicate_id_is_a_violation() {
        let a = line("a", "BrE", "a spacious bathroom", "a spacious loo", "bathroom", "loo");
        let v = violations(parse_dataset(&format!("{a}\n{a}"), &DialectRegistry::standard()).unwrap_err());
        assert_eq!(v[0].kind, ViolationKind::DuplicateId);
        assert_eq!(v[0].line, 2);
    }

    #[test]
    fn lexeme_slot_rules() {
        assert!(check_pair(&pair("x", "A spacious bathroom.", "a spacious LOO", "bathroom", "loo")).is_empty());
        // multi-word lexemes match as spans
        assert!(check_pair(&pair(
            "x",
            "two red packets on a table",
            "two ang pows on a table",
            "red packets",
            "ang pows"
        ))
        .is_empty());
        assert!(matches!(
            check_pair(&pair(
                "x",
                "a spacious bathroom",
                "a spacious toilet",
                "bathroom",
                "loo"
            ))[0],
            ViolationKind::LexemeMismatch { .. }
        ));
        assert!(matches!(
            check_pair(&pair("x", "a spacious loo", "a spacious loo", "bathroom", "loo"))[0],
            ViolationKind::PromptDiff(ref d) if d.is_empty()
        ));
        let mut p = pair("x", "a car", "a whip", "car", "whip");
        p.polysemy_prompt = Some("a rider holding a whip".into());
        assert!(check_pair(&p).is_empty());
        p.polysemy_prompt = Some("a rider holding a crop".into());
        assert_eq!(check_pair(&p), vec![ViolationKind::PolysemyMissingLexeme]);
    }

    #[test]
    fn style_bounds() {
        assert!(validate_prompt_style("a spacious loo", PromptStyle::Concise).is_empty());
        assert!(
            validate_prompt_style("a clean and tidy loo with shiny blue wall tiles", PromptStyle::Detailed).is_empty()
        );
        let v = validate_prompt_style("one two three four five six seven", PromptStyle::Concise);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tokens, 7);
        assert!(validate_prompt_style("one two three four five six", PromptStyle::Concise).is_empty());
        // punctuation-only tokens are not words
        assert!(validate_prompt_style("a - b - c - d - e - f", PromptStyle::Concise).is_empty());
        assert_eq!(validate_prompt_style("short one", PromptStyle::Detailed)[0].bound, 9);
    }

    fn annotated(q: &[(Answer, Answer)]) -> (PairSet, Vec<AnnotationRecord>) {
        let set = PairSet::new(vec![pair(
            "p",
            "a spacious bathroom",
            "a spacious loo",
            "bathroom",
            "loo",
        )])
        .unwrap();
        let ann = q
            .iter()
            .enumerate()
            .map(|(i, (q1, q2))| AnnotationRecord {
                pair_id: "p".into(),
                annotator_id: format!("a{i}"),
                q1: *q1,
                q2: *q2,
            })
            .collect();
        (set, ann)
    }

    #[test]
    fn annotation_rule() {
        use Answer::*;
        let (s, a) = annotated(&[(Yes, No), (Yes, No)]);
        assert_eq!(apply_annotation_filter(&s, &a).unwrap().retained.len(), 1);

        let (s, a) = annotated(&[(DontKnow, No), (Yes, No)]);
        let out = apply_annotation_filter(&s, &a).unwrap();
        assert!(out.retained.is_empty());
        assert_eq!(out.rejected[&RejectReason::Uncertain], vec!["p".to_string()]);

        let (s, a) = annotated(&[(Yes, No), (Yes, Yes)]);
        let out = apply_annotation_filter(&s, &a).unwrap();
        assert_eq!(out.rejected[&RejectReason::Ambiguous], vec!["p".to_string()]);

        let (s, a) = annotated(&[(Yes, No)]);
        assert!(matches!(
            apply_annotation_filter(&s, &a),
            Err(DatasetError::AnnotationCount { count: 1, .. })
        ));
        let (s, a) = annotated(&[(Yes, No), (Yes, No), (Yes, No)]);
        assert!(matches!(
            apply_annotation_filter(&s, &a),
            Err(DatasetError::AnnotationCount { count: 3, .. })
        ));
        let (s, mut a) = annotated(&[(Yes, No), (Yes, No)]);
        a[1].annotator_id = a[0].annotator_id.clone();
        assert!(matches!(
            apply_annotation_filter(&s, &a),
            Err(DatasetError::DuplicateAnnotation { .. })
        ));
    }

    fn numbered(n: usize) -> PairSet {
        PairSet::new(
            (0..n)
                .map(|i| {
                    pair(
                        &format!("p{i:04}"),
                        "a spacious bathroom",
                        "a spacious loo",
                        "bathroom",
                        "loo",
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    /// Floor apportionment with the remainder credited to train, computed
    /// with integer arithmetic on tenths.
    fn tenths_oracle(n: usize, val_tenths: usize, test_tenths: usize) -> (usize, usize, usize) {
        let val = n * val_tenths / 10;
        let test = n * test_tenths / 10;
        (n - val - test, val, test)
    }

    #[test]
    fn split_sizes_follow_floor_apportionment() {
        let s = split_dataset(&numbered(100), SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!(s.sizes(), (80, 10, 10));
        let s = split_dataset(&numbered(10), SplitRatios::DEFAULT, 1).unwrap();
        assert_eq!(s.sizes(), tenths_oracle(10, 1, 1));
        assert_eq!(s.sizes(), (8, 1, 1));
        for n in [1, 3, 7, 13, 29, 101] {
            let s = split_dataset(&numbered(n), SplitRatios::new(0.7, 0.2, 0.1).unwrap(), 3).unwrap();
            assert_eq!(s.sizes(), tenths_oracle(n, 2, 1), "n = {n}");
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let set = numbered(50);
        let a = split_dataset(&set, SplitRatios::DEFAULT, 9).unwrap();
        let b = split_dataset(&set, SplitRatios::DEFAULT, 9).unwrap();
        let c = split_dataset(&set, SplitRatios::DEFAULT, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.to_tsv(), c.to_tsv());
        assert_eq!(SplitAssignment::parse_tsv(&a.to_tsv()).unwrap().to_tsv(), a.to_tsv());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_dataset(&PairSet::default(), SplitRatios::DEFAULT, 0),
            Err(DatasetError::EmptySplit)
        ));
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
        assert!(SplitRatios::new(0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn lexeme_grouped_split_keeps_lexemes_together() {
        let mut pairs = Vec::new();
        for i in 0..40 {
            let (s, d) = [
                ("bathroom", "loo"),
                ("truck", "lorry"),
                ("cookie", "biscuit"),
                ("elevator", "lift"),
            ][i % 4];
            pairs.push(pair(&format!("p{i:03}"), &format!("a {s}"), &format!("a {d}"), s, d));
        }
        let set = PairSet::new(pairs).unwrap();
        let split = split_dataset_with(&set, SplitRatios::DEFAULT, 5, SplitGranularity::Lexeme).unwrap();
        let mut by_lex: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for p in set.iter() {
            by_lex
                .entry(&p.lexeme_sae)
                .or_default()
                .insert(split.get(&p.id).unwrap());
        }
        assert!(by_lex.values().all(|s| s.len() == 1));
        assert_eq!(split.len(), 40);
    }
}
