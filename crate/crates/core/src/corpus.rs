//! Intents, utterance datasets and their line-delimited JSON file formats.
//!
//! Registry files hold one intent per line:
//!
//! ```text
//! {"v":1,"id":"card_block","description":"...","response":"...","examples":["..."]}
//! ```
//!
//! Dataset files hold one `(text, intent)` pair per line. Out-of-scope
//! datasets omit `intent` (or set it to `null`):
//!
//! ```text
//! {"v":1,"text":"chcem zablokovať kartu","intent":"card_block"}
//! {"v":1,"text":"aké bude zajtra počasie"}
//! ```
//!
//! Blank lines are ignored. Files must be UTF-8.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_INVALID_LITERAL: &str = "invalid";

/// Inclusive per-intent example count range for "simple" datasets.
pub const SIMPLE_RANGE: (usize, usize) = (10, 20);
/// Inclusive per-intent example count range for "generated" datasets.
pub const GENERATED_RANGE: (usize, usize) = (20, 500);

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: file is not valid UTF-8")]
    Encoding { line: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    Version { line: usize, found: u32 },
    #[error("line {line}: field `{field}` must not be empty")]
    EmptyField { line: usize, field: &'static str },
    #[error("duplicate intent id `{0}`")]
    DuplicateIntent(String),
    #[error("intent id `{0}` is reserved for the invalid option")]
    ReservedIntent(String),
    #[error("registry has no intents")]
    EmptyRegistry,
    #[error("dataset `{dataset}` failed validation with {} violation(s); first: {}", .violations.len(), .violations[0])]
    Invalid {
        dataset: String,
        violations: Vec<Violation>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub id: String,
    pub description: String,
    pub response: String,
    #[serde(default)]
    pub examples: Vec<String>,
}

/// The full, immutable set of intents, sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentRegistry {
    intents: Vec<Intent>,
    invalid_literal: String,
}

impl IntentRegistry {
    pub fn new(intents: Vec<Intent>) -> Result<Self, CorpusError> {
        Self::with_invalid_literal(intents, DEFAULT_INVALID_LITERAL)
    }

    pub fn with_invalid_literal(
        mut intents: Vec<Intent>,
        invalid_literal: &str,
    ) -> Result<Self, CorpusError> {
        for intent in &intents {
            check_intent_fields(intent, 0)?;
            if intent.id == invalid_literal {
                return Err(CorpusError::ReservedIntent(intent.id.clone()));
            }
        }
        intents.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(pair) = intents.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CorpusError::DuplicateIntent(pair[0].id.clone()));
        }
        Ok(Self {
            intents,
            invalid_literal: invalid_literal.to_owned(),
        })
    }

    pub fn intents(&self) -> &[Intent] {
        &self.intents
    }

    pub fn len(&self) -> usize {
        self.intents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Intent> {
        self.intents
            .binary_search_by(|i| i.id.as_str().cmp(id))
            .ok()
            .map(|idx| &self.intents[idx])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|i| i.id.as_str())
    }

    /// The reserved literal naming the reranker's "none of these" option.
    pub fn invalid_literal(&self) -> &str {
        &self.invalid_literal
    }
}

fn check_intent_fields(intent: &Intent, line: usize) -> Result<(), CorpusError> {
    for (field, value) in [
        ("id", &intent.id),
        ("description", &intent.description),
        ("response", &intent.response),
    ] {
        if value.trim().is_empty() {
            return Err(CorpusError::EmptyField { line, field });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceExample {
    pub text: String,
    /// Gold intent. `None` for out-of-scope utterances.
    pub intent_id: Option<String>,
}

impl UtteranceExample {
    pub fn in_scope(text: impl Into<String>, intent_id: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            intent_id: Some(intent_id.into()),
        }
    }

    pub fn out_of_scope(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            intent_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Simple,
    Generated,
    Test,
    Oos,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Simple,
        DatasetKind::Generated,
        DatasetKind::Test,
        DatasetKind::Oos,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Simple => "simple",
            DatasetKind::Generated => "generated",
            DatasetKind::Test => "test",
            DatasetKind::Oos => "oos",
        }
    }

    /// Inclusive per-intent count range enforced for this kind, if any.
    pub fn count_range(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::Simple => Some(SIMPLE_RANGE),
            DatasetKind::Generated => Some(GENERATED_RANGE),
            DatasetKind::Test | DatasetKind::Oos => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown dataset kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub kind: DatasetKind,
    pub examples: Vec<UtteranceExample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        kind: DatasetKind,
        examples: Vec<UtteranceExample>,
    ) -> Self {
        Self {
            name: name.into(),
            kind,
            examples,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example count per gold intent id, in id order. OOS examples are skipped.
    pub fn counts_per_intent(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for id in self.examples.iter().filter_map(|e| e.intent_id.as_deref()) {
            *counts.entry(id).or_insert(0) += 1;
        }
        counts
    }
}

/// A broken dataset invariant. Violations are data: validation never fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    CountOutOfRange {
        intent_id: String,
        observed: usize,
        min: usize,
        max: usize,
    },
    DanglingReference {
        intent_id: String,
        index: usize,
    },
    MissingIntent {
        index: usize,
    },
    OosWithIntent {
        intent_id: String,
        index: usize,
    },
    EmptyText {
        index: usize,
    },
}

impl Violation {
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::CountOutOfRange { .. } => "count_out_of_range",
            Violation::DanglingReference { .. } => "dangling_reference",
            Violation::MissingIntent { .. } => "missing_intent",
            Violation::OosWithIntent { .. } => "oos_with_intent",
            Violation::EmptyText { .. } => "empty_text",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CountOutOfRange {
                intent_id,
                observed,
                min,
                max,
            } => write!(
                f,
                "{}: intent `{intent_id}` has {observed} examples, expected {min}..={max}",
                self.rule()
            ),
            Violation::DanglingReference { intent_id, index } => write!(
                f,
                "{}: example #{index} references unknown intent `{intent_id}`",
                self.rule()
            ),
            Violation::MissingIntent { index } => {
                write!(f, "{}: example #{index} has no intent", self.rule())
            }
            Violation::OosWithIntent { intent_id, index } => write!(
                f,
                "{}: out-of-scope example #{index} carries intent `{intent_id}`",
                self.rule()
            ),
            Violation::EmptyText { index } => {
                write!(f, "{}: example #{index} has empty text", self.rule())
            }
        }
    }
}

/// Checks every dataset invariant against `registry`. Returns `[]` iff all hold.
pub fn validate_dataset(dataset: &Dataset, registry: &IntentRegistry) -> Vec<Violation> {
    let mut violations = Vec::new();
    for (index, example) in dataset.examples.iter().enumerate() {
        if example.text.trim().is_empty() {
            violations.push(Violation::EmptyText { index });
        }
        match (&example.intent_id, dataset.kind) {
            (Some(id), DatasetKind::Oos) => violations.push(Violation::OosWithIntent {
                intent_id: id.clone(),
                index,
            }),
            (None, DatasetKind::Oos) => {}
            (None, _) => violations.push(Violation::MissingIntent { index }),
            (Some(id), _) if !registry.contains(id) => {
                violations.push(Violation::DanglingReference {
                    intent_id: id.clone(),
                    index,
                })
            }
            (Some(_), _) => {}
        }
    }
    if let Some((min, max)) = dataset.kind.count_range() {
        let counts = dataset.counts_per_intent();
        for id in registry.ids() {
            let observed = counts.get(id).copied().unwrap_or(0);
            if observed < min || observed > max {
                violations.push(Violation::CountOutOfRange {
                    intent_id: id.to_owned(),
                    observed,
                    min,
                    max,
                });
            }
        }
    }
    violations
}

/// What to do with dataset violations at ingestion time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    /// Violations are returned alongside the dataset.
    #[default]
    Report,
    /// Any violation fails ingestion.
    Strict,
}

/// Bijection between intent ids and contiguous labels `0..N`, in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    ids: Vec<String>,
}

impl LabelMap {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn label(&self, id: &str) -> Option<usize> {
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
    }

    pub fn intent(&self, label: usize) -> Option<&str> {
        self.ids.get(label).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.ids.iter().enumerate().map(|(l, id)| (id.as_str(), l))
    }
}

pub fn label_map(registry: &IntentRegistry) -> Result<LabelMap, CorpusError> {
    if registry.is_empty() {
        return Err(CorpusError::EmptyRegistry);
    }
    // registry ids are already sorted and unique
    Ok(LabelMap {
        ids: registry.ids().map(str::to_owned).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct RegistryRecord {
    v: u32,
    id: String,
    description: String,
    response: String,
    #[serde(default)]
    examples: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    v: u32,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intent: Option<String>,
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| {
        let valid = e.utf8_error().valid_up_to();
        let line = 1 + e.as_bytes()[..valid]
            .iter()
            .filter(|b| **b == b'\n')
            .count();
        CorpusError::Encoding { line }
    })
}

fn records<'a, T: serde::de::DeserializeOwned>(
    text: &'a str,
) -> impl Iterator<Item = Result<(usize, T), CorpusError>> + 'a {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            // check the version before the full schema so that a future
            // record layout reports the version and not a missing field
            let value: serde_json::Value =
                serde_json::from_str(l).map_err(|e| CorpusError::Parse {
                    line,
                    message: e.to_string(),
                })?;
            match value.get("v").and_then(serde_json::Value::as_u64) {
                Some(v) if v == u64::from(SCHEMA_VERSION) => {}
                Some(v) => {
                    return Err(CorpusError::Version {
                        line,
                        found: v as u32,
                    })
                }
                None => {
                    return Err(CorpusError::Parse {
                        line,
                        message: "missing schema version field `v`".into(),
                    })
                }
            }
            serde_json::from_value(value)
                .map(|r| (line, r))
                .map_err(|e| CorpusError::Parse {
                    line,
                    message: e.to_string(),
                })
        })
}

pub fn parse_registry(text: &str, invalid_literal: &str) -> Result<IntentRegistry, CorpusError> {
    let mut intents = Vec::new();
    for record in records::<RegistryRecord>(text) {
        let (line, r) = record?;
        let intent = Intent {
            id: r.id,
            description: r.description,
            response: r.response,
            examples: r.examples,
        };
        check_intent_fields(&intent, line)?;
        if intent.id == invalid_literal {
            return Err(CorpusError::ReservedIntent(intent.id));
        }
        intents.push(intent);
    }
    IntentRegistry::with_invalid_literal(intents, invalid_literal)
}

pub fn load_registry(path: &Path) -> Result<IntentRegistry, CorpusError> {
    load_registry_with(path, DEFAULT_INVALID_LITERAL)
}

pub fn load_registry_with(
    path: &Path,
    invalid_literal: &str,
) -> Result<IntentRegistry, CorpusError> {
    parse_registry(&read_utf8(path)?, invalid_literal)
}

pub fn parse_dataset(text: &str, name: &str, kind: DatasetKind) -> Result<Dataset, CorpusError> {
    let examples = records::<ExampleRecord>(text)
        .map(|r| {
            r.map(|(_, r)| UtteranceExample {
                text: r.text,
                intent_id: r.intent,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(name, kind, examples))
}

/// Reads a dataset file. The dataset name is the file stem.
pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Dataset, CorpusError> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| kind.as_str().to_owned());
    parse_dataset(&read_utf8(path)?, &name, kind)
}

/// Loads and validates a dataset. In strict mode any violation is an error;
/// otherwise the violations are returned with the dataset.
pub fn ingest_dataset(
    path: &Path,
    kind: DatasetKind,
    registry: &IntentRegistry,
    strictness: Strictness,
) -> Result<(Dataset, Vec<Violation>), CorpusError> {
    let dataset = load_dataset(path, kind)?;
    let violations = validate_dataset(&dataset, registry);
    if strictness == Strictness::Strict && !violations.is_empty() {
        return Err(CorpusError::Invalid {
            dataset: dataset.name,
            violations,
        });
    }
    Ok((dataset, violations))
}

pub fn write_registry<W: Write>(registry: &IntentRegistry, mut out: W) -> std::io::Result<()> {
    for intent in registry.intents() {
        let record = RegistryRecord {
            v: SCHEMA_VERSION,
            id: intent.id.clone(),
            description: intent.description.clone(),
            response: intent.response.clone(),
            examples: intent.examples.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    for example in &dataset.examples {
        let record = ExampleRecord {
            v: SCHEMA_VERSION,
            text: example.text.clone(),
            intent: example.intent_id.clone(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
