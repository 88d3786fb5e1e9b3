//! Second-stage selection: the top shortlisted intents plus a terminal
//! "invalid" option are put in front of a chat model, and its answer is
//! parsed back into a [`Verdict`].

mod client;
mod remote;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::IntentRegistry;
use crate::normalize::{strip_diacritics, to_lowercase};
use crate::shortlist::Shortlist;

pub use client::{
    rerank, ClientError, ConcurrencyLimit, RerankerClient, RetryPolicy, ScriptedClient,
};
pub use remote::{RemoteClient, RemoteSettings};

/// Intent options offered to the reranker before the invalid option.
pub const PROMPT_INTENT_OPTIONS: usize = 3;
pub const DEFAULT_TEMPLATE_ID: &str = "sk-system";

const BUNDLED_TEMPLATES: &str = include_str!("../../assets/prompt_templates.toml");

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("shortlisted intent `{0}` is not in the registry")]
    UnknownIntent(String),
    #[error("template file: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// The chat messages actually sent to a reranker backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
}

impl RenderedPrompt {
    /// Hex SHA-256 over the JSON encoding of the messages. Keys scripted
    /// responses.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_vec(&self.messages).expect("messages serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub version: u32,
    pub instruction_role: Role,
    pub instruction: String,
    pub user: String,
    pub option: String,
    pub invalid_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TemplateSet {
    #[serde(rename = "template")]
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    /// Templates compiled into the binary.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TEMPLATES).expect("bundled templates parse")
    }

    pub fn parse(text: &str) -> Result<Self, RerankError> {
        let set: TemplateSet =
            toml::from_str(text).map_err(|e| RerankError::Templates(e.to_string()))?;
        for (i, t) in set.templates.iter().enumerate() {
            if set.templates[..i].iter().any(|o| o.id == t.id) {
                return Err(RerankError::Templates(format!(
                    "duplicate template id `{}`",
                    t.id
                )));
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, RerankError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RerankError::Templates(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, RerankError> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| RerankError::UnknownTemplate(id.to_owned()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.iter().map(|t| t.id.as_str())
    }
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "intent_id", rename_all = "lowercase")]
pub enum OptionTarget {
    Intent(String),
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOption {
    /// 1-based.
    pub position: usize,
    pub target: OptionTarget,
    pub description: String,
}

impl PromptOption {
    pub fn letter(&self) -> char {
        option_letter(self.position)
    }

    pub fn intent_id(&self) -> Option<&str> {
        match &self.target {
            OptionTarget::Intent(id) => Some(id),
            OptionTarget::Invalid => None,
        }
    }
}

/// `a` for position 1, `b` for 2 and so on.
pub fn option_letter(position: usize) -> char {
    debug_assert!((1..=26).contains(&position));
    (b'a' + (position - 1) as u8) as char
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub question: String,
    pub options: Vec<PromptOption>,
    pub template_id: String,
    pub template_version: u32,
    pub invalid_literal: String,
    pub rendered: RenderedPrompt,
}

impl PromptSpec {
    pub fn option(&self, position: usize) -> Option<&PromptOption> {
        position.checked_sub(1).and_then(|i| self.options.get(i))
    }

    /// Number of intent options, excluding the trailing invalid option.
    pub fn intent_option_count(&self) -> usize {
        self.options.len().saturating_sub(1)
    }
}

/// Builds the reranker prompt from the top of `shortlist`.
///
/// The prompt offers the first [`PROMPT_INTENT_OPTIONS`] candidates in rank
/// order, each with its registry description, followed by the invalid option.
pub fn build_prompt(
    question: &str,
    shortlist: &Shortlist,
    registry: &IntentRegistry,
    templates: &TemplateSet,
    template_id: &str,
) -> Result<PromptSpec, RerankError> {
    let template = templates.get(template_id)?;
    let mut options = Vec::with_capacity(PROMPT_INTENT_OPTIONS + 1);
    for candidate in shortlist.candidates.iter().take(PROMPT_INTENT_OPTIONS) {
        let intent = registry
            .get(&candidate.intent_id)
            .ok_or_else(|| RerankError::UnknownIntent(candidate.intent_id.clone()))?;
        options.push(PromptOption {
            position: options.len() + 1,
            target: OptionTarget::Intent(intent.id.clone()),
            description: intent.description.clone(),
        });
    }
    options.push(PromptOption {
        position: options.len() + 1,
        target: OptionTarget::Invalid,
        description: template.invalid_description.clone(),
    });

    let invalid_literal = registry.invalid_literal();
    let option_lines: Vec<String> = options
        .iter()
        .map(|o| {
            let number = o.position.to_string();
            let letter = o.letter().to_string();
            fill(
                &template.option,
                &[
                    ("number", &number),
                    ("letter", &letter),
                    ("intent", o.intent_id().unwrap_or(invalid_literal)),
                    ("description", &o.description),
                ],
            )
        })
        .collect();
    let user = fill(
        &template.user,
        &[
            ("question", question),
            ("options", &option_lines.join("\n")),
        ],
    );
    let messages = match template.instruction_role {
        Role::System => vec![
            Message {
                role: Role::System,
                content: template.instruction.clone(),
            },
            Message {
                role: Role::User,
                content: user,
            },
        ],
        Role::User => vec![Message {
            role: Role::User,
            content: format!("{}\n\n{user}", template.instruction),
        }],
    };

    Ok(PromptSpec {
        question: question.to_owned(),
        options,
        template_id: template.id.clone(),
        template_version: template.version,
        invalid_literal: invalid_literal.to_owned(),
        rendered: RenderedPrompt { messages },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Intent,
    Invalid,
    Unparseable,
}

/// Parsed reranker answer. `intent_id` is set iff `kind` is `Intent`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_id: Option<String>,
    pub raw: String,
}

impl Verdict {
    pub fn intent(id: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            kind: VerdictKind::Intent,
            intent_id: Some(id.into()),
            raw: raw.into(),
        }
    }

    pub fn invalid(raw: impl Into<String>) -> Self {
        Self {
            kind: VerdictKind::Invalid,
            intent_id: None,
            raw: raw.into(),
        }
    }

    pub fn unparseable(raw: impl Into<String>) -> Self {
        Self {
            kind: VerdictKind::Unparseable,
            intent_id: None,
            raw: raw.into(),
        }
    }

    fn from_option(option: &PromptOption, raw: &str) -> Self {
        match &option.target {
            OptionTarget::Intent(id) => Verdict::intent(id.clone(), raw),
            OptionTarget::Invalid => Verdict::invalid(raw),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, &self.intent_id) {
            (VerdictKind::Intent, Some(id)) => write!(f, "intent {id}"),
            (VerdictKind::Invalid, _) => f.write_str("invalid"),
            _ => f.write_str("unparseable"),
        }
    }
}

fn fold(text: &str) -> String {
    strip_diacritics(&to_lowercase(text))
}

/// Interprets a raw model answer against the options of `prompt`.
///
/// Tried in order: option number (`"3"`, `"3."`), option letter (`"c"`),
/// exact intent id or invalid literal, then a case- and
/// diacritic-insensitive substring match that must hit exactly one option.
pub fn parse_verdict(raw: &str, prompt: &PromptSpec) -> Verdict {
    let answer = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '„' | '“' | '”'))
        .trim();
    let bare = answer
        .strip_suffix(['.', ')', ':'])
        .unwrap_or(answer)
        .trim();

    if !bare.is_empty() && bare.bytes().all(|b| b.is_ascii_digit()) {
        if let Some(option) = bare.parse().ok().and_then(|n| prompt.option(n)) {
            return Verdict::from_option(option, raw);
        }
    }

    let mut chars = bare.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_ascii_alphabetic() {
            let position = (c.to_ascii_lowercase() as u8 - b'a') as usize + 1;
            if let Some(option) = prompt.option(position) {
                return Verdict::from_option(option, raw);
            }
        }
    }

    for candidate in [answer, bare] {
        if candidate == prompt.invalid_literal {
            return Verdict::invalid(raw);
        }
        if let Some(option) = prompt
            .options
            .iter()
            .find(|o| o.intent_id() == Some(candidate))
        {
            return Verdict::from_option(option, raw);
        }
    }

    let folded = fold(raw);
    let mut hit: Option<&PromptOption> = None;
    for option in &prompt.options {
        let name = fold(option.intent_id().unwrap_or(&prompt.invalid_literal));
        if !name.is_empty() && folded.contains(&name) {
            if hit.is_some() {
                return Verdict::unparseable(raw);
            }
            hit = Some(option);
        }
    }
    match hit {
        Some(option) => Verdict::from_option(option, raw),
        None => Verdict::unparseable(raw),
    }
}
