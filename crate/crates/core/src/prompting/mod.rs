//! Chat prompt rendering: plain, prefilled and revision conversations.
//!
//! Templates live in a plain-text file with `=== section ===` headers (see
//! `templates/default.txt`, which is embedded as the default). Rendering is
//! a single left-to-right pass over the template, so placeholder-like text
//! inside a document or summary is never expanded.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{LengthMeasure, BULLET};

const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.txt");

/// Default relative tolerance for compliance and LC.
pub const DEFAULT_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("cannot summarize an empty document")]
    EmptyDocument,
    #[error("target must be at least 1, got {0}")]
    ZeroTarget(usize),
    #[error("tolerance must lie in [0, 1), got {0}")]
    BadTolerance(f64),
    #[error("summary already has the requested length {0}; no revision to ask for")]
    NoDeviation(usize),
    #[error("unknown quantifier `{0}`")]
    UnknownQuantifier(String),
    #[error("template file: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    fn new(role: Role, content: String) -> Self {
        Self { role, content }
    }
}

/// A numeric length request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub measure: LengthMeasure,
    pub target: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl TargetSpec {
    pub fn new(measure: LengthMeasure, target: usize) -> Result<Self, PromptError> {
        Self::with_tolerance(measure, target, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(
        measure: LengthMeasure,
        target: usize,
        tolerance: f64,
    ) -> Result<Self, PromptError> {
        if target == 0 {
            return Err(PromptError::ZeroTarget(target));
        }
        if !(0.0..1.0).contains(&tolerance) {
            return Err(PromptError::BadTolerance(tolerance));
        }
        Ok(Self { measure, target, tolerance })
    }
}

/// Qualitative length words accepted instead of a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantifier {
    Short,
    Concise,
    Brief,
    Moderate,
    MediumLength,
    Comprehensive,
    Verbose,
    Long,
}

impl Quantifier {
    pub const ALL: [Quantifier; 8] = [
        Quantifier::Short,
        Quantifier::Concise,
        Quantifier::Brief,
        Quantifier::Moderate,
        Quantifier::MediumLength,
        Quantifier::Comprehensive,
        Quantifier::Verbose,
        Quantifier::Long,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantifier::Short => "short",
            Quantifier::Concise => "concise",
            Quantifier::Brief => "brief",
            Quantifier::Moderate => "moderate",
            Quantifier::MediumLength => "medium-length",
            Quantifier::Comprehensive => "comprehensive",
            Quantifier::Verbose => "verbose",
            Quantifier::Long => "long",
        }
    }
}

impl FromStr for Quantifier {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Quantifier::ALL
            .into_iter()
            .find(|q| q.as_str() == s.trim())
            .ok_or_else(|| PromptError::UnknownQuantifier(s.to_string()))
    }
}

impl fmt::Display for Quantifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a plan asks for, in structured form. Backends that simulate a
/// model read this instead of parsing prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanIntent {
    Initial { measure: LengthMeasure, target: usize },
    Revision { measure: LengthMeasure, target: usize, previous_length: usize },
    Qualitative { quantifier: Quantifier },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub messages: Vec<ChatMessage>,
    /// Start of the assistant turn; also the content of the last message.
    pub prefill: Option<String>,
    /// The prefill ends with summary content (the bullet symbol) that must be
    /// put back in front of the completion before it is counted.
    pub echo_prefill: bool,
    /// The document the plan summarizes, as embedded in the user message.
    pub document: String,
    pub intent: PlanIntent,
}

impl PromptPlan {
    /// Text to prepend to a raw completion: the part of the prefill after
    /// its last blank line, when `echo_prefill` is set.
    pub fn echo_text(&self) -> &str {
        match (&self.prefill, self.echo_prefill) {
            (Some(p), true) => p.rfind("\n\n").map_or(p.as_str(), |i| &p[i + 2..]),
            _ => "",
        }
    }

    /// Human-readable dump used for golden files and `--trace`.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        let last = self.messages.len().saturating_sub(1);
        for (i, m) in self.messages.iter().enumerate() {
            let tag = if i == last && self.prefill.is_some() {
                "assistant prefill".to_string()
            } else {
                m.role.to_string()
            };
            out.push_str(&format!("<<{tag}>>\n{}\n", m.content));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub system: String,
    pub initial_user: String,
    pub initial_prefill: String,
    pub summary_turn: String,
    pub revision_user: String,
    pub revision_prefill: String,
    pub qualitative_user: String,
    pub qualitative_prefill: String,
}

const PLACEHOLDERS: &[&str] = &[
    "length",
    "unit",
    "input",
    "summary",
    "summary_length",
    "length_difference",
    "more_less",
    "quantifier",
];

impl Default for Templates {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("embedded templates are valid")
    }
}

impl Templates {
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self, PromptError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in raw.split_inclusive('\n') {
            let bare = line.trim_end_matches(['\n', '\r']);
            if let Some(name) = bare.strip_prefix("=== ").and_then(|r| r.strip_suffix(" ===")) {
                sections.push((name.trim().to_string(), String::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push_str(line);
            } else if !(bare.is_empty() || bare.starts_with('#')) {
                return Err(PromptError::Template(format!("text before first section: {bare:?}")));
            }
        }

        let mut take = |name: &str| -> Result<String, PromptError> {
            let idx = sections
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| PromptError::Template(format!("missing section `{name}`")))?;
            let (_, mut body) = sections.remove(idx);
            if body.ends_with('\n') {
                body.pop();
            }
            validate_placeholders(name, &body)?;
            Ok(body)
        };
        let templates = Templates {
            system: take("system")?,
            initial_user: take("initial_user")?,
            initial_prefill: take("initial_prefill")?,
            summary_turn: take("summary_turn")?,
            revision_user: take("revision_user")?,
            revision_prefill: take("revision_prefill")?,
            qualitative_user: take("qualitative_user")?,
            qualitative_prefill: take("qualitative_prefill")?,
        };
        if let Some((name, _)) = sections.first() {
            return Err(PromptError::Template(format!("unknown section `{name}`")));
        }
        Ok(templates)
    }
}

fn validate_placeholders(section: &str, body: &str) -> Result<(), PromptError> {
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = &after[..close];
        if !PLACEHOLDERS.contains(&name) {
            return Err(PromptError::Template(format!("unknown placeholder `{{{name}}}` in `{section}`")));
        }
        rest = &after[close + 1..];
    }
    Ok(())
}

#[derive(Default)]
struct Vars<'a> {
    measure: Option<LengthMeasure>,
    length: Option<usize>,
    input: Option<&'a str>,
    summary: Option<&'a str>,
    summary_length: Option<usize>,
    length_difference: Option<usize>,
    more_less: Option<&'a str>,
    quantifier: Option<Quantifier>,
}

/// Renders [`PromptPlan`]s from a template set.
#[derive(Debug, Clone, Default)]
pub struct PromptRenderer {
    templates: Templates,
    /// Always use the plural unit noun, even after the number 1.
    strict_template: bool,
}

impl PromptRenderer {
    pub fn new(templates: Templates, strict_template: bool) -> Self {
        Self { templates, strict_template }
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    fn fill(&self, template: &str, vars: &Vars<'_>) -> String {
        let mut out = String::with_capacity(template.len() + vars.input.map_or(0, str::len));
        let mut last_number = vars.length;
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after.find('}');
            let name = close.map(|c| &after[..c]);
            let value: Option<String> = match name {
                Some("length") => vars.length.map(|n| {
                    last_number = Some(n);
                    n.to_string()
                }),
                Some("summary_length") => vars.summary_length.map(|n| {
                    last_number = Some(n);
                    n.to_string()
                }),
                Some("length_difference") => vars.length_difference.map(|n| {
                    last_number = Some(n);
                    n.to_string()
                }),
                Some("unit") => vars.measure.map(|m| {
                    if last_number == Some(1) && !self.strict_template {
                        m.singular_noun().to_string()
                    } else {
                        m.plural_noun().to_string()
                    }
                }),
                Some("input") => vars.input.map(str::to_string),
                Some("summary") => vars.summary.map(str::to_string),
                Some("more_less") => vars.more_less.map(str::to_string),
                Some("quantifier") => vars.quantifier.map(|q| q.as_str().to_string()),
                _ => None,
            };
            match (value, close) {
                (Some(v), Some(c)) => {
                    out.push_str(&v);
                    rest = &after[c + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }

    fn bulletize(prefill: String, measure: LengthMeasure) -> (String, bool) {
        if measure == LengthMeasure::BulletPoints {
            (format!("{prefill}{BULLET} "), true)
        } else {
            (prefill, false)
        }
    }

    pub fn render_initial(
        &self,
        document: &str,
        spec: &TargetSpec,
        prefill_enabled: bool,
    ) -> Result<PromptPlan, PromptError> {
        if document.trim().is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        let vars = Vars {
            measure: Some(spec.measure),
            length: Some(spec.target),
            input: Some(document),
            ..Vars::default()
        };
        let mut messages = vec![
            ChatMessage::new(Role::System, self.templates.system.clone()),
            ChatMessage::new(Role::User, self.fill(&self.templates.initial_user, &vars)),
        ];
        let (prefill, echo_prefill) = if prefill_enabled {
            let (p, echo) = Self::bulletize(self.fill(&self.templates.initial_prefill, &vars), spec.measure);
            messages.push(ChatMessage::new(Role::Assistant, p.clone()));
            (Some(p), echo)
        } else {
            (None, false)
        };
        Ok(PromptPlan {
            messages,
            prefill,
            echo_prefill,
            document: document.to_string(),
            intent: PlanIntent::Initial { measure: spec.measure, target: spec.target },
        })
    }

    /// One self-contained revision step: the original request, the latest
    /// summary as the assistant turn, and the length feedback.
    pub fn render_revision(
        &self,
        document: &str,
        previous_summary: &str,
        measured: usize,
        spec: &TargetSpec,
    ) -> Result<PromptPlan, PromptError> {
        if document.trim().is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        if measured == spec.target {
            return Err(PromptError::NoDeviation(measured));
        }
        let vars = Vars {
            measure: Some(spec.measure),
            length: Some(spec.target),
            input: Some(document),
            summary: Some(previous_summary),
            summary_length: Some(measured),
            length_difference: Some(measured.abs_diff(spec.target)),
            more_less: Some(if measured > spec.target { "more" } else { "less" }),
            quantifier: None,
        };
        let (prefill, echo_prefill) =
            Self::bulletize(self.fill(&self.templates.revision_prefill, &vars), spec.measure);
        let messages = vec![
            ChatMessage::new(Role::System, self.templates.system.clone()),
            ChatMessage::new(Role::User, self.fill(&self.templates.initial_user, &vars)),
            ChatMessage::new(Role::Assistant, self.fill(&self.templates.summary_turn, &vars)),
            ChatMessage::new(Role::User, self.fill(&self.templates.revision_user, &vars)),
            ChatMessage::new(Role::Assistant, prefill.clone()),
        ];
        Ok(PromptPlan {
            messages,
            prefill: Some(prefill),
            echo_prefill,
            document: document.to_string(),
            intent: PlanIntent::Revision {
                measure: spec.measure,
                target: spec.target,
                previous_length: measured,
            },
        })
    }

    pub fn render_qualitative(
        &self,
        document: &str,
        quantifier: Quantifier,
        prefill_enabled: bool,
    ) -> Result<PromptPlan, PromptError> {
        if document.trim().is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        let vars = Vars { input: Some(document), quantifier: Some(quantifier), ..Vars::default() };
        let mut messages = vec![
            ChatMessage::new(Role::System, self.templates.system.clone()),
            ChatMessage::new(Role::User, self.fill(&self.templates.qualitative_user, &vars)),
        ];
        let prefill = prefill_enabled.then(|| self.fill(&self.templates.qualitative_prefill, &vars));
        if let Some(p) = &prefill {
            messages.push(ChatMessage::new(Role::Assistant, p.clone()));
        }
        Ok(PromptPlan {
            messages,
            prefill,
            echo_prefill: false,
            document: document.to_string(),
            intent: PlanIntent::Qualitative { quantifier },
        })
    }
}
