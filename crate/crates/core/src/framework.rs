//! The labeling framework and its compilation into chat prompt messages.
//!
//! A [`FrameworkSpec`] holds the task specification, definitions, behavior
//! corrections, heuristics and worked exemplars. [`assemble_prompt`] turns it
//! into a system message followed by one user/assistant turn pair per
//! exemplar and a final user turn carrying the target sentence.
//!
//! System message layout (sections separated by one blank line, empty
//! sections omitted):
//!
//! ```text
//! <task specification>
//!
//! DEFINITIONS
//! <name>: <text>
//! ...
//!
//! BEHAVIOR CORRECTIONS
//! - <correction>
//! ...
//!
//! HEURISTICS
//! <id> (<positive|negative>): <text>
//! ...
//! ```
//!
//! User turns are `Sentence: <text>`; assistant turns are
//! `<cot_trigger> <rationale>`.

use crate::hashing;
use crate::Label;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

pub const DEFAULT_COT_TRIGGER: &str = "Let's think step by step.";
pub const SUFFIX_LEAD: &str = "Based on these considerations, I would categorize this sentence as:";
pub const USER_PREFIX: &str = "Sentence: ";

const DEFAULT_FRAMEWORK_JSON: &str = include_str!("../assets/default_framework.json");

/// The sentence every exemplar rationale must end with.
pub fn canonical_suffix(label: Label) -> String {
    format!("{SUFFIX_LEAD} {}.", label.display())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heuristic {
    pub id: String,
    pub polarity: Polarity,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub sentence: String,
    pub label: Label,
    pub rationale: String,
}

impl Exemplar {
    /// The assistant turn shown to the model for this exemplar.
    pub fn assistant_turn(&self, cot_trigger: &str) -> String {
        format!("{cot_trigger} {}", self.rationale)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkSpec {
    pub task_specification: String,
    pub definitions: Vec<Definition>,
    pub behavior_corrections: Vec<String>,
    pub heuristics: Vec<Heuristic>,
    pub exemplars: Vec<Exemplar>,
    pub cot_trigger: String,
}

/// On-disk form, loosely typed so that validation can report every problem.
#[derive(Deserialize)]
struct RawSpec {
    task_specification: String,
    #[serde(default)]
    definitions: Vec<Definition>,
    #[serde(default)]
    behavior_corrections: Vec<String>,
    #[serde(default)]
    heuristics: Vec<RawHeuristic>,
    #[serde(default)]
    exemplars: Vec<RawExemplar>,
    cot_trigger: Option<String>,
}

#[derive(Deserialize)]
struct RawHeuristic {
    id: String,
    polarity: String,
    text: String,
}

#[derive(Deserialize)]
struct RawExemplar {
    sentence: String,
    label: String,
    rationale: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameworkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("framework JSON does not match the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("invalid framework:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl FrameworkSpec {
    pub fn from_json(json: &str) -> Result<Self, FrameworkError> {
        let raw: RawSpec = serde_json::from_str(json)?;
        let mut errors = Vec::new();

        let heuristics = raw
            .heuristics
            .into_iter()
            .filter_map(|h| {
                let polarity = match h.polarity.trim().to_ascii_lowercase().as_str() {
                    "positive" => Polarity::Positive,
                    "negative" => Polarity::Negative,
                    other => {
                        errors.push(format!("heuristic {}: unknown polarity {other:?}", h.id));
                        return None;
                    }
                };
                Some(Heuristic {
                    id: h.id,
                    polarity,
                    text: h.text,
                })
            })
            .collect();

        let exemplars = raw
            .exemplars
            .into_iter()
            .enumerate()
            .filter_map(|(i, e)| match Label::resolve(&e.label) {
                Some(label) => Some(Exemplar {
                    sentence: e.sentence,
                    label,
                    rationale: e.rationale,
                }),
                None => {
                    errors.push(format!("exemplar {i}: unknown label {:?}", e.label));
                    None
                }
            })
            .collect();

        let spec = FrameworkSpec {
            task_specification: raw.task_specification,
            definitions: raw.definitions,
            behavior_corrections: raw.behavior_corrections,
            heuristics,
            exemplars,
            cot_trigger: raw
                .cot_trigger
                .unwrap_or_else(|| DEFAULT_COT_TRIGGER.to_string()),
        };
        errors.extend(spec.violations());
        if errors.is_empty() {
            Ok(spec)
        } else {
            Err(FrameworkError::Invalid(errors))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("framework serializes")
    }

    /// Every rule the spec breaks; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.task_specification.trim().is_empty() {
            errors.push("task_specification is empty".to_string());
        }
        if self.cot_trigger.trim().is_empty() {
            errors.push("cot_trigger is empty".to_string());
        }
        let mut ids = HashSet::new();
        for h in &self.heuristics {
            if !ids.insert(h.id.as_str()) {
                errors.push(format!("heuristic id {} is duplicated", h.id));
            }
            let expected = match h.id.chars().next() {
                Some('P') => Some(Polarity::Positive),
                Some('N') => Some(Polarity::Negative),
                _ => None,
            };
            if let Some(expected) = expected.filter(|&p| p != h.polarity) {
                errors.push(format!(
                    "heuristic {} has polarity {} but its id implies {expected}",
                    h.id, h.polarity
                ));
            }
        }
        for (i, e) in self.exemplars.iter().enumerate() {
            let rationale = e.rationale.trim_end();
            if rationale.is_empty() {
                errors.push(format!("exemplar {i}: rationale is empty"));
                continue;
            }
            if rationale.ends_with(&canonical_suffix(e.label)) {
                continue;
            }
            match Label::ALL
                .into_iter()
                .find(|&l| rationale.ends_with(&canonical_suffix(l)))
            {
                Some(other) => errors.push(format!(
                    "exemplar {i}: rationale concludes {:?} but label is {:?}",
                    other.display(),
                    e.label.display()
                )),
                None => errors.push(format!(
                    "exemplar {i}: rationale must end with {:?}",
                    canonical_suffix(e.label)
                )),
            }
        }
        for label in Label::ALL {
            if !self.exemplars.iter().any(|e| e.label == label) {
                errors.push(format!("no exemplar for label {}", label.display()));
            }
        }
        errors
    }

    pub fn exemplar_count(&self) -> usize {
        self.exemplars.len()
    }

    pub fn content_hash(&self) -> String {
        hashing::sha256_hex(self.to_json().as_bytes())
    }
}

pub fn load_framework(path: &Path) -> Result<FrameworkSpec, FrameworkError> {
    let json = fs::read_to_string(path).map_err(|source| FrameworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    FrameworkSpec::from_json(&json)
}

/// The shipped framework: public value definition, heuristics P1, P2, N1, N2,
/// N3, and the fourteen exemplars that carry rationales.
pub fn default_framework() -> FrameworkSpec {
    FrameworkSpec::from_json(DEFAULT_FRAMEWORK_JSON).expect("shipped framework is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptMessages(pub Vec<Message>);

impl PromptMessages {
    pub fn messages(&self) -> &[Message] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Compact JSON, the form that is hashed and sent.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    /// SHA-256 of [`Self::to_json`].
    pub fn hash(&self) -> String {
        hashing::sha256_hex(self.to_json().as_bytes())
    }

    /// Total characters across message contents.
    pub fn char_count(&self) -> usize {
        self.0.iter().map(|m| m.content.chars().count()).sum()
    }
}

pub fn system_message(spec: &FrameworkSpec) -> String {
    let mut sections = vec![spec.task_specification.trim().to_string()];
    if !spec.definitions.is_empty() {
        let body: Vec<String> = spec
            .definitions
            .iter()
            .map(|d| format!("{}: {}", d.name.trim(), d.text.trim()))
            .collect();
        sections.push(format!("DEFINITIONS\n{}", body.join("\n")));
    }
    if !spec.behavior_corrections.is_empty() {
        let body: Vec<String> = spec
            .behavior_corrections
            .iter()
            .map(|c| format!("- {}", c.trim()))
            .collect();
        sections.push(format!("BEHAVIOR CORRECTIONS\n{}", body.join("\n")));
    }
    if !spec.heuristics.is_empty() {
        let body: Vec<String> = spec
            .heuristics
            .iter()
            .map(|h| format!("{} ({}): {}", h.id, h.polarity, h.text.trim()))
            .collect();
        sections.push(format!("HEURISTICS\n{}", body.join("\n")));
    }
    sections.join("\n\n")
}

pub fn user_turn(sentence: &str) -> String {
    format!("{USER_PREFIX}{}", sentence.trim())
}

/// Compiles `spec` into chat messages ending with the target sentence.
/// `1 + 2 * exemplars + 1` messages.
pub fn assemble_prompt(spec: &FrameworkSpec, target: &str) -> PromptMessages {
    let mut msgs = Vec::with_capacity(2 + 2 * spec.exemplars.len());
    msgs.push(Message::new(Role::System, system_message(spec)));
    for e in &spec.exemplars {
        msgs.push(Message::new(Role::User, user_turn(&e.sentence)));
        msgs.push(Message::new(
            Role::Assistant,
            e.assistant_turn(&spec.cot_trigger),
        ));
    }
    msgs.push(Message::new(Role::User, user_turn(target)));
    PromptMessages(msgs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> FrameworkSpec {
        FrameworkSpec {
            task_specification: "Label the sentence.".into(),
            definitions: vec![Definition {
                name: "PVE".into(),
                text: "A societal benefit.".into(),
            }],
            behavior_corrections: vec![],
            heuristics: vec![Heuristic {
                id: "P1".into(),
                polarity: Polarity::Positive,
                text: "Direct link.".into(),
            }],
            exemplars: Label::ALL
                .iter()
                .map(|&l| Exemplar {
                    sentence: format!("Example for {l}."),
                    label: l,
                    rationale: format!("Reasons. {}", canonical_suffix(l)),
                })
                .collect(),
            cot_trigger: DEFAULT_COT_TRIGGER.into(),
        }
    }

    #[test]
    fn default_framework_contents() {
        let spec = default_framework();
        let ids: Vec<_> = spec.heuristics.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["P1", "P2", "N1", "N2", "N3"]);
        assert_eq!(spec.exemplar_count(), 14);
        let first = &spec.exemplars[0];
        assert!(first.sentence.starts_with(
            "an inventive solution to the need to prevent private information inferencing"
        ));
        assert_eq!(first.label, Label::DirectPve);
        for label in Label::ALL {
            assert!(spec.exemplars.iter().any(|e| e.label == label));
        }
        assert!(spec.violations().is_empty());
        assert_eq!(spec.cot_trigger, "Let's think step by step.");
    }

    #[test]
    fn one_exemplar_gives_four_messages() {
        let mut spec = tiny_spec();
        spec.exemplars.truncate(1);
        let p = assemble_prompt(&spec, "Target.");
        let roles: Vec<Role> = p.messages().iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [Role::System, Role::User, Role::Assistant, Role::User]
        );
        assert_eq!(p.messages()[3].content, "Sentence: Target.");
    }

    #[test]
    fn default_prompt_has_thirty_messages() {
        let p = assemble_prompt(&default_framework(), "Some sentence.");
        assert_eq!(p.len(), 30);
        for pair in p.messages()[1..29].chunks(2) {
            assert_eq!(pair[0].role, Role::User);
            assert_eq!(pair[1].role, Role::Assistant);
            assert!(pair[1].content.starts_with(DEFAULT_COT_TRIGGER));
            assert!(pair[1].content.contains(SUFFIX_LEAD));
        }
    }

    #[test]
    fn system_message_layout() {
        let mut spec = tiny_spec();
        spec.behavior_corrections = vec!["Do not infer.".into()];
        assert_eq!(
            system_message(&spec),
            "Label the sentence.\n\nDEFINITIONS\nPVE: A societal benefit.\n\n\
             BEHAVIOR CORRECTIONS\n- Do not infer.\n\nHEURISTICS\nP1 (positive): Direct link."
        );
    }

    #[test]
    fn assembly_is_deterministic() {
        let spec = default_framework();
        let a = assemble_prompt(&spec, "X improves safety.");
        let b = assemble_prompt(&spec, "X improves safety.");
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), assemble_prompt(&spec, "Other.").hash());
    }

    #[test]
    fn missing_label_coverage() {
        let mut spec = tiny_spec();
        spec.exemplars.retain(|e| e.label != Label::NoPve);
        let err = FrameworkSpec::from_json(&spec.to_json()).unwrap_err();
        assert!(
            err.to_string().contains("no exemplar for label No PVE"),
            "{err}"
        );
    }

    #[test]
    fn suffix_label_mismatch() {
        let mut spec = tiny_spec();
        spec.exemplars[1].rationale = format!("Reasons. {}", canonical_suffix(Label::DirectPve));
        let err = FrameworkSpec::from_json(&spec.to_json()).unwrap_err();
        assert!(
            err.to_string().contains("concludes \"Direct PVE\""),
            "{err}"
        );
    }

    #[test]
    fn all_violations_are_listed() {
        let json = r#"{
            "task_specification": "t",
            "heuristics": [{"id": "P1", "polarity": "sideways", "text": "x"},
                           {"id": "N1", "polarity": "positive", "text": "y"}],
            "exemplars": [{"sentence": "s", "label": "D_PVE", "rationale": "no suffix"},
                          {"sentence": "s", "label": "maybe", "rationale": "r"}],
            "cot_trigger": "Think."
        }"#;
        let FrameworkError::Invalid(errs) = FrameworkSpec::from_json(json).unwrap_err() else {
            panic!("expected Invalid");
        };
        let joined = errs.join("\n");
        for needle in [
            "unknown polarity \"sideways\"",
            "N1 has polarity positive",
            "must end with",
            "unknown label \"maybe\"",
            "no exemplar for label Contextual PVE",
            "no exemplar for label No PVE",
        ] {
            assert!(joined.contains(needle), "missing {needle:?} in:\n{joined}");
        }
    }

    #[test]
    fn serialization_round_trips() {
        let spec = default_framework();
        assert_eq!(FrameworkSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fw.json");
        fs::write(&p, default_framework().to_json()).unwrap();
        assert_eq!(load_framework(&p).unwrap(), default_framework());
        assert!(matches!(
            load_framework(&dir.path().join("missing.json")),
            Err(FrameworkError::Io { .. })
        ));
    }
}
