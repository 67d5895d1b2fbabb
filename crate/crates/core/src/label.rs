//! The three-way PVE label and its alias table.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// Sentence category assigned by annotators (human or GLM).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// The sentence ties the patented invention to a public value.
    DirectPve,
    /// The sentence shows awareness of a public value without linking it to the invention.
    ContextualPve,
    NoPve,
}

/// Accepted spellings, compared after [`normalize_alias`]. Hyphens and
/// underscores are folded to spaces, so "D-PVE", "d_pve" and "D PVE" are the
/// same entry.
pub const ALIASES: &[(&str, Label)] = &[
    ("direct pve", Label::DirectPve),
    ("d pve", Label::DirectPve),
    ("dpve", Label::DirectPve),
    ("direct", Label::DirectPve),
    ("direct public value expression", Label::DirectPve),
    ("contextual pve", Label::ContextualPve),
    ("c pve", Label::ContextualPve),
    ("cpve", Label::ContextualPve),
    ("contextual", Label::ContextualPve),
    ("contextual public value expression", Label::ContextualPve),
    ("no pve", Label::NoPve),
    ("nopve", Label::NoPve),
    ("not pve", Label::NoPve),
    ("not a pve", Label::NoPve),
    ("non pve", Label::NoPve),
    ("none", Label::NoPve),
    ("no public value expression", Label::NoPve),
    ("not a public value expression", Label::NoPve),
];

impl Label {
    pub const ALL: [Label; 3] = [Label::DirectPve, Label::ContextualPve, Label::NoPve];

    /// Display string used in prompts and the categorization suffix.
    pub fn display(self) -> &'static str {
        match self {
            Label::DirectPve => "Direct PVE",
            Label::ContextualPve => "Contextual PVE",
            Label::NoPve => "No PVE",
        }
    }

    /// Stable identifier used in files and on the wire.
    pub fn code(self) -> &'static str {
        match self {
            Label::DirectPve => "D_PVE",
            Label::ContextualPve => "C_PVE",
            Label::NoPve => "NO_PVE",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::DirectPve => 0,
            Label::ContextualPve => 1,
            Label::NoPve => 2,
        }
    }

    pub fn is_pve(self) -> bool {
        self != Label::NoPve
    }

    /// Resolves any alias, case-insensitively. Surrounding quotes, asterisks
    /// and trailing punctuation are ignored.
    pub fn resolve(raw: &str) -> Option<Label> {
        let norm = normalize_alias(raw);
        ALIASES
            .iter()
            .find(|(alias, _)| *alias == norm)
            .map(|&(_, label)| label)
    }

    /// Resolves the longest alias that starts `text` on a word boundary.
    /// Used on free text such as "Direct PVE. The invention ...".
    pub fn resolve_prefix(text: &str) -> Option<Label> {
        let norm = normalize_alias(text);
        ALIASES
            .iter()
            .filter(|(alias, _)| {
                norm.starts_with(alias)
                    && norm[alias.len()..]
                        .chars()
                        .next()
                        .is_none_or(|c| !c.is_alphanumeric())
            })
            .max_by_key(|(alias, _)| alias.len())
            .map(|&(_, label)| label)
    }
}

/// Lowercases, folds `-`/`_` to spaces, strips quoting and emphasis
/// characters, and collapses whitespace.
pub fn normalize_alias(raw: &str) -> String {
    let folded: String = raw
        .chars()
        .map(|c| match c {
            '-' | '_' | '\u{2010}' | '\u{2011}' | '\u{2013}' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .filter(|c| {
            !matches!(
                c,
                '*' | '"' | '\'' | '`' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}'
            )
        })
        .collect();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '(' | ')' | '[' | ']'))
        .trim()
        .to_string()
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::resolve(s).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolves_codes_and_display_strings() {
        for label in Label::ALL {
            assert_eq!(Label::resolve(label.code()), Some(label));
            assert_eq!(Label::resolve(label.display()), Some(label));
            assert_eq!(Label::resolve(&label.display().to_uppercase()), Some(label));
        }
    }

    #[test]
    fn documented_aliases() {
        assert_eq!(Label::resolve("D-PVE"), Some(Label::DirectPve));
        assert_eq!(Label::resolve("No-PVE"), Some(Label::NoPve));
        assert_eq!(Label::resolve("NO PVE"), Some(Label::NoPve));
        assert_eq!(Label::resolve("c_pve"), Some(Label::ContextualPve));
        assert_eq!(Label::resolve("**Direct PVE**."), Some(Label::DirectPve));
        assert_eq!(Label::resolve("maybe"), None);
        assert_eq!(Label::resolve(""), None);
    }

    #[test]
    fn prefix_prefers_longest_alias() {
        assert_eq!(
            Label::resolve_prefix("No PVE. The sentence is technical."),
            Some(Label::NoPve)
        );
        assert_eq!(
            Label::resolve_prefix("Direct PVE since the invention"),
            Some(Label::DirectPve)
        );
        assert_eq!(Label::resolve_prefix("Directly speaking"), None);
    }

    #[test]
    fn serde_uses_codes_and_accepts_aliases() {
        assert_eq!(
            serde_json::to_string(&Label::ContextualPve).unwrap(),
            "\"C_PVE\""
        );
        let l: Label = serde_json::from_str("\"Direct PVE\"").unwrap();
        assert_eq!(l, Label::DirectPve);
        assert!(serde_json::from_str::<Label>("\"bogus\"").is_err());
    }
}
