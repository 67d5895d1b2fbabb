//! Document ingestion, sentence segmentation and the sentence store.
//!
//! The store is a single JSON-lines file, one [`Sentence`] per line, sorted by
//! `sent_id`. Sentence ids are `"{doc_id}/{section}/{ordinal:04}"`, so
//! re-ingesting the same bytes always yields the same ids in the same order.
//!
//! # Segmentation rule
//!
//! A sentence ends at `.`, `?` or `!` (optionally followed by closing quotes or
//! brackets) when the next non-space character, after optional opening quotes
//! or brackets, is an uppercase letter or a digit. There is no break after a
//! word in [`ABBREVIATIONS`] or after a single capital initial such as `J.`.

use crate::jsonl::{self, JsonlError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use unicode_normalization::UnicodeNormalization;

/// Words after which a period never ends a sentence. Matched case-sensitively
/// against the whitespace-delimited word ending in the period, with leading
/// brackets and quotes removed.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "E.g.", "i.e.", "I.e.", "Fig.", "Figs.", "FIG.", "FIGS.", "fig.", "No.", "Nos.",
    "U.S.", "al.", "cf.", "Cf.", "vs.", "Ref.", "Refs.", "Eq.", "Eqs.", "Sec.", "Ser.", "Pat.",
    "Appl.", "approx.", "Inc.", "Corp.", "Ltd.", "Co.", "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.",
    "St.", "Jr.", "Sr.", "resp.", "viz.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Section {
    Abstract,
    Background,
    Summary,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::Background, Section::Summary, Section::Abstract];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Abstract => "abstract",
            Section::Background => "background",
            Section::Summary => "summary",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A patent document with its extracted text sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sections: BTreeMap<Section, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    pub doc_id: String,
    pub section: Section,
    pub ordinal: usize,
    pub text: String,
}

pub fn sentence_id(doc_id: &str, section: Section, ordinal: usize) -> String {
    format!("{doc_id}/{section}/{ordinal:04}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_documents: usize,
    pub n_sentences: usize,
    pub per_section: BTreeMap<Section, usize>,
}

/// A recoverable problem with one input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub stats: CorpusStats,
    pub errors: Vec<LineError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate doc_id {doc_id:?} (lines {first_line} and {line})")]
    DuplicateDocId {
        doc_id: String,
        first_line: usize,
        line: usize,
    },
    #[error("sentence store {0} does not exist")]
    MissingStore(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Deserialize)]
struct InputRecord {
    doc_id: String,
    background: Option<String>,
    summary: Option<String>,
    #[serde(rename = "abstract")]
    abstract_: Option<String>,
}

impl Document {
    fn from_record(rec: InputRecord) -> Result<Self, String> {
        let doc_id = rec.doc_id.trim().to_string();
        if doc_id.is_empty() {
            return Err("empty doc_id".into());
        }
        let mut sections = BTreeMap::new();
        for (section, text) in [
            (Section::Background, rec.background),
            (Section::Summary, rec.summary),
            (Section::Abstract, rec.abstract_),
        ] {
            if let Some(text) = text.filter(|t| !t.trim().is_empty()) {
                sections.insert(section, text);
            }
        }
        if sections.is_empty() {
            return Err(format!("document {doc_id:?} has no non-empty section"));
        }
        Ok(Document { doc_id, sections })
    }

    /// All sentences of the document, sections in id order.
    pub fn sentences(&self) -> Vec<Sentence> {
        let mut out = Vec::new();
        for (&section, text) in &self.sections {
            let normalized: String = text.nfc().collect();
            for (ordinal, text) in segment_sentences(&normalized).into_iter().enumerate() {
                out.push(Sentence {
                    sent_id: sentence_id(&self.doc_id, section, ordinal),
                    doc_id: self.doc_id.clone(),
                    section,
                    ordinal,
                    text,
                });
            }
        }
        out
    }
}

/// Splits `text` into sentences. Segments are trimmed and never empty; joining
/// them with single spaces reproduces the input up to whitespace runs.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (byte_pos, c) = chars[i];
        if !matches!(c, '.' | '?' | '!') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && CLOSERS.contains(&chars[j].1) {
            j += 1;
        }
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            i += 1;
            continue;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        while k < chars.len() && OPENERS.contains(&chars[k].1) {
            k += 1;
        }
        let starts_sentence = chars
            .get(k)
            .is_some_and(|&(_, n)| n.is_uppercase() || n.is_ascii_digit());
        if starts_sentence && !(c == '.' && is_non_terminal(text, start, byte_pos)) {
            let end = chars[j].0;
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
        i = j;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, seg: &str) {
    let seg = seg.trim();
    if !seg.is_empty() {
        out.push(seg.to_string());
    }
}

/// True when the period at `dot` closes an abbreviation or an initial.
fn is_non_terminal(text: &str, seg_start: usize, dot: usize) -> bool {
    let before = &text[seg_start..dot + 1];
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or(before)
        .trim_start_matches(OPENERS);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let mut stem = word[..word.len() - 1].chars();
    matches!((stem.next(), stem.next()), (Some(c), None) if c.is_uppercase())
}

/// Reads JSONL documents from `input`, segments them and writes the sentence
/// store to `store`, replacing any previous store.
///
/// Malformed lines are skipped and reported; a repeated `doc_id` aborts the
/// run without touching `store`.
pub fn ingest_documents(
    input: &Path,
    format: InputFormat,
    store: &Path,
) -> Result<IngestReport, CorpusError> {
    let InputFormat::Jsonl = format;
    let io_err = |source| CorpusError::Io {
        path: input.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(input).map_err(io_err)?);

    let mut docs = Vec::new();
    let mut errors = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = serde_json::from_str::<InputRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(Document::from_record);
        match doc {
            Ok(doc) => {
                if let Some(&first_line) = seen.get(&doc.doc_id) {
                    return Err(CorpusError::DuplicateDocId {
                        doc_id: doc.doc_id,
                        first_line,
                        line: line_no,
                    });
                }
                seen.insert(doc.doc_id.clone(), line_no);
                docs.push(doc);
            }
            Err(message) => {
                log::warn!("{}:{line_no}: {message}", input.display());
                errors.push(LineError {
                    line: line_no,
                    message,
                });
            }
        }
    }

    let mut sentences: Vec<Sentence> = docs.par_iter().flat_map_iter(|d| d.sentences()).collect();
    sentences.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));

    let mut stats = CorpusStats {
        n_documents: docs.len(),
        n_sentences: sentences.len(),
        per_section: BTreeMap::new(),
    };
    for s in &sentences {
        *stats.per_section.entry(s.section).or_default() += 1;
    }

    write_store(store, &sentences)?;
    Ok(IngestReport { stats, errors })
}

/// Writes a store atomically (temp file + rename).
pub fn write_store(store: &Path, sentences: &[Sentence]) -> Result<(), CorpusError> {
    let tmp = store.with_extension("jsonl.tmp");
    let io_err = |source| CorpusError::Io {
        path: store.display().to_string(),
        source,
    };
    jsonl::write_all(&tmp, sentences).map_err(io_err)?;
    fs::rename(&tmp, store).map_err(io_err)
}

/// Loads the whole store.
pub fn read_store(store: &Path) -> Result<Vec<Sentence>, CorpusError> {
    check_store(store)?;
    Ok(jsonl::read_all(store)?)
}

/// Streams the store in file order.
pub fn for_each_sentence<F>(store: &Path, mut f: F) -> Result<(), CorpusError>
where
    F: FnMut(Sentence) -> Result<(), JsonlError>,
{
    check_store(store)?;
    jsonl::for_each(store, |_, s| f(s))?;
    Ok(())
}

/// Loads the texts of the given ids; ids absent from the store are skipped.
pub fn lookup_texts(
    store: &Path,
    ids: &HashSet<String>,
) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut out = BTreeMap::new();
    for_each_sentence(store, |s| {
        if ids.contains(&s.sent_id) {
            out.insert(s.sent_id, s.text);
        }
        Ok(())
    })?;
    Ok(out)
}

fn check_store(store: &Path) -> Result<(), CorpusError> {
    if store.is_file() {
        Ok(())
    } else {
        Err(CorpusError::MissingStore(store.display().to_string()))
    }
}
