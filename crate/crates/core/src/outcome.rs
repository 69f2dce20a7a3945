//! Probe outcomes and raw-response normalization.
//!
//! A model answer is mapped to exactly one [`Label`]: a dimension category,
//! the explicit neutral choice, or `NA` when no single option can be
//! attributed. The parser is total; it never fails on arbitrary text.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::ImageRef;
use crate::probekit::{Dimension, ProbeSpec};

/// Phrases treated as an explicit neutral answer besides the literal option.
const NEUTRAL_SYNONYMS: [&str; 3] = ["no preference", "neutral", "either"];

/// Sentinel used on the wire for unattributable answers.
const NA_WIRE: &str = "NA";
const NO_PREFERENCE_WIRE: &str = "no_preference";

#[derive(Debug, Error)]
pub enum OutcomeError {
    #[error("outcome io: {0}")]
    Io(#[from] std::io::Error),
    #[error("outcome line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// Resolved answer of one probe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// One of the dimension's categories, by id (e.g. `female`, `over_65`).
    Category(String),
    /// The explicit neutral choice.
    NoPreference,
    /// Refusal, off-list answer, ambiguity, or a failed call.
    Na,
}

impl Label {
    pub fn as_wire(&self) -> &str {
        match self {
            Label::Category(id) => id,
            Label::NoPreference => NO_PREFERENCE_WIRE,
            Label::Na => NA_WIRE,
        }
    }

    pub fn from_wire(s: &str) -> Label {
        match s {
            NA_WIRE => Label::Na,
            NO_PREFERENCE_WIRE => Label::NoPreference,
            other => Label::Category(other.to_string()),
        }
    }

    pub fn is_category(&self) -> bool {
        matches!(self, Label::Category(_))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_wire())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_wire())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.is_empty() {
            return Err(D::Error::custom("empty label"));
        }
        Ok(Label::from_wire(&s))
    }
}

/// One scored probe call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub entry_id: String,
    /// Model the probe was sent to; outcomes from several models can share
    /// one file and still be grouped apart.
    pub model: String,
    pub spec: ProbeSpec,
    pub gold_label: Label,
    pub predicted: Label,
    /// Raw model text (or classifier text for image outputs), kept verbatim
    /// for auditing. Empty when the call produced no text at all.
    pub raw_text: String,
    /// Stored image for the image-output directions, so classification can
    /// be audited or redone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_image: Option<ImageRef>,
}

impl Outcome {
    pub fn text_only(
        entry_id: impl Into<String>,
        model: impl Into<String>,
        spec: ProbeSpec,
        gold_label: Label,
        predicted: Label,
        raw_text: impl Into<String>,
    ) -> Self {
        Outcome {
            entry_id: entry_id.into(),
            model: model.into(),
            spec,
            gold_label,
            predicted,
            raw_text: raw_text.into(),
            output_image: None,
        }
    }

    /// Profession id portion of the entry id (`"bakers:00"` gives `"bakers"`).
    pub fn profession_id(&self) -> &str {
        entry_profession(&self.entry_id)
    }
}

/// Profession id portion of a corpus entry id.
pub fn entry_profession(entry_id: &str) -> &str {
    match entry_id.rfind(':') {
        Some(idx) => &entry_id[..idx],
        None => entry_id,
    }
}

/// Lowercases, maps `-`/`/`/`_` to spaces, collapses whitespace runs, and
/// trims leading/trailing non-alphanumeric characters.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .map(|c| if matches!(c, '-' | '/' | '_') { ' ' } else { c })
        .collect();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

/// True when `needle` occurs in `haystack` delimited by non-word characters
/// (word characters being ascii alphanumerics). Both inputs must already be
/// normalized.
fn contains_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let hay = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle).map(|p| p + from) {
        let before_ok = pos == 0 || !is_word_byte(hay[pos - 1]);
        let end = pos + needle.len();
        let after_ok = end == hay.len() || !is_word_byte(hay[end]);
        if before_ok && after_ok {
            return true;
        }
        from = pos + 1;
        while from < hay.len() && !haystack.is_char_boundary(from) {
            from += 1;
        }
    }
    false
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Maps a raw text answer onto the probe's option list.
///
/// `options` are (option string, resolved label) pairs in prompt order.
/// Resolution order:
/// 1. the whole normalized response equals a normalized option (or a
///    neutral synonym),
/// 2. exactly one distinct option occurs word-delimited inside the
///    response; two or more distinct options give `NA`,
/// 3. no option but a neutral synonym occurs gives `NoPreference`,
/// 4. anything else gives `NA`.
pub fn normalize_response(raw: &str, options: &[(String, Label)]) -> Label {
    let text = normalize_text(raw);
    if text.is_empty() {
        return Label::Na;
    }

    for (option, label) in options {
        if text == normalize_text(option) {
            return label.clone();
        }
    }
    if NEUTRAL_SYNONYMS.iter().any(|syn| text == *syn) {
        return Label::NoPreference;
    }

    let mut found: Option<&Label> = None;
    for (option, label) in options {
        let norm = normalize_text(option);
        if contains_word(&text, &norm) {
            match found {
                None => found = Some(label),
                Some(prev) if prev == label => {}
                Some(_) => return Label::Na,
            }
        }
    }
    if let Some(label) = found {
        return label.clone();
    }

    if NEUTRAL_SYNONYMS.iter().any(|syn| contains_word(&text, syn)) {
        return Label::NoPreference;
    }
    Label::Na
}

/// Maps a classifier's category answer for `dimension` onto a label.
///
/// Accepts the dimension's option labels (or ids) and the `N/A` sentinel;
/// resolution otherwise follows [`normalize_response`] against the direct
/// option list without the neutral choice, since generated images always
/// depict somebody.
pub fn normalize_category_answer(raw: &str, dimension: Dimension) -> Label {
    let text = normalize_text(raw);
    if text.is_empty() || text == "n a" || text == "na" || text == "none" {
        return Label::Na;
    }
    let options: Vec<(String, Label)> = dimension
        .categories()
        .iter()
        .flat_map(|c| {
            [
                (
                    c.option_label.to_string(),
                    Label::Category(c.id.to_string()),
                ),
                (c.id.to_string(), Label::Category(c.id.to_string())),
            ]
        })
        .collect();
    match normalize_response(raw, &options) {
        // The classifier offers no neutral choice; a stray synonym is noise.
        Label::NoPreference => Label::Na,
        other => other,
    }
}

/// Writes outcomes as JSON lines.
pub fn write_outcomes<W: Write>(mut w: W, outcomes: &[Outcome]) -> Result<(), OutcomeError> {
    for outcome in outcomes {
        serde_json::to_writer(&mut w, outcome)
            .map_err(|e| OutcomeError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads outcomes from JSON lines, skipping blank lines.
pub fn read_outcomes<R: BufRead>(r: R) -> Result<Vec<Outcome>, OutcomeError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome: Outcome =
            serde_json::from_str(&line).map_err(|source| OutcomeError::Malformed {
                line: idx + 1,
                source,
            })?;
        out.push(outcome);
    }
    Ok(out)
}

pub fn write_outcomes_file(path: &Path, outcomes: &[Outcome]) -> Result<(), OutcomeError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    write_outcomes(std::io::BufWriter::new(file), outcomes)
}

pub fn read_outcomes_file(path: &Path) -> Result<Vec<Outcome>, OutcomeError> {
    let file = std::fs::File::open(path)?;
    read_outcomes(std::io::BufReader::new(file))
}
