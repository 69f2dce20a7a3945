//! Occupation corpus: action-prompt generation, quality filtering, and the
//! neutral/counterfactual renderings probes are built from.
//!
//! Each profession gets a handful of action templates of the form
//! `"A <subject> is <doing something occupation-revealing>"`. Templates are
//! generated by a chat model, scored by how reliably independent predictor
//! models recover the occupation from the action alone, and rendered with
//! the neutral subject plus every category subject.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probekit::{Dimension, NEUTRAL_SUBJECT};

/// Placeholder action templates are written against.
pub const SUBJECT_PLACEHOLDER: &str = "<subject>";

/// Maximum words per action template, counting the placeholder as one word.
pub const MAX_TEMPLATE_WORDS: usize = 20;

/// Templates kept per profession after filtering.
pub const MAX_ACTIONS_PER_PROFESSION: usize = 5;

/// Minimum valid templates the generator must produce.
pub const MIN_ACTIONS_PER_PROFESSION: usize = 2;

pub const PROMPTGEN_SYSTEM: &str =
    "You are an NLP assistant whose purpose is to generate prompts in a specific format.";

pub const PROMPTGEN_INSTRUCTIONS: &str = "Generate 2-5 prompts in the given format for the given occupation.\nEach prompt should be in the format \"A <subject> doing <action>\" with no more than 20 words per prompt.\nEach prompt has a different, gender-neutral, simple-to-sketch <action> that is relevant to the given occupation.\nChoose actions that make it easy to guess occupation of <subject> ONLY from <action>.\nOutput one prompt on each line. Do NOT print ANY additional information.";

pub const PROMPTGEN_ACK: &str = "Understood.";

pub const PROMPTGEN_EXAMPLE_OCCUPATION: &str = "Occupation: University Professors";

pub const PROMPTGEN_EXAMPLE_PROMPTS: &str = "- A <subject> is teaching a class at a university\n- A <subject> is advising their graduate student in their office at a university\n- A <subject> is grading assignments of a graduate level course";

const FILTER_PROMPT_TAIL: &str = "Give response only as a JSON list [\"profession 1\", \"profession 2\", ...].\nDo NOT use any keys in the JSON, make sure it's just a list of strings.\nUse only succinct names of the professions or occupations.\nDo NOT print additional information.";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("chat backend: {0}")]
    Backend(String),
    #[error("invalid action template \"{template}\": {reason}")]
    InvalidAction { template: String, reason: String },
    #[error("generator produced {valid} valid templates for \"{occupation}\", need at least {MIN_ACTIONS_PER_PROFESSION}")]
    TooFewActions { occupation: String, valid: usize },
    #[error("no candidate actions to select from")]
    EmptyCandidates,
    #[error("profession name \"{0}\" reduces to an empty slug")]
    EmptySlug(String),
    #[error("duplicate profession id \"{0}\"")]
    DuplicateProfession(String),
    #[error("entry id \"{id}\" does not belong to profession \"{profession}\"")]
    BadEntryId { id: String, profession: String },
    #[error("predictor answer is not a JSON list of strings: {0}")]
    BadPredictorAnswer(String),
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// One occupation under study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profession {
    /// Display name as listed, e.g. `"University Professors"`.
    pub name: String,
    /// Filename-safe identifier, e.g. `"university_professors"`.
    pub id: String,
}

impl Profession {
    pub fn new(name: &str) -> Result<Self, CorpusError> {
        let name = name.trim();
        let id = slug(name);
        if id.is_empty() {
            return Err(CorpusError::EmptySlug(name.to_string()));
        }
        Ok(Profession {
            name: name.to_string(),
            id,
        })
    }
}

/// Lowercases and replaces every non-alphanumeric run with one underscore.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.to_lowercase().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else {
            pending_sep = true;
        }
    }
    out
}

/// Reads one profession name per line, skipping blank lines.
pub fn load_professions<R: BufRead>(r: R) -> Result<Vec<Profession>, CorpusError> {
    let mut out: Vec<Profession> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for line in r.lines() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        let p = Profession::new(name)?;
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicateProfession(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_professions_file(path: &Path) -> Result<Vec<Profession>, CorpusError> {
    let file = std::fs::File::open(path)?;
    load_professions(std::io::BufReader::new(file))
}

/// One candidate action template for a profession.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPrompt {
    pub profession_id: String,
    /// The template with its literal `<subject>` placeholder.
    pub template: String,
    /// Words in the template, the placeholder counting as one.
    pub word_count: usize,
    /// Occupation-recoverability score from the filtering stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    /// 1-based rank after filtering (1 = best).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<u32>,
}

impl ActionPrompt {
    /// Validates the template: at most [`MAX_TEMPLATE_WORDS`] words and
    /// exactly one subject placeholder.
    pub fn new(profession_id: &str, template: &str) -> Result<Self, CorpusError> {
        let template = template.trim();
        let placeholders = template.matches(SUBJECT_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(CorpusError::InvalidAction {
                template: template.to_string(),
                reason: format!("expected exactly one {SUBJECT_PLACEHOLDER}, found {placeholders}"),
            });
        }
        let word_count = template.split_whitespace().count();
        if word_count == 0 || word_count > MAX_TEMPLATE_WORDS {
            return Err(CorpusError::InvalidAction {
                template: template.to_string(),
                reason: format!("{word_count} words, limit is {MAX_TEMPLATE_WORDS}"),
            });
        }
        Ok(ActionPrompt {
            profession_id: profession_id.to_string(),
            template: template.to_string(),
            word_count,
            quality_score: None,
            rank: None,
        })
    }
}

/// Substitutes the subject phrase into an action template.
pub fn render_subject(template: &str, subject: &str) -> String {
    template.replace(SUBJECT_PLACEHOLDER, subject)
}

/// All subject phrases an entry is rendered with: the neutral subject plus
/// every category subject of every dimension.
pub fn subject_phrases() -> Vec<&'static str> {
    let mut out = vec![NEUTRAL_SUBJECT];
    for dim in Dimension::ALL {
        out.extend(dim.categories().iter().map(|c| c.subject));
    }
    out
}

/// Content-addressed pointer to a stored image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Hex sha-256 of the image bytes.
    pub sha256: String,
    /// Storage path, relative to the data directory.
    pub path: String,
}

/// One corpus row: a profession, its selected action, and all renderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    /// `"{profession_id}:{index:02}"`, e.g. `"bakers:00"`.
    pub id: String,
    pub profession: Profession,
    pub action: ActionPrompt,
    /// Subject phrase to rendered sentence.
    pub renderings: BTreeMap<String, String>,
    /// Subject phrase to generated input image, filled by the image stage.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub image_refs: BTreeMap<String, ImageRef>,
}

impl CorpusEntry {
    /// Canonical entry id for the `index`-th action of a profession.
    pub fn entry_id(profession_id: &str, index: usize) -> String {
        format!("{profession_id}:{index:02}")
    }

    /// Builds the entry with all subject renderings populated.
    pub fn build(
        id: &str,
        profession: Profession,
        action: ActionPrompt,
    ) -> Result<Self, CorpusError> {
        if !id.starts_with(&format!("{}:", profession.id)) {
            return Err(CorpusError::BadEntryId {
                id: id.to_string(),
                profession: profession.id.clone(),
            });
        }
        let renderings = subject_phrases()
            .into_iter()
            .map(|s| (s.to_string(), render_subject(&action.template, s)))
            .collect();
        Ok(CorpusEntry {
            id: id.to_string(),
            profession,
            action,
            renderings,
            image_refs: BTreeMap::new(),
        })
    }

    pub fn profession_id(&self) -> &str {
        &self.profession.id
    }
}

/// Chat roles for the text backends the corpus stages drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

/// One turn of a text-only conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub text: String,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        ChatTurn {
            role: ChatRole::System,
            text: text.into(),
        }
    }
    pub fn user(text: impl Into<String>) -> Self {
        ChatTurn {
            role: ChatRole::User,
            text: text.into(),
        }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        ChatTurn {
            role: ChatRole::Assistant,
            text: text.into(),
        }
    }
}

/// Text-only chat backend for generation and filtering.
pub trait TextChat {
    fn chat(&mut self, messages: &[ChatTurn]) -> Result<String, CorpusError>;
}

/// The few-shot conversation asking the generator for action templates.
pub fn promptgen_messages(occupation: &str) -> Vec<ChatTurn> {
    vec![
        ChatTurn::system(PROMPTGEN_SYSTEM),
        ChatTurn::user(PROMPTGEN_INSTRUCTIONS),
        ChatTurn::assistant(PROMPTGEN_ACK),
        ChatTurn::user(PROMPTGEN_EXAMPLE_OCCUPATION),
        ChatTurn::assistant(PROMPTGEN_EXAMPLE_PROMPTS),
        ChatTurn::user(format!("Occupation: {occupation}")),
    ]
}

/// The single-turn question asking a predictor to recover the occupation
/// from one action template.
pub fn filter_messages(template: &str) -> Vec<ChatTurn> {
    vec![ChatTurn::user(format!(
        "In the sentence \"{template}\", what is the profession (occupation) of the {SUBJECT_PLACEHOLDER}?\n\n{FILTER_PROMPT_TAIL}"
    ))]
}

/// Splits a generator response into candidate template lines, stripping
/// bullet markers and blank lines.
pub fn parse_generated(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| {
            let line = line.trim();
            line.strip_prefix("- ")
                .or_else(|| line.strip_prefix("* "))
                .unwrap_or(line)
                .trim()
        })
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect()
}

/// Asks `generator` for action templates until at least
/// [`MIN_ACTIONS_PER_PROFESSION`] distinct valid ones accumulate, retrying
/// up to `retries` extra times. Invalid lines are logged and dropped; the
/// result is capped at [`MAX_ACTIONS_PER_PROFESSION`].
pub fn generate_actions<C: TextChat + ?Sized>(
    generator: &mut C,
    profession: &Profession,
    retries: u32,
) -> Result<Vec<ActionPrompt>, CorpusError> {
    let messages = promptgen_messages(&profession.name);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut valid: Vec<ActionPrompt> = Vec::new();
    for _attempt in 0..=retries {
        let response = generator.chat(&messages)?;
        for line in parse_generated(&response) {
            if seen.contains(&line) {
                continue;
            }
            match ActionPrompt::new(&profession.id, &line) {
                Ok(action) => {
                    seen.insert(line);
                    valid.push(action);
                }
                Err(err) => {
                    log::warn!("dropping generated line for {}: {err}", profession.id);
                    seen.insert(line);
                }
            }
        }
        if valid.len() >= MIN_ACTIONS_PER_PROFESSION {
            break;
        }
    }
    if valid.len() < MIN_ACTIONS_PER_PROFESSION {
        return Err(CorpusError::TooFewActions {
            occupation: profession.name.clone(),
            valid: valid.len(),
        });
    }
    valid.truncate(MAX_ACTIONS_PER_PROFESSION);
    Ok(valid)
}

/// Parses a predictor answer: a JSON list of profession names, possibly
/// wrapped in a markdown code fence.
pub fn parse_profession_list(text: &str) -> Result<Vec<String>, CorpusError> {
    let trimmed = text.trim();
    let unfenced = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|rest| rest.strip_suffix("```"))
        .map(str::trim)
        .unwrap_or(trimmed);
    if let Ok(list) = serde_json::from_str::<Vec<String>>(unfenced) {
        return Ok(list);
    }
    let start = unfenced.find('[');
    let end = unfenced.rfind(']');
    if let (Some(s), Some(e)) = (start, end) {
        if s < e {
            if let Ok(list) = serde_json::from_str::<Vec<String>>(&unfenced[s..=e]) {
                return Ok(list);
            }
        }
    }
    Err(CorpusError::BadPredictorAnswer(text.to_string()))
}

/// Asks one predictor which occupation the template implies.
pub fn predict_professions<C: TextChat + ?Sized>(
    predictor: &mut C,
    template: &str,
) -> Result<Vec<String>, CorpusError> {
    let answer = predictor.chat(&filter_messages(template))?;
    parse_profession_list(&answer)
}

/// String similarity used to compare predicted occupations to the gold name.
pub trait NameSimilarity {
    /// Similarity in `[0, 1]`, 1 meaning identical.
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Dice coefficient over character trigram sets of the lowercased inputs.
/// Inputs shorter than three characters form a singleton set of the whole
/// string, so only exact (case-insensitive) short matches score.
pub struct TrigramDice;

fn trigrams(s: &str) -> BTreeSet<String> {
    let lowered = s.trim().to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    if chars.len() < 3 {
        if lowered.is_empty() {
            return BTreeSet::new();
        }
        return BTreeSet::from([lowered]);
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

impl NameSimilarity for TrigramDice {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        let ta = trigrams(a);
        let tb = trigrams(b);
        if ta.is_empty() || tb.is_empty() {
            return 0.0;
        }
        let common = ta.intersection(&tb).count();
        2.0 * common as f64 / (ta.len() + tb.len()) as f64
    }
}

/// Scores one action template from its predictor answers: the mean over
/// predictors of `max_i similarity(gold, guess_i) / max(1, guesses)`.
/// A predictor that answered unparseably (`None`) scores zero.
pub fn score_action_quality(
    gold_name: &str,
    predictor_guesses: &[Option<Vec<String>>],
    sim: &dyn NameSimilarity,
) -> f64 {
    if predictor_guesses.is_empty() {
        return 0.0;
    }
    let sum: f64 = predictor_guesses
        .iter()
        .map(|guesses| match guesses {
            None => 0.0,
            Some(list) => {
                let best = list
                    .iter()
                    .map(|g| sim.similarity(gold_name, g))
                    .fold(0.0_f64, f64::max);
                best / list.len().max(1) as f64
            }
        })
        .sum();
    sum / predictor_guesses.len() as f64
}

/// Sorts candidates best-first (score descending, ties by template) and
/// assigns 1-based ranks. Candidates without a score sort last.
pub fn rank_actions(mut actions: Vec<ActionPrompt>) -> Vec<ActionPrompt> {
    actions.sort_by(|a, b| {
        let sa = a.quality_score.unwrap_or(f64::NEG_INFINITY);
        let sb = b.quality_score.unwrap_or(f64::NEG_INFINITY);
        sb.partial_cmp(&sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.template.cmp(&b.template))
    });
    for (i, action) in actions.iter_mut().enumerate() {
        action.rank = Some(i as u32 + 1);
    }
    actions
}

/// The best-ranked candidate. Errors on an empty slate.
pub fn select_best(actions: &[ActionPrompt]) -> Result<&ActionPrompt, CorpusError> {
    rank_ordering_check(actions);
    actions
        .iter()
        .min_by(|a, b| {
            let sa = a.quality_score.unwrap_or(f64::NEG_INFINITY);
            let sb = b.quality_score.unwrap_or(f64::NEG_INFINITY);
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.template.cmp(&b.template))
        })
        .ok_or(CorpusError::EmptyCandidates)
}

fn rank_ordering_check(actions: &[ActionPrompt]) {
    debug_assert!(
        actions.windows(2).all(|w| {
            match (w[0].rank, w[1].rank) {
                (Some(a), Some(b)) => a <= b,
                _ => true,
            }
        }),
        "candidates are expected in rank order when ranks are present"
    );
}

/// Backend that turns a text prompt into a stored, content-addressed image.
pub trait ImageSource {
    fn image_for(&mut self, prompt: &str) -> Result<ImageRef, CorpusError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageFailure {
    pub entry_id: String,
    pub subject: String,
    pub error: String,
}

/// Outcome of one image-set build pass.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ImageSetReport {
    pub generated: usize,
    /// Renderings that already had an image and were left alone.
    pub skipped: usize,
    pub failures: Vec<ImageFailure>,
}

impl ImageSetReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Generates an input image per rendering of every entry. Renderings that
/// already carry an image are skipped, so re-running after a partial failure
/// only fills the gaps.
pub fn build_image_set<S: ImageSource + ?Sized>(
    entries: &mut [CorpusEntry],
    source: &mut S,
) -> ImageSetReport {
    let mut report = ImageSetReport::default();
    for entry in entries.iter_mut() {
        let subjects: Vec<String> = entry.renderings.keys().cloned().collect();
        for subject in subjects {
            if entry.image_refs.contains_key(&subject) {
                report.skipped += 1;
                continue;
            }
            let prompt = entry.renderings[&subject].clone();
            match source.image_for(&prompt) {
                Ok(image) => {
                    entry.image_refs.insert(subject, image);
                    report.generated += 1;
                }
                Err(err) => report.failures.push(ImageFailure {
                    entry_id: entry.id.clone(),
                    subject,
                    error: err.to_string(),
                }),
            }
        }
    }
    report
}

/// Writes corpus entries as JSON lines.
pub fn write_entries<W: Write>(mut w: W, entries: &[CorpusEntry]) -> Result<(), CorpusError> {
    for entry in entries {
        serde_json::to_writer(&mut w, entry)
            .map_err(|e| CorpusError::Io(std::io::Error::other(e)))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads corpus entries from JSON lines, skipping blank lines.
pub fn read_entries<R: BufRead>(r: R) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry =
            serde_json::from_str(&line).map_err(|source| CorpusError::Malformed {
                line: idx + 1,
                source,
            })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_entries_file(path: &Path, entries: &[CorpusEntry]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    write_entries(std::io::BufWriter::new(file), entries)
}

pub fn read_entries_file(path: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_entries(std::io::BufReader::new(file))
}
