//! End-to-end orchestration: corpus stages, probe fan-out, and outcome
//! persistence.
//!
//! Probe jobs are enumerated in a fixed order (model, probe coordinate,
//! entry, input rendering), executed by a bounded worker pool, and written
//! back in enumeration order, so identical inputs produce byte-identical
//! outcome files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{capability_for, Config};
use crate::corpus::{
    self, ActionPrompt, ChatTurn, CorpusEntry, CorpusError, ImageRef, ImageSource, Profession,
    TextChat, TrigramDice,
};
use crate::modelgate::{
    classify_synthetic, simulator::SimReply, ChatMessage, DataStore, EndpointConfig, GateError,
    ModelGateway, ModelReply, Simulator,
};
use crate::outcome::{normalize_response, write_outcomes_file, Label, Outcome, OutcomeError};
use crate::probekit::{
    render_probe, Direction, ProbeError, ProbeSpec, RenderedProbe, NEUTRAL_SUBJECT,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Outcome(#[from] OutcomeError),
    #[error("pipeline io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Where probe traffic goes.
pub enum Backend<'a> {
    Live {
        gateway: &'a ModelGateway,
    },
    Sim {
        simulator: &'a Simulator,
        store: &'a DataStore,
    },
}

/// One probe call that could not produce an outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFailure {
    pub model: String,
    pub spec: String,
    pub entry_id: String,
    pub input_key: String,
    pub error: String,
}

/// Summary of one probe run: what was asked, of what, and where the answers
/// went. Replaying the same config against a warm cache reproduces the same
/// outcome files.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct RunManifest {
    /// Digest of the config snapshot and corpus, so reruns of the same
    /// inputs share an id.
    pub run_id: String,
    /// The configuration the run executed, verbatim.
    pub config: serde_json::Value,
    pub corpus_sha256: String,
    /// Endpoint names available to the run.
    pub endpoints: Vec<String>,
    pub models: Vec<String>,
    /// Probe coordinate slugs in execution order.
    pub probes: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub probes_attempted: usize,
    pub outcomes_written: usize,
    /// `"<model>/<probe slug>"` to the outcome file.
    pub outcome_files: BTreeMap<String, PathBuf>,
    /// Calls that failed after retries; non-empty means a partial run.
    pub failures: Vec<ProbeFailure>,
}

impl RunManifest {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), PipelineError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// Input renderings probed for a coordinate: image-to-text sees the neutral
/// image plus one counterfactual per category; the other directions carry no
/// subject surface, so only the neutral rendering is informative.
pub fn input_keys_for(spec: &ProbeSpec) -> Vec<&'static str> {
    if spec.direction == Direction::ImageToText {
        let mut keys = vec![NEUTRAL_SUBJECT];
        keys.extend(spec.dimension.categories().iter().map(|c| c.subject));
        keys
    } else {
        vec![NEUTRAL_SUBJECT]
    }
}

struct Job<'a> {
    model: &'a str,
    spec: &'a ProbeSpec,
    entry: &'a CorpusEntry,
    input_key: &'a str,
}

/// Runs every configured probe for every model over the corpus and writes
/// one outcome file per (model, probe coordinate).
pub fn run_pipeline(config: &Config, backend: &Backend) -> Result<RunManifest, PipelineError> {
    if config.models.is_empty() {
        return Err(PipelineError::Invalid(
            "config lists no models to probe".into(),
        ));
    }
    if config.probes.is_empty() {
        return Err(PipelineError::Invalid(
            "config lists no probes to run".into(),
        ));
    }
    let corpus_bytes = std::fs::read(&config.corpus)?;
    let entries = corpus::read_entries(corpus_bytes.as_slice())?;
    if entries.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "corpus {} is empty",
            config.corpus.display()
        )));
    }
    let config_json = serde_json::to_value(config).map_err(std::io::Error::other)?;
    let corpus_sha256 = crate::modelgate::sha256_hex(&corpus_bytes);
    let started_unix_ms = unix_ms();

    let mut jobs: Vec<Job> = Vec::new();
    for model in &config.models {
        for spec in &config.probes {
            for entry in &entries {
                for input_key in input_keys_for(spec) {
                    jobs.push(Job {
                        model,
                        spec,
                        entry,
                        input_key,
                    });
                }
            }
        }
    }

    let results = run_jobs(config, backend, &jobs);

    let mut manifest = RunManifest {
        run_id: run_id(&config_json, &corpus_sha256),
        corpus_sha256,
        config: config_json,
        endpoints: config.endpoints.iter().map(|e| e.name.clone()).collect(),
        models: config.models.clone(),
        probes: config.probes.iter().map(ProbeSpec::slug).collect(),
        started_unix_ms,
        probes_attempted: jobs.len(),
        ..RunManifest::default()
    };
    let mut grouped: BTreeMap<(String, String), Vec<Outcome>> = BTreeMap::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(outcome) => {
                grouped
                    .entry((job.model.to_string(), job.spec.slug()))
                    .or_default()
                    .push(outcome);
            }
            Err(error) => manifest.failures.push(ProbeFailure {
                model: job.model.to_string(),
                spec: job.spec.slug(),
                entry_id: job.entry.id.clone(),
                input_key: job.input_key.to_string(),
                error,
            }),
        }
    }

    for ((model, slug), outcomes) in &grouped {
        let path = outcomes_path(config, model, slug);
        write_outcomes_file(&path, outcomes)?;
        manifest.outcomes_written += outcomes.len();
        manifest
            .outcome_files
            .insert(format!("{model}/{slug}"), path);
    }
    manifest.finished_unix_ms = unix_ms();
    Ok(manifest)
}

fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn run_id(config_json: &serde_json::Value, corpus_sha256: &str) -> String {
    let mut material = config_json.to_string();
    material.push(':');
    material.push_str(corpus_sha256);
    crate::modelgate::sha256_hex(material.as_bytes())[..12].to_string()
}

/// Outcome file for one (model, probe coordinate).
pub fn outcomes_path(config: &Config, model: &str, slug: &str) -> PathBuf {
    config
        .out_dir
        .join("outcomes")
        .join(crate::modelgate::sanitize_component(model))
        .join(format!("{slug}.jsonl"))
}

fn run_jobs(config: &Config, backend: &Backend, jobs: &[Job]) -> Vec<Result<Outcome, String>> {
    let cursor = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, Result<Outcome, String>)>> =
        Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = config.concurrency.min(jobs.len()).max(1);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(idx) else { break };
                let result = run_one(config, backend, job);
                collected.lock().unwrap().push((idx, result));
            });
        }
    });

    let mut collected = collected.into_inner().unwrap();
    collected.sort_by_key(|(idx, _)| *idx);
    collected.into_iter().map(|(_, r)| r).collect()
}

fn run_one(config: &Config, backend: &Backend, job: &Job) -> Result<Outcome, String> {
    let probe = render_probe(job.entry, job.spec, job.input_key).map_err(|e| e.to_string())?;
    let (predicted, raw_text, output_image) = match backend {
        Backend::Sim { simulator, store } => {
            answer_with_simulator(simulator, store, job.model, &probe)?
        }
        Backend::Live { gateway } => answer_with_gateway(config, gateway, job.model, &probe)?,
    };
    Ok(Outcome {
        entry_id: job.entry.id.clone(),
        model: job.model.to_string(),
        spec: job.spec.clone(),
        gold_label: probe.gold_label.clone(),
        predicted,
        raw_text,
        output_image,
    })
}

fn answer_with_simulator(
    simulator: &Simulator,
    store: &DataStore,
    model: &str,
    probe: &RenderedProbe,
) -> Result<(Label, String, Option<ImageRef>), String> {
    match simulator.answer_probe(model, probe) {
        SimReply::Text { text, .. } => {
            let options = probe.spec.labeled_options().map_err(|e| e.to_string())?;
            let predicted = normalize_response(&text, &options);
            Ok((predicted, text, None))
        }
        SimReply::Image { png, .. } => {
            let image = store.store_image(&png).map_err(|e| e.to_string())?;
            let predicted = classify_synthetic(&png);
            let raw = predicted.as_wire().to_string();
            Ok((predicted, raw, Some(image)))
        }
        SimReply::Refusal { reason } => Ok((Label::Na, format!("refused: {reason}"), None)),
    }
}

fn answer_with_gateway(
    config: &Config,
    gateway: &ModelGateway,
    model: &str,
    probe: &RenderedProbe,
) -> Result<(Label, String, Option<ImageRef>), String> {
    let endpoint = config
        .endpoint(model)
        .ok_or_else(|| format!("model \"{model}\" has no endpoint"))?;
    let direction = probe.spec.direction;
    debug_assert_eq!(endpoint.capability, capability_for(direction));

    if direction.produces_text() {
        let messages = [ChatMessage::user(
            &probe.prompt_text,
            probe.image_ref.clone(),
        )];
        return match gateway.chat_messages(endpoint, &messages) {
            Ok(ModelReply::Text(raw)) => {
                let options = probe.spec.labeled_options().map_err(|e| e.to_string())?;
                Ok((normalize_response(&raw, &options), raw, None))
            }
            Ok(ModelReply::Refusal { reason }) => {
                Ok((Label::Na, format!("refused: {reason}"), None))
            }
            Ok(ModelReply::Image(_)) => Err("unexpected image reply to a chat".into()),
            Err(e) => Err(e.to_string()),
        };
    }

    let reply = match direction {
        Direction::TextToImage => gateway.generate_image(endpoint, &probe.prompt_text),
        Direction::ImageToImage => {
            let input = probe
                .image_ref
                .as_ref()
                .ok_or_else(|| "probe is missing its input image".to_string())?;
            gateway.edit_image(endpoint, &probe.prompt_text, input)
        }
        _ => unreachable!("text directions handled above"),
    };
    match reply {
        Ok(ModelReply::Image(image)) => {
            let (label, raw) = classify_generated(config, gateway, &image, probe)?;
            Ok((label, raw, Some(image)))
        }
        Ok(ModelReply::Refusal { reason }) => Ok((Label::Na, format!("refused: {reason}"), None)),
        Ok(ModelReply::Text(_)) => Err("unexpected text reply to an image request".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn classify_generated(
    config: &Config,
    gateway: &ModelGateway,
    image: &ImageRef,
    probe: &RenderedProbe,
) -> Result<(Label, String), String> {
    let name = config
        .vqa_endpoint
        .as_deref()
        .ok_or_else(|| "no vqa_endpoint configured for image probes".to_string())?;
    let endpoint = config
        .endpoint(name)
        .ok_or_else(|| format!("vqa endpoint \"{name}\" has no config"))?;
    Ok(gateway.classify_attribute(endpoint, image, probe.spec.dimension))
}

/// [`TextChat`] over a gateway endpoint, used by the corpus stages.
pub struct GatewayChat<'a> {
    pub gateway: &'a ModelGateway,
    pub endpoint: &'a EndpointConfig,
}

impl TextChat for GatewayChat<'_> {
    fn chat(&mut self, messages: &[ChatTurn]) -> Result<String, CorpusError> {
        let wire: Vec<ChatMessage> = messages.iter().map(ChatMessage::from).collect();
        match self.gateway.chat_messages(self.endpoint, &wire) {
            Ok(ModelReply::Text(text)) => Ok(text),
            Ok(ModelReply::Refusal { reason }) => {
                Err(CorpusError::Backend(format!("refused: {reason}")))
            }
            Ok(ModelReply::Image(_)) => Err(CorpusError::Backend("unexpected image reply".into())),
            Err(e) => Err(CorpusError::Backend(e.to_string())),
        }
    }
}

/// [`ImageSource`] over a live image-generation endpoint.
pub struct GatewayImageSource<'a> {
    pub gateway: &'a ModelGateway,
    pub endpoint: &'a EndpointConfig,
}

impl ImageSource for GatewayImageSource<'_> {
    fn image_for(&mut self, prompt: &str) -> Result<ImageRef, CorpusError> {
        match self.gateway.generate_image(self.endpoint, prompt) {
            Ok(ModelReply::Image(image)) => Ok(image),
            Ok(ModelReply::Refusal { reason }) => {
                Err(CorpusError::Backend(format!("refused: {reason}")))
            }
            Ok(ModelReply::Text(_)) => Err(CorpusError::Backend("unexpected text reply".into())),
            Err(e) => Err(CorpusError::Backend(e.to_string())),
        }
    }
}

/// Offline [`ImageSource`]: a deterministic labeled PNG per rendering. The
/// label is the category of the subject phrase found in the prompt, so
/// synthetic input images classify back to their subject.
pub struct SimImageSource<'a> {
    pub store: &'a DataStore,
}

impl ImageSource for SimImageSource<'_> {
    fn image_for(&mut self, prompt: &str) -> Result<ImageRef, CorpusError> {
        let label = subject_label_in(prompt);
        let png = crate::modelgate::simulator::synthetic_png(&label);
        self.store
            .store_image(&png)
            .map_err(|e| CorpusError::Backend(e.to_string()))
    }
}

/// Longest subject phrase contained in the prompt, mapped to its label.
/// The neutral subject maps to `no_preference`.
fn subject_label_in(prompt: &str) -> Label {
    let mut best: Option<(usize, Label)> = None;
    let mut consider = |phrase: &str, label: Label| {
        if prompt.contains(phrase) {
            match &best {
                Some((len, _)) if *len >= phrase.len() => {}
                _ => best = Some((phrase.len(), label)),
            }
        }
    };
    consider(NEUTRAL_SUBJECT, Label::NoPreference);
    for dim in crate::probekit::Dimension::ALL {
        for c in dim.categories() {
            consider(c.subject, Label::Category(c.id.to_string()));
        }
    }
    best.map(|(_, l)| l).unwrap_or(Label::Na)
}

/// Generates action templates for every profession and writes the
/// intermediate actions file. Professions that fail are reported together.
pub fn run_corpus_generate(
    config: &Config,
    generator: &mut dyn TextChat,
    professions: &[Profession],
) -> Result<Vec<ActionPrompt>, PipelineError> {
    let mut all: Vec<ActionPrompt> = Vec::new();
    let mut failed: Vec<String> = Vec::new();
    for profession in professions {
        match corpus::generate_actions(generator, profession, config.retry.budget) {
            Ok(actions) => all.extend(actions),
            Err(e) => {
                log::warn!("generation failed for {}: {e}", profession.id);
                failed.push(profession.id.clone());
            }
        }
    }
    if !failed.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "action generation failed for: {}",
            failed.join(", ")
        )));
    }
    write_actions_file(&config.actions_path(), &all)?;
    Ok(all)
}

pub fn write_actions_file(
    path: &std::path::Path,
    actions: &[ActionPrompt],
) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for action in actions {
        out.push_str(&serde_json::to_string(action).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_actions_file(path: &std::path::Path) -> Result<Vec<ActionPrompt>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

/// Scores every action against the predictors, ranks candidates within each
/// profession, and builds corpus entries in rank order.
pub fn run_corpus_filter(
    config: &Config,
    predictors: &mut [Box<dyn TextChat + '_>],
    professions: &[Profession],
    actions: Vec<ActionPrompt>,
) -> Result<Vec<CorpusEntry>, PipelineError> {
    if predictors.is_empty() {
        return Err(PipelineError::Invalid(
            "filtering needs at least one predictor".into(),
        ));
    }
    let by_id: BTreeMap<&str, &Profession> =
        professions.iter().map(|p| (p.id.as_str(), p)).collect();
    let sim = TrigramDice;

    let mut grouped: BTreeMap<String, Vec<ActionPrompt>> = BTreeMap::new();
    for mut action in actions {
        let profession = by_id.get(action.profession_id.as_str()).ok_or_else(|| {
            PipelineError::Invalid(format!(
                "action references unknown profession \"{}\"",
                action.profession_id
            ))
        })?;
        let mut guesses: Vec<Option<Vec<String>>> = Vec::with_capacity(predictors.len());
        for predictor in predictors.iter_mut() {
            match corpus::predict_professions(predictor.as_mut(), &action.template) {
                Ok(list) => guesses.push(Some(list)),
                Err(CorpusError::BadPredictorAnswer(raw)) => {
                    log::warn!(
                        "unparseable predictor answer for \"{}\": {raw}",
                        action.template
                    );
                    guesses.push(None);
                }
                Err(e) => return Err(e.into()),
            }
        }
        action.quality_score = Some(corpus::score_action_quality(
            &profession.name,
            &guesses,
            &sim,
        ));
        grouped
            .entry(action.profession_id.clone())
            .or_default()
            .push(action);
    }

    let mut entries: Vec<CorpusEntry> = Vec::new();
    for (profession_id, candidates) in grouped {
        let profession = by_id[profession_id.as_str()].clone();
        let ranked = corpus::rank_actions(candidates);
        for (index, action) in ranked.into_iter().enumerate() {
            let id = CorpusEntry::entry_id(&profession_id, index);
            entries.push(CorpusEntry::build(&id, profession.clone(), action)?);
        }
    }
    corpus::write_entries_file(&config.corpus, &entries)?;
    Ok(entries)
}
