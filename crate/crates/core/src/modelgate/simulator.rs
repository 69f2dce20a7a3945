//! Deterministic offline model: draws labels from a configured distribution
//! keyed by (seed, model, probe fingerprint) and emits plausible surfaces,
//! so every pipeline stage runs end to end with no network.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::png;
use super::{fingerprint, ChatMessage};
use crate::outcome::Label;
use crate::probekit::{Dimension, RenderedProbe};

/// Text surface of a simulated refusal. Deliberately contains none of the
/// option strings, so the parser maps it to `NA`.
pub const REFUSAL_TEXT: &str = "I cannot determine this from the provided input.";

/// Keyword of the PNG text chunk carrying the synthetic label.
pub const LABEL_CHUNK_KEYWORD: &str = "label";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimulatorError {
    #[error("unknown dimension \"{0}\" in simulator profile")]
    UnknownDimension(String),
    #[error("label \"{label}\" is not drawable for {dimension}")]
    UnknownLabel { dimension: Dimension, label: String },
    #[error("weight for \"{label}\" must be a finite non-negative number")]
    BadWeight { label: String },
    #[error("profile for {0} has zero total weight")]
    ZeroTotal(Dimension),
}

/// One simulated reply.
#[derive(Debug, Clone, PartialEq)]
pub enum SimReply {
    Text { label: Label, text: String },
    Image { label: Label, png: Vec<u8> },
    Refusal { reason: String },
}

/// Answer distribution per dimension, keyed by label wire id.
pub type SimulatorProfiles = BTreeMap<String, BTreeMap<String, f64>>;

pub struct Simulator {
    seed: u64,
    profiles: BTreeMap<Dimension, Vec<(Label, f64)>>,
}

impl Simulator {
    /// Builds a simulator from per-dimension weight maps. Dimensions without
    /// a profile draw uniformly over their categories plus the neutral
    /// answer and never refuse.
    pub fn new(seed: u64, profiles: &SimulatorProfiles) -> Result<Self, SimulatorError> {
        let mut compiled = BTreeMap::new();
        for (dim_id, weights) in profiles {
            let dimension = Dimension::ALL
                .into_iter()
                .find(|d| d.id() == dim_id)
                .ok_or_else(|| SimulatorError::UnknownDimension(dim_id.clone()))?;
            compiled.insert(dimension, compile_profile(dimension, weights)?);
        }
        Ok(Simulator {
            seed,
            profiles: compiled,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Labels with weights in canonical draw order.
    pub fn weights_for(&self, dimension: Dimension) -> Vec<(Label, f64)> {
        match self.profiles.get(&dimension) {
            Some(w) => w.clone(),
            None => canonical_labels(dimension)
                .into_iter()
                .map(|label| {
                    let w = if label == Label::Na { 0.0 } else { 1.0 };
                    (label, w)
                })
                .collect(),
        }
    }

    /// The label this simulator deterministically answers for a probe sent
    /// as `model`. The model name, probe text, and input image all feed the
    /// fingerprint, so distinct probes draw independently.
    pub fn draw(&self, model: &str, probe: &RenderedProbe) -> Label {
        let fp = self.probe_fingerprint(model, probe);
        let unit = unit_draw(self.seed, probe.spec.dimension, &fp);
        let weights = self.weights_for(probe.spec.dimension);
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut cum = 0.0;
        for (label, w) in &weights {
            cum += w / total;
            if unit < cum {
                return label.clone();
            }
        }
        weights.last().map(|(l, _)| l.clone()).unwrap_or(Label::Na)
    }

    /// Full simulated reply: text for the text-output directions, a labeled
    /// synthetic PNG for the image-output ones. A drawn `NA` becomes a
    /// refusal surface in both cases.
    pub fn answer_probe(&self, model: &str, probe: &RenderedProbe) -> SimReply {
        let label = self.draw(model, probe);
        if probe.spec.direction.produces_text() {
            let text = match &label {
                Label::Na => REFUSAL_TEXT.to_string(),
                other => surface_text(probe, other),
            };
            SimReply::Text { label, text }
        } else {
            match label {
                Label::Na => SimReply::Refusal {
                    reason: "content_policy (simulated)".into(),
                },
                other => {
                    let png = synthetic_png(&other);
                    SimReply::Image { label: other, png }
                }
            }
        }
    }

    fn probe_fingerprint(&self, model: &str, probe: &RenderedProbe) -> String {
        let message = ChatMessage::user(&probe.prompt_text, probe.image_ref.clone());
        fingerprint(
            model,
            &[message],
            &serde_json::json!({ "op": "simulate", "seed": self.seed }),
        )
    }
}

fn canonical_labels(dimension: Dimension) -> Vec<Label> {
    let mut labels: Vec<Label> = dimension
        .category_ids()
        .map(|id| Label::Category(id.to_string()))
        .collect();
    labels.push(Label::NoPreference);
    labels.push(Label::Na);
    labels
}

fn compile_profile(
    dimension: Dimension,
    weights: &BTreeMap<String, f64>,
) -> Result<Vec<(Label, f64)>, SimulatorError> {
    let mut compiled: Vec<(Label, f64)> = canonical_labels(dimension)
        .into_iter()
        .map(|label| (label, 0.0))
        .collect();
    for (key, w) in weights {
        // Wire ids match case-insensitively so configs may spell "NA" as
        // "na".
        let slot = compiled
            .iter_mut()
            .find(|(l, _)| l.as_wire().eq_ignore_ascii_case(key))
            .ok_or_else(|| SimulatorError::UnknownLabel {
                dimension,
                label: key.clone(),
            })?;
        if !w.is_finite() || *w < 0.0 {
            return Err(SimulatorError::BadWeight { label: key.clone() });
        }
        slot.1 = *w;
    }
    if compiled.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        return Err(SimulatorError::ZeroTotal(dimension));
    }
    Ok(compiled)
}

/// Uniform draw in `[0, 1)` from the draw hash
/// `sha256("draw" || seed || dimension || fingerprint)`.
fn unit_draw(seed: u64, dimension: Dimension, fingerprint_hex: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(b"draw");
    hasher.update(seed.to_le_bytes());
    hasher.update(dimension.id().as_bytes());
    hasher.update(fingerprint_hex.as_bytes());
    let digest = hasher.finalize();
    let x = u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
    x as f64 / 2f64.powi(64)
}

/// The option string a drawn label surfaces as (the actor name for indirect
/// probes, the plain option otherwise).
fn surface_text(probe: &RenderedProbe, label: &Label) -> String {
    if let Ok(options) = probe.spec.labeled_options() {
        for (option, option_label) in options {
            if option_label == *label {
                return option;
            }
        }
    }
    label.as_wire().to_string()
}

/// Deterministic 1x1 PNG whose pixel color is derived from the label and
/// whose text chunk carries the label wire id.
pub fn synthetic_png(label: &Label) -> Vec<u8> {
    let mut hasher = Sha256::new();
    hasher.update(b"pixel");
    hasher.update(label.as_wire().as_bytes());
    let digest = hasher.finalize();
    png::encode_labeled_png(
        [digest[0], digest[1], digest[2]],
        LABEL_CHUNK_KEYWORD,
        label.as_wire(),
    )
}

/// Reads the label back out of a synthetic PNG; `NA` when the bytes do not
/// carry one.
pub fn classify_synthetic(bytes: &[u8]) -> Label {
    match png::read_text_chunk(bytes, LABEL_CHUNK_KEYWORD) {
        Some(wire) => Label::from_wire(&wire),
        None => Label::Na,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ActionPrompt, CorpusEntry, Profession};
    use crate::probekit::{
        render_probe, CultureSet, Direction, InfoMode, ProbeSpec, Style, NEUTRAL_SUBJECT,
    };

    fn probe_for(
        direction: Direction,
        dimension: Dimension,
        style: Style,
        culture: Option<CultureSet>,
        index: usize,
    ) -> RenderedProbe {
        let profession = Profession::new("Bakers").unwrap();
        let action = ActionPrompt::new(
            "bakers",
            &format!("A <subject> is baking batch number {index}"),
        )
        .unwrap();
        let mut entry =
            CorpusEntry::build(&CorpusEntry::entry_id("bakers", index), profession, action)
                .unwrap();
        if direction.takes_image_input() {
            entry.image_refs.insert(
                NEUTRAL_SUBJECT.to_string(),
                crate::corpus::ImageRef {
                    sha256: "0".repeat(64),
                    path: "images/0.png".into(),
                },
            );
        }
        let spec =
            ProbeSpec::new(direction, dimension, InfoMode::Informed, style, culture).unwrap();
        render_probe(&entry, &spec, NEUTRAL_SUBJECT).unwrap()
    }

    fn profiles(dim: &str, weights: &[(&str, f64)]) -> SimulatorProfiles {
        let mut map = BTreeMap::new();
        map.insert(
            dim.to_string(),
            weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        );
        map
    }

    #[test]
    fn degenerate_profiles_always_draw_their_label() {
        let sim = Simulator::new(7, &profiles("gender", &[("female", 1.0)])).unwrap();
        for i in 0..50 {
            let probe = probe_for(
                Direction::TextToText,
                Dimension::Gender,
                Style::Direct,
                None,
                i,
            );
            assert_eq!(sim.draw("m", &probe), Label::Category("female".into()));
        }
    }

    #[test]
    fn draws_are_deterministic_and_fingerprint_sensitive() {
        let weights = profiles("gender", &[("male", 0.5), ("female", 0.5)]);
        let sim = Simulator::new(3, &weights).unwrap();
        let again = Simulator::new(3, &weights).unwrap();
        let mut saw_male = false;
        let mut saw_female = false;
        for i in 0..100 {
            let probe = probe_for(
                Direction::TextToText,
                Dimension::Gender,
                Style::Direct,
                None,
                i,
            );
            let label = sim.draw("m", &probe);
            assert_eq!(label, again.draw("m", &probe));
            match label {
                Label::Category(ref id) if id == "male" => saw_male = true,
                Label::Category(ref id) if id == "female" => saw_female = true,
                other => panic!("unexpected draw {other:?}"),
            }
        }
        assert!(saw_male && saw_female);
    }

    #[test]
    fn different_seeds_or_models_decorrelate_draws() {
        let weights = profiles("gender", &[("male", 0.5), ("female", 0.5)]);
        let a = Simulator::new(1, &weights).unwrap();
        let b = Simulator::new(2, &weights).unwrap();
        let mut diff_seed = 0;
        let mut diff_model = 0;
        for i in 0..200 {
            let probe = probe_for(
                Direction::TextToText,
                Dimension::Gender,
                Style::Direct,
                None,
                i,
            );
            if a.draw("m", &probe) != b.draw("m", &probe) {
                diff_seed += 1;
            }
            if a.draw("m", &probe) != a.draw("other", &probe) {
                diff_model += 1;
            }
        }
        assert!(diff_seed > 50, "seed changed only {diff_seed} of 200 draws");
        assert!(
            diff_model > 50,
            "model changed only {diff_model} of 200 draws"
        );
    }

    #[test]
    fn draw_frequencies_track_the_profile() {
        let sim = Simulator::new(
            11,
            &profiles(
                "gender",
                &[("male", 0.6), ("female", 0.2), ("no_preference", 0.2)],
            ),
        )
        .unwrap();
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        let n = 2000;
        for i in 0..n {
            let probe = probe_for(
                Direction::TextToText,
                Dimension::Gender,
                Style::Direct,
                None,
                i,
            );
            *counts
                .entry(sim.draw("m", &probe).as_wire().to_string())
                .or_default() += 1;
        }
        let share = |k: &str| counts.get(k).copied().unwrap_or(0) as f64 / n as f64;
        assert!((share("male") - 0.6).abs() < 0.05);
        assert!((share("female") - 0.2).abs() < 0.05);
        assert!((share("no_preference") - 0.2).abs() < 0.05);
    }

    #[test]
    fn text_surfaces_use_option_strings() {
        let sim = Simulator::new(5, &profiles("gender", &[("female", 1.0)])).unwrap();
        let direct = probe_for(
            Direction::TextToText,
            Dimension::Gender,
            Style::Direct,
            None,
            0,
        );
        match sim.answer_probe("m", &direct) {
            SimReply::Text { text, .. } => assert_eq!(text, "female"),
            other => panic!("expected text, got {other:?}"),
        }
        let indirect = probe_for(
            Direction::ImageToText,
            Dimension::Gender,
            Style::Indirect,
            Some(CultureSet::Ko),
            0,
        );
        match sim.answer_probe("m", &indirect) {
            SimReply::Text { text, .. } => assert_eq!(text, "Song Hye-kyo"),
            other => panic!("expected text, got {other:?}"),
        }
    }

    #[test]
    fn refusals_surface_without_option_substrings() {
        let sim = Simulator::new(5, &profiles("gender", &[("na", 1.0)])).unwrap();
        let probe = probe_for(
            Direction::TextToText,
            Dimension::Gender,
            Style::Direct,
            None,
            0,
        );
        match sim.answer_probe("m", &probe) {
            SimReply::Text { label, text } => {
                assert_eq!(label, Label::Na);
                assert_eq!(text, REFUSAL_TEXT);
                let options = probe.spec.labeled_options().unwrap();
                assert_eq!(
                    crate::outcome::normalize_response(&text, &options),
                    Label::Na
                );
            }
            other => panic!("expected text, got {other:?}"),
        }
    }

    #[test]
    fn image_probes_round_trip_their_label() {
        let sim = Simulator::new(9, &profiles("gender", &[("male", 1.0)])).unwrap();
        let probe = probe_for(
            Direction::TextToImage,
            Dimension::Gender,
            Style::Direct,
            None,
            0,
        );
        match sim.answer_probe("m", &probe) {
            SimReply::Image { label, png } => {
                assert_eq!(label, Label::Category("male".into()));
                assert_eq!(classify_synthetic(&png), label);
            }
            other => panic!("expected image, got {other:?}"),
        }
        assert_eq!(classify_synthetic(b"junk"), Label::Na);
    }

    #[test]
    fn image_direction_refusals_are_refusal_replies() {
        let sim = Simulator::new(9, &profiles("gender", &[("na", 1.0)])).unwrap();
        let probe = probe_for(
            Direction::TextToImage,
            Dimension::Gender,
            Style::Direct,
            None,
            0,
        );
        assert!(matches!(
            sim.answer_probe("m", &probe),
            SimReply::Refusal { .. }
        ));
    }

    #[test]
    fn profiles_validate_labels_and_weights() {
        assert!(matches!(
            Simulator::new(0, &profiles("gender", &[("asian", 1.0)])),
            Err(SimulatorError::UnknownLabel { .. })
        ));
        assert!(matches!(
            Simulator::new(0, &profiles("gender", &[("male", -0.1)])),
            Err(SimulatorError::BadWeight { .. })
        ));
        assert!(matches!(
            Simulator::new(0, &profiles("gender", &[("male", 0.0)])),
            Err(SimulatorError::ZeroTotal(_))
        ));
        let mut bad = SimulatorProfiles::new();
        bad.insert("height".into(), BTreeMap::from([("male".into(), 1.0)]));
        assert!(matches!(
            Simulator::new(0, &bad),
            Err(SimulatorError::UnknownDimension(_))
        ));
    }

    #[test]
    fn unprofiled_dimensions_draw_uniformly_and_never_refuse() {
        let sim = Simulator::new(4, &SimulatorProfiles::new()).unwrap();
        let weights = sim.weights_for(Dimension::Race);
        assert_eq!(weights.len(), 5);
        assert_eq!(weights.iter().filter(|(_, w)| *w > 0.0).count(), 4);
        assert_eq!(weights.last().unwrap(), &(Label::Na, 0.0));
    }
}
