//! Run configuration: one JSON file describing endpoints, probes, models,
//! and storage layout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelgate::{Capability, EndpointConfig, Simulator, SimulatorProfiles};
use crate::probekit::{Direction, ProbeError, ProbeSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate endpoint name \"{0}\"")]
    DuplicateEndpoint(String),
    #[error("{role} refers to unknown endpoint \"{name}\"")]
    UnknownEndpoint { role: &'static str, name: String },
    #[error("endpoint \"{name}\" provides {have}, {role} needs {need}")]
    WrongCapability {
        role: &'static str,
        name: String,
        need: Capability,
        have: Capability,
    },
    #[error(transparent)]
    BadProbe(#[from] ProbeError),
    #[error(transparent)]
    BadSimulator(#[from] crate::modelgate::simulator::SimulatorError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_concurrency() -> usize {
    4
}

fn default_retry_budget() -> u32 {
    3
}

fn default_base_delay_ms() -> u64 {
    500
}

/// Retry behavior shared by all endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrySettings {
    #[serde(default = "default_retry_budget")]
    pub budget: u32,
    #[serde(default = "default_base_delay_ms")]
    pub base_delay_ms: u64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        RetrySettings {
            budget: default_retry_budget(),
            base_delay_ms: default_base_delay_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Seed for everything randomized (the simulator's draws).
    #[serde(default)]
    pub seed: u64,
    /// Run against the deterministic simulator instead of live endpoints.
    #[serde(default)]
    pub offline: bool,
    /// Corpus entries file (JSON lines).
    pub corpus: PathBuf,
    /// Profession list, one name per line; needed by `corpus generate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub professions: Option<PathBuf>,
    /// Root for the request cache and image store.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Cache directory override; defaults to `<data_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    /// Where outcomes, reports, and manifests are written.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Probe worker threads.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub retry: RetrySettings,
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
    /// Per-dimension answer distributions for offline runs.
    #[serde(default)]
    pub simulator: SimulatorProfiles,
    /// Probe coordinates to run.
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    /// Endpoint names (or free-form labels when offline) under evaluation.
    #[serde(default)]
    pub models: Vec<String>,
    /// Endpoint classifying generated images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_endpoint: Option<String>,
    /// Endpoint generating action templates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    /// Endpoints recovering occupations during filtering.
    #[serde(default)]
    pub predictors: Vec<String>,
    /// Endpoint generating the input image set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imagegen: Option<String>,
}

/// Capability a probing model must provide for a direction.
pub fn capability_for(direction: Direction) -> Capability {
    match direction {
        Direction::ImageToText | Direction::TextToText => Capability::Chat,
        Direction::TextToImage => Capability::ImageGen,
        Direction::ImageToImage => Capability::ImageEdit,
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: Config = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// Default location of the intermediate generated-actions file.
    pub fn actions_path(&self) -> PathBuf {
        self.data_dir.join("actions.jsonl")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid(
                "concurrency must be at least 1".into(),
            ));
        }
        if self.corpus.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("corpus path must not be empty".into()));
        }

        let mut names = std::collections::BTreeSet::new();
        for ep in &self.endpoints {
            if ep.name.is_empty() {
                return Err(ConfigError::Invalid(
                    "endpoint names must not be empty".into(),
                ));
            }
            if !names.insert(ep.name.clone()) {
                return Err(ConfigError::DuplicateEndpoint(ep.name.clone()));
            }
        }

        for spec in &self.probes {
            spec.validate()?;
        }

        // Compiling the profiles surfaces any simulator config mistake even
        // before an offline run is requested.
        Simulator::new(self.seed, &self.simulator)?;

        for model in &self.models {
            if model.is_empty() {
                return Err(ConfigError::Invalid("model names must not be empty".into()));
            }
        }

        if !self.offline {
            for model in &self.models {
                let ep = self
                    .endpoint(model)
                    .ok_or_else(|| ConfigError::UnknownEndpoint {
                        role: "models",
                        name: model.clone(),
                    })?;
                for spec in &self.probes {
                    let need = capability_for(spec.direction);
                    if ep.capability != need {
                        return Err(ConfigError::WrongCapability {
                            role: "models",
                            name: model.clone(),
                            need,
                            have: ep.capability,
                        });
                    }
                }
            }
            self.check_role(
                self.vqa_endpoint.as_deref(),
                "vqa_endpoint",
                Capability::VqaClassify,
            )?;
            self.check_role(self.generator.as_deref(), "generator", Capability::Chat)?;
            for predictor in &self.predictors {
                self.check_role(Some(predictor), "predictors", Capability::Chat)?;
            }
            self.check_role(self.imagegen.as_deref(), "imagegen", Capability::ImageGen)?;

            let needs_vqa = self.probes.iter().any(|s| !s.direction.produces_text());
            if needs_vqa && self.vqa_endpoint.is_none() {
                return Err(ConfigError::Invalid(
                    "image-output probes need a vqa_endpoint".into(),
                ));
            }
        }
        Ok(())
    }

    fn check_role(
        &self,
        name: Option<&str>,
        role: &'static str,
        need: Capability,
    ) -> Result<(), ConfigError> {
        let Some(name) = name else { return Ok(()) };
        let ep = self
            .endpoint(name)
            .ok_or_else(|| ConfigError::UnknownEndpoint {
                role,
                name: name.to_string(),
            })?;
        if ep.capability != need {
            return Err(ConfigError::WrongCapability {
                role,
                name: name.to_string(),
                need,
                have: ep.capability,
            });
        }
        Ok(())
    }
}
