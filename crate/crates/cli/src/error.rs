use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("missing {artifact}; run `regionsim {producer}` first")]
    MissingArtifact { artifact: PathBuf, producer: &'static str },
    #[error("`{0}` needs a seed (--seed, `seed =` in the config, or REGIONSIM_SEED)")]
    MissingSeed(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Layout(#[from] regionsim::graph::LayoutError),
    #[error(transparent)]
    Trace(#[from] regionsim::trace::TraceError),
    #[error(transparent)]
    Synth(#[from] regionsim::synth::SynthError),
    #[error(transparent)]
    Transition(#[from] regionsim::transition::TransitionError),
    #[error(transparent)]
    Feature(#[from] regionsim::features::FeatureError),
    #[error(transparent)]
    Events(#[from] regionsim::events::EventError),
    #[error(transparent)]
    Effects(#[from] regionsim::effects::EffectError),
    #[error(transparent)]
    Engine(#[from] regionsim::engine::EngineError),
    #[error(transparent)]
    Policy(#[from] regionsim::policy::PolicyError),
    #[error(transparent)]
    Ddqn(#[from] regionsim::ddqn::DdqnError),
    #[error(transparent)]
    Stats(#[from] regionsim::stats::StatsError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json { path: path.to_path_buf(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "format",
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing-artifact",
            CliError::MissingSeed(_) => "missing-seed",
            CliError::Invalid(_) => "invalid-input",
            CliError::Layout(_) | CliError::Trace(_) => "input",
            _ => "model",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::MissingSeed(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }

    pub fn record(&self, command: &str) -> ErrorRecord {
        let (artifact, producer) = match self {
            CliError::MissingArtifact { artifact, producer } => (Some(artifact.clone()), Some(*producer)),
            _ => (None, None),
        };
        ErrorRecord {
            command: command.to_string(),
            kind: self.kind(),
            message: self.to_string(),
            artifact,
            producer,
            exit_code: self.exit_code(),
        }
    }
}

/// Machine-readable failure description, printed to stderr as one JSON line.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<PathBuf>,
    /// Command that produces the missing artifact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub producer: Option<&'static str>,
    pub exit_code: i32,
}
