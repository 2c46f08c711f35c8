//! Output-directory layout, artifact I/O and per-command manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_VERSION: u32 = 1;

/// An artifact the workflow knows how to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Layout,
    Baseline,
    Robot,
    Transition,
    Features,
    Events,
    Effects,
    Ddqn,
}

impl Artifact {
    pub fn rel_path(self) -> &'static str {
        match self {
            Artifact::Layout => "layout.json",
            Artifact::Baseline => "corpus/baseline.json",
            Artifact::Robot => "corpus/robot.json",
            Artifact::Transition => "models/transition.json",
            Artifact::Features => "models/features.json",
            Artifact::Events => "models/events.json",
            Artifact::Effects => "models/effects.json",
            Artifact::Ddqn => "models/ddqn.json",
        }
    }

    /// Command that writes this artifact.
    pub fn producer(self) -> &'static str {
        match self {
            Artifact::Layout | Artifact::Baseline | Artifact::Robot => "synth",
            Artifact::Transition => "train-transition",
            Artifact::Features => "select-features",
            Artifact::Events => "fit-events",
            Artifact::Effects => "fit-effects",
            Artifact::Ddqn => "train-policy",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub workers: usize,
    /// Resolved configuration; rerunning `command` with it reproduces the outputs.
    pub config_file: PathBuf,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub started_unix: u64,
    pub elapsed_s: f64,
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<FileRecord, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileRecord {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Tracks what one command read and wrote.
pub struct Run {
    pub out: PathBuf,
    command: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl Run {
    pub fn new(out: &Path, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        })
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.out.join(a.rel_path())
    }

    /// Location of `a`, honouring an explicit override; fails naming the
    /// producing command when the file is absent.
    pub fn require(&mut self, a: Artifact, over: Option<&Path>) -> Result<PathBuf, CliError> {
        let p = over.map(Path::to_path_buf).unwrap_or_else(|| self.path(a));
        if !p.is_file() {
            return Err(CliError::MissingArtifact { artifact: p, producer: a.producer() });
        }
        Ok(p)
    }

    pub fn read_bytes(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let b = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        Ok(b)
    }

    pub fn read_json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T, CliError> {
        let b = self.read_bytes(path)?;
        serde_json::from_slice(&b).map_err(|e| CliError::json(path, e))
    }

    pub fn load<T: DeserializeOwned>(&mut self, a: Artifact, over: Option<&Path>) -> Result<T, CliError> {
        let p = self.require(a, over)?;
        self.read_json(&p)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        if !self.outputs.contains(&p) {
            self.outputs.push(p.clone());
        }
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf, CliError> {
        let p = self.out.join(rel);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(&p, e))?;
        self.write_text(rel, &(text + "\n"))
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    /// Write the resolved config and the manifest.
    pub fn finish(mut self, seed: Option<u64>, workers: usize, config_toml: &str) -> Result<PathBuf, CliError> {
        let cfg_rel = format!("manifests/{}.toml", self.command);
        let config_file = self.write_text(&cfg_rel, config_toml)?;
        self.outputs.retain(|p| p != &config_file);
        let inputs = self.inputs.iter().map(|p| sha256_file(p)).collect::<Result<Vec<_>, _>>()?;
        let outputs = self.outputs.iter().map(|p| sha256_file(p)).collect::<Result<Vec<_>, _>>()?;
        let m = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            seed,
            workers,
            config_file,
            inputs,
            outputs,
            started_unix: self.started_unix,
            elapsed_s: self.started.elapsed().as_secs_f64(),
            notes: std::mem::take(&mut self.notes),
        };
        let rel = format!("manifests/{}.json", self.command);
        let p = self.out.join(&rel);
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::json(&p, e))?;
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}
