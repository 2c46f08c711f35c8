//! Run configuration.
//!
//! Values are layered, later layers winning: built-in defaults, the TOML file
//! given by `--config`, `REGIONSIM_*` environment variables, then command-line
//! flags. Environment keys map onto the document with `__` as the path
//! separator, so `REGIONSIM_SIM__ENGINE__T_MAX=120` sets `t_max = 120` under
//! `[sim.engine]`.
//! `REGIONSIM_SEED`, `REGIONSIM_OUT` and `REGIONSIM_WORKERS` set the
//! top-level keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use regionsim::ddqn::TrainConfig;
use regionsim::effects::{default_grid, DEFAULT_TAU};
use regionsim::engine::SimConfig;
use regionsim::events::DEFAULT_N_MIN;
use regionsim::sage::ScorerConfig;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "REGIONSIM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random stream is derived from it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// 0 uses every core.
    pub workers: usize,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub transition: TransitionSection,
    pub events: EventsSection,
    pub effects: EffectsSection,
    pub sim: SimSection,
    pub evaluate: EvaluateSection,
    pub policy: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("regionsim-out"),
            workers: 0,
            paths: Paths::default(),
            ingest: IngestSection::default(),
            synth: SynthSection::default(),
            transition: TransitionSection::default(),
            events: EventsSection::default(),
            effects: EffectsSection::default(),
            sim: SimSection::default(),
            evaluate: EvaluateSection::default(),
            policy: TrainConfig::default(),
        }
    }
}

/// Input overrides. Unset paths resolve inside the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Tick-level trace CSV files.
    pub ticks: Vec<PathBuf>,
    /// Visit-level CSV files.
    pub visits: Vec<PathBuf>,
    /// `baseline` or `robot`.
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub episodes: usize,
    /// Robot-present episodes; 0 skips the robot corpus.
    pub robot_episodes: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { episodes: 60, robot_episodes: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionSection {
    /// Feature names; empty uses the selection result if present, else the
    /// default six.
    pub features: Vec<String>,
    pub heuristics: Vec<String>,
    pub folds: usize,
    /// Number of features greedy selection adds.
    pub select_k: usize,
    /// Use the small network inside feature selection.
    pub select_reduced: bool,
    pub scorer: ScorerConfig,
}

impl Default for TransitionSection {
    fn default() -> Self {
        TransitionSection {
            features: Vec::new(),
            heuristics: ["RA", "CT", "CV", "CE", "FE", "LA"].map(String::from).to_vec(),
            folds: 5,
            select_k: 6,
            select_reduced: true,
            scorer: ScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsSection {
    pub n_min: usize,
    pub variant: String,
}

impl Default for EventsSection {
    fn default() -> Self {
        EventsSection { n_min: DEFAULT_N_MIN, variant: "region-sampling".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectsSection {
    pub tau: f64,
    /// Fixed decay constant; unset calibrates over `grid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub grid: Vec<f64>,
}

impl Default for EffectsSection {
    fn default() -> Self {
        EffectsSection { tau: DEFAULT_TAU, lambda: None, grid: default_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub episodes: usize,
    /// `no-robots`, `stay`, `low-impact`, `high-impact`, `pursue` or `ddqn`.
    pub policy: String,
    /// Event-model variant to simulate with; unset keeps the fitted one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub engine: SimConfig,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection { episodes: 600, policy: "pursue".into(), variant: None, engine: SimConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub episodes: usize,
    /// Variant names such as `region-sampling`; empty means all nine.
    pub variants: Vec<String>,
    /// Also run the cross-validated transition model comparison.
    pub models: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { episodes: 600, variants: Vec::new(), models: false }
    }
}

/// Parse an environment value as a TOML value, falling back to a string.
fn env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().ok_or_else(|| CliError::Config("empty environment key".into()))?;
    let mut table = root;
    for key in parents {
        let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("environment override descends into non-table key {key:?}")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Apply `REGIONSIM_*` variables from `vars` onto `doc`.
pub fn apply_env<I>(doc: &mut toml::Table, vars: I) -> Result<Vec<String>, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut applied = Vec::new();
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let rest = key[ENV_PREFIX.len()..].trim_start_matches('_');
        if rest.is_empty() || rest == "LOG" || rest == "CONFIG" {
            continue;
        }
        let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
        set_path(doc, &path, env_value(&raw))?;
        applied.push(key);
    }
    Ok(applied)
}

impl RunConfig {
    /// Defaults, then the file, then the environment.
    pub fn load<I>(file: Option<&Path>, env: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let applied = apply_env(&mut doc, env)?;
        if !applied.is_empty() {
            log::info!("environment overrides: {}", applied.join(", "));
        }
        toml::Value::Table(doc)
            .try_into::<RunConfig>()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::MissingSeed(command.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig { seed: Some(3), ..RunConfig::default() };
        let text = c.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn env_overrides_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 1\n[sim]\nepisodes = 10\n[sim.engine]\nt_max = 50.0\n").unwrap();
        let c = RunConfig::load(
            Some(&p),
            vars(&[
                ("REGIONSIM_SEED", "9"),
                ("REGIONSIM_SIM__ENGINE__T_MAX", "75.5"),
                ("REGIONSIM_EVENTS__VARIANT", "group-means"),
                ("UNRELATED", "x"),
            ]),
        )
        .unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.sim.episodes, 10);
        assert_eq!(c.sim.engine.t_max, 75.5);
        assert_eq!(c.events.variant, "group-means");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, vars(&[("REGIONSIM_SIM__EPISODEZ", "3")])).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }

    #[test]
    fn missing_seed_is_an_error() {
        let c = RunConfig::default();
        assert!(matches!(c.require_seed("simulate"), Err(CliError::MissingSeed(_))));
    }
}
