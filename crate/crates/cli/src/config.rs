//! Run configuration: experiment sections, input paths and the run seed.

use std::path::{Path, PathBuf};

use jokerank::datamodel::EventCalendar;
use jokerank::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub labelled: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Directory holding one checkpoint directory per model name.
    pub checkpoints: Option<PathBuf>,
    /// Event calendar JSON; the bundled calendar when unset.
    pub calendar: Option<PathBuf>,
}

/// Parsed configuration. `seed` is mandatory; it seeds model training and,
/// unless `world.seed` is given, the simulator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("config is not JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::config("config must be a JSON object"));
        };
        let seed = match map.remove("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| CliError::config(format!("seed must be a non-negative integer, got {v}")))?,
            None => return Err(CliError::config("missing required key `seed`")),
        };
        let mut paths: Paths = match map.remove("paths") {
            Some(v) => serde_json::from_value(v).map_err(|e| CliError::config(format!("paths: {e}")))?,
            None => Paths::default(),
        };
        let world_seed_given = matches!(map.get("world"), Some(Value::Object(w)) if w.contains_key("seed"));
        map.insert("seed".into(), Value::from(seed));
        let mut experiment: ExperimentConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| CliError::config(e.to_string()))?;
        if !world_seed_given {
            experiment.world.seed = seed;
        }
        for p in [
            &mut paths.corpus,
            &mut paths.events,
            &mut paths.labelled,
            &mut paths.ground_truth,
            &mut paths.checkpoints,
            &mut paths.calendar,
            &mut experiment.embedding.file,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        experiment.world.validate().map_err(CliError::from)?;
        experiment.labels.validate().map_err(CliError::from)?;
        experiment.weights.validate().map_err(CliError::from)?;
        experiment.dl.validate().map_err(CliError::from)?;
        Ok(Self { seed, paths, experiment })
    }

    /// SHA-256 of the JSON form with keys in sorted order.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn calendar(&self) -> Result<EventCalendar, CliError> {
        match &self.paths.calendar {
            Some(p) => EventCalendar::load(p).map_err(CliError::from),
            None => Ok(EventCalendar::default_calendar()),
        }
    }

    /// The configured path for `key`, or a config error naming it.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        path.as_deref()
            .ok_or_else(|| CliError::config(format!("this command needs `paths.{key}` in the config")))
    }
}
