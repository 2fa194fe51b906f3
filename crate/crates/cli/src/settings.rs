//! Layered settings: defaults, then the `--config` file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use surprise_bo::augmentation::GanConfig;
use surprise_bo::bench::Model;
use surprise_bo::dataset::Target;
use surprise_bo::engine::{FitSettings, Policy};
use surprise_bo::surprise::SurpriseConfig;

use crate::CliError;

pub const DATA_ENV: &str = "SURPRISE_BO_DATA";

/// Overlays `top` onto `base`, recursing into objects. Nulls in `top` are
/// ignored so unset flags never clear a value.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Merges defaults, the optional config file and the flags into `T`.
pub fn merge<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    flags: &impl Serialize,
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !parsed.is_object() {
            return Err(CliError::Config("config file must hold a JSON object".into()));
        }
        overlay(&mut v, parsed);
    }
    overlay(&mut v, serde_json::to_value(flags).expect("flags serialize"));
    serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
}

/// Resolves the data file: the explicit path, else `SURPRISE_BO_DATA`. A
/// directory must contain exactly one `.csv` file.
pub fn resolve_data(explicit: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => return Ok(None),
        },
    };
    if !path.is_dir() {
        return Ok(Some(path));
    }
    let csvs: Vec<PathBuf> = std::fs::read_dir(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    match csvs.as_slice() {
        [one] => Ok(Some(one.clone())),
        [] => Err(CliError::Data(format!("no .csv file in {}", path.display()))),
        _ => Err(CliError::Data(format!("several .csv files in {}; pass --data", path.display()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Recorded targets of the training partition.
    Pool,
    /// The seeded synthetic task.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum ScenarioChoice {
    I,
    II,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareSettings {
    pub data: Option<PathBuf>,
    pub target: Target,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for PrepareSettings {
    fn default() -> Self {
        PrepareSettings {
            data: None,
            target: Target::Depth,
            train_fraction: 0.75,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSettings {
    pub policy: Policy,
    pub target: Target,
    /// Defaults to the target's preset.
    pub warmup: Option<usize>,
    pub budget: Option<usize>,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub oracle: OracleKind,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub task_seed: u64,
    pub surprise: SurpriseConfig,
    pub fit: FitSettings,
    pub neighborhood_radius: Option<f64>,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            policy: Policy::Shannon,
            target: Target::Depth,
            warmup: None,
            budget: None,
            seed: 0,
            data: None,
            oracle: OracleKind::Pool,
            train_fraction: 0.75,
            split_seed: 0,
            task_seed: 0,
            surprise: SurpriseConfig::default(),
            fit: FitSettings::default(),
            neighborhood_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainSettings {
    pub target: Target,
    pub data: Option<PathBuf>,
    pub synthetic: bool,
    pub task_seed: u64,
    /// Rows of real warm-up data the GAN learns from; preset if unset.
    pub warmup: Option<usize>,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub gan: GanConfig,
}

impl Default for GanTrainSettings {
    fn default() -> Self {
        GanTrainSettings {
            target: Target::Depth,
            data: None,
            synthetic: false,
            task_seed: 0,
            warmup: None,
            seed: 0,
            train_fraction: 0.75,
            split_seed: 0,
            gan: GanConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSampleSettings {
    pub model: Option<PathBuf>,
    pub count: usize,
    pub tercile: Option<usize>,
    pub seed: u64,
}

impl Default for GanSampleSettings {
    fn default() -> Self {
        GanSampleSettings {
            model: None,
            count: 100,
            tercile: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanFilterSettings {
    pub input: Option<PathBuf>,
    pub ranges: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub target: Target,
    pub scenario: ScenarioChoice,
    pub reps: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub synthetic: bool,
    pub task_seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub models: Vec<Model>,
    pub external_baselines: Option<PathBuf>,
    /// Overrides of the target preset.
    pub warmup: Option<usize>,
    pub budget: Option<usize>,
    pub ml_train_size_scenario1: Option<usize>,
    pub ml_train_size_scenario2: Option<usize>,
    pub sweep: bool,
    pub counts: Vec<usize>,
    pub gan: GanConfig,
    pub surprise: SurpriseConfig,
    pub fit: FitSettings,
    pub jobs: Option<usize>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            target: Target::Depth,
            scenario: ScenarioChoice::Both,
            reps: 20,
            seed: 0,
            data: None,
            synthetic: false,
            task_seed: 0,
            train_fraction: 0.75,
            split_seed: 0,
            models: Model::ALL.to_vec(),
            external_baselines: None,
            warmup: None,
            budget: None,
            ml_train_size_scenario1: None,
            ml_train_size_scenario2: None,
            sweep: false,
            counts: surprise_bo::bench::default_synth_counts(),
            gan: GanConfig::default(),
            surprise: SurpriseConfig::default(),
            fit: FitSettings::default(),
            jobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSettings {
    pub host: String,
    pub port: u16,
    pub store: Option<PathBuf>,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings {
            host: "127.0.0.1".into(),
            port: 8080,
            store: None,
        }
    }
}
