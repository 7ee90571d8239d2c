//! Benchmark manifest: a TOML file listing datasets, models and run settings.
//!
//! ```toml
//! models = ["pls", "ridge"]
//! folds = 3
//! workers = 4
//! seed = 42
//!
//! [[datasets]]
//! name = "corn_moisture"
//! database = "corn"
//! path = "data/corn.csv"
//! target = "moisture"
//! task = "regression"
//! split = { method = "spxy", test_fraction = 0.25 }
//!
//! [[external]]
//! id = "tabpfn"
//! command = ["python3", "adapters/tabpfn_adapter.py"]
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, Dataset, Task};
use crate::error::{Error, Result};
use crate::search::Family;

pub const BUILTIN_MODELS: &[&str] = &["pls", "plsda", "ridge"];

fn default_folds() -> usize {
    3
}

fn default_workers() -> usize {
    18
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitEntry {
    Predefined {
        #[serde(default)]
        train: Option<Vec<usize>>,
        #[serde(default)]
        test: Option<Vec<usize>>,
        #[serde(default)]
        train_file: Option<PathBuf>,
        #[serde(default)]
        test_file: Option<PathBuf>,
        #[serde(default)]
        seed: u64,
    },
    Spxy {
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
    SpxyStratified {
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl SplitEntry {
    pub fn seed(&self) -> u64 {
        match self {
            SplitEntry::Predefined { seed, .. }
            | SplitEntry::Spxy { seed, .. }
            | SplitEntry::SpxyStratified { seed, .. } => *seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub database: String,
    pub path: PathBuf,
    pub target: String,
    pub task: Task,
    pub split: SplitEntry,
}

/// An external model reachable through the bridge protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalEntry {
    pub id: String,
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default)]
    pub family: Option<Family>,
    /// Fixed parameters during cross-validation; defaults come from the
    /// model's preset when omitted.
    #[serde(default)]
    pub cv_params: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub final_params: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkManifest {
    pub datasets: Vec<DatasetEntry>,
    pub models: Vec<String>,
    #[serde(default)]
    pub search_space: Option<Family>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub external: Vec<ExternalEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Presets for external models with fixed settings (cv, final).
pub fn external_preset(id: &str) -> Option<(serde_json::Value, serde_json::Value)> {
    use serde_json::json;
    match id {
        "tabpfn" => Some((json!({"n_estimators": 1}), json!({"n_estimators": 16}))),
        "catboost" => Some((json!({"n_estimators": 200}), json!({"n_estimators": 500}))),
        _ => None,
    }
}

impl BenchmarkManifest {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: BenchmarkManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn registered_models(&self) -> BTreeSet<String> {
        BUILTIN_MODELS
            .iter()
            .map(|s| s.to_string())
            .chain(["tabpfn".to_string(), "catboost".to_string()])
            .chain(self.external.iter().map(|e| e.id.clone()))
            .collect()
    }

    pub fn external(&self, id: &str) -> Option<&ExternalEntry> {
        self.external.iter().find(|e| e.id == id)
    }

    pub fn is_external(id: &str) -> bool {
        !BUILTIN_MODELS.contains(&id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Manifest(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.workers == 0 {
            return Err(Error::Manifest("workers must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Manifest("no models listed".into()));
        }
        let registered = self.registered_models();
        for m in &self.models {
            if !registered.contains(m) {
                return Err(Error::Manifest(format!(
                    "unknown model {m:?}; registered: {}",
                    registered.iter().cloned().collect::<Vec<_>>().join(", ")
                )));
            }
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate dataset name {:?}", d.name)));
            }
            if d.database.is_empty() {
                return Err(Error::Manifest(format!("dataset {:?}: empty database", d.name)));
            }
            let path = self.resolve(&d.path);
            if !path.exists() {
                return Err(Error::Manifest(format!(
                    "dataset {:?}: file {} not found",
                    d.name,
                    path.display()
                )));
            }
            if let SplitEntry::Predefined {
                train_file, test_file, ..
            } = &d.split
            {
                for f in [train_file, test_file].into_iter().flatten() {
                    let p = self.resolve(f);
                    if !p.exists() {
                        return Err(Error::Manifest(format!(
                            "dataset {:?}: split file {} not found",
                            d.name,
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_datasets(&self) -> Result<Vec<Dataset>> {
        if self.datasets.is_empty() {
            return Err(Error::NoDatasets);
        }
        self.datasets.iter().map(|e| load_dataset(e, &self.base_dir)).collect()
    }
}
