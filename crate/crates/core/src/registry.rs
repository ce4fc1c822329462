//! Persistent index of trained models under a data directory.
//!
//! Layout: `<root>/registry.json` plus `<root>/models/<model_id>.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{FeatureGroup, ScenarioId, ScenarioSpec, TargetKind, TrainedScorer};
use crate::store;

pub const DATA_DIR_ENV: &str = "FAIRSCREEN_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "fairscreen-data";

/// `$FAIRSCREEN_DATA_DIR`, or `./fairscreen-data`.
pub fn data_dir_from_env() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub model_id: String,
    pub scenario: ScenarioId,
    pub spec: ScenarioSpec,
    pub bias_level: f64,
    pub seed: u64,
    /// Relative to the registry root.
    pub path: PathBuf,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

/// Stable id for a (scenario, β, seed) triple, e.g. `s4-b0.75-seed1`.
pub fn model_id(spec: &ScenarioSpec, bias_level: f64, seed: u64) -> String {
    let head = match spec.id {
        ScenarioId::Custom => {
            let groups: Vec<&str> = spec
                .inputs
                .groups()
                .map(|g| match g {
                    FeatureGroup::Merits => "m",
                    FeatureGroup::Gender => "g",
                    FeatureGroup::Ethnicity => "e",
                    FeatureGroup::Embedding => "f",
                })
                .collect();
            let target = match spec.target {
                TargetKind::Unbiased => "u",
                TargetKind::Biased => "b",
            };
            format!("custom-{}-{target}{}", groups.join(""), if spec.debias { "-d" } else { "" })
        }
        id => id.to_string().to_lowercase(),
    };
    format!("{head}-b{bias_level}-seed{seed}")
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryFile {
    models: Vec<ModelRegistryEntry>,
}

#[derive(Debug)]
pub struct Registry {
    root: PathBuf,
    entries: BTreeMap<String, ModelRegistryEntry>,
}

impl Registry {
    /// Open (or start) the registry rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let index = root.join("registry.json");
        let entries = if index.exists() {
            let file: RegistryFile = store::load_json(&index)?;
            file.models.into_iter().map(|e| (e.model_id.clone(), e)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self { root, entries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("registry.json")
    }

    pub fn entries(&self) -> impl Iterator<Item = &ModelRegistryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, model_id: &str) -> Option<&ModelRegistryEntry> {
        self.entries.get(model_id)
    }

    pub fn model_path(&self, entry: &ModelRegistryEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load(&self, model_id: &str) -> Result<TrainedScorer> {
        let entry = self
            .get(model_id)
            .ok_or_else(|| Error::NotFound(format!("model {model_id}")))?;
        store::load_model(&self.model_path(entry))
    }

    /// Write the model file and the updated index. Re-registering an id
    /// replaces the previous model.
    pub fn register(&mut self, scorer: &TrainedScorer) -> Result<ModelRegistryEntry> {
        let id = model_id(&scorer.spec, scorer.meta.bias_level, scorer.meta.seed);
        let rel = PathBuf::from("models").join(format!("{id}.json"));
        store::save_model(scorer, &self.root.join(&rel))?;
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = ModelRegistryEntry {
            model_id: id.clone(),
            scenario: scorer.spec.id,
            spec: scorer.spec,
            bias_level: scorer.meta.bias_level,
            seed: scorer.meta.seed,
            path: rel,
            created,
        };
        let mut next = self.entries.clone();
        next.insert(id, entry.clone());
        store::save_json(
            &self.index_path(),
            &RegistryFile {
                models: next.values().cloned().collect(),
            },
        )?;
        self.entries = next;
        Ok(entry)
    }
}
