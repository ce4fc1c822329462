//! On-disk formats.
//!
//! * Testbed: JSON lines, one [`CandidateProfile`] per line, plus a
//!   `<stem>.header.json` sidecar holding the [`TestbedConfig`].
//! * Model: one JSON object with `layer_dims`, `activations`, per-layer
//!   row-major `weights` and `bias`, and a `metadata` block.
//! * Reports and scenario results: plain JSON.
//!
//! Every write goes to a temporary sibling first and is renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::debias::{DebiasConfig, DebiasMeta};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseNetwork};
use crate::scenario::{ScenarioId, ScenarioSpec, TrainedScorer, TrainingMeta};
use crate::synth::{CandidateProfile, EmbeddingTemplates, Testbed, TestbedConfig};

/// `dir/testbed.jsonl` → `dir/testbed.header.json`.
pub fn header_path(jsonl: &Path) -> PathBuf {
    let stem = jsonl.file_stem().and_then(|s| s.to_str()).unwrap_or("testbed");
    jsonl.with_file_name(format!("{stem}.header.json"))
}

fn parse_error(path: &Path, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Write `contents` via a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Argument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        contents(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        let line = (e.line() > 0).then_some(e.line());
        parse_error(path, line, e.to_string())
    })
}

pub fn save_testbed(testbed: &Testbed, jsonl: &Path) -> Result<()> {
    save_json(&header_path(jsonl), &testbed.config)?;
    write_atomic(jsonl, |w| {
        for p in &testbed.profiles {
            serde_json::to_writer(&mut *w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn load_testbed(jsonl: &Path) -> Result<Testbed> {
    let config: TestbedConfig = load_json(&header_path(jsonl))?;
    let reader = BufReader::new(fs::File::open(jsonl)?);
    let mut profiles = Vec::with_capacity(config.n);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: CandidateProfile =
            serde_json::from_str(&line).map_err(|e| parse_error(jsonl, Some(i + 1), e.to_string()))?;
        profiles.push(p);
    }
    if profiles.len() != config.n {
        return Err(parse_error(
            jsonl,
            None,
            format!("header declares n = {} but file holds {} profiles", config.n, profiles.len()),
        ));
    }
    Ok(Testbed {
        templates: EmbeddingTemplates::from_seed(config.seed),
        config,
        profiles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerFile>,
}

impl From<&DenseNetwork> for NetworkFile {
    fn from(net: &DenseNetwork) -> Self {
        Self {
            layer_dims: net.dims().to_vec(),
            activations: net.activations().to_vec(),
            layers: net
                .layers()
                .map(|l| LayerFile {
                    weights: l.weights.to_vec(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for DenseNetwork {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        if f.layers.len() + 1 != f.layer_dims.len() {
            return Err(Error::Argument(format!(
                "{} layer blocks for dims {:?}",
                f.layers.len(),
                f.layer_dims
            )));
        }
        for (l, layer) in f.layers.iter().enumerate() {
            let (i, o) = (f.layer_dims[l], f.layer_dims[l + 1]);
            if layer.weights.len() != i * o || layer.bias.len() != o {
                return Err(Error::Argument(format!("layer {l} arrays do not match {i}→{o}")));
            }
        }
        let params = f
            .layers
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.bias))
            .collect();
        DenseNetwork::from_parts(f.layer_dims, f.activations, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub scenario: ScenarioId,
    pub spec: ScenarioSpec,
    #[serde(flatten)]
    pub training: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasFile {
    #[serde(flatten)]
    pub config: DebiasConfig,
    pub adversary_accuracy: f64,
    pub adversary: NetworkFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub network: NetworkFile,
    pub metadata: ModelMetadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debias: Option<DebiasFile>,
}

impl From<&TrainedScorer> for ModelFile {
    fn from(s: &TrainedScorer) -> Self {
        Self {
            network: (&s.network).into(),
            metadata: ModelMetadata {
                scenario: s.spec.id,
                spec: s.spec,
                training: s.meta.clone(),
            },
            debias: s.debias.as_ref().map(|d| DebiasFile {
                config: d.config,
                adversary_accuracy: d.adversary_accuracy,
                adversary: (&d.adversary).into(),
            }),
        }
    }
}

impl TryFrom<ModelFile> for TrainedScorer {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.metadata.scenario != f.metadata.spec.id {
            return Err(Error::Argument("metadata.scenario disagrees with metadata.spec.id".into()));
        }
        let debias = match f.debias {
            Some(d) => Some(DebiasMeta {
                config: d.config,
                adversary_accuracy: d.adversary_accuracy,
                adversary: d.adversary.try_into()?,
            }),
            None => None,
        };
        let scorer = TrainedScorer {
            network: f.network.try_into()?,
            spec: f.metadata.spec,
            meta: f.metadata.training,
            debias,
        };
        scorer.validate()?;
        Ok(scorer)
    }
}

pub fn model_to_json(scorer: &TrainedScorer) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from(scorer))?)
}

pub fn save_model(scorer: &TrainedScorer, path: &Path) -> Result<()> {
    save_json(path, &ModelFile::from(scorer))
}

/// Load and validate a model file; nothing is returned unless every field
/// decodes and the network matches its scenario.
pub fn load_model(path: &Path) -> Result<TrainedScorer> {
    let file: ModelFile = load_json(path)?;
    TrainedScorer::try_from(file).map_err(|e| parse_error(path, None, e.to_string()))
}

/// Summary written next to each trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResults {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub bias_level: f64,
    pub history: Vec<f64>,
    pub val_mae: f64,
    pub model_path: PathBuf,
}

impl ScenarioResults {
    pub fn new(scorer: &TrainedScorer, model_path: &Path) -> Self {
        Self {
            scenario: scorer.spec.id,
            seed: scorer.meta.seed,
            bias_level: scorer.meta.bias_level,
            history: scorer.meta.history.clone(),
            val_mae: scorer.meta.val_mae,
            model_path: model_path.to_path_buf(),
        }
    }
}
