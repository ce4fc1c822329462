//! The five experiment arms and the scorer they train.
//!
//! A scenario fixes which feature groups the scorer sees, whether it learns
//! the merit-only or the penalized target, and whether training suppresses
//! gender from the first hidden layer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::debias::{self, DebiasConfig, DebiasMeta};
use crate::error::{arg, config, Error, Result};
use crate::nn::{self, Activation, Dataset, DenseNetwork, LossKind, TrainingConfig};
use crate::synth::{CandidateProfile, Demographics, FaceEmbedding, MeritFeatures, Testbed, EMBEDDING_DIM, MERIT_DIM};

pub const HIDDEN_WIDTH: usize = 10;
pub const SCORER_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Sigmoid];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
    #[serde(rename = "custom")]
    Custom,
}

impl ScenarioId {
    pub const CANONICAL: [ScenarioId; 5] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
    ];
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
            ScenarioId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(ScenarioId::S1),
            "S2" => Ok(ScenarioId::S2),
            "S3" => Ok(ScenarioId::S3),
            "S4" => Ok(ScenarioId::S4),
            "S5" => Ok(ScenarioId::S5),
            "CUSTOM" => Ok(ScenarioId::Custom),
            _ => Err(arg(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Merits,
    Gender,
    Ethnicity,
    Embedding,
}

impl FeatureGroup {
    /// Concatenation order of the assembled input.
    pub const ORDER: [FeatureGroup; 4] = [
        FeatureGroup::Merits,
        FeatureGroup::Gender,
        FeatureGroup::Ethnicity,
        FeatureGroup::Embedding,
    ];

    pub fn width(self) -> usize {
        match self {
            FeatureGroup::Merits => MERIT_DIM,
            FeatureGroup::Gender => 2,
            FeatureGroup::Ethnicity => 3,
            FeatureGroup::Embedding => EMBEDDING_DIM,
        }
    }
}

/// A subset of feature groups; serialized as a list in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<FeatureGroup>", into = "Vec<FeatureGroup>")]
pub struct FeatureSet(u8);

impl FeatureSet {
    pub fn of(groups: &[FeatureGroup]) -> Self {
        let mut s = FeatureSet(0);
        for g in groups {
            s.0 |= 1 << (*g as u8);
        }
        s
    }

    pub fn contains(&self, group: FeatureGroup) -> bool {
        self.0 & (1 << group as u8) != 0
    }

    pub fn with(mut self, group: FeatureGroup) -> Self {
        self.0 |= 1 << group as u8;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn groups(&self) -> impl Iterator<Item = FeatureGroup> + '_ {
        FeatureGroup::ORDER.into_iter().filter(|g| self.contains(*g))
    }

    pub fn width(&self) -> usize {
        self.groups().map(FeatureGroup::width).sum()
    }
}

impl From<Vec<FeatureGroup>> for FeatureSet {
    fn from(v: Vec<FeatureGroup>) -> Self {
        FeatureSet::of(&v)
    }
}

impl From<FeatureSet> for Vec<FeatureGroup> {
    fn from(s: FeatureSet) -> Self {
        s.groups().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Unbiased,
    Biased,
}

impl TargetKind {
    pub fn of(self, profile: &CandidateProfile) -> f64 {
        match self {
            TargetKind::Unbiased => profile.unbiased_score,
            TargetKind::Biased => profile.biased_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub inputs: FeatureSet,
    pub target: TargetKind,
    pub debias: bool,
}

impl ScenarioSpec {
    /// The canonical binding of `id`; `Custom` has none.
    pub fn canonical(id: ScenarioId) -> Result<Self> {
        use FeatureGroup::*;
        let (inputs, target, debias) = match id {
            ScenarioId::S1 => (&[Merits, Gender, Ethnicity][..], TargetKind::Unbiased, false),
            ScenarioId::S2 => (&[Merits, Gender][..], TargetKind::Biased, false),
            ScenarioId::S3 => (&[Merits][..], TargetKind::Biased, false),
            ScenarioId::S4 => (&[Merits, Embedding][..], TargetKind::Biased, false),
            ScenarioId::S5 => (&[Merits, Embedding][..], TargetKind::Biased, true),
            ScenarioId::Custom => return Err(arg("custom scenarios have no canonical binding")),
        };
        Ok(Self {
            id,
            inputs: FeatureSet::of(inputs),
            target,
            debias,
        })
    }

    /// A canonical spec when the binding matches one, `Custom` otherwise.
    pub fn custom(inputs: FeatureSet, target: TargetKind, debias: bool) -> Self {
        ScenarioId::CANONICAL
            .into_iter()
            .map(|id| Self::canonical(id).unwrap())
            .find(|s| s.inputs == inputs && s.target == target && s.debias == debias)
            .unwrap_or(Self {
                id: ScenarioId::Custom,
                inputs,
                target,
                debias,
            })
    }

    pub fn input_width(&self) -> usize {
        self.inputs.width()
    }

    pub fn layer_dims(&self) -> [usize; 4] {
        [self.input_width(), HIDDEN_WIDTH, HIDDEN_WIDTH, 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(config("a scenario needs at least one input group"));
        }
        if self.id != ScenarioId::Custom && Self::canonical(self.id)? != *self {
            return Err(config(format!("{} does not match its canonical binding", self.id)));
        }
        Ok(())
    }
}

/// Features of a candidate that may be only partly known, e.g. a request
/// coming from the demo service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateFeatures {
    pub merits: MeritFeatures,
    pub demographics: Option<Demographics>,
    pub embedding: Option<FaceEmbedding>,
}

impl From<&CandidateProfile> for CandidateFeatures {
    fn from(p: &CandidateProfile) -> Self {
        Self {
            merits: p.merits,
            demographics: Some(p.demographics),
            embedding: Some(p.embedding),
        }
    }
}

/// `[merits(12) | gender one-hot(2) | ethnicity one-hot(3) | embedding(32)]`,
/// keeping only the selected groups.
pub fn assemble_features(features: &CandidateFeatures, inputs: FeatureSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.width());
    for group in inputs.groups() {
        match group {
            FeatureGroup::Merits => out.extend_from_slice(features.merits.values()),
            FeatureGroup::Gender => {
                let d = features
                    .demographics
                    .ok_or_else(|| arg("scorer needs the gender input"))?;
                let mut one_hot = [0.0; 2];
                one_hot[d.gender.index()] = 1.0;
                out.extend_from_slice(&one_hot);
            }
            FeatureGroup::Ethnicity => {
                let d = features
                    .demographics
                    .ok_or_else(|| arg("scorer needs the ethnicity input"))?;
                let mut one_hot = [0.0; 3];
                one_hot[d.ethnicity.index()] = 1.0;
                out.extend_from_slice(&one_hot);
            }
            FeatureGroup::Embedding => {
                let e = features
                    .embedding
                    .ok_or_else(|| arg("scorer needs the face embedding input"))?;
                out.extend_from_slice(e.values());
            }
        }
    }
    Ok(out)
}

pub fn assemble_input(profile: &CandidateProfile, spec: &ScenarioSpec) -> Vec<f64> {
    assemble_features(&profile.into(), spec.inputs).expect("profiles carry every feature group")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub bias_level: f64,
    pub leakage: f64,
    pub n: usize,
    pub training: TrainingConfig,
    pub history: Vec<f64>,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedScorer {
    pub network: DenseNetwork,
    pub spec: ScenarioSpec,
    pub meta: TrainingMeta,
    pub debias: Option<DebiasMeta>,
}

impl TrainedScorer {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.network.dims() != self.spec.layer_dims() || self.network.activations() != SCORER_ACTIVATIONS {
            return Err(config(format!(
                "network shape {:?} does not fit scenario {}",
                self.network.dims(),
                self.spec.id
            )));
        }
        Ok(())
    }
}

/// The protocol's training settings: Adam, 10 epochs, batch 128, MAE.
pub fn protocol_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        shuffle_seed: seed,
        ..TrainingConfig::default()
    }
}

pub(crate) fn init_scorer(spec: &ScenarioSpec, seed: u64) -> Result<DenseNetwork> {
    DenseNetwork::init(&spec.layer_dims(), &SCORER_ACTIVATIONS, seed)
}

pub(crate) fn scenario_dataset(profiles: &[&CandidateProfile], spec: &ScenarioSpec) -> Dataset {
    Dataset {
        inputs: profiles.iter().map(|p| assemble_input(p, spec)).collect(),
        targets: profiles.iter().map(|p| vec![spec.target.of(p)]).collect(),
    }
}

pub(crate) fn check_testbed(testbed: &Testbed, spec: &ScenarioSpec) -> Result<()> {
    spec.validate()?;
    if testbed.train().is_empty() || testbed.validation().is_empty() {
        return Err(config("testbed must have non-empty train and validation splits"));
    }
    Ok(())
}

/// Train the scorer for `spec`, delegating to discrimination-aware training
/// (with default settings) when the spec asks for it.
pub fn train_scenario(
    testbed: &Testbed,
    spec: &ScenarioSpec,
    config: &TrainingConfig,
    seed: u64,
) -> Result<TrainedScorer> {
    if spec.debias {
        return debias::train_debiased(testbed, spec, config, &DebiasConfig::default(), seed);
    }
    check_testbed(testbed, spec)?;
    let train = scenario_dataset(&testbed.train(), spec);
    let net = init_scorer(spec, seed)?;
    let (network, history) = nn::train(net, &train, config)?;
    finish(testbed, *spec, network, *config, seed, history, None)
}

pub(crate) fn finish(
    testbed: &Testbed,
    spec: ScenarioSpec,
    network: DenseNetwork,
    training: TrainingConfig,
    seed: u64,
    history: Vec<f64>,
    debias: Option<DebiasMeta>,
) -> Result<TrainedScorer> {
    let train_mae = nn::dataset_loss(&network, &scenario_dataset(&testbed.train(), &spec), LossKind::Mae)?;
    let val_mae = nn::dataset_loss(&network, &scenario_dataset(&testbed.validation(), &spec), LossKind::Mae)?;
    Ok(TrainedScorer {
        network,
        spec,
        meta: TrainingMeta {
            seed,
            bias_level: testbed.config.bias.bias_level,
            leakage: testbed.config.leakage,
            n: testbed.config.n,
            training,
            history,
            train_mae,
            val_mae,
        },
        debias,
    })
}

pub fn predict(scorer: &TrainedScorer, profile: &CandidateProfile) -> Result<f64> {
    predict_features(scorer, &profile.into())
}

pub fn predict_features(scorer: &TrainedScorer, features: &CandidateFeatures) -> Result<f64> {
    let x = assemble_features(features, scorer.spec.inputs)?;
    Ok(scorer.network.predict(&x)?[0])
}

/// MAE of `scorer` against `target` over `profiles`.
pub fn mae_against(scorer: &TrainedScorer, profiles: &[&CandidateProfile], target: TargetKind) -> Result<f64> {
    if profiles.is_empty() {
        return Err(arg("MAE over an empty set"));
    }
    let mut total = 0.0;
    for p in profiles {
        total += (predict(scorer, p)? - target.of(p)).abs();
    }
    Ok(total / profiles.len() as f64)
}
