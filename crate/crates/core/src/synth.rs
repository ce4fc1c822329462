//! Synthetic resume testbed.
//!
//! Every profile carries 12 merit features drawn independently of its
//! demographics, a face-embedding stand-in whose demographic content is set
//! by a leakage knob, and two target scores: the merit-only score and the
//! same score after a group penalty has been injected.
//!
//! Generation is a pure function of [`TestbedConfig`]. Each concern
//! (templates, demographics, merits, embeddings, split) draws from its own
//! ChaCha8 stream of the master seed, so changing e.g. the leakage never
//! moves the merit draws.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{arg, config, Error, Result};

pub const MERIT_DIM: usize = 12;
pub const EMBEDDING_DIM: usize = 32;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_MAX_PENALTY: f64 = 0.4;

const STREAM_TEMPLATES: u64 = 1;
const STREAM_DEMOGRAPHICS: u64 = 2;
const STREAM_MERITS: u64 = 3;
const STREAM_EMBEDDINGS: u64 = 4;
const STREAM_SPLIT: u64 = 5;

const TEMPLATE_SCALE: f64 = 0.5;

/// Independent RNG stream `stream` of master seed `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    G0,
    G1,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::G0, Gender::G1];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Gender {
        match self {
            Gender::G0 => Gender::G1,
            Gender::G1 => Gender::G0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ethnicity {
    E0,
    E1,
    E2,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 3] = [Ethnicity::E0, Ethnicity::E1, Ethnicity::E2];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Gender,
    pub ethnicity: Ethnicity,
}

impl Demographics {
    pub fn new(gender: Gender, ethnicity: Ethnicity) -> Self {
        Self { gender, ethnicity }
    }

    /// The six gender×ethnicity cells in fixed order.
    pub fn cells() -> impl Iterator<Item = Demographics> {
        Gender::ALL
            .into_iter()
            .flat_map(|g| Ethnicity::ALL.into_iter().map(move |e| Demographics::new(g, e)))
    }

    pub fn cell_index(&self) -> usize {
        self.gender.index() * Ethnicity::ALL.len() + self.ethnicity.index()
    }
}

/// Information blocks of the merit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeritBlock {
    Education,
    Experience,
    Skills,
    Languages,
    Reference,
}

impl MeritBlock {
    pub const ALL: [MeritBlock; 5] = [
        MeritBlock::Education,
        MeritBlock::Experience,
        MeritBlock::Skills,
        MeritBlock::Languages,
        MeritBlock::Reference,
    ];

    /// Positions of this block inside [`MeritFeatures`].
    pub fn range(self) -> Range<usize> {
        match self {
            MeritBlock::Education => 0..2,
            MeritBlock::Experience => 2..5,
            MeritBlock::Skills => 5..9,
            MeritBlock::Languages => 9..11,
            MeritBlock::Reference => 11..12,
        }
    }
}

/// Twelve merit values in `[0, 1]`, laid out block by block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; MERIT_DIM]", into = "[f64; MERIT_DIM]")]
pub struct MeritFeatures([f64; MERIT_DIM]);

impl MeritFeatures {
    pub fn new(values: [f64; MERIT_DIM]) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(arg(format!("merit feature {i} = {v} is outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new([value; MERIT_DIM])
    }

    /// Four skill levels, every other feature set to `rest`.
    pub fn from_skills(skills: [f64; 4], rest: f64) -> Result<Self> {
        let mut values = [rest; MERIT_DIM];
        values[MeritBlock::Skills.range()].copy_from_slice(&skills);
        Self::new(values)
    }

    pub fn values(&self) -> &[f64; MERIT_DIM] {
        &self.0
    }

    pub fn block(&self, block: MeritBlock) -> &[f64] {
        &self.0[block.range()]
    }
}

impl TryFrom<[f64; MERIT_DIM]> for MeritFeatures {
    type Error = Error;

    fn try_from(values: [f64; MERIT_DIM]) -> Result<Self> {
        Self::new(values)
    }
}

impl From<MeritFeatures> for [f64; MERIT_DIM] {
    fn from(m: MeritFeatures) -> Self {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaceEmbedding(pub [f64; EMBEDDING_DIM]);

impl FaceEmbedding {
    pub fn values(&self) -> &[f64; EMBEDDING_DIM] {
        &self.0
    }
}

/// Non-negative merit weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoringWeights([f64; MERIT_DIM]);

impl ScoringWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: [f64; MERIT_DIM]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(config("scoring weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(config(format!("scoring weights sum to {sum}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform() -> Self {
        Self([1.0 / MERIT_DIM as f64; MERIT_DIM])
    }

    pub fn values(&self) -> &[f64; MERIT_DIM] {
        &self.0
    }
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl TryFrom<Vec<f64>> for ScoringWeights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let arr: [f64; MERIT_DIM] = v
            .try_into()
            .map_err(|v: Vec<f64>| config(format!("expected {MERIT_DIM} weights, got {}", v.len())))?;
        Self::new(arr)
    }
}

impl From<ScoringWeights> for Vec<f64> {
    fn from(w: ScoringWeights) -> Self {
        w.0.to_vec()
    }
}

/// Which group, if any, has its target scores penalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    tag = "target_attribute",
    content = "disadvantaged_group",
    rename_all = "lowercase"
)]
pub enum BiasTarget {
    None,
    Gender(Gender),
    Ethnicity(Ethnicity),
}

impl BiasTarget {
    pub fn applies_to(&self, demographics: &Demographics) -> bool {
        match *self {
            BiasTarget::None => false,
            BiasTarget::Gender(g) => demographics.gender == g,
            BiasTarget::Ethnicity(e) => demographics.ethnicity == e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    /// β in `[0, 1]`.
    pub bias_level: f64,
    #[serde(flatten)]
    pub target: BiasTarget,
    /// δ in `[0, 1]`; the full-strength penalty.
    pub max_penalty: f64,
}

impl BiasConfig {
    pub fn none() -> Self {
        Self {
            bias_level: 0.0,
            target: BiasTarget::None,
            max_penalty: DEFAULT_MAX_PENALTY,
        }
    }

    /// Penalize gender group `G1` at level `bias_level` with the default δ.
    pub fn gender(bias_level: f64) -> Self {
        Self {
            bias_level,
            target: BiasTarget::Gender(Gender::G1),
            max_penalty: DEFAULT_MAX_PENALTY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias_level) {
            return Err(config(format!("bias level {} outside [0, 1]", self.bias_level)));
        }
        if !(0.0..=1.0).contains(&self.max_penalty) {
            return Err(config(format!("max penalty {} outside [0, 1]", self.max_penalty)));
        }
        Ok(())
    }

    pub fn penalty(&self) -> f64 {
        self.bias_level * self.max_penalty
    }
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProfile {
    pub id: u64,
    #[serde(flatten)]
    pub demographics: Demographics,
    pub merits: MeritFeatures,
    pub embedding: FaceEmbedding,
    pub unbiased_score: f64,
    pub biased_score: f64,
    pub split: Split,
}

/// Weighted merit sum; monotone in every feature.
pub fn unbiased_score(merits: &MeritFeatures, weights: &ScoringWeights) -> f64 {
    let s: f64 = merits
        .values()
        .iter()
        .zip(weights.values())
        .map(|(x, w)| x * w)
        .sum();
    s.clamp(0.0, 1.0)
}

/// Subtract `β·δ` from the disadvantaged group's score, clamped to `[0, 1]`.
pub fn apply_bias(score: f64, demographics: &Demographics, bias: &BiasConfig) -> f64 {
    if bias.bias_level == 0.0 || !bias.target.applies_to(demographics) {
        return score;
    }
    (score - bias.penalty()).clamp(0.0, 1.0)
}

/// Per-group mean vectors for the face-embedding stand-in.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTemplates {
    gender: [[f64; EMBEDDING_DIM]; 2],
    ethnicity: [[f64; EMBEDDING_DIM]; 3],
}

impl EmbeddingTemplates {
    /// Entries are `±0.5` with equal probability.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng_stream(seed, STREAM_TEMPLATES);
        let mut draw = || {
            let mut t = [0.0; EMBEDDING_DIM];
            for x in &mut t {
                *x = if rng.random::<bool>() {
                    TEMPLATE_SCALE
                } else {
                    -TEMPLATE_SCALE
                };
            }
            t
        };
        let gender = [draw(), draw()];
        let ethnicity = [draw(), draw(), draw()];
        Self { gender, ethnicity }
    }

    /// Noise-free embedding of a group: the expected value of
    /// [`synthesize`](Self::synthesize).
    pub fn mean(&self, demographics: &Demographics, leakage: f64) -> FaceEmbedding {
        let g = &self.gender[demographics.gender.index()];
        let e = &self.ethnicity[demographics.ethnicity.index()];
        let mut out = [0.0; EMBEDDING_DIM];
        for (j, x) in out.iter_mut().enumerate() {
            *x = leakage * (g[j] + e[j]);
        }
        FaceEmbedding(out)
    }

    /// Group templates scaled by `leakage` plus unit Gaussian noise.
    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        demographics: &Demographics,
        leakage: f64,
        rng: &mut R,
    ) -> FaceEmbedding {
        let mut emb = self.mean(demographics, leakage);
        for x in emb.0.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *x += noise;
        }
        emb
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestbedConfig {
    pub seed: u64,
    pub n: usize,
    #[serde(flatten)]
    pub bias: BiasConfig,
    pub leakage: f64,
    pub weights: ScoringWeights,
    pub train_fraction: f64,
}

impl TestbedConfig {
    pub fn new(seed: u64, n: usize, bias: BiasConfig) -> Self {
        Self {
            seed,
            n,
            bias,
            leakage: 1.0,
            weights: ScoringWeights::uniform(),
            train_fraction: DEFAULT_TRAIN_FRACTION,
        }
    }

    pub fn with_leakage(mut self, leakage: f64) -> Self {
        self.leakage = leakage;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 6 || self.n % 6 != 0 {
            return Err(arg(format!(
                "testbed size {} must be a positive multiple of 6",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.leakage) {
            return Err(config(format!("leakage {} outside [0, 1]", self.leakage)));
        }
        check_fraction(self.train_fraction)?;
        self.bias.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Testbed {
    pub config: TestbedConfig,
    pub templates: EmbeddingTemplates,
    pub profiles: Vec<CandidateProfile>,
}

impl Testbed {
    pub fn split(&self, split: Split) -> Vec<&CandidateProfile> {
        self.profiles.iter().filter(|p| p.split == split).collect()
    }

    pub fn train(&self) -> Vec<&CandidateProfile> {
        self.split(Split::Train)
    }

    pub fn validation(&self) -> Vec<&CandidateProfile> {
        self.split(Split::Validation)
    }
}

/// Build the full testbed, already split into train and validation.
pub fn generate_testbed(config: &TestbedConfig) -> Result<Testbed> {
    config.validate()?;
    let templates = EmbeddingTemplates::from_seed(config.seed);

    let per_cell = config.n / 6;
    let mut cells: Vec<Demographics> = Demographics::cells()
        .flat_map(|d| std::iter::repeat_n(d, per_cell))
        .collect();
    cells.shuffle(&mut rng_stream(config.seed, STREAM_DEMOGRAPHICS));

    let mut merit_rng = rng_stream(config.seed, STREAM_MERITS);
    let mut emb_rng = rng_stream(config.seed, STREAM_EMBEDDINGS);

    let profiles: Vec<CandidateProfile> = cells
        .into_iter()
        .enumerate()
        .map(|(i, demographics)| {
            let mut values = [0.0; MERIT_DIM];
            for v in &mut values {
                *v = merit_rng.random::<f64>();
            }
            let merits = MeritFeatures(values);
            let embedding = templates.synthesize(&demographics, config.leakage, &mut emb_rng);
            let unbiased = unbiased_score(&merits, &config.weights);
            CandidateProfile {
                id: i as u64,
                demographics,
                merits,
                embedding,
                unbiased_score: unbiased,
                biased_score: apply_bias(unbiased, &demographics, &config.bias),
                split: Split::Train,
            }
        })
        .collect();

    let (train, validation) = stratified_split(&profiles, config.train_fraction, config.seed)?;
    let mut profiles: Vec<CandidateProfile> = train.into_iter().chain(validation).collect();
    profiles.sort_by_key(|p| p.id);

    Ok(Testbed {
        config: config.clone(),
        templates,
        profiles,
    })
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(arg(format!("train fraction {f} must lie strictly between 0 and 1")))
    }
}

/// Round to nearest, halves going down.
fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

/// Split within each gender×ethnicity cell.
///
/// The train total is `round_half_down(fraction · n)`. Each cell first gets
/// `floor(fraction · cell_size)`; leftover slots go one per cell in fixed
/// cell order. Membership inside a cell is a seeded shuffle. Both halves
/// come back sorted by id with their split tag set.
pub fn stratified_split(
    profiles: &[CandidateProfile],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<CandidateProfile>, Vec<CandidateProfile>)> {
    check_fraction(train_fraction)?;

    let mut cells: Vec<Vec<&CandidateProfile>> = vec![Vec::new(); 6];
    for p in profiles {
        cells[p.demographics.cell_index()].push(p);
    }

    let total = round_half_down(train_fraction * profiles.len() as f64);
    let mut quota: Vec<usize> = cells
        .iter()
        .map(|c| ((train_fraction * c.len() as f64) + 1e-9).floor() as usize)
        .collect();
    let mut remaining = total.saturating_sub(quota.iter().sum());
    while remaining > 0 {
        let before = remaining;
        for (q, c) in quota.iter_mut().zip(&cells) {
            if remaining > 0 && *q < c.len() {
                *q += 1;
                remaining -= 1;
            }
        }
        if before == remaining {
            break;
        }
    }

    let mut rng = rng_stream(seed, STREAM_SPLIT);
    let mut train = Vec::with_capacity(total);
    let mut validation = Vec::with_capacity(profiles.len() - total);
    for (cell, q) in cells.iter_mut().zip(quota) {
        cell.sort_by_key(|p| p.id);
        cell.shuffle(&mut rng);
        for (i, p) in cell.iter().enumerate() {
            let mut p = (*p).clone();
            if i < q {
                p.split = Split::Train;
                train.push(p);
            } else {
                p.split = Split::Validation;
                validation.push(p);
            }
        }
    }
    train.sort_by_key(|p| p.id);
    validation.sort_by_key(|p| p.id);
    Ok((train, validation))
}
