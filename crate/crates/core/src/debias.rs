//! Discrimination-aware training.
//!
//! An adversary head reads the scorer's first hidden layer and tries to
//! predict gender. Each batch alternates two updates:
//!
//! 1. `inner_steps` Adam steps on the adversary, minimizing its BCE with the
//!    scorer frozen;
//! 2. one Adam step on the scorer, minimizing `MAE − λ·BCE(adversary)` with
//!    the adversary frozen.
//!
//! Step 2 is the gradient-reversal update: the adversary's input gradient
//! enters the scorer's backward pass at hidden layer 1 with its sign flipped
//! and scaled by `λ`.

use serde::{Deserialize, Serialize};

use crate::error::{arg, config, Result};
use crate::nn::{AdamConfig, AdamState, BatchSchedule, DenseNetwork, LossKind, TrainingConfig, Activation};
use crate::scenario::{self, ScenarioSpec, TargetKind, TrainedScorer, HIDDEN_WIDTH};
use crate::synth::{CandidateProfile, Gender, Testbed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveAttribute {
    Gender,
}

impl SensitiveAttribute {
    pub fn label(self, profile: &CandidateProfile) -> f64 {
        match self {
            SensitiveAttribute::Gender => (profile.demographics.gender == Gender::G1) as u8 as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    pub lambda: f64,
    pub adversary_lr: f64,
    pub inner_steps: usize,
    pub sensitive_attribute: SensitiveAttribute,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            adversary_lr: 1e-2,
            inner_steps: 5,
            sensitive_attribute: SensitiveAttribute::Gender,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(config(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if !(self.adversary_lr.is_finite() && self.adversary_lr > 0.0) {
            return Err(config("adversary learning rate must be positive"));
        }
        if self.inner_steps == 0 {
            return Err(config("inner_steps must be at least 1"));
        }
        Ok(())
    }
}

/// A single sigmoid unit over the scorer's hidden layer 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryHead {
    pub network: DenseNetwork,
    adam: AdamState,
}

impl AdversaryHead {
    pub fn new(width: usize, lr: f64, seed: u64) -> Result<Self> {
        let network = DenseNetwork::init(&[width, 1], &[Activation::Sigmoid], seed)?;
        Ok(Self::from_network(network, lr))
    }

    pub fn from_network(network: DenseNetwork, lr: f64) -> Self {
        let adam = AdamState::new(
            network.param_count(),
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        );
        Self { network, adam }
    }

    pub fn probability(&self, representation: &[f64]) -> Result<f64> {
        Ok(self.network.predict(representation)?[0])
    }

    /// Fraction of samples classified correctly at threshold 0.5.
    pub fn accuracy(&self, representations: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
        if representations.is_empty() || representations.len() != labels.len() {
            return Err(arg("accuracy needs equally many representations and labels"));
        }
        let mut correct = 0usize;
        for (r, y) in representations.iter().zip(labels) {
            let p = self.probability(r)?;
            if (p >= 0.5) == (*y >= 0.5) {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// One Adam step on mean BCE over the given batch.
    pub fn update(&mut self, representations: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
        let scale = 1.0 / representations.len() as f64;
        let mut grads = vec![0.0; self.network.param_count()];
        let mut total = 0.0;
        for (r, y) in representations.iter().zip(labels) {
            let (p, cache) = self.network.forward(r)?;
            let (l, g) = LossKind::Bce.evaluate(&p, &[*y])?;
            total += l;
            let sample = self.network.backward(&cache, &[g[0] * scale])?;
            for (a, b) in grads.iter_mut().zip(&sample) {
                *a += b;
            }
        }
        self.adam.step(self.network.params_mut(), &grads)?;
        Ok(total * scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasMeta {
    pub config: DebiasConfig,
    /// Adversary accuracy on the training split after the last update.
    pub adversary_accuracy: f64,
    pub adversary: DenseNetwork,
}

fn adversary_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

pub fn train_debiased(
    testbed: &Testbed,
    spec: &ScenarioSpec,
    config: &TrainingConfig,
    dconfig: &DebiasConfig,
    seed: u64,
) -> Result<TrainedScorer> {
    if !spec.debias {
        return Err(crate::error::config(format!(
            "scenario {} does not request discrimination-aware training",
            spec.id
        )));
    }
    dconfig.validate()?;
    config.validate()?;
    scenario::check_testbed(testbed, spec)?;

    let train_profiles = testbed.train();
    let data = scenario::scenario_dataset(&train_profiles, spec);
    let labels: Vec<f64> = train_profiles
        .iter()
        .map(|p| dconfig.sensitive_attribute.label(p))
        .collect();

    let mut net = scenario::init_scorer(spec, seed)?;
    let mut adversary = AdversaryHead::new(HIDDEN_WIDTH, dconfig.adversary_lr, adversary_seed(seed))?;
    let mut adam = AdamState::new(net.param_count(), config.adam());
    let mut schedule = BatchSchedule::new(data.len(), config.batch_size, config.shuffle_seed);
    let denom = (data.len() * net.output_dim()) as f64;
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for batch in schedule.next_epoch() {
            // (a) adversary catches up on the frozen representation.
            let batch_labels: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
            let hidden: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| net.activations_at(&data.inputs[i], 0))
                .collect::<Result<_>>()?;
            for _ in 0..dconfig.inner_steps {
                adversary.update(&hidden, &batch_labels)?;
            }

            // (b) scorer step against task loss minus adversary loss.
            let scale = 1.0 / (batch.len() * net.output_dim()) as f64;
            let mut grads = vec![0.0; net.param_count()];
            let mut batch_loss = 0.0;
            for &i in &batch {
                let (pred, cache) = net.forward(&data.inputs[i])?;
                let (l, mut g) = config.loss.sample(&pred, &data.targets[i]);
                batch_loss += l;
                g.iter_mut().for_each(|x| *x *= scale);

                let reversed;
                let inject = if dconfig.lambda > 0.0 {
                    let h1 = cache.post_activation(0);
                    let (p, acache) = adversary.network.forward(h1)?;
                    let (_, dp) = LossKind::Bce.evaluate(&p, &[labels[i]])?;
                    let back = adversary.network.backward_full(&acache, &[dp[0] / batch.len() as f64], None)?;
                    reversed = back.input.iter().map(|d| -dconfig.lambda * d).collect::<Vec<f64>>();
                    Some((0, reversed.as_slice()))
                } else {
                    None
                };
                let sample = net.backward_full(&cache, &g, inject)?;
                for (a, b) in grads.iter_mut().zip(&sample.params) {
                    *a += b;
                }
            }
            epoch_loss += batch_loss;
            adam.step(net.params_mut(), &grads)?;
        }
        history.push(epoch_loss / denom);
    }

    let hidden: Vec<Vec<f64>> = data
        .inputs
        .iter()
        .map(|x| net.activations_at(x, 0))
        .collect::<Result<_>>()?;
    let adversary_accuracy = adversary.accuracy(&hidden, &labels)?;
    let meta = DebiasMeta {
        config: *dconfig,
        adversary_accuracy,
        adversary: adversary.network,
    };
    scenario::finish(testbed, *spec, net, *config, seed, history, Some(meta))
}

/// Hidden-layer-1 activations of `scorer` for every profile.
pub fn hidden_representations(scorer: &TrainedScorer, profiles: &[&CandidateProfile]) -> Result<Vec<Vec<f64>>> {
    profiles
        .iter()
        .map(|p| scorer.network.activations_at(&scenario::assemble_input(p, &scorer.spec), 0))
        .collect()
}

const FRESH_ADVERSARY_EPOCHS: usize = 20;
const FRESH_ADVERSARY_BATCH: usize = 128;

/// Gender accuracy of the adversary retained by discrimination-aware
/// training. Scorers trained without one get a fresh adversary fitted on
/// `profiles` first.
pub fn adversary_accuracy(scorer: &TrainedScorer, profiles: &[&CandidateProfile]) -> Result<f64> {
    let reps = hidden_representations(scorer, profiles)?;
    let attribute = scorer
        .debias
        .as_ref()
        .map(|d| d.config.sensitive_attribute)
        .unwrap_or(SensitiveAttribute::Gender);
    let labels: Vec<f64> = profiles.iter().map(|p| attribute.label(p)).collect();
    let head = match &scorer.debias {
        Some(meta) => AdversaryHead::from_network(meta.adversary.clone(), meta.config.adversary_lr),
        None => {
            let mut head = AdversaryHead::new(HIDDEN_WIDTH, 1e-2, adversary_seed(scorer.meta.seed))?;
            let mut schedule = BatchSchedule::new(reps.len(), FRESH_ADVERSARY_BATCH, scorer.meta.seed);
            for _ in 0..FRESH_ADVERSARY_EPOCHS {
                for batch in schedule.next_epoch() {
                    let r: Vec<Vec<f64>> = batch.iter().map(|&i| reps[i].clone()).collect();
                    let y: Vec<f64> = batch.iter().map(|&i| labels[i]).collect();
                    head.update(&r, &y)?;
                }
            }
            head
        }
    };
    head.accuracy(&reps, &labels)
}

/// MAE increase of `debiased` over `baseline`, both measured against the
/// merit-only target scores.
pub fn utility_cost(
    debiased: &TrainedScorer,
    baseline: &TrainedScorer,
    validation: &[&CandidateProfile],
) -> Result<f64> {
    Ok(scenario::mae_against(debiased, validation, TargetKind::Unbiased)?
        - scenario::mae_against(baseline, validation, TargetKind::Unbiased)?)
}
