//! Screening simulation, selection-rate gaps, and leakage probes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::nn::{self, Activation, Dataset, DenseNetwork, LossKind, TrainingConfig};
use crate::scenario::{self, TrainedScorer};
use crate::synth::{rng_stream, CandidateProfile, Ethnicity, Gender};

/// Ids of the `k` highest scores; equal scores go to the smaller id.
pub fn screen_top_k(scored: &[(u64, f64)], k: usize) -> Result<Vec<u64>> {
    if k > scored.len() {
        return Err(arg(format!(
            "cannot select {k} candidates from a pool of {}",
            scored.len()
        )));
    }
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|(id, _)| id).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupAttribute {
    Gender,
    Ethnicity,
}

impl GroupAttribute {
    fn group_count(self) -> usize {
        match self {
            GroupAttribute::Gender => Gender::ALL.len(),
            GroupAttribute::Ethnicity => Ethnicity::ALL.len(),
        }
    }

    fn group_of(self, p: &CandidateProfile) -> usize {
        match self {
            GroupAttribute::Gender => p.demographics.gender.index(),
            GroupAttribute::Ethnicity => p.demographics.ethnicity.index(),
        }
    }
}

/// Largest pairwise gap in selection share, in percentage points.
pub fn difference_from_counts(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(arg("demographic difference of an empty selection"));
    }
    let max = counts.iter().max().unwrap();
    let min = counts.iter().min().unwrap();
    Ok((100 * (max - min)) as f64 / total as f64)
}

pub fn group_counts(selected: &[&CandidateProfile], attribute: GroupAttribute) -> Vec<usize> {
    let mut counts = vec![0; attribute.group_count()];
    for p in selected {
        counts[attribute.group_of(p)] += 1;
    }
    counts
}

/// `|pct(A) − pct(B)|` over the selection; the maximum pairwise gap for
/// attributes with more than two groups.
pub fn demographic_difference(selected: &[&CandidateProfile], attribute: GroupAttribute) -> Result<f64> {
    difference_from_counts(&group_counts(selected, attribute))
}

fn percentages(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|c| 100.0 * *c as f64 / total as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub k: usize,
    pub gender_counts: BTreeMap<Gender, usize>,
    pub gender_pct: BTreeMap<Gender, f64>,
    pub ethnicity_counts: BTreeMap<Ethnicity, usize>,
    pub ethnicity_pct: BTreeMap<Ethnicity, f64>,
    /// Gender gap in percentage points.
    pub demographic_difference: f64,
    pub ethnicity_difference: f64,
    pub selected_ids: Vec<u64>,
}

impl ScreeningReport {
    pub fn from_selection(selected: &[&CandidateProfile]) -> Result<Self> {
        let g = group_counts(selected, GroupAttribute::Gender);
        let e = group_counts(selected, GroupAttribute::Ethnicity);
        let gp = percentages(&g);
        let ep = percentages(&e);
        Ok(Self {
            k: selected.len(),
            gender_counts: Gender::ALL.into_iter().zip(g.iter().copied()).collect(),
            gender_pct: Gender::ALL.into_iter().zip(gp).collect(),
            ethnicity_counts: Ethnicity::ALL.into_iter().zip(e.iter().copied()).collect(),
            ethnicity_pct: Ethnicity::ALL.into_iter().zip(ep).collect(),
            demographic_difference: difference_from_counts(&g)?,
            ethnicity_difference: difference_from_counts(&e)?,
            selected_ids: selected.iter().map(|p| p.id).collect(),
        })
    }
}

/// Score every profile, keep the top `k`, and report who got through.
pub fn evaluate_scenario(
    scorer: &TrainedScorer,
    validation: &[&CandidateProfile],
    k: usize,
) -> Result<ScreeningReport> {
    if validation.is_empty() {
        return Err(arg("screening needs a non-empty candidate pool"));
    }
    let scored = validation
        .iter()
        .map(|p| Ok((p.id, scenario::predict(scorer, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let ids = screen_top_k(&scored, k)?;
    let by_id: BTreeMap<u64, &CandidateProfile> = validation.iter().map(|p| (p.id, *p)).collect();
    let selected: Vec<&CandidateProfile> = ids.iter().map(|id| by_id[id]).collect();
    ScreeningReport::from_selection(&selected)
}

/// Post-ReLU activations of the scorer's first hidden layer.
pub fn representation_of(scorer: &TrainedScorer, profile: &CandidateProfile) -> Result<Vec<f64>> {
    let x = scenario::assemble_input(profile, &scorer.spec);
    scorer.network.activations_at(&x, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub const PROBE_EPOCHS: usize = 20;
pub const PROBE_TRAIN_FRACTION: f64 = 0.7;
const PROBE_BATCH: usize = 32;
const PROBE_LR: f64 = 1e-2;
const PROBE_STREAM: u64 = 77;

/// Fit a logistic-regression probe on 70% of the samples and report its
/// held-out accuracy at threshold 0.5. Inputs are z-scored with the
/// training part's statistics.
pub fn probe_leakage(representations: &[Vec<f64>], labels: &[bool], seed: u64) -> Result<ProbeResult> {
    if representations.len() != labels.len() {
        return Err(arg("probe needs one label per representation"));
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives < 2 || labels.len() - positives < 2 {
        return Err(arg("probe needs at least two samples of each class"));
    }
    let dim = representations[0].len();
    if dim == 0 || representations.iter().any(|r| r.len() != dim) {
        return Err(arg("representations must share one non-zero width"));
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng_stream(seed, PROBE_STREAM));
    let n_train = ((labels.len() as f64) * PROBE_TRAIN_FRACTION).round() as usize;
    let n_train = n_train.clamp(1, labels.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let mut mean = vec![0.0; dim];
    for &i in train_idx {
        for (m, x) in mean.iter_mut().zip(&representations[i]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    let mut sd = vec![0.0; dim];
    for &i in train_idx {
        for ((s, x), m) in sd.iter_mut().zip(&representations[i]).zip(&mean) {
            *s += (x - m).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / n_train as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    });
    let standardize = |i: usize| -> Vec<f64> {
        representations[i]
            .iter()
            .zip(&mean)
            .zip(&sd)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    };
    let label = |i: usize| vec![labels[i] as u8 as f64];

    let train = Dataset {
        inputs: train_idx.iter().map(|&i| standardize(i)).collect(),
        targets: train_idx.iter().map(|&i| label(i)).collect(),
    };
    let config = TrainingConfig {
        epochs: PROBE_EPOCHS,
        batch_size: PROBE_BATCH,
        lr: PROBE_LR,
        loss: LossKind::Bce,
        shuffle_seed: seed,
    };
    let probe = DenseNetwork::init(&[dim, 1], &[Activation::Sigmoid], seed)?;
    let (probe, _) = nn::train(probe, &train, &config)?;

    let mut correct = 0usize;
    for &i in test_idx {
        let p = probe.predict(&standardize(i))?[0];
        if (p >= 0.5) == labels[i] {
            correct += 1;
        }
    }
    Ok(ProbeResult {
        accuracy: correct as f64 / test_idx.len() as f64,
        n_train,
        n_test: test_idx.len(),
    })
}

/// One line of the per-scenario selection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub report: ScreeningReport,
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>12}", "Scenario", "G0 (%)", "G1 (%)", "Difference");
    let _ = writeln!(out, "{}", "-".repeat(41));
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{:<10} {:>8.1} {:>8.1} {:>11.1}%",
            row.scenario,
            r.gender_pct[&Gender::G0],
            r.gender_pct[&Gender::G1],
            r.demographic_difference
        );
    }
    out
}

pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("scenario,k,g0_pct,g1_pct,demographic_difference\n");
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.scenario,
            r.k,
            r.gender_pct[&Gender::G0],
            r.gender_pct[&Gender::G1],
            r.demographic_difference
        );
    }
    out
}
