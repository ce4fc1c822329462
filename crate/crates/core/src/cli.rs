//! Command-line entry points: `generate`, `train`, `evaluate`, `probe`,
//! `reproduce`, `serve`.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::fairness::{evaluate_scenario, probe_leakage, render_csv, render_table, ProbeResult, ScreeningReport, SummaryRow};
use crate::nn::TrainingConfig;
use crate::registry::{Registry, DATA_DIR_ENV, DEFAULT_DATA_DIR};
use crate::scenario::{protocol_config, train_scenario, ScenarioId, ScenarioSpec, TrainedScorer};
use crate::service::{self, ServiceConfig};
use crate::store::{self, ScenarioResults};
use crate::synth::{generate_testbed, BiasConfig, Gender, Testbed, TestbedConfig};

#[derive(Debug, Parser)]
#[command(name = "fairscreen", version, about = "Synthetic resume screening testbed")]
pub struct Cli {
    /// Where models, testbeds and reports live.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
    pub data_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TestbedArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 24_000)]
    pub n: usize,
    /// Bias level β in [0, 1].
    #[arg(long = "bias", default_value_t = 0.0)]
    pub bias_level: f64,
    #[arg(long, default_value_t = 1.0)]
    pub leakage: f64,
}

impl TestbedArgs {
    pub fn config(&self) -> TestbedConfig {
        TestbedConfig::new(self.seed, self.n, BiasConfig::gender(self.bias_level)).with_leakage(self.leakage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeFeatures {
    Embedding,
    Merits,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a testbed as JSON lines plus a header sidecar.
    Generate {
        #[command(flatten)]
        testbed: TestbedArgs,
        /// Defaults to <data-dir>/testbed-seed<seed>-b<bias>.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one scenario and register the model.
    Train {
        #[arg(long)]
        scenario: ScenarioId,
        #[command(flatten)]
        testbed: TestbedArgs,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
    },
    /// Screen the validation split with a model and report group shares.
    Evaluate {
        /// Registered model id or path to a model file.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Testbed file; by default the model's own testbed is regenerated.
        #[arg(long)]
        testbed: Option<PathBuf>,
    },
    /// Fit a logistic probe for gender on a model's hidden layer or on raw
    /// testbed features.
    Probe {
        #[arg(long, conflicts_with = "testbed", required_unless_present = "testbed")]
        model: Option<String>,
        #[arg(long)]
        testbed: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ProbeFeatures::Embedding)]
        features: ProbeFeatures,
        #[arg(long, default_value_t = 0)]
        probe_seed: u64,
    },
    /// Train S1..S5 and print the selection summary.
    Reproduce {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long = "bias", default_value_t = 0.75)]
        bias_level: f64,
        #[arg(long, default_value_t = 24_000)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        k: usize,
    },
    /// Run the HTTP scoring service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 24_000)]
        n: usize,
        /// Train every grid model before accepting requests.
        #[arg(long)]
        pretrain: bool,
    },
}

fn default_testbed_path(data_dir: &Path, seed: u64, bias_level: f64) -> PathBuf {
    data_dir.join(format!("testbed-seed{seed}-b{bias_level}.jsonl"))
}

/// A model id from the registry, or a path to a model file.
pub fn resolve_model(data_dir: &Path, model: &str) -> Result<TrainedScorer> {
    let path = Path::new(model);
    if path.is_file() {
        return store::load_model(path);
    }
    Registry::open(data_dir)?.load(model)
}

/// The testbed a model was trained on, rebuilt from its metadata.
pub fn model_testbed(scorer: &TrainedScorer) -> Result<Testbed> {
    let m = &scorer.meta;
    generate_testbed(&TestbedConfig::new(m.seed, m.n, BiasConfig::gender(m.bias_level)).with_leakage(m.leakage))
}

/// Train one scenario, register it, and write its results file.
pub fn train_and_register(
    data_dir: &Path,
    testbed: &Testbed,
    spec: &ScenarioSpec,
    config: &TrainingConfig,
    seed: u64,
) -> Result<(TrainedScorer, ScenarioResults)> {
    let scorer = train_scenario(testbed, spec, config, seed)?;
    let entry = Registry::open(data_dir)?.register(&scorer)?;
    let results = ScenarioResults::new(&scorer, &data_dir.join(&entry.path));
    store::save_json(&data_dir.join("results").join(format!("{}.json", entry.model_id)), &results)?;
    Ok((scorer, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceRow {
    pub scenario: ScenarioId,
    pub model_id: String,
    pub val_mae: f64,
    pub train_seconds: f64,
    pub report: ScreeningReport,
}

/// Train S1..S5 on one testbed and screen each. Writes models, results,
/// per-scenario reports and `summary-seed<seed>-b<β>.{txt,csv}`.
pub fn reproduce(data_dir: &Path, seed: u64, bias_level: f64, n: usize, k: usize) -> Result<(Vec<ReproduceRow>, String)> {
    let testbed = generate_testbed(&TestbedConfig::new(seed, n, BiasConfig::gender(bias_level)))?;
    let validation = testbed.validation();
    let mut rows = Vec::new();
    for id in ScenarioId::CANONICAL {
        let spec = ScenarioSpec::canonical(id)?;
        let start = Instant::now();
        let (scorer, results) = train_and_register(data_dir, &testbed, &spec, &protocol_config(seed), seed)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let report = evaluate_scenario(&scorer, &validation, k)?;
        let model_id = results
            .model_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        store::save_json(&data_dir.join("reports").join(format!("{model_id}-k{k}.json")), &report)?;
        rows.push(ReproduceRow {
            scenario: id,
            model_id,
            val_mae: scorer.meta.val_mae,
            train_seconds,
            report,
        });
    }
    let summary: Vec<SummaryRow> = rows
        .iter()
        .map(|r| SummaryRow {
            scenario: r.scenario.to_string(),
            report: r.report.clone(),
        })
        .collect();
    let table = render_table(&summary);
    let stem = format!("summary-seed{seed}-b{bias_level}");
    store::write_atomic(&data_dir.join(format!("{stem}.txt")), |w| Ok(w.write_all(table.as_bytes())?))?;
    let csv = render_csv(&summary);
    store::write_atomic(&data_dir.join(format!("{stem}.csv")), |w| Ok(w.write_all(csv.as_bytes())?))?;
    Ok((rows, table))
}

/// Probe for gender on raw testbed features (validation split).
pub fn probe_testbed(testbed: &Testbed, features: ProbeFeatures, seed: u64) -> Result<ProbeResult> {
    let profiles = testbed.validation();
    let reps: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| match features {
            ProbeFeatures::Embedding => p.embedding.0.to_vec(),
            ProbeFeatures::Merits => p.merits.values().to_vec(),
        })
        .collect();
    let labels: Vec<bool> = profiles.iter().map(|p| p.demographics.gender == Gender::G1).collect();
    probe_leakage(&reps, &labels, seed)
}

/// Probe for gender on a model's first hidden layer (validation split).
pub fn probe_model(scorer: &TrainedScorer, testbed: &Testbed, seed: u64) -> Result<ProbeResult> {
    let profiles = testbed.validation();
    let reps = crate::debias::hidden_representations(scorer, &profiles)?;
    let labels: Vec<bool> = profiles.iter().map(|p| p.demographics.gender == Gender::G1).collect();
    probe_leakage(&reps, &labels, seed)
}

fn json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Execute a parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let data_dir = cli.data_dir;
    match cli.command {
        Command::Generate { testbed, out: path } => {
            let tb = generate_testbed(&testbed.config())?;
            let path = path.unwrap_or_else(|| default_testbed_path(&data_dir, testbed.seed, testbed.bias_level));
            store::save_testbed(&tb, &path)?;
            writeln!(out, "wrote {} profiles to {}", tb.profiles.len(), path.display())?;
            writeln!(out, "header: {}", store::header_path(&path).display())?;
        }
        Command::Train {
            scenario,
            testbed,
            epochs,
        } => {
            let spec = ScenarioSpec::canonical(scenario)?;
            let tb = generate_testbed(&testbed.config())?;
            let cfg = TrainingConfig {
                epochs,
                ..protocol_config(testbed.seed)
            };
            let (_, results) = train_and_register(&data_dir, &tb, &spec, &cfg, testbed.seed)?;
            json_line(out, &results)?;
        }
        Command::Evaluate { model, k, testbed } => {
            let scorer = resolve_model(&data_dir, &model)?;
            let tb = match testbed {
                Some(p) => store::load_testbed(&p)?,
                None => model_testbed(&scorer)?,
            };
            let report = evaluate_scenario(&scorer, &tb.validation(), k)?;
            let row = SummaryRow {
                scenario: scorer.spec.id.to_string(),
                report: report.clone(),
            };
            write!(out, "{}", render_table(std::slice::from_ref(&row)))?;
            json_line(out, &report)?;
        }
        Command::Probe {
            model,
            testbed,
            features,
            probe_seed,
        } => {
            let result = match (model, testbed) {
                (Some(m), _) => {
                    let scorer = resolve_model(&data_dir, &m)?;
                    probe_model(&scorer, &model_testbed(&scorer)?, probe_seed)?
                }
                (None, Some(p)) => probe_testbed(&store::load_testbed(&p)?, features, probe_seed)?,
                (None, None) => return Err(arg("probe needs --model or --testbed")),
            };
            json_line(out, &result)?;
        }
        Command::Reproduce {
            seed,
            bias_level,
            n,
            k,
        } => {
            let (rows, table) = reproduce(&data_dir, seed, bias_level, n, k)?;
            write!(out, "{table}")?;
            for r in rows {
                writeln!(out, "{}: val MAE {:.4}, trained in {:.1}s", r.model_id, r.val_mae, r.train_seconds)?;
            }
        }
        Command::Serve {
            host,
            port,
            seed,
            n,
            pretrain,
        } => {
            let mut config = ServiceConfig::new(&data_dir);
            config.seed = seed;
            config.n = n;
            config.training = protocol_config(seed);
            service::run(config, SocketAddr::new(host, port), pretrain)?;
        }
    }
    Ok(())
}

/// Parse `std::env::args`, run, and map the outcome to an exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
