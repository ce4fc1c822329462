//! Two candidates with identical skills, scored by each method as the
//! demo UI would request it. Models missing from the data directory are
//! trained on first use.
//!
//! ```bash
//! FAIRSCREEN_DATA_DIR=/tmp/fs cargo run --release --example what_if
//! ```

use fairscreen::registry::data_dir_from_env;
use fairscreen::scenario::{FeatureGroup, FeatureSet};
use fairscreen::service::{AppState, CandidateRequest, MethodKind, ServiceConfig};
use fairscreen::synth::{Ethnicity, Gender};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let state = AppState::new(ServiceConfig::new(data_dir_from_env()))?;
    let settings = [
        (MethodKind::Human, FeatureSet::default()),
        (MethodKind::TraditionalAi, FeatureSet::of(&[FeatureGroup::Gender])),
        (MethodKind::TraditionalAi, FeatureSet::of(&[FeatureGroup::Embedding])),
        (MethodKind::ResponsibleAi, FeatureSet::of(&[FeatureGroup::Embedding])),
    ];
    println!("{:<15} {:<22} {:>5} {:>7} {:>7} {:>7}", "method", "model", "beta", "G0", "G1", "delta");
    for beta in [0.0, 0.75] {
        for (method, inputs) in settings {
            let ask = |gender| CandidateRequest {
                gender,
                ethnicity: Ethnicity::E0,
                skills: [0.7, 0.8, 0.6, 0.9],
                other_merits: [0.5; 8],
                bias_level: beta,
                inputs,
                method,
            };
            let a = state.score(&ask(Gender::G0)).await.map_err(|e| e.message)?;
            let b = state.score(&ask(Gender::G1)).await.map_err(|e| e.message)?;
            println!(
                "{:<15} {:<22} {:>5.2} {:>7.3} {:>7.3} {:>+7.3}",
                format!("{method:?}"),
                a.model_id.as_deref().unwrap_or("-"),
                a.bias_level,
                a.score,
                b.score,
                b.score - a.score
            );
        }
    }
    Ok(())
}
