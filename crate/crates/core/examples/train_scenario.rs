//! Train one scenario and look at what it learned.
//!
//! ```bash
//! cargo run --release --example train_scenario -- S2
//! ```

use fairscreen::scenario::{predict, protocol_config, train_scenario, ScenarioId, ScenarioSpec};
use fairscreen::synth::{generate_testbed, BiasConfig, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    let id: ScenarioId = std::env::args().nth(1).unwrap_or_else(|| "S2".into()).parse()?;
    let spec = ScenarioSpec::canonical(id)?;
    let tb = generate_testbed(&TestbedConfig::new(1, 24_000, BiasConfig::gender(0.75)))?;

    let scorer = train_scenario(&tb, &spec, &protocol_config(1), 1)?;
    println!("{id}: inputs {:?}, target {:?}, dims {:?}", spec.inputs.groups().collect::<Vec<_>>(), spec.target, scorer.network.dims());
    for (epoch, loss) in scorer.meta.history.iter().enumerate() {
        println!("  epoch {:>2}  train MAE {loss:.5}", epoch + 1);
    }
    println!("validation MAE {:.5}", scorer.meta.val_mae);

    // Same candidate, other gender.
    let mut val = tb.validation();
    val.sort_by(|a, b| a.unbiased_score.total_cmp(&b.unbiased_score));
    let mid = val[val.len() / 2].clone();
    let mut flipped = mid.clone();
    flipped.demographics.gender = mid.demographics.gender.flipped();
    flipped.embedding = tb.templates.mean(&flipped.demographics, 1.0);
    let mut original = mid.clone();
    original.embedding = tb.templates.mean(&mid.demographics, 1.0);
    println!(
        "median-merit candidate: {:?} {:.4} vs {:?} {:.4}",
        original.demographics.gender,
        predict(&scorer, &original)?,
        flipped.demographics.gender,
        predict(&scorer, &flipped)?
    );
    Ok(())
}
