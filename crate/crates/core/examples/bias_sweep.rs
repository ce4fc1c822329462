//! Gender gap of S2, S3 and S4 across the bias grid.
//!
//! ```bash
//! cargo run --release --example bias_sweep
//! ```

use fairscreen::fairness::evaluate_scenario;
use fairscreen::scenario::{protocol_config, train_scenario, ScenarioId, ScenarioSpec};
use fairscreen::service::BIAS_GRID;
use fairscreen::synth::{generate_testbed, BiasConfig, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    let ids = [ScenarioId::S2, ScenarioId::S3, ScenarioId::S4];
    println!("{:>6} {:>6} {:>6} {:>6}", "beta", "S2", "S3", "S4");
    for beta in BIAS_GRID {
        let tb = generate_testbed(&TestbedConfig::new(1, 24_000, BiasConfig::gender(beta)))?;
        print!("{beta:>6.2}");
        for id in ids {
            let m = train_scenario(&tb, &ScenarioSpec::canonical(id)?, &protocol_config(1), 1)?;
            print!(" {:>6.0}", evaluate_scenario(&m, &tb.validation(), 100)?.demographic_difference);
        }
        println!();
    }
    Ok(())
}
