//! Plain vs. discrimination-aware training on the leaky embedding, with a
//! sweep over the adversary weight λ.
//!
//! ```bash
//! cargo run --release --example debias_training
//! ```

use fairscreen::cli::probe_model;
use fairscreen::debias::{train_debiased, utility_cost, DebiasConfig};
use fairscreen::fairness::evaluate_scenario;
use fairscreen::scenario::{protocol_config, train_scenario, ScenarioId, ScenarioSpec};
use fairscreen::synth::{generate_testbed, BiasConfig, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    let seed = 2;
    let tb = generate_testbed(&TestbedConfig::new(seed, 24_000, BiasConfig::gender(0.75)))?;
    let val = tb.validation();
    let cfg = protocol_config(seed);

    let s4 = train_scenario(&tb, &ScenarioSpec::canonical(ScenarioId::S4)?, &cfg, seed)?;
    println!(
        "S4       gap {:>5.1}  probe {:.3}",
        evaluate_scenario(&s4, &val, 100)?.demographic_difference,
        probe_model(&s4, &tb, seed)?.accuracy
    );

    let s5 = ScenarioSpec::canonical(ScenarioId::S5)?;
    for lambda in [0.0, 1.0, 3.0, 10.0, 30.0] {
        let d = DebiasConfig {
            lambda,
            ..DebiasConfig::default()
        };
        let m = train_debiased(&tb, &s5, &cfg, &d, seed)?;
        println!(
            "λ = {lambda:<4}  gap {:>5.1}  probe {:.3}  adversary {:.3}  utility cost {:+.4}",
            evaluate_scenario(&m, &val, 100)?.demographic_difference,
            probe_model(&m, &tb, seed)?.accuracy,
            m.debias.as_ref().map(|d| d.adversary_accuracy).unwrap_or(f64::NAN),
            utility_cost(&m, &s4, &val)?
        );
    }
    Ok(())
}
