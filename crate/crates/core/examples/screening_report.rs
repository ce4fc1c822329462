//! Screen the validation pool with one model at several cut-offs.
//!
//! ```bash
//! cargo run --release --example screening_report -- S4
//! ```

use fairscreen::fairness::{evaluate_scenario, render_table, SummaryRow};
use fairscreen::scenario::{protocol_config, train_scenario, ScenarioId, ScenarioSpec};
use fairscreen::synth::{generate_testbed, BiasConfig, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    let id: ScenarioId = std::env::args().nth(1).unwrap_or_else(|| "S4".into()).parse()?;
    let tb = generate_testbed(&TestbedConfig::new(1, 24_000, BiasConfig::gender(0.75)))?;
    let scorer = train_scenario(&tb, &ScenarioSpec::canonical(id)?, &protocol_config(1), 1)?;

    let rows: Vec<SummaryRow> = [10, 50, 100, 500, 1000]
        .into_iter()
        .map(|k| {
            Ok(SummaryRow {
                scenario: format!("{id} k={k}"),
                report: evaluate_scenario(&scorer, &tb.validation(), k)?,
            })
        })
        .collect::<fairscreen::Result<_>>()?;
    print!("{}", render_table(&rows));

    let top = &rows[2].report;
    println!("\nethnicity among the top 100: {:?} (difference {})", top.ethnicity_counts, top.ethnicity_difference);
    println!("first ten selected ids: {:?}", &top.selected_ids[..10]);
    Ok(())
}
