//! How much gender a linear probe can read from the face embedding as the
//! leakage strength grows.
//!
//! ```bash
//! cargo run --release --example leakage_probe
//! ```

use fairscreen::cli::{probe_testbed, ProbeFeatures};
use fairscreen::synth::{generate_testbed, BiasConfig, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    println!("{:>8} {:>10} {:>10}", "leakage", "embedding", "merits");
    for leakage in [0.0, 0.05, 0.1, 0.2, 0.4, 0.7, 1.0] {
        let tb = generate_testbed(&TestbedConfig::new(1, 24_000, BiasConfig::gender(0.75)).with_leakage(leakage))?;
        let emb = probe_testbed(&tb, ProbeFeatures::Embedding, 1)?;
        let merits = probe_testbed(&tb, ProbeFeatures::Merits, 1)?;
        println!("{leakage:>8.2} {:>10.3} {:>10.3}", emb.accuracy, merits.accuracy);
    }
    Ok(())
}
