//! Generate a testbed, write it as JSON lines, and summarize it.
//!
//! ```bash
//! cargo run --example generate_testbed -- 0.75 /tmp/testbed.jsonl
//! ```

use fairscreen::store;
use fairscreen::synth::{generate_testbed, BiasConfig, Demographics, Gender, Split, TestbedConfig};

fn main() -> fairscreen::Result<()> {
    let mut args = std::env::args().skip(1);
    let beta: f64 = args.next().map(|s| s.parse().expect("bias level")).unwrap_or(0.75);
    let out = args.next().unwrap_or_else(|| "testbed.jsonl".into());

    let tb = generate_testbed(&TestbedConfig::new(1, 24_000, BiasConfig::gender(beta)))?;
    store::save_testbed(&tb, out.as_ref())?;
    println!("{} profiles -> {out} (+ {})", tb.profiles.len(), store::header_path(out.as_ref()).display());

    println!("\n{:<8} {:>7} {:>7}", "cell", "train", "valid");
    for d in Demographics::cells() {
        let count = |s| tb.split(s).iter().filter(|p| p.demographics == d).count();
        println!("{:<8} {:>7} {:>7}", format!("{:?}/{:?}", d.gender, d.ethnicity), count(Split::Train), count(Split::Validation));
    }

    for g in Gender::ALL {
        let scores: Vec<_> = tb.profiles.iter().filter(|p| p.demographics.gender == g).collect();
        let mean = |f: fn(&&fairscreen::synth::CandidateProfile) -> f64| scores.iter().map(f).sum::<f64>() / scores.len() as f64;
        println!(
            "{g:?}: mean unbiased {:.4}, mean biased {:.4}",
            mean(|p| p.unbiased_score),
            mean(|p| p.biased_score)
        );
    }
    Ok(())
}
