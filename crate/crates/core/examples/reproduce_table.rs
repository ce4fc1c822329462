//! Train S1..S5 at one seed and print the selection table. Artifacts go to
//! `$FAIRSCREEN_DATA_DIR` (default `./fairscreen-data`).
//!
//! ```bash
//! cargo run --release --example reproduce_table -- 1 0.75
//! ```

use fairscreen::cli::reproduce;
use fairscreen::registry::data_dir_from_env;

fn main() -> fairscreen::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(1);
    let beta: f64 = args.next().map(|s| s.parse().expect("bias level")).unwrap_or(0.75);
    let dir = data_dir_from_env();

    let (rows, table) = reproduce(&dir, seed, beta, 24_000, 100)?;
    print!("{table}");
    println!();
    for r in &rows {
        println!("{:<16} val MAE {:.4}  {:.2} s", r.model_id, r.val_mae, r.train_seconds);
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
