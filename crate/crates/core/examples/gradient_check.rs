//! Backprop against central differences on a scorer-shaped network.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use fairscreen::nn::{gradient_check_with_step, Activation, DenseNetwork, LossKind};

fn main() -> fairscreen::Result<()> {
    let acts = [Activation::Relu, Activation::Relu, Activation::Sigmoid];
    let net = DenseNetwork::init(&[44, 10, 10, 1], &acts, 7)?;
    let x: Vec<f64> = (0..44).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    println!("{} parameters", net.param_count());
    println!("{:>8} {:>12} {:>12}", "h", "MAE", "BCE");
    for h in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let mae = gradient_check_with_step(&net, &x, &[0.9], LossKind::Mae, h)?;
        let bce = gradient_check_with_step(&net, &x, &[1.0], LossKind::Bce, h)?;
        println!("{h:>8.0e} {mae:>12.3e} {bce:>12.3e}");
    }
    Ok(())
}
