//! Trains a small network on the bundled MNIST subset and prints per-epoch
//! statistics.
//!
//! Usage: `mnist_smoke [hidden] [iters_phase1] [iters_phase2] [alpha_in] [alpha_out] [epochs]`

use std::path::Path;
use std::time::Instant;

use eqprop::learning::{error_rate, train_epoch, UpdateMode};
use eqprop::mnist::load_idx;
use eqprop::network::layer_sizes_from_architecture;
use eqprop::{Activation, FieldKind, HyperParams, LayeredNetwork};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let data_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset");
    let train = load_idx(data_dir.join("train-1000-images-idx3-ubyte"), data_dir.join("train-1000-labels-idx1-ubyte"))?;
    let hp = HyperParams {
        epsilon: 0.001,
        beta: 1.0,
        alphas: vec![arg(3, 0.1), arg(4, 0.05)],
        iters_phase1: arg(1, 2000.0) as usize,
        iters_phase2: arg(2, 1000.0) as usize,
        minibatch: 20,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let sizes = layer_sizes_from_architecture(&[784, arg(0, 128.0) as usize, 10]);
    let mut net = LayeredNetwork::glorot(sizes, Activation::HardSigmoid, FieldKind::Leaky, &mut rng)?;
    for epoch in 0..arg(5, 5.0) as usize {
        let start = Instant::now();
        let (next, stats) = train_epoch(&net, &train, &hp, UpdateMode::Endpoint)?;
        net = next;
        println!(
            "epoch {epoch}: mean_cost {:.5} online_error {:.4} ({:.1}s)",
            stats.mean_cost,
            stats.error_rate,
            start.elapsed().as_secs_f64()
        );
    }
    println!("final train error {:.4}", error_rate(&net, &train, &hp)?);
    Ok(())
}
