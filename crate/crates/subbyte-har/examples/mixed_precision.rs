//! Differentiable mixed-precision search: sweeping the size-regularization
//! strength trades model bits against task performance.
//!
//! Run with: cargo run --example mixed_precision

use subbyte_har::data::synth_har;
use subbyte_har::model::{ArchConfig, PoolSpec, Template};
use subbyte_har::nas::{nas_search, NasConfig};
use subbyte_har::train::TrainProtocol;

fn main() {
    let data = synth_har(25, 3, 3, 64, 1.0, 1);
    let base = ArchConfig::fixed(
        Template::B,
        &[4, 8],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        8, // search starts from the 8-bit configuration
        data.n_classes(),
        data.channels(),
        data.window_len(),
    );
    // Let each search run to convergence; the bit assignment is the argmax
    // of the trained logits.
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 80,
        early_stop_patience: 1000,
        lr_patience: 1000,
        quiet: true,
        ..TrainProtocol::default()
    };
    let nas = NasConfig { lambda_sweep: vec![0.0, 1e-4, 5e-4, 1e-3, 5e-3] };
    let results = nas_search(&base, &data, &protocol, &nas).unwrap();
    println!("lambda    conv bits (w/a)      fc  total_bits  holdout");
    for r in &results {
        let bits: Vec<String> = r
            .arch
            .conv_bits
            .iter()
            .map(|b| format!("{}w{}a", b.weight, b.activation))
            .collect();
        println!(
            "{:<9} {:<20} {:<3} {:<11} {:.4}",
            r.lambda,
            bits.join(" "),
            r.arch.fc_weight_bits,
            r.arch.weight_bits_total(),
            r.model.history.last().map(|h| h.holdout_score).unwrap_or(0.0)
        );
    }
}
