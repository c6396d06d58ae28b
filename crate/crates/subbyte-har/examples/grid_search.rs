//! A reduced hyper-parameter grid at two bit-widths, with Pareto extraction.
//!
//! Run with: cargo run --example grid_search

use subbyte_har::data::pareto_indices;
use subbyte_har::driver::{run_grid, DatasetSpec, ExperimentPlan};
use subbyte_har::model::{PoolSpec, Template};
use subbyte_har::nas::NasConfig;
use subbyte_har::train::TrainProtocol;

fn main() {
    let dir = std::env::temp_dir().join("subbyte-har-grid-example");
    let _ = std::fs::remove_dir_all(&dir);
    let plan = ExperimentPlan {
        dataset: DatasetSpec::Synth {
            n_per_class: 30,
            classes: 3,
            channels: 3,
            length: 64,
            easy_fraction: 1.0,
        },
        template: Template::B,
        c_out_choices: vec![4, 16],
        k_choices: vec![7],
        pool_choices: vec![PoolSpec::of(2)],
        bit_widths: vec![1, 8],
        nas: NasConfig::default(),
        protocol: TrainProtocol {
            initial_lr: 0.01,
            max_epochs: 15,
            quiet: true,
            ..TrainProtocol::default()
        },
        out_dir: dir.clone(),
        jobs: 2,
        seed: 0,
        test_fraction: 0.25,
    };
    let out = run_grid(&plan).unwrap();
    println!("trained {} models ({} skipped)", out.stats.trained, out.stats.skipped);
    println!("digest           bits  bacc    memory  cycles");
    for r in &out.rows {
        println!(
            "{} {:>4}  {:.4}  {:>6}  {:.0}",
            r.digest,
            r.arch.conv_bits[0].weight,
            r.balanced_accuracy,
            r.memory_bytes,
            r.cycle_units
        );
    }
    let points: Vec<(f64, f64)> =
        out.rows.iter().map(|r| (r.balanced_accuracy, r.memory_bytes as f64)).collect();
    println!("memory-Pareto front:");
    for i in pareto_indices(&points) {
        let r = &out.rows[i];
        println!("  {} bacc={:.4} bytes={}", r.digest, r.balanced_accuracy, r.memory_bytes);
    }
    println!("results store: {}", dir.join("results.csv").display());
}
