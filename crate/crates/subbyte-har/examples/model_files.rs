//! Model artifacts: trained (.sbht) and compiled (.sbh) files round-trip
//! exactly, and the compiled form has a lossless JSON debug dump.
//!
//! Run with: cargo run --example model_files

use subbyte_har::data::synth_har;
use subbyte_har::engine::compile_multi;
use subbyte_har::format::{
    compiled_from_bytes, compiled_to_bytes, dump_json, trained_from_bytes, trained_to_bytes,
};
use subbyte_har::model::{instantiate, ArchConfig, PoolSpec, Template};
use subbyte_har::train::{train_fixed, TrainProtocol};

fn main() {
    let data = synth_har(15, 2, 3, 32, 1.0, 7);
    let arch = ArchConfig::fixed(
        Template::B,
        &[4, 8],
        7,
        &[PoolSpec::of(2), PoolSpec::absent()],
        4,
        data.n_classes(),
        data.channels(),
        data.window_len(),
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 5,
        quiet: true,
        ..TrainProtocol::default()
    };
    let trained = train_fixed(instantiate(&arch, 11).unwrap(), &data, &protocol).unwrap();

    let bytes = trained_to_bytes(&trained).unwrap();
    let back = trained_from_bytes(&bytes).unwrap();
    println!(
        "trained file: {} bytes, fingerprint match: {}",
        bytes.len(),
        trained.param_fingerprint() == back.param_fingerprint()
    );

    let cm = compile_multi(&trained, &[0.5, 1.0]).unwrap();
    let cbytes = compiled_to_bytes(&cm);
    let cback = compiled_from_bytes(&cbytes).unwrap();
    println!("compiled file: {} bytes, exact roundtrip: {}", cbytes.len(), cm == cback);

    let js = dump_json(&cm).unwrap();
    println!("json dump: {} bytes; first lines:", js.len());
    for line in js.lines().take(8) {
        println!("  {line}");
    }
}
