//! Lowering a trained model to the bit-packed integer engine and checking it
//! against the float network.
//!
//! Run with: cargo run --example compile_integer

use subbyte_har::data::{stratified_split, synth_har};
use subbyte_har::engine::{compile, cost_report, CostTable};
use subbyte_har::model::{forward, instantiate, ArchConfig, ForwardOpts, PoolSpec, Template};
use subbyte_har::train::{train_fixed, TrainProtocol};

fn main() {
    let data = synth_har(30, 3, 3, 64, 1.0, 3);
    let (train_set, test_set) = stratified_split(&data, 0.25, 2);
    let arch = ArchConfig::fixed(
        Template::B,
        &[4, 8],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        2, // aggressive 2-bit quantization
        data.n_classes(),
        data.channels(),
        data.window_len(),
    );
    let protocol = TrainProtocol { initial_lr: 0.01, max_epochs: 25, ..TrainProtocol::default() };
    let mut trained = train_fixed(instantiate(&arch, 5).unwrap(), &train_set, &protocol).unwrap();

    let cm = compile(&trained, 1.0).unwrap();

    // The integer engine must agree with the fake-quant float model.
    let mut agree = 0;
    for i in 0..test_set.len() {
        let w = test_set.window(i);
        let codes = cm.quantize_input(&w).unwrap();
        let int_scores = cm.integer_forward(&codes).unwrap();
        let (float_scores, _) = forward(&mut trained, &w, ForwardOpts::eval()).unwrap();
        let ai = argmax_i(&int_scores);
        let af = argmax_f(float_scores.data());
        if ai == af {
            agree += 1;
        }
    }
    println!("integer vs float argmax agreement: {agree}/{}", test_set.len());

    let report = cost_report(&cm, &CostTable::default());
    println!("layer costs:");
    for l in &report.layers {
        println!(
            "  {:<6} {}w/{}a  macs={:<6} weight_bytes={:<5} cycle_units={:.1}",
            l.name, l.w_bits, l.a_bits, l.macs, l.weight_bytes, l.cycle_units
        );
    }
    println!(
        "total: memory_bytes={} macs={} cycle_units={:.1}",
        report.memory_bytes, report.total_macs, report.cycle_units
    );
}

fn argmax_i(v: &[i32]) -> usize {
    (0..v.len()).max_by_key(|&i| v[i]).unwrap()
}

fn argmax_f(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap()).unwrap()
}
