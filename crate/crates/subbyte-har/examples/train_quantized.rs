//! Quantization-aware training of one 4-bit model on synthetic data.
//!
//! Run with: cargo run --example train_quantized

use subbyte_har::data::{metrics, stratified_split, synth_har};
use subbyte_har::driver::predict_integer;
use subbyte_har::engine::compile;
use subbyte_har::model::{instantiate, ArchConfig, PoolSpec, Template};
use subbyte_har::train::{train_fixed, TrainProtocol};

fn main() {
    let data = synth_har(40, 4, 3, 64, 1.0, 0);
    let (train_set, test_set) = stratified_split(&data, 0.2, 1);

    let arch = ArchConfig::fixed(
        Template::B,
        &[8, 16],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        4, // 4-bit weights and activations everywhere
        data.n_classes(),
        data.channels(),
        data.window_len(),
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 30,
        ..TrainProtocol::default()
    };
    let model = instantiate(&arch, 0).unwrap();
    let trained = train_fixed(model, &train_set, &protocol).unwrap();

    let cm = compile(&trained, 1.0).unwrap();
    let pred = predict_integer(&cm, &test_set).unwrap();
    let m = metrics(&pred, &test_set.labels, test_set.n_classes()).unwrap();
    println!(
        "4-bit test: accuracy={:.4} balanced_accuracy={:.4} macro_f1={:.4}",
        m.accuracy, m.balanced_accuracy, m.macro_f1
    );
    println!("confusion matrix (rows = truth):\n{}", m.confusion.to_csv());
}
