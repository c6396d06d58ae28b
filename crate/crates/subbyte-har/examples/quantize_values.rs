//! Fake quantization of activations and weights at every supported width.
//!
//! Run with: cargo run --example quantize_values

use subbyte_har::quantize::{ActQuantizer, ForwardMode, WeightQuantizer, SUPPORTED_BITS};

fn main() {
    println!("activations, PACT clip alpha = 1.0");
    for &bits in &SUPPORTED_BITS {
        let q = ActQuantizer::new(bits, 1.0).unwrap();
        let xs = [-0.5, 0.0, 0.2, 0.4, 0.9, 1.5];
        let ys: Vec<f64> = xs.iter().map(|&x| q.apply(x, ForwardMode::Quant)).collect();
        println!("  {bits}-bit: {xs:?} -> {ys:.4?}");
    }

    println!("weights, symmetric clip alpha_w = 1.0");
    for &bits in &SUPPORTED_BITS {
        let q = WeightQuantizer::new(bits, 1.0).unwrap();
        let ws = [-5.0, -0.6, -0.1, 0.0, 0.3, 0.7];
        let ys: Vec<f64> = ws.iter().map(|&w| q.apply(w, ForwardMode::Quant)).collect();
        println!("  {bits}-bit: {ws:?} -> {ys:.4?}");
    }

    // The quantizer grid is idempotent: re-quantizing a level is a no-op.
    let q = ActQuantizer::new(2, 1.0).unwrap();
    let y = q.apply(0.4, ForwardMode::Quant);
    assert_eq!(q.apply(y, ForwardMode::Quant), y);
    println!("idempotence: fq(fq(0.4)) == fq(0.4) == {y:.4}");
}
