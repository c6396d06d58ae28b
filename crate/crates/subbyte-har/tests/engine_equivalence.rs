//! Integer engine equivalence: the packed production kernels must match a
//! naive scalar integer reference bit-exactly, and the float fake-quant
//! network's argmax on inputs without score ties.

mod common;

use common::{argmax, argmax_i32, reference_integer_forward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subbyte_har::engine::{compile_multi, CompiledModel};
use subbyte_har::model::{
    forward, instantiate, ArchConfig, ForwardOpts, InputQuant, PoolSpec, Template, TrainedModel,
};
use subbyte_har::quantize::SUPPORTED_BITS;
use subbyte_har::tensor::Tensor;

fn random_model(w_bits: u8, a_bits: u8, rng: &mut ChaCha8Rng) -> TrainedModel {
    let mut cfg = ArchConfig::fixed(
        Template::B,
        &[4, 8],
        7,
        &[PoolSpec::of(2), PoolSpec::absent()],
        8,
        3,
        2,
        16,
    );
    for b in &mut cfg.conv_bits {
        b.weight = w_bits;
        b.activation = a_bits;
    }
    cfg.fc_weight_bits = w_bits;
    let mut m = instantiate(&cfg, rng.gen()).unwrap();
    m.input_quant = Some(InputQuant { scale: 2.0 / 255.0, zero: 128 });
    for block in &mut m.blocks {
        let set = &mut block.bn.sets[2]; // width 1.0
        for c in 0..set.gamma.len() {
            set.gamma[c] = rng.gen_range(0.5..1.5);
            set.beta[c] = rng.gen_range(-0.3..0.3);
            set.running_mean[c] = rng.gen_range(-0.5..0.5);
            set.running_var[c] = rng.gen_range(0.3..2.0);
        }
        block.conv.a_quant.alpha = rng.gen_range(1.0..6.0);
        for b in block.conv.bias.iter_mut() {
            *b = rng.gen_range(-0.2..0.2);
        }
    }
    m
}

fn random_window(rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(&[1, 2, 16], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn check_model(m: &mut TrainedModel, cm: &CompiledModel, rng: &mut ChaCha8Rng, inputs: usize) -> (usize, usize) {
    let mut checked = 0;
    let mut ties = 0;
    for _ in 0..inputs {
        let x = random_window(rng);
        let codes = cm.quantize_input(&x.clone().reshape(&[2, 16]).unwrap()).unwrap();
        let int_scores = cm.integer_forward(&codes).unwrap();
        let ref_scores = reference_integer_forward(cm, &codes, 1.0);
        assert_eq!(int_scores, ref_scores, "production kernels diverge from scalar reference");
        let (float_scores, _) = forward(m, &x, ForwardOpts::eval()).unwrap();
        let fs = float_scores.data();
        let fi = argmax(fs);
        let mut sorted: Vec<f64> = fs.to_vec();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sorted[0] - sorted[1] <= cm.final_scale {
            ties += 1;
            continue; // score tie within one final-scale unit
        }
        assert_eq!(
            argmax_i32(&int_scores),
            fi,
            "argmax mismatch: int {int_scores:?} vs float {fs:?} (final_scale {})",
            cm.final_scale
        );
        checked += 1;
    }
    (checked, ties)
}

#[test]
fn integer_forward_matches_reference_and_float_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(20260809);
    let mut total_checked = 0;
    let mut total_ties = 0;
    for &w_bits in &SUPPORTED_BITS {
        for &a_bits in &SUPPORTED_BITS {
            for _ in 0..2 {
                let mut m = random_model(w_bits, a_bits, &mut rng);
                let cm = compile_multi(&m, &[1.0]).unwrap();
                let (c, t) = check_model(&mut m, &cm, &mut rng, 25);
                total_checked += c;
                total_ties += t;
            }
        }
    }
    assert!(total_checked > 500, "only {total_checked} non-tied inputs checked");
    // Ties should be rare with random scores.
    assert!(total_ties < total_checked / 4, "{total_ties} ties vs {total_checked}");
}

#[test]
fn sliced_width_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &w_bits in &[1u8, 4, 8] {
        for &a_bits in &[1u8, 4, 8] {
            let mut m = random_model(w_bits, a_bits, &mut rng);
            // Width-0.5 banks need their own plausible statistics.
            for block in &mut m.blocks {
                let n = block.bn.sets[1].gamma.len();
                for c in 0..n {
                    block.bn.sets[1].gamma[c] = rng.gen_range(0.5..1.5);
                    block.bn.sets[1].running_mean[c] = rng.gen_range(-0.5..0.5);
                    block.bn.sets[1].running_var[c] = rng.gen_range(0.3..2.0);
                }
            }
            let cm = compile_multi(&m, &[0.5, 1.0]).unwrap();
            for _ in 0..10 {
                let x = random_window(&mut rng);
                let codes = cm.quantize_input(&x).unwrap();
                let got = cm.forward_at_width(&codes, 0.5).unwrap();
                let want = reference_integer_forward(&cm, &codes, 0.5);
                assert_eq!(got, want, "w={w_bits} a={a_bits}");
            }
        }
    }
}

#[test]
fn all_zero_input_with_zero_bias_gives_zero_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut m = random_model(8, 8, &mut rng);
    // Zero out everything that could inject a constant term.
    for block in &mut m.blocks {
        for b in block.conv.bias.iter_mut() {
            *b = 0.0;
        }
        let set = &mut block.bn.sets[2];
        for c in 0..set.gamma.len() {
            set.beta[c] = 0.0;
            set.running_mean[c] = 0.0;
        }
    }
    for b in m.fc.bias.iter_mut() {
        *b = 0.0;
    }
    m.input_quant = Some(InputQuant { scale: 2.0 / 255.0, zero: 128 });
    let cm = compile_multi(&m, &[1.0]).unwrap();
    // Codes equal to the zero point represent exactly zero input.
    let codes = vec![128u8; 32];
    let scores = cm.integer_forward(&codes).unwrap();
    assert!(scores.iter().all(|&s| s == 0), "{scores:?}");
}
