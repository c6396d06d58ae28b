//! Shared test oracles, independent of the library's kernel implementations.
#![allow(dead_code)]

use subbyte_har::engine::CompiledModel;
use subbyte_har::quantize::unpack_signed;

/// Naive scalar integer reference for the compiled execution semantics.
///
/// Works on plain integer vectors (no packing, no XNOR tricks) and
/// re-implements the requantization arithmetic from its definition, so a
/// bug in the production kernels cannot hide here.
pub fn reference_integer_forward(cm: &CompiledModel, input: &[u8], width: f64) -> Vec<i32> {
    fn active(c: usize, w: f64) -> usize {
        (c as f64 * w).ceil() as usize
    }
    fn round_shift(v: i64, shift: u8) -> i64 {
        if shift == 0 {
            return v;
        }
        let half = 1i64 << (shift - 1);
        if v >= 0 {
            (v + half) >> shift
        } else {
            -((-v + half) >> shift)
        }
    }

    let wi = cm.widths.iter().position(|&w| w == width).expect("width bank");
    let mut x: Vec<i32> = input.iter().map(|&u| u as i32 - cm.input.zero as i32).collect();
    let mut first = true;
    let mut l_prev = cm.arch.window;
    for conv in &cm.convs {
        let c_in_act = if first { conv.c_in } else { active(conv.c_in, width) };
        let c_out_act = active(conv.c_out, width);
        let l = conv.l_in;
        assert_eq!(l, l_prev);
        let w_codes = unpack_signed(&conv.weights).expect("weights");
        let pad = (conv.k - 1) / 2;
        let mut next = vec![0i32; c_out_act * l];
        for o in 0..c_out_act {
            let p = &conv.banks[wi].params[o];
            for t in 0..l {
                let mut acc = 0i64;
                for i in 0..c_in_act {
                    for j in 0..conv.k {
                        let src = t + j;
                        if src >= pad && src - pad < l {
                            let q = w_codes[(o * conv.c_in + i) * conv.k + j] as i64;
                            acc += q * x[i * l + src - pad] as i64;
                        }
                    }
                }
                let prod = acc * p.mult as i64 + p.bias;
                let code: i32 = if conv.a_out_bits == 1 {
                    if prod >= 1i64 << p.shift {
                        1
                    } else {
                        -1
                    }
                } else {
                    let hi = (1i64 << conv.a_out_bits) - 1;
                    round_shift(prod, p.shift).clamp(0, hi) as i32
                };
                next[o * l + t] = code;
            }
        }
        // Pooling on integer activation values (codes are value-ordered).
        let (next, l_out) = match conv.pool {
            Some(s) => {
                let lo = l / s;
                let mut pooled = vec![0i32; c_out_act * lo];
                for o in 0..c_out_act {
                    for t in 0..lo {
                        let mut best = i32::MIN;
                        for j in 0..s {
                            best = best.max(next[o * l + t * s + j]);
                        }
                        pooled[o * lo + t] = best;
                    }
                }
                (pooled, lo)
            }
            None => (next, l),
        };
        x = next;
        l_prev = l_out;
        first = false;
    }

    let c_act = active(cm.fc.c_in, width);
    let f_act = c_act * cm.fc.l_in;
    let in_full = cm.fc.c_in * cm.fc.l_in;
    let w_codes = unpack_signed(&cm.fc.weights).expect("fc weights");
    let mut scores = vec![0i32; cm.fc.out];
    for cls in 0..cm.fc.out {
        let mut acc = 0i64;
        for j in 0..f_act {
            acc += (w_codes[cls * in_full + j] * x[j]) as i64;
        }
        scores[cls] = acc as i32 + cm.fc.bias[cls];
    }
    scores
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_i32(v: &[i32]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Central finite differences of `f` around `x`.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let orig = p[i];
        p[i] = orig + h;
        let hi = f(&p);
        p[i] = orig - h;
        let lo = f(&p);
        p[i] = orig;
        g.push((hi - lo) / (2.0 * h));
    }
    g
}

/// Quantile-of-a-linear-functional task: labels are quantile buckets of a
/// fixed smooth functional of noise inputs, with label noise. Matching the
/// dense class boundaries at equal capacity needs precision in every tensor,
/// which makes it the constructed "more bits strictly help" workload.
pub fn quantile_dataset(
    n: usize,
    classes: usize,
    channels: usize,
    length: usize,
    seed: u64,
) -> subbyte_har::data::WindowedDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..channels * length)
        .map(|i| {
            let (ch, t) = (i / length, i % length);
            let u = t as f64 / length as f64;
            (std::f64::consts::TAU * u + ch as f64).sin()
                + 0.5 * (2.0 * std::f64::consts::TAU * u + 0.7 * ch as f64).sin()
        })
        .collect();
    let mut data = Vec::with_capacity(n * channels * length);
    let mut scores = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..channels * length).map(|_| rng.gen_range(-1.0..1.0)).collect();
        scores.push(x.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>());
        data.extend_from_slice(&x);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut labels = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * classes / n;
    }
    // Label noise keeps the optimum away from infinite confidence, so
    // sign-amplifying branches stop looking like free temperature scaling.
    for l in labels.iter_mut() {
        if rng.gen_bool(0.2) {
            *l = rng.gen_range(0..classes);
        }
    }
    subbyte_har::data::WindowedDataset {
        windows: subbyte_har::tensor::Tensor::from_vec(&[n, channels, length], data).unwrap(),
        labels,
        class_names: (0..classes).map(|c| format!("t{c}")).collect(),
        sample_rate_hz: length as f64,
        window_seconds: 1.0,
    }
}
