//! Integer-only deployment engine.
//!
//! `compile` folds BatchNorm into per-channel fixed-point requantization,
//! quantizes weights to integer codes and bit-packs them. `integer_forward`
//! then runs the network without any float arithmetic: activations travel as
//! packed sub-byte codes, MACs accumulate in 32-bit signed integers, and each
//! layer ends with a multiply/shift/round/clamp requantization onto the next
//! activation grid. Layers with 1-bit weights and activations use
//! XNOR-popcount kernels instead of unpack/MAC/repack.
//!
//! Requantization uses the rounded doubling-multiply idiom: a real scale `M`
//! becomes `mult * 2^-shift` with a 31-bit-normalized `mult` (relative error
//! below `2^-24`, checked in tests). The folded bias is kept in the product
//! domain as a `2^shift`-scaled integer so the integer path reproduces the
//! float path's rounding decisions.

use crate::error::{Error, Result};
use crate::layers::{active_channels, fold_bn};
use crate::model::{ArchConfig, InputQuant, TrainedModel};
use crate::quantize::{
    bits_index, pack, pack_signed, read_bits, unpack, unpack_signed, PackedBuffer,
};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Fixed-point requantization
// ---------------------------------------------------------------------------

/// Per-channel requantization constants.
///
/// `code = clamp(round((acc * mult + bias) * 2^-shift))`; for a 1-bit output
/// grid the code is `acc * mult + bias >= 2^shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequantParam {
    pub mult: i32,
    pub shift: u8,
    /// Folded BatchNorm + conv bias, in product-domain fixed point
    /// (`2^shift` units of the output grid step).
    pub bias: i64,
}

/// Decomposes a real scale into `mult * 2^-shift` with `|mult|` in
/// `[2^30, 2^31)`.
pub fn quantize_multiplier(scale: f64) -> Result<(i32, u8)> {
    if scale == 0.0 {
        return Ok((0, 31));
    }
    if !scale.is_finite() {
        return Err(Error::Compile("non-finite requantization scale".into()));
    }
    let neg = scale < 0.0;
    let mut m0 = scale.abs();
    let mut e = 0i32;
    while m0 >= 1.0 {
        m0 /= 2.0;
        e += 1;
    }
    while m0 < 0.5 {
        m0 *= 2.0;
        e -= 1;
    }
    let mut q = (m0 * (1u64 << 31) as f64).round() as i64;
    if q == 1i64 << 31 {
        q >>= 1;
        e += 1;
    }
    let shift = 31 - e;
    if shift < 0 {
        return Err(Error::Compile(format!("requantization scale {scale} too large for int32")));
    }
    if shift > 56 {
        return Err(Error::Compile(format!("requantization scale {scale} underflows fixed point")));
    }
    Ok((if neg { -q as i32 } else { q as i32 }, shift as u8))
}

/// Arithmetic right shift rounding half away from zero.
#[inline]
pub fn rounding_rshift(v: i64, shift: u8) -> i64 {
    if shift == 0 {
        return v;
    }
    let nudge = 1i64 << (shift - 1);
    if v >= 0 {
        (v + nudge) >> shift
    } else {
        -((-v + nudge) >> shift)
    }
}

#[inline]
fn requant_code(acc: i32, p: &RequantParam, out_bits: u8) -> u8 {
    let prod = acc as i64 * p.mult as i64 + p.bias;
    if out_bits == 1 {
        (prod >= 1i64 << p.shift) as u8
    } else {
        let hi = (1i64 << out_bits) - 1;
        rounding_rshift(prod, p.shift).clamp(0, hi) as u8
    }
}

// ---------------------------------------------------------------------------
// Bitwise kernels
// ---------------------------------------------------------------------------

fn xnor_window_dot(a: &[u8], a_off: usize, b: &[u8], b_off: usize, n: usize) -> i64 {
    let mut pc = 0u32;
    let mut done = 0usize;
    while done < n {
        let take = (n - done).min(48);
        let wa = read_bits(a, a_off + done, take);
        let wb = read_bits(b, b_off + done, take);
        let mask = (1u64 << take) - 1;
        pc += ((!(wa ^ wb)) & mask).count_ones();
        done += take;
    }
    2 * pc as i64 - n as i64
}

/// The ±1 dot product of two 1-bit buffers over their first `n` bits,
/// computed as `2 * popcount(XNOR) - n` (bit 1 means +1).
pub fn binary_dot(a: &PackedBuffer, b: &PackedBuffer, n: usize) -> Result<i64> {
    if a.bits != 1 || b.bits != 1 {
        return Err(Error::Dimension("binary_dot requires 1-bit buffers".into()));
    }
    if a.count != n || b.count != n {
        return Err(Error::Dimension(format!(
            "binary_dot length mismatch: {} and {} vs n={n}",
            a.count, b.count
        )));
    }
    Ok(xnor_window_dot(&a.bytes, 0, &b.bytes, 0, n))
}

// ---------------------------------------------------------------------------
// Compiled model
// ---------------------------------------------------------------------------

/// Requantization bank for one width: one entry per active output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RequantBank {
    pub width: f64,
    pub params: Vec<RequantParam>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledConv {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub l_in: usize,
    pub w_bits: u8,
    pub a_in_bits: u8,
    pub a_out_bits: u8,
    /// Signed weight codes `[c_out, c_in, k]`, offset-encoded and packed.
    pub weights: PackedBuffer,
    pub pool: Option<usize>,
    pub banks: Vec<RequantBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledFc {
    pub c_in: usize,
    pub l_in: usize,
    pub out: usize,
    pub w_bits: u8,
    pub a_in_bits: u8,
    pub weights: PackedBuffer,
    /// Integer bias in final-scale units, added to the raw scores.
    pub bias: Vec<i32>,
}

/// Integer-only, BN-folded, bit-packed network.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub arch: ArchConfig,
    pub digest: String,
    pub input: InputQuant,
    /// Widths with requantization banks, ascending; execution defaults to
    /// the last (largest) one.
    pub widths: Vec<f64>,
    pub convs: Vec<CompiledConv>,
    pub fc: CompiledFc,
    /// Real value of one unit of the raw output scores.
    pub final_scale: f64,
}

/// Lowers a trained fixed-precision model for one execution width.
pub fn compile(model: &TrainedModel, width: f64) -> Result<CompiledModel> {
    compile_multi(model, &[width])
}

/// Lowers a trained model with requantization banks for several widths
/// sharing one set of packed weights.
pub fn compile_multi(model: &TrainedModel, widths: &[f64]) -> Result<CompiledModel> {
    if model.nas.is_some() {
        return Err(Error::Compile(
            "model still carries search state; extract a fixed precision first".into(),
        ));
    }
    let input = model.input_quant.ok_or_else(|| {
        Error::Compile("input quantization not calibrated; train the model first".into())
    })?;
    if widths.is_empty() {
        return Err(Error::Compile("need at least one width".into()));
    }
    let mut widths = widths.to_vec();
    widths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    widths.dedup();
    model.arch.validate()?;

    let mut convs = Vec::new();
    let mut l = model.arch.window;
    let mut s_x = input.scale; // value of one input unit
    let mut max_abs_x = 255i64; // worst-case |x - zero_point|
    for block in &model.blocks {
        let conv = &block.conv;
        let w_bits = conv.w_quant.bits;
        let a_out_bits = conv.a_quant.bits;
        let s_w = conv.w_quant.step();
        let codes: Vec<i32> = conv.weights.data().iter().map(|&w| conv.w_quant.code(w)).collect();
        let packed = pack_signed(&codes, w_bits)?;
        // 32-bit accumulator head-room check.
        let q_max = if w_bits == 1 { 1i64 } else { 1i64 << (w_bits - 1) };
        let worst = (conv.c_in * conv.k) as i64 * q_max * max_abs_x;
        if worst >= 1i64 << 30 {
            return Err(Error::Compile(format!(
                "conv accumulator may exceed 32-bit range (worst case {worst})"
            )));
        }
        let a_y = conv.a_quant.step();
        let mut banks = Vec::new();
        for &w in &widths {
            let (bn_scale, bn_bias) = fold_bn(&block.bn, w)?;
            let c_act = active_channels(conv.c_out, w);
            let mut params = Vec::with_capacity(c_act);
            for c in 0..c_act {
                let m = bn_scale[c] * s_w * s_x / a_y;
                let b = (bn_scale[c] * conv.bias[c] + bn_bias[c]) / a_y;
                let (mult, shift) = quantize_multiplier(m)?;
                let bias = (b * (1u64 << shift) as f64).round();
                if !bias.is_finite() || bias.abs() >= (1i64 << 60) as f64 {
                    return Err(Error::Compile(format!(
                        "folded bias {b} not representable in fixed point"
                    )));
                }
                params.push(RequantParam { mult, shift, bias: bias as i64 });
            }
            banks.push(RequantBank { width: w, params });
        }
        convs.push(CompiledConv {
            c_in: conv.c_in,
            c_out: conv.c_out,
            k: conv.k,
            l_in: l,
            w_bits,
            a_in_bits: if convs.is_empty() { 8 } else { model.blocks[convs.len() - 1].conv.a_quant.bits },
            a_out_bits,
            weights: packed,
            pool: if block.pool.present { Some(block.pool.s) } else { None },
            banks,
        });
        if block.pool.present {
            l /= block.pool.s;
        }
        s_x = a_y;
        max_abs_x = if a_out_bits == 1 { 1 } else { (1i64 << a_out_bits) - 1 };
    }

    let fc = &model.fc;
    let s_w = fc.w_quant.step();
    let final_scale = s_w * s_x;
    let codes: Vec<i32> = fc.weights.data().iter().map(|&w| fc.w_quant.code(w)).collect();
    let packed = pack_signed(&codes, fc.w_quant.bits)?;
    let q_max = if fc.w_quant.bits == 1 { 1i64 } else { 1i64 << (fc.w_quant.bits - 1) };
    let worst = fc.in_features as i64 * q_max * max_abs_x;
    if worst >= 1i64 << 30 {
        return Err(Error::Compile(format!(
            "fc accumulator may exceed 32-bit range (worst case {worst})"
        )));
    }
    let bias: Vec<i32> = fc
        .bias
        .iter()
        .map(|&b| {
            let v = (b / final_scale).round();
            if !v.is_finite() || v.abs() >= (1i64 << 30) as f64 {
                Err(Error::Compile(format!("fc bias {b} not representable")))
            } else {
                Ok(v as i32)
            }
        })
        .collect::<Result<_>>()?;
    let a_in_bits = model.blocks.last().map(|b| b.conv.a_quant.bits).unwrap_or(8);

    Ok(CompiledModel {
        arch: model.arch.clone(),
        digest: model.arch.digest(),
        input,
        widths,
        convs,
        fc: CompiledFc {
            c_in: fc.c_in,
            l_in: fc.l_in,
            out: fc.out_features,
            w_bits: fc.w_quant.bits,
            a_in_bits,
            weights: packed,
            bias,
        },
        final_scale,
    })
}

impl CompiledModel {
    /// Quantizes a `[channels, length]` or `[1, channels, length]` float
    /// window to 8-bit input codes.
    pub fn quantize_input(&self, window: &Tensor) -> Result<Vec<u8>> {
        let want = self.arch.in_channels * self.arch.window;
        if window.len() != want {
            return Err(Error::Dimension(format!(
                "input window has {} values, expected {want}",
                window.len()
            )));
        }
        Ok(window.data().iter().map(|&v| self.input.encode(v)).collect())
    }

    /// Default execution width: the widest bank.
    pub fn default_width(&self) -> f64 {
        *self.widths.last().unwrap()
    }

    /// Integer-only inference at the default width; returns raw 32-bit class
    /// scores.
    pub fn integer_forward(&self, input: &[u8]) -> Result<Vec<i32>> {
        self.forward_at_width(input, self.default_width())
    }

    /// Real-valued interpretation of raw scores.
    pub fn dequantize_scores(&self, scores: &[i32]) -> Vec<f64> {
        scores.iter().map(|&s| s as f64 * self.final_scale).collect()
    }

    /// Integer-only inference using the requantization bank of `width` and
    /// the first `ceil(c * width)` channels of every shared weight buffer.
    pub fn forward_at_width(&self, input: &[u8], width: f64) -> Result<Vec<i32>> {
        let wi = self
            .widths
            .iter()
            .position(|&w| w == width)
            .ok_or_else(|| Error::Config(format!("no requantization bank for width {width}")))?;
        if input.len() != self.arch.in_channels * self.arch.window {
            return Err(Error::Dimension(format!(
                "input has {} codes, expected {}",
                input.len(),
                self.arch.in_channels * self.arch.window
            )));
        }
        // Activations travel packed; the first layer input is 8-bit codes.
        let mut act = pack(input, 8)?;
        let mut first = true;
        for conv in &self.convs {
            let c_in_act = if first {
                conv.c_in
            } else {
                active_channels(conv.c_in, width)
            };
            let c_out_act = active_channels(conv.c_out, width);
            let l = conv.l_in;
            let bank = &conv.banks[wi];
            let zp = if first { self.input.zero as i32 } else { 0 };
            let mut acc = vec![0i32; c_out_act * l];
            if conv.w_bits == 1 && conv.a_in_bits == 1 && !first {
                self.conv_xnor(conv, &act, c_in_act, c_out_act, &mut acc);
            } else {
                let x = unpack(&act)?;
                let w_codes = unpack_signed(&conv.weights)?;
                let pad = (conv.k - 1) / 2;
                let decode: fn(u8) -> i32 = if conv.a_in_bits == 1 && !first {
                    |c| 2 * c as i32 - 1
                } else {
                    |c| c as i32
                };
                for o in 0..c_out_act {
                    for i in 0..c_in_act {
                        let wrow = (o * conv.c_in + i) * conv.k;
                        let xrow = i * l;
                        for t in 0..l {
                            let mut a = 0i32;
                            for j in 0..conv.k {
                                let src = t + j;
                                if src >= pad && src - pad < l {
                                    a += w_codes[wrow + j] * (decode(x[xrow + src - pad]) - zp);
                                }
                            }
                            acc[o * l + t] += a;
                        }
                    }
                }
            }
            // Requantize, pool on codes, repack.
            let mut codes = vec![0u8; c_out_act * l];
            for o in 0..c_out_act {
                let p = &bank.params[o];
                for t in 0..l {
                    codes[o * l + t] = requant_code(acc[o * l + t], p, conv.a_out_bits);
                }
            }
            let (codes, l_out) = match conv.pool {
                Some(s) => {
                    let lo = l / s;
                    let mut pooled = vec![0u8; c_out_act * lo];
                    for o in 0..c_out_act {
                        for t in 0..lo {
                            let mut best = 0u8;
                            for j in 0..s {
                                best = best.max(codes[o * l + t * s + j]);
                            }
                            pooled[o * lo + t] = best;
                        }
                    }
                    (pooled, lo)
                }
                None => (codes, l),
            };
            let _ = l_out;
            act = pack(&codes, conv.a_out_bits)?;
            first = false;
        }

        // Fully connected head on the flattened activations.
        let c_act = if self.convs.is_empty() {
            self.fc.c_in
        } else {
            active_channels(self.fc.c_in, width)
        };
        let f_act = c_act * self.fc.l_in;
        let in_full = self.fc.c_in * self.fc.l_in;
        let mut scores = vec![0i32; self.fc.out];
        if self.fc.w_bits == 1 && self.fc.a_in_bits == 1 {
            for cls in 0..self.fc.out {
                let dot = xnor_window_dot(&self.fc.weights.bytes, cls * in_full, &act.bytes, 0, f_act);
                scores[cls] = dot as i32 + self.fc.bias[cls];
            }
        } else {
            let x = unpack(&act)?;
            let w_codes = unpack_signed(&self.fc.weights)?;
            let decode: fn(u8) -> i32 =
                if self.fc.a_in_bits == 1 { |c| 2 * c as i32 - 1 } else { |c| c as i32 };
            for cls in 0..self.fc.out {
                let mut a = 0i64;
                let row = cls * in_full;
                for j in 0..f_act {
                    a += (w_codes[row + j] * decode(x[j])) as i64;
                }
                scores[cls] = a as i32 + self.fc.bias[cls];
            }
        }
        Ok(scores)
    }

    fn conv_xnor(
        &self,
        conv: &CompiledConv,
        act: &PackedBuffer,
        c_in_act: usize,
        c_out_act: usize,
        acc: &mut [i32],
    ) {
        let l = conv.l_in;
        let pad = (conv.k - 1) / 2;
        for o in 0..c_out_act {
            for t in 0..l {
                // Valid tap range; zero padding contributes nothing.
                let j0 = pad.saturating_sub(t);
                let j1 = conv.k.min(l + pad - t);
                let n = j1 - j0;
                let mut a = 0i64;
                for i in 0..c_in_act {
                    let w_off = (o * conv.c_in + i) * conv.k + j0;
                    let x_off = i * l + t + j0 - pad;
                    a += xnor_window_dot(&conv.weights.bytes, w_off, &act.bytes, x_off, n);
                }
                acc[o * l + t] += a as i32;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Cycle-units per MAC for every `(weight bits, activation bits)` pair.
///
/// The defaults charge sub-byte (non-binary) operands more than 8-bit ones
/// for the unpack/repack work, and credit the binary XNOR path with 32
/// MACs per cycle-unit. The table is keyed by the wider operand; any pair
/// can be overridden from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTable {
    pub theta: [[f64; 4]; 4],
}

impl Default for CostTable {
    fn default() -> Self {
        let bits = [1u8, 2, 4, 8];
        let mut theta = [[0.0; 4]; 4];
        for (wi, &bw) in bits.iter().enumerate() {
            for (ai, &ba) in bits.iter().enumerate() {
                theta[wi][ai] = if bw == 1 && ba == 1 {
                    1.0 / 32.0
                } else {
                    match bw.max(ba) {
                        2 | 4 => 0.375,
                        _ => 0.25,
                    }
                };
            }
        }
        CostTable { theta }
    }
}

impl CostTable {
    pub fn get(&self, w_bits: u8, a_bits: u8) -> f64 {
        self.theta[bits_index(w_bits)][bits_index(a_bits)]
    }

    /// Parses a `theta.<w_bits>.<a_bits>=<value>` per-line file; missing
    /// entries keep their defaults.
    pub fn parse(text: &str) -> Result<CostTable> {
        let mut table = CostTable::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            if parts.len() != 3 || parts[0] != "theta" {
                return Err(Error::Parse(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            let bw: u8 = parts[1]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad bits", lineno + 1)))?;
            let ba: u8 = parts[2]
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad bits", lineno + 1)))?;
            if !crate::quantize::bits_supported(bw) || !crate::quantize::bits_supported(ba) {
                return Err(Error::Parse(format!("line {}: unsupported bits", lineno + 1)));
            }
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value", lineno + 1)))?;
            table.theta[bits_index(bw)][bits_index(ba)] = v;
        }
        Ok(table)
    }

    pub fn to_config_string(&self) -> String {
        let bits = [1u8, 2, 4, 8];
        let mut s = String::from("# cycle-units per MAC, theta.<w_bits>.<a_bits>\n");
        for &bw in &bits {
            for &ba in &bits {
                s.push_str(&format!("theta.{bw}.{ba}={}\n", self.get(bw, ba)));
            }
        }
        s
    }

    pub fn load(path: &std::path::Path) -> Result<CostTable> {
        CostTable::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-layer cost breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub w_bits: u8,
    pub a_bits: u8,
    pub macs: u64,
    pub weight_bytes: u64,
    pub requant_bytes: u64,
    pub cycle_units: f64,
}

/// Memory and cycle-proxy totals; totals equal the sum of the per-layer
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub memory_bytes: u64,
    pub total_macs: u64,
    pub cycle_units: f64,
    pub layers: Vec<LayerCost>,
}

/// Cost at the default (widest) width.
pub fn cost_report(cm: &CompiledModel, table: &CostTable) -> CostReport {
    cost_report_at_width(cm, table, cm.default_width())
}

/// Cost of executing at `width`. MACs and cycle-units shrink with the active
/// channels; memory is a static property of the full model (packed weight
/// bytes plus 8 bytes per channel of requantization constants).
pub fn cost_report_at_width(cm: &CompiledModel, table: &CostTable, width: f64) -> CostReport {
    let mut layers = Vec::new();
    let mut first = true;
    for (i, conv) in cm.convs.iter().enumerate() {
        let c_in_act = if first { conv.c_in } else { active_channels(conv.c_in, width) };
        let c_out_act = active_channels(conv.c_out, width);
        let macs = (c_out_act * c_in_act * conv.k * conv.l_in) as u64;
        let weight_bytes =
            PackedBuffer::byte_len(conv.c_out * conv.c_in * conv.k, conv.w_bits) as u64;
        layers.push(LayerCost {
            name: format!("conv{i}"),
            w_bits: conv.w_bits,
            a_bits: conv.a_in_bits,
            macs,
            weight_bytes,
            requant_bytes: 8 * conv.c_out as u64,
            cycle_units: macs as f64 * table.get(conv.w_bits, conv.a_in_bits),
        });
        first = false;
    }
    let c_act = if cm.convs.is_empty() {
        cm.fc.c_in
    } else {
        active_channels(cm.fc.c_in, width)
    };
    let macs = (c_act * cm.fc.l_in * cm.fc.out) as u64;
    layers.push(LayerCost {
        name: "fc".into(),
        w_bits: cm.fc.w_bits,
        a_bits: cm.fc.a_in_bits,
        macs,
        weight_bytes: PackedBuffer::byte_len(cm.fc.c_in * cm.fc.l_in * cm.fc.out, cm.fc.w_bits)
            as u64,
        requant_bytes: 8 * cm.fc.out as u64,
        cycle_units: macs as f64 * table.get(cm.fc.w_bits, cm.fc.a_in_bits),
    });
    CostReport {
        memory_bytes: layers.iter().map(|l| l.weight_bytes + l.requant_bytes).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        cycle_units: layers.iter().map(|l| l.cycle_units).sum(),
        layers,
    }
}

/// Model memory from the architecture alone:
/// `sum(ceil(count_i * bits_i / 8)) + 8 * sum(channels)`.
pub fn memory_bytes_from_arch(arch: &ArchConfig) -> Result<u64> {
    let mut total = 0u64;
    let mut c_in = arch.in_channels;
    let mut channels = 0u64;
    for (i, &c_out) in arch.conv_channels.iter().enumerate() {
        total +=
            PackedBuffer::byte_len(c_out * c_in * arch.kernel, arch.conv_bits[i].weight) as u64;
        channels += c_out as u64;
        c_in = c_out;
    }
    total += PackedBuffer::byte_len(arch.fc_in_features()? * arch.n_classes, arch.fc_weight_bits)
        as u64;
    channels += arch.n_classes as u64;
    Ok(total + 8 * channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multiplier_identity_case() {
        // Scale 1.0 normalizes to 0.5 * 2^1: mult = 2^30, shift = 30.
        let (m, s) = quantize_multiplier(1.0).unwrap();
        assert_eq!(m, 1 << 30);
        assert_eq!(s, 30);
        let (m, s) = quantize_multiplier(0.0).unwrap();
        assert_eq!(m, 0);
        assert_eq!(s, 31);
    }

    #[test]
    fn multiplier_accuracy_within_2_pow_24() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..2000 {
            let scale = 10f64.powf(rng.gen_range(-6.0..3.0))
                * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (m, s) = quantize_multiplier(scale).unwrap();
            let approx = m as f64 * 2f64.powi(-(s as i32));
            let rel = ((approx - scale) / scale).abs();
            assert!(rel <= 2f64.powi(-24), "scale {scale}: rel {rel}");
        }
    }

    #[test]
    fn rounding_shift_half_away_from_zero() {
        assert_eq!(rounding_rshift(5, 1), 3); // 2.5 -> 3
        assert_eq!(rounding_rshift(-5, 1), -3); // -2.5 -> -3
        assert_eq!(rounding_rshift(4, 2), 1); // 1.0 -> 1
        assert_eq!(rounding_rshift(6, 2), 2); // 1.5 -> 2
        assert_eq!(rounding_rshift(-6, 2), -2);
        assert_eq!(rounding_rshift(7, 0), 7);
    }

    #[test]
    fn binary_dot_self_and_complement() {
        let a = pack(&[1, 0, 1, 1, 0, 0, 1, 0], 1).unwrap();
        let not_a = pack(&[0, 1, 0, 0, 1, 1, 0, 1], 1).unwrap();
        assert_eq!(binary_dot(&a, &a, 8).unwrap(), 8);
        assert_eq!(binary_dot(&a, &not_a, 8).unwrap(), -8);
    }

    #[test]
    fn binary_dot_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..1000 {
            let n = rng.gen_range(1..100);
            let av: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let bv: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let expect: i64 = av
                .iter()
                .zip(&bv)
                .map(|(&x, &y)| (2 * x as i64 - 1) * (2 * y as i64 - 1))
                .sum();
            let a = pack(&av, 1).unwrap();
            let b = pack(&bv, 1).unwrap();
            assert_eq!(binary_dot(&a, &b, n).unwrap(), expect);
        }
    }

    #[test]
    fn binary_dot_length_mismatch_is_error() {
        let a = pack(&[1, 0, 1], 1).unwrap();
        let b = pack(&[1, 0], 1).unwrap();
        assert!(binary_dot(&a, &b, 3).is_err());
    }

    #[test]
    fn cost_table_defaults_and_worked_example() {
        let t = CostTable::default();
        // conv c_in=3, c_out=8, k=7, L_out=4 at 8-bit: 672 MACs, 168 units.
        let macs = 8 * 3 * 7 * 4;
        assert_eq!(macs, 672);
        assert!((macs as f64 * t.get(8, 8) - 168.0).abs() < 1e-12);
        // Same at 1-bit: 672/32 = 21.
        assert!((macs as f64 * t.get(1, 1) - 21.0).abs() < 1e-12);
        // Ordering: binary < 8-bit < sub-byte for the same MAC count.
        assert!(t.get(1, 1) < t.get(8, 8));
        assert!(t.get(8, 8) < t.get(4, 4));
        assert!(t.get(8, 8) < t.get(2, 2));
    }

    #[test]
    fn cost_table_file_roundtrip_and_override() {
        let t = CostTable::default();
        let text = t.to_config_string();
        let back = CostTable::parse(&text).unwrap();
        assert_eq!(t, back);
        let over = CostTable::parse("theta.4.4=0.5\n").unwrap();
        assert_eq!(over.get(4, 4), 0.5);
        assert_eq!(over.get(8, 8), 0.25);
        assert!(CostTable::parse("theta.3.4=1\n").is_err());
        assert!(CostTable::parse("nonsense\n").is_err());
    }

    #[test]
    fn memory_matches_arch_formula() {
        use crate::data::synth_har;
        use crate::model::{instantiate, ArchConfig, PoolSpec, Template};
        use crate::train::{train_fixed, TrainProtocol};
        let cfg = ArchConfig::fixed(
            Template::B,
            &[8, 16],
            7,
            &[PoolSpec::of(2), PoolSpec::of(2)],
            4,
            3,
            3,
            32,
        );
        let data = synth_har(6, 3, 3, 32, 1.0, 1);
        let protocol = TrainProtocol { max_epochs: 1, quiet: true, ..TrainProtocol::default() };
        let m = train_fixed(instantiate(&cfg, 1).unwrap(), &data, &protocol).unwrap();
        let cm = compile(&m, 1.0).unwrap();
        let report = cost_report(&cm, &CostTable::default());
        assert_eq!(report.memory_bytes, memory_bytes_from_arch(&cfg).unwrap());
        // Worked example: conv c_in=3, c_out=8, k=7 at 4-bit is 672 bits =
        // 84 weight bytes plus 8*8 requant bytes.
        let conv0 = &report.layers[0];
        assert_eq!(conv0.weight_bytes, 84);
        assert_eq!(conv0.requant_bytes, 64);
    }

    #[test]
    fn fc_integer_hand_case() {
        // 4-bit weights [2, -1], 8-bit inputs [10, 20], bias 0 -> 0.
        let w = pack_signed(&[2, -1], 4).unwrap();
        let x = [10u8, 20u8];
        let w_codes = unpack_signed(&w).unwrap();
        let acc: i32 = w_codes.iter().zip(&x).map(|(&q, &u)| q * u as i32).sum();
        assert_eq!(acc, 0);
    }
}
