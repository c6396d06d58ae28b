//! Fake quantization for training and exact bit-packing codecs for deployment.
//!
//! Training-time quantizers simulate 1/2/4/8-bit integer grids on f64 values
//! (PACT-style learnable clipping for activations, symmetric learnable
//! clipping for weights). Deployment-time codecs pack integer codes into
//! sub-byte buffers, little-element-first within each byte.
//!
//! All rounding is half-away-from-zero (`f64::round` semantics) so results
//! are identical across platforms.

use crate::error::{Error, Result};

/// Bit-widths supported by every quantizer and kernel in the crate.
pub const SUPPORTED_BITS: [u8; 4] = [1, 2, 4, 8];

pub fn bits_supported(bits: u8) -> bool {
    SUPPORTED_BITS.contains(&bits)
}

/// Index of a bit-width inside [`SUPPORTED_BITS`].
pub fn bits_index(bits: u8) -> usize {
    match bits {
        1 => 0,
        2 => 1,
        4 => 2,
        8 => 3,
        _ => panic!("unsupported bit-width {bits}"),
    }
}

/// How quantization-aware forward passes behave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// No clipping, no rounding: a plain float network with ReLU activations.
    Float,
    /// Clip to the learned ranges but skip rounding. Backward gradients are
    /// exact derivatives of this mode, which is what the straight-through
    /// estimator differentiates.
    Ste,
    /// Full fake quantization: clip and round onto the integer grid.
    Quant,
}

// ---------------------------------------------------------------------------
// Activation quantizer (PACT)
// ---------------------------------------------------------------------------

/// Activation quantizer with a learnable clip ceiling `alpha`.
///
/// For `bits >= 2` the output grid is `{0, s, 2s, ..., alpha}` with
/// `s = alpha / (2^bits - 1)`; the clip to `[0, alpha]` subsumes ReLU.
/// For `bits == 1` the output is `±alpha/2`, the sign of `x - alpha/2`
/// after clipping (encoded bit 1 means +1).
#[derive(Debug, Clone, PartialEq)]
pub struct ActQuantizer {
    pub bits: u8,
    pub alpha: f64,
}

impl ActQuantizer {
    pub fn new(bits: u8, alpha: f64) -> Result<ActQuantizer> {
        if !bits_supported(bits) {
            return Err(Error::Config(format!("unsupported activation bits {bits}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("activation alpha must be positive, got {alpha}")));
        }
        Ok(ActQuantizer { bits, alpha })
    }

    /// Grid step: distance between adjacent levels (`alpha/2` for 1-bit,
    /// which is also the magnitude of the two levels).
    pub fn step(&self) -> f64 {
        if self.bits == 1 {
            self.alpha / 2.0
        } else {
            self.alpha / ((1u32 << self.bits) - 1) as f64
        }
    }

    /// Element-wise forward in the requested mode.
    pub fn apply(&self, x: f64, mode: ForwardMode) -> f64 {
        match mode {
            ForwardMode::Float => x.max(0.0),
            ForwardMode::Ste => {
                let c = x.clamp(0.0, self.alpha);
                if self.bits == 1 {
                    c - self.alpha / 2.0
                } else {
                    c
                }
            }
            ForwardMode::Quant => {
                let c = x.clamp(0.0, self.alpha);
                if self.bits == 1 {
                    let s = self.alpha / 2.0;
                    if c - s >= 0.0 {
                        s
                    } else {
                        -s
                    }
                } else {
                    let s = self.step();
                    (c / s).round() * s
                }
            }
        }
    }

    /// STE pass-through mask for the input gradient.
    pub fn grad_x(&self, x: f64, mode: ForwardMode) -> f64 {
        match mode {
            ForwardMode::Float => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => {
                if x > 0.0 && x < self.alpha {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Per-element contribution to d(output)/d(alpha).
    pub fn grad_alpha(&self, x: f64, mode: ForwardMode) -> f64 {
        if mode == ForwardMode::Float {
            return 0.0;
        }
        if self.bits == 1 {
            // Surrogate is clip(x, 0, alpha) - alpha/2.
            if x >= self.alpha {
                0.5
            } else {
                -0.5
            }
        } else if x >= self.alpha {
            1.0
        } else {
            0.0
        }
    }
}

/// Convenience wrapper applying [`ActQuantizer::apply`] to a slice.
pub fn fake_quant_act(x: &[f64], q: &ActQuantizer, mode: ForwardMode) -> Vec<f64> {
    x.iter().map(|&v| q.apply(v, mode)).collect()
}

// ---------------------------------------------------------------------------
// Weight quantizer (symmetric, learnable clip)
// ---------------------------------------------------------------------------

/// Symmetric per-tensor weight quantizer with learnable clip magnitude.
///
/// For `bits >= 2` the signed grid is `{-2^(b-1), ..., 2^(b-1)-1} * s` with
/// `s = alpha_w / 2^(b-1)`. For `bits == 1` weights binarize to
/// `±alpha_w` with `sign(0) = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightQuantizer {
    pub bits: u8,
    pub alpha_w: f64,
}

impl WeightQuantizer {
    pub fn new(bits: u8, alpha_w: f64) -> Result<WeightQuantizer> {
        if !bits_supported(bits) {
            return Err(Error::Config(format!("unsupported weight bits {bits}")));
        }
        if !(alpha_w > 0.0) || !alpha_w.is_finite() {
            return Err(Error::Config(format!("alpha_w must be positive, got {alpha_w}")));
        }
        Ok(WeightQuantizer { bits, alpha_w })
    }

    /// Grid step (`alpha_w` itself for 1-bit).
    pub fn step(&self) -> f64 {
        if self.bits == 1 {
            self.alpha_w
        } else {
            self.alpha_w / (1u64 << (self.bits - 1)) as f64
        }
    }

    pub fn q_min(&self) -> i32 {
        if self.bits == 1 {
            -1
        } else {
            -(1i32 << (self.bits - 1))
        }
    }

    pub fn q_max(&self) -> i32 {
        if self.bits == 1 {
            1
        } else {
            (1i32 << (self.bits - 1)) - 1
        }
    }

    /// Integer code of a weight value (used by the compiler).
    pub fn code(&self, w: f64) -> i32 {
        if self.bits == 1 {
            if w >= 0.0 {
                1
            } else {
                -1
            }
        } else {
            let s = self.step();
            ((w / s).round() as i64).clamp(self.q_min() as i64, self.q_max() as i64) as i32
        }
    }

    /// Element-wise forward in the requested mode.
    pub fn apply(&self, w: f64, mode: ForwardMode) -> f64 {
        match mode {
            ForwardMode::Float => w,
            ForwardMode::Ste => {
                if self.bits == 1 {
                    w.clamp(-self.alpha_w, self.alpha_w)
                } else {
                    let s = self.step();
                    w.clamp(self.q_min() as f64 * s, self.q_max() as f64 * s)
                }
            }
            ForwardMode::Quant => self.code(w) as f64 * self.step(),
        }
    }

    /// STE pass-through mask for the weight gradient.
    pub fn grad_w(&self, w: f64, mode: ForwardMode) -> f64 {
        match mode {
            ForwardMode::Float => 1.0,
            _ => {
                let (lo, hi) = if self.bits == 1 {
                    (-self.alpha_w, self.alpha_w)
                } else {
                    let s = self.step();
                    (self.q_min() as f64 * s, self.q_max() as f64 * s)
                };
                if w >= lo && w <= hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Per-element contribution to d(output)/d(alpha_w), nonzero only in the
    /// clipped region.
    pub fn grad_alpha(&self, w: f64, mode: ForwardMode) -> f64 {
        if mode == ForwardMode::Float {
            return 0.0;
        }
        if self.bits == 1 {
            if w > self.alpha_w {
                1.0
            } else if w < -self.alpha_w {
                -1.0
            } else {
                0.0
            }
        } else {
            let s = self.step();
            let hi_frac = self.q_max() as f64 / (1u64 << (self.bits - 1)) as f64;
            if w > self.q_max() as f64 * s {
                hi_frac
            } else if w < self.q_min() as f64 * s {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// Convenience wrapper applying [`WeightQuantizer::apply`] to a slice.
pub fn fake_quant_weight(w: &[f64], q: &WeightQuantizer, mode: ForwardMode) -> Vec<f64> {
    w.iter().map(|&v| q.apply(v, mode)).collect()
}

// ---------------------------------------------------------------------------
// Bit packing
// ---------------------------------------------------------------------------

/// Bit-packed sequence of unsigned codes.
///
/// Element `i` occupies bits `(i*bits) mod 8 ..` of byte `(i*bits)/8`
/// (little-element-first). Padding bits in the last byte are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBuffer {
    pub bits: u8,
    pub count: usize,
    pub bytes: Vec<u8>,
}

impl PackedBuffer {
    /// Number of bytes needed for `count` elements of width `bits`.
    pub fn byte_len(count: usize, bits: u8) -> usize {
        (count * bits as usize).div_ceil(8)
    }

    /// Wraps raw bytes, validating length and zero padding.
    pub fn from_bytes(bits: u8, count: usize, bytes: Vec<u8>) -> Result<PackedBuffer> {
        if !bits_supported(bits) {
            return Err(Error::Config(format!("unsupported packing bits {bits}")));
        }
        let want = Self::byte_len(count, bits);
        if bytes.len() != want {
            return Err(Error::Format(format!(
                "packed buffer of {count} x {bits}-bit needs {want} bytes, got {}",
                bytes.len()
            )));
        }
        let used = count * bits as usize;
        if used % 8 != 0 {
            let last = bytes[want - 1];
            let mask = !0u8 << (used % 8);
            if last & mask != 0 {
                return Err(Error::Format("padding bits in last byte are not zero".into()));
            }
        }
        Ok(PackedBuffer { bits, count, bytes })
    }
}

/// Packs unsigned codes into a [`PackedBuffer`].
pub fn pack(values: &[u8], bits: u8) -> Result<PackedBuffer> {
    if !bits_supported(bits) {
        return Err(Error::Config(format!("unsupported packing bits {bits}")));
    }
    let max = if bits == 8 { u8::MAX } else { (1u8 << bits) - 1 };
    let mut bytes = vec![0u8; PackedBuffer::byte_len(values.len(), bits)];
    for (i, &v) in values.iter().enumerate() {
        if v > max {
            return Err(Error::Range(format!(
                "value {v} at index {i} does not fit in {bits} unsigned bits"
            )));
        }
        let bit = i * bits as usize;
        bytes[bit / 8] |= v << (bit % 8);
    }
    Ok(PackedBuffer { bits, count: values.len(), bytes })
}

/// Exact inverse of [`pack`].
pub fn unpack(buf: &PackedBuffer) -> Result<Vec<u8>> {
    let want = PackedBuffer::byte_len(buf.count, buf.bits);
    if buf.bytes.len() != want {
        return Err(Error::Format(format!(
            "byte length {} inconsistent with {} x {}-bit elements",
            buf.bytes.len(),
            buf.count,
            buf.bits
        )));
    }
    let mask = if buf.bits == 8 { 0xFF } else { (1u8 << buf.bits) - 1 };
    let mut out = Vec::with_capacity(buf.count);
    for i in 0..buf.count {
        let bit = i * buf.bits as usize;
        out.push((buf.bytes[bit / 8] >> (bit % 8)) & mask);
    }
    Ok(out)
}

/// Unsigned storage code of a signed value at a given bit-width.
///
/// Signed values are stored offset by `2^(b-1)`; 1-bit values are the two
/// signs with bit 1 meaning +1.
pub fn signed_to_code(v: i32, bits: u8) -> Result<u8> {
    if bits == 1 {
        return match v {
            1 => Ok(1),
            -1 => Ok(0),
            _ => Err(Error::Range(format!("1-bit code must be ±1, got {v}"))),
        };
    }
    let half = 1i32 << (bits - 1);
    if v < -half || v > half - 1 {
        return Err(Error::Range(format!("value {v} does not fit in {bits} signed bits")));
    }
    Ok((v + half) as u8)
}

/// Inverse of [`signed_to_code`].
pub fn code_to_signed(c: u8, bits: u8) -> i32 {
    if bits == 1 {
        if c != 0 {
            1
        } else {
            -1
        }
    } else {
        c as i32 - (1i32 << (bits - 1))
    }
}

/// Packs signed values using the offset encoding above.
pub fn pack_signed(values: &[i32], bits: u8) -> Result<PackedBuffer> {
    let codes = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            signed_to_code(v, bits)
                .map_err(|_| Error::Range(format!("value {v} at index {i} out of {bits}-bit signed range")))
        })
        .collect::<Result<Vec<u8>>>()?;
    pack(&codes, bits)
}

/// Unpacks a buffer of offset-encoded signed values.
pub fn unpack_signed(buf: &PackedBuffer) -> Result<Vec<i32>> {
    Ok(unpack(buf)?.into_iter().map(|c| code_to_signed(c, buf.bits)).collect())
}

/// Reads `n <= 8` consecutive elements' bits starting at element `elem` as a
/// little-endian word of `n*bits` bits. Used by the sliced kernels to read
/// sub-ranges of shared weight buffers.
#[inline]
pub(crate) fn read_bits(bytes: &[u8], bit_off: usize, nbits: usize) -> u64 {
    debug_assert!(nbits >= 1 && nbits <= 57);
    let byte = bit_off / 8;
    let shift = bit_off % 8;
    let mut word = 0u64;
    let end = (bit_off + nbits).div_ceil(8).min(bytes.len());
    for (k, &b) in bytes[byte..end].iter().enumerate() {
        word |= (b as u64) << (8 * k);
    }
    (word >> shift) & ((1u64 << nbits) - 1)
}
