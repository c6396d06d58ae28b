//! Versioned little-endian file formats for trained and compiled models.
//!
//! Trained models ("SBHT" magic) store float parameters, quantizer states,
//! input calibration, and all BatchNorm banks. Compiled models ("SBH1" magic)
//! store the architecture, packed weights, per-width requantization banks,
//! and input calibration. Both embed the canonical architecture text, so the
//! files are self-describing. Writers are deterministic: identical models
//! produce byte-identical files.

use std::path::Path;

use crate::engine::{CompiledConv, CompiledFc, CompiledModel, RequantBank, RequantParam};
use crate::error::{Error, Result};
use crate::layers::BatchNormBank;
use crate::model::{fnv64, instantiate, ArchConfig, InputQuant, TrainedModel};
use crate::quantize::{unpack_signed, PackedBuffer};

pub const TRAINED_MAGIC: &[u8; 4] = b"SBHT";
pub const COMPILED_MAGIC: &[u8; 4] = b"SBH1";
pub const FORMAT_VERSION: u16 = 1;

// ---------------------------------------------------------------------------
// Little-endian primitives
// ---------------------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Writer {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }
    fn bytes(&mut self, vs: &[u8]) {
        self.u32(vs.len() as u32);
        self.buf.extend_from_slice(vs);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
        if buf.len() < 6 || &buf[0..4] != magic {
            return Err(Error::Format(format!(
                "bad magic; expected {:?}",
                std::str::from_utf8(magic).unwrap()
            )));
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trained model format
// ---------------------------------------------------------------------------

pub fn trained_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    if model.nas.is_some() {
        return Err(Error::State(
            "models with attached search state are not persisted; extract first".into(),
        ));
    }
    let mut w = Writer::new(TRAINED_MAGIC);
    let arch_text = model.arch.to_config_string();
    w.bytes(arch_text.as_bytes());
    match model.input_quant {
        Some(q) => {
            w.u8(1);
            w.f64(q.scale);
            w.u8(q.zero);
        }
        None => w.u8(0),
    }
    w.f64s(&model.widths);
    for block in &model.blocks {
        w.f64s(block.conv.weights.data());
        w.f64s(&block.conv.bias);
        w.f64(block.conv.w_quant.alpha_w);
        w.f64(block.conv.a_quant.alpha);
        w.f64(block.bn.epsilon);
        for set in &block.bn.sets {
            w.f64s(&set.gamma);
            w.f64s(&set.beta);
            w.f64s(&set.running_mean);
            w.f64s(&set.running_var);
        }
    }
    w.f64s(model.fc.weights.data());
    w.f64s(&model.fc.bias);
    w.f64(model.fc.w_quant.alpha_w);
    Ok(w.buf)
}

pub fn trained_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(bytes, TRAINED_MAGIC)?;
    let arch_text = String::from_utf8(r.bytes()?)
        .map_err(|_| Error::Format("architecture text is not UTF-8".into()))?;
    let arch = ArchConfig::from_config_string(&arch_text)?;
    // Instantiate for the structure, then overwrite every parameter.
    let mut model = instantiate(&arch, 0)?;
    model.input_quant = match r.u8()? {
        0 => None,
        _ => Some(InputQuant { scale: r.f64()?, zero: r.u8()? }),
    };
    let widths = r.f64s()?;
    for block in &mut model.blocks {
        let wdata = r.f64s()?;
        if wdata.len() != block.conv.weights.len() {
            return Err(Error::Format("conv weight count mismatch".into()));
        }
        block.conv.weights.data_mut().copy_from_slice(&wdata);
        block.conv.bias = r.f64s()?;
        block.conv.w_quant.alpha_w = r.f64()?;
        block.conv.a_quant.alpha = r.f64()?;
        let eps = r.f64()?;
        let mut bank = BatchNormBank::new(&widths, block.conv.c_out, eps);
        for set in &mut bank.sets {
            set.gamma = r.f64s()?;
            set.beta = r.f64s()?;
            set.running_mean = r.f64s()?;
            set.running_var = r.f64s()?;
            if set.gamma.len() != set.beta.len()
                || set.gamma.len() != set.running_mean.len()
                || set.gamma.len() != set.running_var.len()
            {
                return Err(Error::Format("batchnorm bank length mismatch".into()));
            }
        }
        block.bn = bank;
    }
    let wdata = r.f64s()?;
    if wdata.len() != model.fc.weights.len() {
        return Err(Error::Format("fc weight count mismatch".into()));
    }
    model.fc.weights.data_mut().copy_from_slice(&wdata);
    model.fc.bias = r.f64s()?;
    model.fc.w_quant.alpha_w = r.f64()?;
    model.widths = widths;
    r.done()?;
    Ok(model)
}

pub fn save_trained(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, trained_to_bytes(model)?)?;
    Ok(())
}

pub fn load_trained(path: &Path) -> Result<TrainedModel> {
    trained_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Compiled model format
// ---------------------------------------------------------------------------

fn write_packed(w: &mut Writer, buf: &PackedBuffer) {
    w.u8(buf.bits);
    w.u32(buf.count as u32);
    w.bytes(&buf.bytes);
}

fn read_packed(r: &mut Reader) -> Result<PackedBuffer> {
    let bits = r.u8()?;
    let count = r.u32()? as usize;
    let bytes = r.bytes()?;
    PackedBuffer::from_bytes(bits, count, bytes)
}

pub fn compiled_to_bytes(cm: &CompiledModel) -> Vec<u8> {
    let mut w = Writer::new(COMPILED_MAGIC);
    let arch_text = cm.arch.to_config_string();
    w.u64(fnv64(arch_text.as_bytes()));
    w.bytes(arch_text.as_bytes());
    w.f64(cm.input.scale);
    w.u8(cm.input.zero);
    w.f64(cm.final_scale);
    w.f64s(&cm.widths);
    w.u8(cm.convs.len() as u8);
    for conv in &cm.convs {
        w.u32(conv.c_in as u32);
        w.u32(conv.c_out as u32);
        w.u32(conv.k as u32);
        w.u32(conv.l_in as u32);
        w.u8(conv.w_bits);
        w.u8(conv.a_in_bits);
        w.u8(conv.a_out_bits);
        w.u8(conv.pool.unwrap_or(0) as u8);
        write_packed(&mut w, &conv.weights);
        for bank in &conv.banks {
            w.f64(bank.width);
            w.u32(bank.params.len() as u32);
            for p in &bank.params {
                w.i32(p.mult);
                w.u8(p.shift);
                w.i64(p.bias);
            }
        }
    }
    w.u32(cm.fc.c_in as u32);
    w.u32(cm.fc.l_in as u32);
    w.u32(cm.fc.out as u32);
    w.u8(cm.fc.w_bits);
    w.u8(cm.fc.a_in_bits);
    write_packed(&mut w, &cm.fc.weights);
    w.u32(cm.fc.bias.len() as u32);
    for &b in &cm.fc.bias {
        w.i32(b);
    }
    w.buf
}

pub fn compiled_from_bytes(bytes: &[u8]) -> Result<CompiledModel> {
    let mut r = Reader::new(bytes, COMPILED_MAGIC)?;
    let digest_stored = r.u64()?;
    let arch_text = String::from_utf8(r.bytes()?)
        .map_err(|_| Error::Format("architecture text is not UTF-8".into()))?;
    if fnv64(arch_text.as_bytes()) != digest_stored {
        return Err(Error::Format("architecture digest mismatch".into()));
    }
    let arch = ArchConfig::from_config_string(&arch_text)?;
    let input = InputQuant { scale: r.f64()?, zero: r.u8()? };
    let final_scale = r.f64()?;
    let widths = r.f64s()?;
    let n_convs = r.u8()? as usize;
    if n_convs != arch.conv_channels.len() {
        return Err(Error::Format("conv layer count does not match architecture".into()));
    }
    let mut convs = Vec::with_capacity(n_convs);
    for _ in 0..n_convs {
        let c_in = r.u32()? as usize;
        let c_out = r.u32()? as usize;
        let k = r.u32()? as usize;
        let l_in = r.u32()? as usize;
        let w_bits = r.u8()?;
        let a_in_bits = r.u8()?;
        let a_out_bits = r.u8()?;
        let pool = match r.u8()? {
            0 => None,
            s => Some(s as usize),
        };
        let weights = read_packed(&mut r)?;
        if weights.count != c_out * c_in * k {
            return Err(Error::Format("packed weight count does not match shape".into()));
        }
        let mut banks = Vec::with_capacity(widths.len());
        for _ in 0..widths.len() {
            let width = r.f64()?;
            let n = r.u32()? as usize;
            let mut params = Vec::with_capacity(n);
            for _ in 0..n {
                params.push(RequantParam { mult: r.i32()?, shift: r.u8()?, bias: r.i64()? });
            }
            banks.push(RequantBank { width, params });
        }
        convs.push(CompiledConv {
            c_in,
            c_out,
            k,
            l_in,
            w_bits,
            a_in_bits,
            a_out_bits,
            weights,
            pool,
            banks,
        });
    }
    let c_in = r.u32()? as usize;
    let l_in = r.u32()? as usize;
    let out = r.u32()? as usize;
    let w_bits = r.u8()?;
    let a_in_bits = r.u8()?;
    let weights = read_packed(&mut r)?;
    if weights.count != c_in * l_in * out {
        return Err(Error::Format("packed fc weight count does not match shape".into()));
    }
    let n = r.u32()? as usize;
    let mut bias = Vec::with_capacity(n);
    for _ in 0..n {
        bias.push(r.i32()?);
    }
    r.done()?;
    Ok(CompiledModel {
        digest: arch.digest(),
        arch,
        input,
        widths,
        convs,
        fc: CompiledFc { c_in, l_in, out, w_bits, a_in_bits, weights, bias },
        final_scale,
    })
}

pub fn save_compiled(cm: &CompiledModel, path: &Path) -> Result<()> {
    std::fs::write(path, compiled_to_bytes(cm))?;
    Ok(())
}

pub fn load_compiled(path: &Path) -> Result<CompiledModel> {
    compiled_from_bytes(&std::fs::read(path)?)
}

// ---------------------------------------------------------------------------
// JSON debug dump
// ---------------------------------------------------------------------------

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn json_f64(v: f64) -> String {
    // Shortest round-trip decimal; all stored values are finite.
    format!("{v:?}")
}

/// Lossless human-readable form of a compiled model. Weights appear as
/// signed integer codes rather than packed bytes.
pub fn dump_json(cm: &CompiledModel) -> Result<String> {
    let mut s = String::from("{\n");
    s.push_str(&format!("  \"magic\": \"SBH1\",\n  \"version\": {FORMAT_VERSION},\n"));
    s.push_str(&format!("  \"digest\": \"{}\",\n", cm.digest));
    s.push_str(&format!("  \"arch\": \"{}\",\n", json_escape(&cm.arch.to_config_string())));
    s.push_str(&format!(
        "  \"input\": {{\"scale\": {}, \"zero\": {}}},\n",
        json_f64(cm.input.scale),
        cm.input.zero
    ));
    s.push_str(&format!("  \"final_scale\": {},\n", json_f64(cm.final_scale)));
    let widths: Vec<String> = cm.widths.iter().map(|&w| json_f64(w)).collect();
    s.push_str(&format!("  \"widths\": [{}],\n", widths.join(", ")));
    s.push_str("  \"layers\": [\n");
    for (i, conv) in cm.convs.iter().enumerate() {
        let codes = unpack_signed(&conv.weights)?;
        let codes: Vec<String> = codes.iter().map(|c| c.to_string()).collect();
        s.push_str("    {\n");
        s.push_str(&format!(
            "      \"kind\": \"conv\", \"c_in\": {}, \"c_out\": {}, \"k\": {}, \"l_in\": {},\n",
            conv.c_in, conv.c_out, conv.k, conv.l_in
        ));
        s.push_str(&format!(
            "      \"w_bits\": {}, \"a_in_bits\": {}, \"a_out_bits\": {}, \"pool\": {},\n",
            conv.w_bits,
            conv.a_in_bits,
            conv.a_out_bits,
            conv.pool.map(|p| p.to_string()).unwrap_or_else(|| "null".into())
        ));
        s.push_str(&format!("      \"weight_codes\": [{}],\n", codes.join(", ")));
        s.push_str("      \"requant\": [\n");
        for (bi, bank) in conv.banks.iter().enumerate() {
            let params: Vec<String> = bank
                .params
                .iter()
                .map(|p| {
                    format!("{{\"mult\": {}, \"shift\": {}, \"bias\": {}}}", p.mult, p.shift, p.bias)
                })
                .collect();
            s.push_str(&format!(
                "        {{\"width\": {}, \"channels\": [{}]}}{}\n",
                json_f64(bank.width),
                params.join(", "),
                if bi + 1 < conv.banks.len() { "," } else { "" }
            ));
        }
        s.push_str("      ]\n");
        s.push_str("    },\n");
        let _ = i;
    }
    let codes = unpack_signed(&cm.fc.weights)?;
    let codes: Vec<String> = codes.iter().map(|c| c.to_string()).collect();
    let bias: Vec<String> = cm.fc.bias.iter().map(|b| b.to_string()).collect();
    s.push_str("    {\n");
    s.push_str(&format!(
        "      \"kind\": \"fc\", \"c_in\": {}, \"l_in\": {}, \"out\": {},\n",
        cm.fc.c_in, cm.fc.l_in, cm.fc.out
    ));
    s.push_str(&format!(
        "      \"w_bits\": {}, \"a_in_bits\": {},\n",
        cm.fc.w_bits, cm.fc.a_in_bits
    ));
    s.push_str(&format!("      \"weight_codes\": [{}],\n", codes.join(", ")));
    s.push_str(&format!("      \"bias\": [{}]\n", bias.join(", ")));
    s.push_str("    }\n");
    s.push_str("  ]\n}\n");
    Ok(s)
}
