//! Architecture descriptions, template instantiation, grid enumeration, and
//! the float/fake-quant forward and backward passes of a whole network.
//!
//! Two templates are supported. Template A stacks three conv+pool blocks with
//! pooling fixed at size 2; template B stacks two conv blocks with optional
//! pooling of size 2 or 4. Every conv block is Conv1D -> BatchNorm -> clipped
//! activation (quantized); a single fully-connected layer produces class
//! scores in accumulator precision.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    active_channels, batchnorm_backward, batchnorm_forward, conv1d_backward, conv1d_forward,
    fc_backward, fc_forward, maxpool_backward, maxpool_forward, BatchNormBank, BnCache, BnMode,
    Conv1dLayer, FcLayer, MaxPool1dLayer, PoolCache,
};
use crate::nas::{
    mixed_act, mixed_act_backward, mixed_weight, mixed_weight_backward, ActMixCache, NasState,
    WeightMixCache,
};
use crate::quantize::{bits_supported, ActQuantizer, ForwardMode, WeightQuantizer};
use crate::tensor::Tensor;

/// Widths every model supports, in ascending order.
pub const SUPPORTED_WIDTHS: [f64; 3] = [0.25, 0.5, 1.0];

/// FNV-1a 64-bit hash, used for stable content digests.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Architecture configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    A,
    B,
}

impl Template {
    pub fn conv_count(&self) -> usize {
        match self {
            Template::A => 3,
            Template::B => 2,
        }
    }

    pub fn max_channels(&self) -> usize {
        match self {
            Template::A => 128,
            Template::B => 32,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Template::A => "A",
            Template::B => "B",
        }
    }

    pub fn parse(s: &str) -> Result<Template> {
        match s {
            "A" | "a" => Ok(Template::A),
            "B" | "b" => Ok(Template::B),
            _ => Err(Error::Parse(format!("unknown template '{s}'"))),
        }
    }
}

/// Pooling choice at one conv position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub present: bool,
    pub s: usize,
}

impl PoolSpec {
    pub fn absent() -> PoolSpec {
        PoolSpec { present: false, s: 1 }
    }

    pub fn of(s: usize) -> PoolSpec {
        PoolSpec { present: true, s }
    }
}

/// Per-layer quantization widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerBits {
    pub weight: u8,
    pub activation: u8,
}

/// One point in the architecture grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub template: Template,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pools: Vec<PoolSpec>,
    pub conv_bits: Vec<LayerBits>,
    pub fc_weight_bits: u8,
    pub n_classes: usize,
    pub in_channels: usize,
    pub window: usize,
}

impl ArchConfig {
    /// A uniform fixed-precision config for the given template.
    pub fn fixed(
        template: Template,
        conv_channels: &[usize],
        kernel: usize,
        pools: &[PoolSpec],
        bits: u8,
        n_classes: usize,
        in_channels: usize,
        window: usize,
    ) -> ArchConfig {
        ArchConfig {
            template,
            conv_channels: conv_channels.to_vec(),
            kernel,
            pools: pools.to_vec(),
            conv_bits: conv_channels
                .iter()
                .map(|_| LayerBits { weight: bits, activation: bits })
                .collect(),
            fc_weight_bits: bits,
            n_classes,
            in_channels,
            window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.template.conv_count();
        if self.conv_channels.len() != nc || self.pools.len() != nc || self.conv_bits.len() != nc {
            return Err(Error::Config(format!(
                "template {} needs {nc} conv layers",
                self.template.as_str()
            )));
        }
        for &c in &self.conv_channels {
            if !c.is_power_of_two() || c < 2 || c > self.template.max_channels() {
                return Err(Error::Config(format!(
                    "conv channels must be a power of two in 2..={}, got {c}",
                    self.template.max_channels()
                )));
            }
        }
        if self.kernel != 7 && self.kernel != 15 {
            return Err(Error::Config(format!("kernel size must be 7 or 15, got {}", self.kernel)));
        }
        for (i, p) in self.pools.iter().enumerate() {
            match self.template {
                Template::A => {
                    if !p.present || p.s != 2 {
                        return Err(Error::Config("template A pools are fixed at size 2".into()));
                    }
                }
                Template::B => {
                    if p.present && p.s != 2 && p.s != 4 {
                        return Err(Error::Config(format!(
                            "pool {i} size must be 2 or 4, got {}",
                            p.s
                        )));
                    }
                }
            }
        }
        for b in &self.conv_bits {
            if !bits_supported(b.weight) || !bits_supported(b.activation) {
                return Err(Error::Config("unsupported bit-width in conv_bits".into()));
            }
        }
        if !bits_supported(self.fc_weight_bits) {
            return Err(Error::Config("unsupported fc weight bits".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.in_channels == 0 || self.window == 0 {
            return Err(Error::Config("input shape must be non-empty".into()));
        }
        Ok(())
    }

    /// Sequence lengths after each conv block's pooling.
    pub fn block_lengths(&self) -> Result<Vec<usize>> {
        let mut l = self.window;
        let mut out = Vec::new();
        for (i, p) in self.pools.iter().enumerate() {
            if p.present {
                if l < p.s {
                    return Err(Error::Config(format!(
                        "window length shrinks to {l} before pool {i} of size {}",
                        p.s
                    )));
                }
                l /= p.s;
            }
            out.push(l);
        }
        Ok(out)
    }

    pub fn fc_in_features(&self) -> Result<usize> {
        let lens = self.block_lengths()?;
        Ok(self.conv_channels[self.conv_channels.len() - 1] * lens[lens.len() - 1])
    }

    /// True when every quantizable tensor is 1-bit.
    pub fn is_fully_binary(&self) -> bool {
        self.fc_weight_bits == 1
            && self.conv_bits.iter().all(|b| b.weight == 1 && b.activation == 1)
    }

    /// Total weight bits of the network (the mixed-precision cost metric).
    pub fn weight_bits_total(&self) -> u64 {
        let mut total = 0u64;
        let mut c_in = self.in_channels;
        for (i, &c_out) in self.conv_channels.iter().enumerate() {
            total += (c_out * c_in * self.kernel) as u64 * self.conv_bits[i].weight as u64;
            c_in = c_out;
        }
        if let Ok(fin) = self.fc_in_features() {
            total += (fin * self.n_classes) as u64 * self.fc_weight_bits as u64;
        }
        total
    }

    /// Canonical key=value serialization (one key per line).
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("template={}\n", self.template.as_str()));
        s.push_str(&format!("input.channels={}\n", self.in_channels));
        s.push_str(&format!("input.length={}\n", self.window));
        s.push_str(&format!("classes={}\n", self.n_classes));
        s.push_str(&format!("k={}\n", self.kernel));
        for i in 0..self.conv_channels.len() {
            s.push_str(&format!("conv.{i}.c_out={}\n", self.conv_channels[i]));
            s.push_str(&format!("conv.{i}.w_bits={}\n", self.conv_bits[i].weight));
            s.push_str(&format!("conv.{i}.a_bits={}\n", self.conv_bits[i].activation));
            let p = if self.pools[i].present { self.pools[i].s } else { 0 };
            s.push_str(&format!("conv.{i}.pool={p}\n"));
        }
        s.push_str(&format!("fc.w_bits={}\n", self.fc_weight_bits));
        s
    }

    pub fn from_config_string(text: &str) -> Result<ArchConfig> {
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::Parse(format!("missing key '{k}'")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse::<usize>().map_err(|_| Error::Parse(format!("bad number for '{k}'")))
        };
        let template = Template::parse(&get("template")?)?;
        let nc = template.conv_count();
        let mut conv_channels = Vec::new();
        let mut conv_bits = Vec::new();
        let mut pools = Vec::new();
        for i in 0..nc {
            conv_channels.push(num(&format!("conv.{i}.c_out"))?);
            conv_bits.push(LayerBits {
                weight: num(&format!("conv.{i}.w_bits"))? as u8,
                activation: num(&format!("conv.{i}.a_bits"))? as u8,
            });
            let p = num(&format!("conv.{i}.pool"))?;
            pools.push(if p == 0 { PoolSpec::absent() } else { PoolSpec::of(p) });
        }
        let cfg = ArchConfig {
            template,
            conv_channels,
            kernel: num("k")?,
            pools,
            conv_bits,
            fc_weight_bits: num("fc.w_bits")? as u8,
            n_classes: num("classes")?,
            in_channels: num("input.channels")?,
            window: num("input.length")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable content digest of the configuration.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv64(self.to_config_string().as_bytes()))
    }
}

// ---------------------------------------------------------------------------
// Grid enumeration
// ---------------------------------------------------------------------------

/// Choice sets for the exhaustive hyper-parameter grid at one bit-width.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub template: Template,
    pub c_out_choices: Vec<usize>,
    pub k_choices: Vec<usize>,
    /// Pooling choices per conv position; template A ignores this (fixed s=2).
    pub pool_choices: Vec<PoolSpec>,
    /// Fixed bit-width applied to all weights and activations.
    pub bits: u8,
}

impl GridSpec {
    /// Full search space for a template at a bit-width.
    pub fn full(template: Template, bits: u8) -> GridSpec {
        let c_out_choices = match template {
            Template::A => vec![2, 4, 8, 16, 32, 64, 128],
            Template::B => vec![2, 4, 8, 16, 32],
        };
        let pool_choices = match template {
            Template::A => vec![PoolSpec::of(2)],
            Template::B => vec![PoolSpec::absent(), PoolSpec::of(2), PoolSpec::of(4)],
        };
        GridSpec { template, c_out_choices, k_choices: vec![7, 15], pool_choices, bits }
    }
}

/// Exhaustive Cartesian product over the grid, in a stable lexicographic
/// order (channels outermost, then kernel, then pooling).
pub fn enumerate_grid(
    spec: &GridSpec,
    n_classes: usize,
    in_channels: usize,
    window: usize,
) -> Result<Vec<ArchConfig>> {
    if spec.c_out_choices.is_empty() || spec.k_choices.is_empty() {
        return Err(Error::Config("empty choice set in grid".into()));
    }
    let pool_choices: Vec<PoolSpec> = match spec.template {
        Template::A => vec![PoolSpec::of(2)],
        Template::B => {
            if spec.pool_choices.is_empty() {
                return Err(Error::Config("empty pooling choice set in grid".into()));
            }
            spec.pool_choices.clone()
        }
    };
    let nc = spec.template.conv_count();
    let mut configs = Vec::new();
    let mut channels_idx = vec![0usize; nc];
    loop {
        let channels: Vec<usize> =
            channels_idx.iter().map(|&i| spec.c_out_choices[i]).collect();
        for &k in &spec.k_choices {
            let mut pool_idx = vec![0usize; nc];
            loop {
                let pools: Vec<PoolSpec> = pool_idx.iter().map(|&i| pool_choices[i]).collect();
                let cfg = ArchConfig::fixed(
                    spec.template,
                    &channels,
                    k,
                    &pools,
                    spec.bits,
                    n_classes,
                    in_channels,
                    window,
                );
                cfg.validate()?;
                configs.push(cfg);
                // Odometer over pooling positions, last position fastest.
                let mut pos = nc;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    pool_idx[pos] += 1;
                    if pool_idx[pos] < pool_choices.len() {
                        break;
                    }
                    pool_idx[pos] = 0;
                }
                if pool_idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        let mut pos = nc;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            channels_idx[pos] += 1;
            if channels_idx[pos] < spec.c_out_choices.len() {
                break;
            }
            channels_idx[pos] = 0;
        }
        if channels_idx.iter().all(|&i| i == 0) {
            break;
        }
    }
    Ok(configs)
}

// ---------------------------------------------------------------------------
// Trained model
// ---------------------------------------------------------------------------

/// Static 8-bit affine quantization of the network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputQuant {
    pub scale: f64,
    pub zero: u8,
}

impl InputQuant {
    /// Min/max calibration over a set of windows.
    pub fn calibrate(data: &Tensor) -> InputQuant {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in data.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return InputQuant { scale: 1.0 / 255.0, zero: 128 };
        }
        let scale = (hi - lo) / 255.0;
        let zero = (-lo / scale).round().clamp(0.0, 255.0) as u8;
        InputQuant { scale, zero }
    }

    pub fn encode(&self, v: f64) -> u8 {
        (v / self.scale + self.zero as f64).round().clamp(0.0, 255.0) as u8
    }

    pub fn decode(&self, code: u8) -> f64 {
        (code as f64 - self.zero as f64) * self.scale
    }
}

/// One conv block: convolution, switchable BatchNorm, optional pooling.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv1dLayer,
    pub bn: BatchNormBank,
    pub pool: MaxPool1dLayer,
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_score: f64,
    pub lr: f64,
}

/// A network with float parameters, quantizer states and BatchNorm banks.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub arch: ArchConfig,
    pub blocks: Vec<ConvBlock>,
    pub fc: FcLayer,
    pub input_quant: Option<InputQuant>,
    pub widths: Vec<f64>,
    pub history: Vec<EpochStat>,
    /// Present while a mixed-precision search is attached.
    pub nas: Option<NasState>,
}

/// Instantiates an untrained model from a configuration, deterministically
/// for a given seed.
pub fn instantiate(cfg: &ArchConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    cfg.block_lengths()?; // window vs pooling shrink check
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = SUPPORTED_WIDTHS.to_vec();
    let mut blocks = Vec::new();
    let mut c_in = cfg.in_channels;
    for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
        let fan_in = (c_in * cfg.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = c_out * c_in * cfg.kernel;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let alpha_w = w.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-3);
        let conv = Conv1dLayer {
            c_in,
            c_out,
            k: cfg.kernel,
            weights: Tensor::from_vec(&[c_out, c_in, cfg.kernel], w)?,
            bias: vec![0.0; c_out],
            w_quant: WeightQuantizer::new(cfg.conv_bits[i].weight, alpha_w)?,
            a_quant: ActQuantizer::new(cfg.conv_bits[i].activation, 8.0)?,
        };
        let bn = BatchNormBank::new(&widths, c_out, 1e-5);
        let pool = if cfg.pools[i].present {
            MaxPool1dLayer { s: cfg.pools[i].s, present: true }
        } else {
            MaxPool1dLayer::absent()
        };
        blocks.push(ConvBlock { conv, bn, pool });
        c_in = c_out;
    }
    let fin = cfg.fc_in_features()?;
    let lens = cfg.block_lengths()?;
    let bound = (6.0 / fin as f64).sqrt();
    let w: Vec<f64> = (0..cfg.n_classes * fin).map(|_| rng.gen_range(-bound..bound)).collect();
    let alpha_w = w.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-3);
    let fc = FcLayer {
        in_features: fin,
        out_features: cfg.n_classes,
        c_in: cfg.conv_channels[cfg.conv_channels.len() - 1],
        l_in: lens[lens.len() - 1],
        weights: Tensor::from_vec(&[cfg.n_classes, fin], w)?,
        bias: vec![0.0; cfg.n_classes],
        w_quant: WeightQuantizer::new(cfg.fc_weight_bits, alpha_w)?,
    };
    Ok(TrainedModel {
        arch: cfg.clone(),
        blocks,
        fc,
        input_quant: None,
        widths,
        history: Vec::new(),
        nas: None,
    })
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

/// Identifier of one learnable tensor inside a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    ConvWeights(usize),
    ConvBias(usize),
    ConvAlphaW(usize),
    ConvAlphaA(usize),
    BnGamma(usize, usize),
    BnBeta(usize, usize),
    FcWeights,
    FcBias,
    FcAlphaW,
    NasConvWLogits(usize),
    NasConvALogits(usize),
    NasConvWAlpha(usize),
    NasConvAAlpha(usize),
    NasFcWLogits,
    NasFcWAlpha,
}

impl ParamId {
    /// Weight matrices get decoupled weight decay; everything else does not.
    pub fn is_weight_tensor(&self) -> bool {
        matches!(self, ParamId::ConvWeights(_) | ParamId::FcWeights)
    }
}

/// Gradient accumulator keyed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Grads {
    map: HashMap<ParamId, Vec<f64>>,
}

impl Grads {
    pub fn new() -> Grads {
        Grads { map: HashMap::new() }
    }

    /// Adds `g` element-wise into the slot for `id`.
    pub fn add(&mut self, id: ParamId, g: &[f64]) {
        match self.map.get_mut(&id) {
            Some(slot) => {
                debug_assert_eq!(slot.len(), g.len());
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                self.map.insert(id, g.to_vec());
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.map.get(&id).map(|v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl TrainedModel {
    /// All learnable tensors in a stable order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for i in 0..self.blocks.len() {
            ids.push(ParamId::ConvWeights(i));
            ids.push(ParamId::ConvBias(i));
            for w in 0..self.blocks[i].bn.widths.len() {
                ids.push(ParamId::BnGamma(i, w));
                ids.push(ParamId::BnBeta(i, w));
            }
            if self.nas.is_some() {
                ids.push(ParamId::NasConvWLogits(i));
                ids.push(ParamId::NasConvALogits(i));
                ids.push(ParamId::NasConvWAlpha(i));
                ids.push(ParamId::NasConvAAlpha(i));
            } else {
                ids.push(ParamId::ConvAlphaW(i));
                ids.push(ParamId::ConvAlphaA(i));
            }
        }
        ids.push(ParamId::FcWeights);
        ids.push(ParamId::FcBias);
        if self.nas.is_some() {
            ids.push(ParamId::NasFcWLogits);
            ids.push(ParamId::NasFcWAlpha);
        } else {
            ids.push(ParamId::FcAlphaW);
        }
        ids
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::ConvWeights(i) => self.blocks[i].conv.weights.data(),
            ParamId::ConvBias(i) => &self.blocks[i].conv.bias,
            ParamId::ConvAlphaW(i) => {
                std::slice::from_ref(&self.blocks[i].conv.w_quant.alpha_w)
            }
            ParamId::ConvAlphaA(i) => std::slice::from_ref(&self.blocks[i].conv.a_quant.alpha),
            ParamId::BnGamma(i, w) => &self.blocks[i].bn.sets[w].gamma,
            ParamId::BnBeta(i, w) => &self.blocks[i].bn.sets[w].beta,
            ParamId::FcWeights => self.fc.weights.data(),
            ParamId::FcBias => &self.fc.bias,
            ParamId::FcAlphaW => std::slice::from_ref(&self.fc.w_quant.alpha_w),
            ParamId::NasConvWLogits(i) => &self.nas.as_ref().unwrap().conv_w[i].logits,
            ParamId::NasConvALogits(i) => &self.nas.as_ref().unwrap().conv_a[i].logits,
            ParamId::NasConvWAlpha(i) => &self.nas.as_ref().unwrap().conv_w[i].branch_alpha,
            ParamId::NasConvAAlpha(i) => &self.nas.as_ref().unwrap().conv_a[i].branch_alpha,
            ParamId::NasFcWLogits => &self.nas.as_ref().unwrap().fc_w.logits,
            ParamId::NasFcWAlpha => &self.nas.as_ref().unwrap().fc_w.branch_alpha,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::ConvWeights(i) => self.blocks[i].conv.weights.data_mut(),
            ParamId::ConvBias(i) => &mut self.blocks[i].conv.bias,
            ParamId::ConvAlphaW(i) => {
                std::slice::from_mut(&mut self.blocks[i].conv.w_quant.alpha_w)
            }
            ParamId::ConvAlphaA(i) => {
                std::slice::from_mut(&mut self.blocks[i].conv.a_quant.alpha)
            }
            ParamId::BnGamma(i, w) => &mut self.blocks[i].bn.sets[w].gamma,
            ParamId::BnBeta(i, w) => &mut self.blocks[i].bn.sets[w].beta,
            ParamId::FcWeights => self.fc.weights.data_mut(),
            ParamId::FcBias => &mut self.fc.bias,
            ParamId::FcAlphaW => std::slice::from_mut(&mut self.fc.w_quant.alpha_w),
            ParamId::NasConvWLogits(i) => &mut self.nas.as_mut().unwrap().conv_w[i].logits,
            ParamId::NasConvALogits(i) => &mut self.nas.as_mut().unwrap().conv_a[i].logits,
            ParamId::NasConvWAlpha(i) => &mut self.nas.as_mut().unwrap().conv_w[i].branch_alpha,
            ParamId::NasConvAAlpha(i) => &mut self.nas.as_mut().unwrap().conv_a[i].branch_alpha,
            ParamId::NasFcWLogits => &mut self.nas.as_mut().unwrap().fc_w.logits,
            ParamId::NasFcWAlpha => &mut self.nas.as_mut().unwrap().fc_w.branch_alpha,
        }
    }

    /// Keeps quantizer clip parameters strictly positive after an update.
    pub fn clamp_quantizer_params(&mut self) {
        for b in &mut self.blocks {
            b.conv.w_quant.alpha_w = b.conv.w_quant.alpha_w.max(1e-6);
            b.conv.a_quant.alpha = b.conv.a_quant.alpha.max(1e-4);
        }
        self.fc.w_quant.alpha_w = self.fc.w_quant.alpha_w.max(1e-6);
        if let Some(nas) = &mut self.nas {
            for site in nas
                .conv_w
                .iter_mut()
                .chain(nas.conv_a.iter_mut())
                .chain(std::iter::once(&mut nas.fc_w))
            {
                for a in &mut site.branch_alpha {
                    *a = a.max(1e-6);
                }
            }
        }
    }

    /// 64-bit fingerprint of all parameters, for determinism checks.
    pub fn param_fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for id in self.param_ids() {
            for &v in self.param(id) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        for b in &self.blocks {
            for set in &b.bn.sets {
                for v in set.running_mean.iter().chain(set.running_var.iter()) {
                    bytes.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
        }
        fnv64(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Forward / backward orchestration
// ---------------------------------------------------------------------------

/// Options for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    pub width: f64,
    pub mode: ForwardMode,
    pub train_bn: bool,
}

impl ForwardOpts {
    pub fn eval() -> ForwardOpts {
        ForwardOpts { width: 1.0, mode: ForwardMode::Quant, train_bn: false }
    }
}

/// Per-block forward cache.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    pub x_in: Tensor,
    pub w_eff: Tensor,
    pub w_mix: Option<WeightMixCache>,
    pub bn_cache: BnCache,
    pub y_bn: Tensor,
    pub a_mix: Option<ActMixCache>,
    pub pool_cache: PoolCache,
}

/// Whole-network forward cache, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    pub width: f64,
    pub mode: ForwardMode,
    pub blocks: Vec<BlockTrace>,
    pub fc_in: Tensor,
    pub fc_w_eff: Tensor,
    pub fc_w_mix: Option<WeightMixCache>,
}

fn prepare_weights(
    raw: &Tensor,
    quant: &WeightQuantizer,
    site_idx: Option<usize>,
    nas: &Option<NasState>,
    is_fc: bool,
    mode: ForwardMode,
) -> (Tensor, Option<WeightMixCache>) {
    if let Some(nas) = nas {
        let site = match site_idx {
            Some(i) if !is_fc => &nas.conv_w[i],
            _ => &nas.fc_w,
        };
        let (w, cache) = mixed_weight(site, raw.data(), mode);
        (Tensor::from_vec(raw.shape(), w).unwrap(), Some(cache))
    } else {
        let w: Vec<f64> = raw.data().iter().map(|&v| quant.apply(v, mode)).collect();
        (Tensor::from_vec(raw.shape(), w).unwrap(), None)
    }
}

/// Runs the network on a `[n, channels, length]` batch, returning raw class
/// scores `[n, classes]` and the cache needed for [`backward`].
pub fn forward(model: &mut TrainedModel, x: &Tensor, opts: ForwardOpts) -> Result<(Tensor, Trace)> {
    if x.shape().len() != 3
        || x.shape()[1] != model.arch.in_channels
        || x.shape()[2] != model.arch.window
    {
        return Err(Error::Dimension(format!(
            "input shape {:?} does not match [n, {}, {}]",
            x.shape(),
            model.arch.in_channels,
            model.arch.window
        )));
    }
    if model.nas.is_some() && opts.width != 1.0 {
        return Err(Error::Config("mixed-precision search runs at width 1.0 only".into()));
    }
    let mut h = match (opts.mode, model.input_quant) {
        (ForwardMode::Quant, Some(q)) => {
            let mut t = x.clone();
            for v in t.data_mut() {
                *v = q.decode(q.encode(*v));
            }
            t
        }
        _ => x.clone(),
    };
    let mut traces = Vec::new();
    let n = x.shape()[0];
    for (i, _) in model.arch.conv_channels.iter().enumerate() {
        let (w_eff, w_mix) = prepare_weights(
            &model.blocks[i].conv.weights,
            &model.blocks[i].conv.w_quant,
            Some(i),
            &model.nas,
            false,
            opts.mode,
        );
        let c_out_act = active_channels(model.blocks[i].conv.c_out, opts.width);
        let z = conv1d_forward(&h, &w_eff, &model.blocks[i].conv.bias, c_out_act)?;
        let bn_mode = if opts.train_bn { BnMode::Train } else { BnMode::Eval };
        let (y_bn, bn_cache) =
            batchnorm_forward(&z, &mut model.blocks[i].bn, opts.width, bn_mode)?;
        let (a, a_mix) = if let Some(nas) = &model.nas {
            let (a, cache) = mixed_act(&nas.conv_a[i], y_bn.data(), opts.mode);
            (Tensor::from_vec(y_bn.shape(), a)?, Some(cache))
        } else {
            let q = &model.blocks[i].conv.a_quant;
            let a: Vec<f64> = y_bn.data().iter().map(|&v| q.apply(v, opts.mode)).collect();
            (Tensor::from_vec(y_bn.shape(), a)?, None)
        };
        let (p, pool_cache) = maxpool_forward(&a, &model.blocks[i].pool)?;
        traces.push(BlockTrace {
            x_in: h,
            w_eff,
            w_mix,
            bn_cache,
            y_bn,
            a_mix,
            pool_cache,
        });
        h = p;
    }
    let f_act = h.shape()[1] * h.shape()[2];
    let fc_in = h.reshape(&[n, f_act])?;
    let (fc_w_eff, fc_w_mix) =
        prepare_weights(&model.fc.weights, &model.fc.w_quant, None, &model.nas, true, opts.mode);
    let scores = fc_forward(&fc_in, &fc_w_eff, &model.fc.bias)?;
    Ok((
        scores,
        Trace { width: opts.width, mode: opts.mode, blocks: traces, fc_in, fc_w_eff, fc_w_mix },
    ))
}

fn weight_stage_backward(
    grads: &mut Grads,
    g_eff: &Tensor,
    raw: &Tensor,
    quant: &WeightQuantizer,
    mix: &Option<WeightMixCache>,
    nas: &Option<NasState>,
    ids: (ParamId, ParamId, ParamId, ParamId),
    mode: ForwardMode,
) {
    let (id_w, id_alpha, id_logits, id_branch_alpha) = ids;
    if let (Some(cache), Some(nas_state)) = (mix, nas) {
        let site = match id_w {
            ParamId::ConvWeights(i) => &nas_state.conv_w[i],
            _ => &nas_state.fc_w,
        };
        let (gw, galpha, glogits) = mixed_weight_backward(site, raw.data(), cache, g_eff.data(), mode);
        grads.add(id_w, &gw);
        grads.add(id_branch_alpha, &galpha);
        grads.add(id_logits, &glogits);
    } else {
        let mut gw = vec![0.0; raw.len()];
        let mut galpha = 0.0;
        for (i, (&g, &w)) in g_eff.data().iter().zip(raw.data()).enumerate() {
            gw[i] = g * quant.grad_w(w, mode);
            galpha += g * quant.grad_alpha(w, mode);
        }
        grads.add(id_w, &gw);
        grads.add(id_alpha, &[galpha]);
    }
}

/// Backpropagates `grad_scores` through the cached forward pass, accumulating
/// parameter gradients into `grads`.
pub fn backward(
    model: &TrainedModel,
    trace: &Trace,
    grad_scores: &Tensor,
    grads: &mut Grads,
) -> Result<()> {
    let (gx_flat, g_fc_w_eff, g_fc_b) = fc_backward(&trace.fc_in, &trace.fc_w_eff, grad_scores);
    weight_stage_backward(
        grads,
        &g_fc_w_eff,
        &model.fc.weights,
        &model.fc.w_quant,
        &trace.fc_w_mix,
        &model.nas,
        (ParamId::FcWeights, ParamId::FcAlphaW, ParamId::NasFcWLogits, ParamId::NasFcWAlpha),
        trace.mode,
    );
    grads.add(ParamId::FcBias, &g_fc_b);

    let last = trace.blocks.len() - 1;
    let pooled_shape = {
        let bt = &trace.blocks[last];
        if bt.pool_cache.argmax.is_empty() {
            bt.y_bn.shape().to_vec()
        } else {
            let l = bt.pool_cache.in_shape[2] / model.blocks[last].pool.s;
            vec![bt.y_bn.shape()[0], bt.y_bn.shape()[1], l]
        }
    };
    let mut g = gx_flat.reshape(&pooled_shape)?;

    let width = trace.width;
    for i in (0..trace.blocks.len()).rev() {
        let bt = &trace.blocks[i];
        let block = &model.blocks[i];
        // Pool.
        let g_act = maxpool_backward(&g, &bt.pool_cache);
        // Activation stage.
        let mut g_y = Tensor::zeros(bt.y_bn.shape());
        if let (Some(cache), Some(nas_state)) = (&bt.a_mix, &model.nas) {
            let (gy, galpha, glogits) =
                mixed_act_backward(&nas_state.conv_a[i], bt.y_bn.data(), cache, g_act.data(), trace.mode);
            g_y.data_mut().copy_from_slice(&gy);
            grads.add(ParamId::NasConvAAlpha(i), &galpha);
            grads.add(ParamId::NasConvALogits(i), &glogits);
        } else {
            let q = &block.conv.a_quant;
            let mut galpha = 0.0;
            for (j, (&ga, &y)) in g_act.data().iter().zip(bt.y_bn.data()).enumerate() {
                g_y.data_mut()[j] = ga * q.grad_x(y, trace.mode);
                galpha += ga * q.grad_alpha(y, trace.mode);
            }
            grads.add(ParamId::ConvAlphaA(i), &[galpha]);
        }
        // BatchNorm.
        let wi = block.bn.index_of(width)?;
        let (g_z, g_gamma, g_beta) =
            batchnorm_backward(&g_y, &bt.bn_cache, &block.bn.sets[wi].gamma);
        grads.add(ParamId::BnGamma(i, wi), &g_gamma);
        grads.add(ParamId::BnBeta(i, wi), &g_beta);
        // Conv.
        let (g_x, g_w_eff, g_b) = conv1d_backward(&bt.x_in, &bt.w_eff, &g_z)?;
        weight_stage_backward(
            grads,
            &g_w_eff,
            &block.conv.weights,
            &block.conv.w_quant,
            &bt.w_mix,
            &model.nas,
            (
                ParamId::ConvWeights(i),
                ParamId::ConvAlphaW(i),
                ParamId::NasConvWLogits(i),
                ParamId::NasConvWAlpha(i),
            ),
            trace.mode,
        );
        grads.add(ParamId::ConvBias(i), &g_b);
        g = g_x;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(bits: u8) -> ArchConfig {
        ArchConfig::fixed(
            Template::B,
            &[4, 8],
            7,
            &[PoolSpec::of(2), PoolSpec::of(2)],
            bits,
            3,
            2,
            32,
        )
    }

    #[test]
    fn grid_count_template_a() {
        let spec = GridSpec::full(Template::A, 8);
        let configs = enumerate_grid(&spec, 6, 3, 128).unwrap();
        assert_eq!(configs.len(), 7 * 7 * 7 * 2);
    }

    #[test]
    fn grid_count_template_b() {
        let spec = GridSpec::full(Template::B, 8);
        let configs = enumerate_grid(&spec, 2, 3, 32).unwrap();
        assert_eq!(configs.len(), 5 * 5 * 2 * 3 * 3);
    }

    #[test]
    fn grid_single_choice() {
        let spec = GridSpec {
            template: Template::B,
            c_out_choices: vec![4],
            k_choices: vec![7],
            pool_choices: vec![PoolSpec::of(2)],
            bits: 8,
        };
        let configs = enumerate_grid(&spec, 2, 3, 32).unwrap();
        assert_eq!(configs.len(), 1);
    }

    #[test]
    fn grid_empty_choice_is_error() {
        let mut spec = GridSpec::full(Template::B, 8);
        spec.k_choices.clear();
        assert!(enumerate_grid(&spec, 2, 3, 32).is_err());
    }

    #[test]
    fn grid_is_duplicate_free_and_stable() {
        let spec = GridSpec::full(Template::B, 4);
        let a = enumerate_grid(&spec, 2, 3, 32).unwrap();
        let b = enumerate_grid(&spec, 2, 3, 32).unwrap();
        assert_eq!(a, b);
        let mut digests: Vec<String> = a.iter().map(|c| c.digest()).collect();
        let n = digests.len();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), n);
    }

    #[test]
    fn every_enumerated_config_instantiates() {
        let spec = GridSpec::full(Template::B, 8);
        for cfg in enumerate_grid(&spec, 2, 3, 32).unwrap() {
            instantiate(&cfg, 0).unwrap();
        }
    }

    #[test]
    fn instantiate_is_deterministic() {
        let cfg = small_cfg(8);
        let a = instantiate(&cfg, 42).unwrap();
        let b = instantiate(&cfg, 42).unwrap();
        assert_eq!(a.param_fingerprint(), b.param_fingerprint());
        let c = instantiate(&cfg, 43).unwrap();
        assert_ne!(a.param_fingerprint(), c.param_fingerprint());
    }

    #[test]
    fn fc_shape_follows_classes_and_pooling() {
        let cfg = small_cfg(8);
        let m = instantiate(&cfg, 0).unwrap();
        assert_eq!(m.fc.out_features, 3);
        // window 32, two pools of 2 -> length 8; fc_in = 8 * 8.
        assert_eq!(m.fc.in_features, 8 * 8);
        // Template A arithmetic: window 96, 3 pools of 2 -> 12 * c_out3.
        let cfg_a = ArchConfig::fixed(
            Template::A,
            &[4, 8, 16],
            7,
            &[PoolSpec::of(2), PoolSpec::of(2), PoolSpec::of(2)],
            8,
            5,
            3,
            96,
        );
        assert_eq!(cfg_a.fc_in_features().unwrap(), 16 * 12);
    }

    #[test]
    fn instantiate_rejects_over_pooled_window() {
        let cfg = ArchConfig::fixed(
            Template::B,
            &[4, 4],
            7,
            &[PoolSpec::of(4), PoolSpec::of(4)],
            8,
            2,
            3,
            6,
        );
        assert!(instantiate(&cfg, 0).is_err());
    }

    #[test]
    fn config_string_roundtrip() {
        let cfg = small_cfg(4);
        let text = cfg.to_config_string();
        let back = ArchConfig::from_config_string(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn forward_shapes_and_quant_range() {
        let cfg = small_cfg(4);
        let mut m = instantiate(&cfg, 1).unwrap();
        m.input_quant = Some(InputQuant { scale: 1.0 / 64.0, zero: 128 });
        let x = Tensor::from_vec(
            &[2, 2, 32],
            (0..128).map(|i| ((i as f64) * 0.37).sin()).collect(),
        )
        .unwrap();
        let (scores, trace) = forward(&mut m, &x, ForwardOpts::eval()).unwrap();
        assert_eq!(scores.shape(), &[2, 3]);
        // Quantized activations stay inside [0, alpha] for bits >= 2
        // (ReLU subsumed by the PACT clip).
        for (bt, block) in trace.blocks.iter().zip(&m.blocks) {
            let q = &block.conv.a_quant;
            for &y in bt.y_bn.data() {
                let a = q.apply(y, ForwardMode::Quant);
                assert!(a >= 0.0 && a <= q.alpha);
            }
        }
    }

    #[test]
    fn width_slice_matches_masked_full_run() {
        // Spec invariant: width w equals width 1.0 with inactive input
        // channels zeroed, given the width-w BN parameters.
        let cfg = small_cfg(8);
        let mut m = instantiate(&cfg, 3).unwrap();
        m.input_quant = Some(InputQuant { scale: 1.0 / 64.0, zero: 128 });
        // Make the width-0.5 BN stats non-trivial and mirror them into the
        // width-1.0 bank so both paths normalize identically on active
        // channels.
        for b in &mut m.blocks {
            let half = b.bn.index_of(0.5).unwrap();
            let full = b.bn.index_of(1.0).unwrap();
            let n_half = b.bn.sets[half].gamma.len();
            for c in 0..n_half {
                b.bn.sets[half].gamma[c] = 1.0 + 0.1 * c as f64;
                b.bn.sets[half].running_mean[c] = 0.05 * c as f64;
                b.bn.sets[full].gamma[c] = 1.0 + 0.1 * c as f64;
                b.bn.sets[full].running_mean[c] = 0.05 * c as f64;
            }
        }
        let x = Tensor::from_vec(
            &[1, 2, 32],
            (0..64).map(|i| ((i as f64) * 0.21).cos()).collect(),
        )
        .unwrap();
        let opts_half =
            ForwardOpts { width: 0.5, mode: ForwardMode::Quant, train_bn: false };
        let (scores_half, _) = forward(&mut m, &x, opts_half).unwrap();
        // Full-width run with the weights of inactive input channels zeroed
        // reproduces the same scores when the FC columns of inactive
        // channels are also zeroed.
        let mut masked = m.clone();
        for i in 0..masked.blocks.len() {
            let c_out = masked.blocks[i].conv.c_out;
            let keep_out = active_channels(c_out, 0.5);
            let keep_in = if i == 0 {
                masked.blocks[i].conv.c_in
            } else {
                active_channels(masked.blocks[i].conv.c_in, 0.5)
            };
            let (ci, k) = (masked.blocks[i].conv.c_in, masked.blocks[i].conv.k);
            let w = masked.blocks[i].conv.weights.data_mut();
            for o in 0..c_out {
                for c in 0..ci {
                    for j in 0..k {
                        if o >= keep_out || c >= keep_in {
                            w[(o * ci + c) * k + j] = 0.0;
                        }
                    }
                }
            }
        }
        let keep_c = active_channels(masked.fc.c_in, 0.5);
        let (cfc, lfc, fin) = (masked.fc.c_in, masked.fc.l_in, masked.fc.in_features);
        let wfc = masked.fc.weights.data_mut();
        for o in 0..3 {
            for c in keep_c..cfc {
                for t in 0..lfc {
                    wfc[o * fin + c * lfc + t] = 0.0;
                }
            }
        }
        // Masked full run must use the width-0.5 statistics on active
        // channels: they were mirrored into the width-1.0 bank above, and
        // inactive channels contribute nothing after masking.
        let (scores_full, _) = forward(&mut masked, &x, ForwardOpts::eval()).unwrap();
        for (a, b) in scores_half.data().iter().zip(scores_full.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
