//! Differentiable mixed-precision bit-width search.
//!
//! Every quantizable tensor gets a search site holding four trainable logits,
//! one per candidate bit-width {1, 2, 4, 8}. The forward pass runs all four
//! fake-quantized branches and combines them with the softmax of the logits;
//! a size-regularized loss trades task performance against the expected
//! number of bits, and the final assignment is the argmax of each site.

use crate::error::{Error, Result};
use crate::model::{instantiate, ArchConfig, LayerBits, TrainedModel};
use crate::quantize::{ActQuantizer, ForwardMode, WeightQuantizer};
use crate::train::{train_fixed, train_with_cost, TrainProtocol};
use crate::data::WindowedDataset;

/// Candidate bit-widths of every search site, ascending.
pub const BRANCH_BITS: [u8; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteKind {
    Weight,
    Activation,
}

/// One searchable tensor: its logits, per-branch clip parameters, and the
/// element count used by the cost term.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPrecisionSite {
    pub kind: SiteKind,
    pub logits: Vec<f64>,
    /// Clip parameter per branch (`alpha_w` for weights, `alpha` for
    /// activations), learned independently.
    pub branch_alpha: Vec<f64>,
    pub element_count: usize,
}

impl MixedPrecisionSite {
    pub fn new(kind: SiteKind, alpha: f64, element_count: usize) -> MixedPrecisionSite {
        MixedPrecisionSite {
            kind,
            logits: vec![0.0; 4],
            branch_alpha: vec![alpha; 4],
            element_count,
        }
    }

    /// Weight site whose binary branch starts at the least-squares-optimal
    /// binary scale (mean |w|) instead of the clip range of the multi-bit
    /// branches.
    pub fn for_weights(weights: &[f64], alpha: f64) -> MixedPrecisionSite {
        let mean_abs = if weights.is_empty() {
            alpha
        } else {
            weights.iter().map(|w| w.abs()).sum::<f64>() / weights.len() as f64
        };
        let mut site = MixedPrecisionSite::new(SiteKind::Weight, alpha, weights.len());
        site.branch_alpha[0] = mean_abs.max(1e-6);
        site
    }

    pub fn probs(&self) -> [f64; 4] {
        softmax4(&self.logits)
    }
}

/// Search state attached to a model: one weight and one activation site per
/// conv layer, plus the FC weight site. The first-layer input stays at a
/// fixed 8-bit quantization and is not searched.
#[derive(Debug, Clone, PartialEq)]
pub struct NasState {
    pub conv_w: Vec<MixedPrecisionSite>,
    pub conv_a: Vec<MixedPrecisionSite>,
    pub fc_w: MixedPrecisionSite,
}

impl NasState {
    /// Builds sites for a model, reusing its current clip parameters as the
    /// per-branch initial values.
    pub fn for_model(model: &TrainedModel) -> Result<NasState> {
        let mut conv_w = Vec::new();
        let mut conv_a = Vec::new();
        let mut l = model.arch.window;
        for (i, block) in model.blocks.iter().enumerate() {
            conv_w.push(MixedPrecisionSite::for_weights(
                block.conv.weights.data(),
                block.conv.w_quant.alpha_w,
            ));
            // Feature map size at batch 1, before pooling.
            conv_a.push(MixedPrecisionSite::new(
                SiteKind::Activation,
                block.conv.a_quant.alpha,
                block.conv.c_out * l,
            ));
            if model.arch.pools[i].present {
                l /= model.arch.pools[i].s;
            }
        }
        let fc_w =
            MixedPrecisionSite::for_weights(model.fc.weights.data(), model.fc.w_quant.alpha_w);
        Ok(NasState { conv_w, conv_a, fc_w })
    }

    pub fn sites(&self) -> impl Iterator<Item = &MixedPrecisionSite> {
        self.conv_w.iter().chain(self.conv_a.iter()).chain(std::iter::once(&self.fc_w))
    }
}

/// Regularization settings for the search.
#[derive(Debug, Clone, PartialEq)]
pub struct NasConfig {
    /// Sweep values; the cost metric is total model bits.
    pub lambda_sweep: Vec<f64>,
}

impl Default for NasConfig {
    fn default() -> Self {
        // 10 linearly spaced values over [1e-4, 1e-3].
        let n = 10;
        let (lo, hi) = (1e-4, 1e-3);
        let sweep = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        NasConfig { lambda_sweep: sweep }
    }
}

pub fn softmax4(logits: &[f64]) -> [f64; 4] {
    let mx = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = [0.0; 4];
    let mut sum = 0.0;
    for i in 0..4 {
        e[i] = (logits[i] - mx).exp();
        sum += e[i];
    }
    for v in &mut e {
        *v /= sum;
    }
    e
}

fn softmax_backward(probs: &[f64; 4], g_probs: &[f64; 4]) -> [f64; 4] {
    let dot: f64 = probs.iter().zip(g_probs).map(|(p, g)| p * g).sum();
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = probs[i] * (g_probs[i] - dot);
    }
    g
}

// ---------------------------------------------------------------------------
// Branch mixing
// ---------------------------------------------------------------------------

/// Per-site forward cache: branch outputs and softmax probabilities.
#[derive(Debug, Clone)]
pub struct WeightMixCache {
    pub probs: [f64; 4],
    pub branches: Vec<Vec<f64>>,
}

pub type ActMixCache = WeightMixCache;

/// Softmax-weighted combination of the four fake-quantized weight branches.
pub fn mixed_weight(site: &MixedPrecisionSite, w: &[f64], mode: ForwardMode) -> (Vec<f64>, WeightMixCache) {
    let probs = site.probs();
    let mut branches = Vec::with_capacity(4);
    for (bi, &bits) in BRANCH_BITS.iter().enumerate() {
        let q = WeightQuantizer { bits, alpha_w: site.branch_alpha[bi] };
        branches.push(w.iter().map(|&v| q.apply(v, mode)).collect::<Vec<f64>>());
    }
    let mut out = vec![0.0; w.len()];
    for bi in 0..4 {
        let p = probs[bi];
        for (o, b) in out.iter_mut().zip(&branches[bi]) {
            *o += p * b;
        }
    }
    (out, WeightMixCache { probs, branches })
}

/// Gradients of [`mixed_weight`]: `(grad_w, grad_branch_alpha, grad_logits)`.
pub fn mixed_weight_backward(
    site: &MixedPrecisionSite,
    w: &[f64],
    cache: &WeightMixCache,
    g_eff: &[f64],
    mode: ForwardMode,
) -> (Vec<f64>, [f64; 4], [f64; 4]) {
    let mut g_w = vec![0.0; w.len()];
    let mut g_alpha = [0.0; 4];
    let mut g_probs = [0.0; 4];
    for (bi, &bits) in BRANCH_BITS.iter().enumerate() {
        let q = WeightQuantizer { bits, alpha_w: site.branch_alpha[bi] };
        let p = cache.probs[bi];
        for (j, (&g, &wv)) in g_eff.iter().zip(w).enumerate() {
            g_w[j] += p * q.grad_w(wv, mode) * g;
            g_alpha[bi] += p * q.grad_alpha(wv, mode) * g;
            g_probs[bi] += g * cache.branches[bi][j];
        }
    }
    (g_w, g_alpha, softmax_backward(&cache.probs, &g_probs))
}

/// Softmax-weighted combination of the four fake-quantized activation
/// branches (each branch clips at its own alpha, subsuming ReLU).
pub fn mixed_act(site: &MixedPrecisionSite, y: &[f64], mode: ForwardMode) -> (Vec<f64>, ActMixCache) {
    let probs = site.probs();
    let mut branches = Vec::with_capacity(4);
    for (bi, &bits) in BRANCH_BITS.iter().enumerate() {
        let q = ActQuantizer { bits, alpha: site.branch_alpha[bi] };
        branches.push(y.iter().map(|&v| q.apply(v, mode)).collect::<Vec<f64>>());
    }
    let mut out = vec![0.0; y.len()];
    for bi in 0..4 {
        let p = probs[bi];
        for (o, b) in out.iter_mut().zip(&branches[bi]) {
            *o += p * b;
        }
    }
    (out, WeightMixCache { probs, branches })
}

/// Gradients of [`mixed_act`]: `(grad_y, grad_branch_alpha, grad_logits)`.
pub fn mixed_act_backward(
    site: &MixedPrecisionSite,
    y: &[f64],
    cache: &ActMixCache,
    g_eff: &[f64],
    mode: ForwardMode,
) -> (Vec<f64>, [f64; 4], [f64; 4]) {
    let mut g_y = vec![0.0; y.len()];
    let mut g_alpha = [0.0; 4];
    let mut g_probs = [0.0; 4];
    for (bi, &bits) in BRANCH_BITS.iter().enumerate() {
        let q = ActQuantizer { bits, alpha: site.branch_alpha[bi] };
        let p = cache.probs[bi];
        for (j, (&g, &yv)) in g_eff.iter().zip(y).enumerate() {
            g_y[j] += p * q.grad_x(yv, mode) * g;
            g_alpha[bi] += p * q.grad_alpha(yv, mode) * g;
            g_probs[bi] += g * cache.branches[bi][j];
        }
    }
    (g_y, g_alpha, softmax_backward(&cache.probs, &g_probs))
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Expected storage bits of one site:
/// `(1*p1 + 2*p2 + 4*p4 + 8*p8) * element_count`.
pub fn expected_bits(site: &MixedPrecisionSite) -> f64 {
    let p = site.probs();
    let mean_bits: f64 = BRANCH_BITS.iter().zip(&p).map(|(&b, &pi)| b as f64 * pi).sum();
    mean_bits * site.element_count as f64
}

/// Gradient of [`expected_bits`] with respect to the site's logits.
pub fn expected_bits_grad_logits(site: &MixedPrecisionSite) -> [f64; 4] {
    let p = site.probs();
    let mean_bits: f64 = BRANCH_BITS.iter().zip(&p).map(|(&b, &pi)| b as f64 * pi).sum();
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = site.element_count as f64 * p[i] * (BRANCH_BITS[i] as f64 - mean_bits);
    }
    g
}

/// Total cost term over all sites of a search state.
pub fn total_expected_bits(nas: &NasState) -> f64 {
    nas.sites().map(expected_bits).sum()
}

/// The regularized search loss `L = L_task + lambda * sum(expected_bits)`.
pub fn nas_loss(task_loss: f64, nas: &NasState, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    Ok(task_loss + lambda * total_expected_bits(nas))
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Bit-width of the dominant branch; exact ties break toward fewer bits.
pub fn extract_site_bits(site: &MixedPrecisionSite) -> u8 {
    let p = site.probs();
    let mut best = 0;
    for i in 1..4 {
        if p[i] > p[best] {
            best = i;
        }
    }
    BRANCH_BITS[best]
}

/// Fixed-precision configuration from a converged search. Pooling layers
/// carry no parameters and implicitly keep the precision of the preceding
/// convolution's output.
pub fn extract_fixed(model: &TrainedModel) -> Result<ArchConfig> {
    let nas = model
        .nas
        .as_ref()
        .ok_or_else(|| Error::State("model has no attached search state".into()))?;
    let mut arch = model.arch.clone();
    for i in 0..arch.conv_bits.len() {
        arch.conv_bits[i] = LayerBits {
            weight: extract_site_bits(&nas.conv_w[i]),
            activation: extract_site_bits(&nas.conv_a[i]),
        };
    }
    arch.fc_weight_bits = extract_site_bits(&nas.fc_w);
    arch.validate()?;
    Ok(arch)
}

/// Detaches the search state, freezing each tensor at its extracted
/// precision with the winning branch's clip parameter.
pub fn detach_to_fixed(model: &TrainedModel, arch: &ArchConfig) -> Result<TrainedModel> {
    let nas = model
        .nas
        .as_ref()
        .ok_or_else(|| Error::State("model has no attached search state".into()))?;
    let mut fixed = model.clone();
    for (i, block) in fixed.blocks.iter_mut().enumerate() {
        let wb = arch.conv_bits[i].weight;
        let ab = arch.conv_bits[i].activation;
        block.conv.w_quant = WeightQuantizer::new(
            wb,
            nas.conv_w[i].branch_alpha[crate::quantize::bits_index(wb)],
        )?;
        block.conv.a_quant = ActQuantizer::new(
            ab,
            nas.conv_a[i].branch_alpha[crate::quantize::bits_index(ab)],
        )?;
    }
    fixed.fc.w_quant = WeightQuantizer::new(
        arch.fc_weight_bits,
        nas.fc_w.branch_alpha[crate::quantize::bits_index(arch.fc_weight_bits)],
    )?;
    fixed.arch = arch.clone();
    fixed.nas = None;
    fixed.history.clear();
    Ok(fixed)
}

// ---------------------------------------------------------------------------
// Search driver
// ---------------------------------------------------------------------------

/// One record of the lambda sweep.
#[derive(Debug, Clone)]
pub struct NasResult {
    pub lambda: f64,
    pub arch: ArchConfig,
    pub model: TrainedModel,
}

/// Runs the search over the lambda sweep. For each lambda the base
/// architecture is re-instantiated with the same seed, trained with the
/// regularized loss, extracted, and fine-tuned at the extracted precision
/// starting from the searched weights.
pub fn nas_search(
    base_arch: &ArchConfig,
    data: &WindowedDataset,
    protocol: &TrainProtocol,
    nas_cfg: &NasConfig,
) -> Result<Vec<NasResult>> {
    if nas_cfg.lambda_sweep.is_empty() {
        return Err(Error::Config("lambda sweep must be non-empty".into()));
    }
    let mut results = Vec::new();
    for &lambda in &nas_cfg.lambda_sweep {
        let mut model = instantiate(base_arch, protocol.seed)?;
        model.nas = Some(NasState::for_model(&model)?);
        let searched = train_with_cost(model, data, protocol, Some(lambda))?;
        let arch = extract_fixed(&searched)?;
        let fixed = detach_to_fixed(&searched, &arch)?;
        let tuned = train_fixed(fixed, data, protocol)?;
        results.push(NasResult { lambda, arch, model: tuned });
    }
    Ok(results)
}
