//! Float layer math: Conv1D, switchable BatchNorm, MaxPool1D, fully-connected,
//! plus BN folding for deployment.
//!
//! Layers operate on `[batch, channels, length]` tensors. Convolutions are
//! same-padded (zero) cross-correlations; pooling is non-overlapping with
//! trailing remainder elements dropped. Channel-width slicing always keeps
//! the first `ceil(channels * width)` channels.

use crate::error::{Error, Result};
use crate::quantize::{ActQuantizer, WeightQuantizer};
use crate::tensor::Tensor;

/// Active channel count at a width fraction.
pub fn active_channels(channels: usize, width: f64) -> usize {
    ((channels as f64) * width).ceil() as usize
}

/// 1D convolution layer with same padding and per-tensor quantizers.
#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    /// Weights, shape `[c_out, c_in, k]`.
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub w_quant: WeightQuantizer,
    /// Quantizer for this layer's output activations.
    pub a_quant: ActQuantizer,
}

impl Conv1dLayer {
    pub fn validate(&self) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.k)));
        }
        if self.c_out == 0 || self.c_in == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.weights.shape() != [self.c_out, self.c_in, self.k] {
            return Err(Error::Dimension(format!(
                "conv weights shape {:?} does not match [{}, {}, {}]",
                self.weights.shape(),
                self.c_out,
                self.c_in,
                self.k
            )));
        }
        if self.bias.len() != self.c_out {
            return Err(Error::Dimension("conv bias length mismatch".into()));
        }
        Ok(())
    }
}

/// Per-width private BatchNorm parameters (switchable BatchNorm).
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    fn identity(n: usize) -> BnParams {
        BnParams {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }
}

/// A bank of BatchNorm parameter sets, one per supported width.
///
/// Each set covers only the channels active at its width.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormBank {
    pub widths: Vec<f64>,
    pub sets: Vec<BnParams>,
    pub epsilon: f64,
}

impl BatchNormBank {
    pub fn new(widths: &[f64], channels: usize, epsilon: f64) -> BatchNormBank {
        let sets = widths
            .iter()
            .map(|&w| BnParams::identity(active_channels(channels, w)))
            .collect();
        BatchNormBank { widths: widths.to_vec(), sets, epsilon }
    }

    pub fn index_of(&self, width: f64) -> Result<usize> {
        self.widths
            .iter()
            .position(|&w| w == width)
            .ok_or_else(|| Error::Config(format!("width {width} not in BatchNorm bank")))
    }
}

/// Optional non-overlapping max pooling; stride equals pool size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1dLayer {
    pub s: usize,
    pub present: bool,
}

impl MaxPool1dLayer {
    pub fn absent() -> Self {
        MaxPool1dLayer { s: 1, present: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.present && !(self.s == 2 || self.s == 4) {
            return Err(Error::Config(format!("pool size must be 2 or 4, got {}", self.s)));
        }
        Ok(())
    }
}

/// Final fully-connected layer producing class scores.
#[derive(Debug, Clone)]
pub struct FcLayer {
    pub in_features: usize,
    pub out_features: usize,
    /// Channel/length factorization of the input (`in_features = c_in * l_in`),
    /// needed so width slicing can keep whole channels.
    pub c_in: usize,
    pub l_in: usize,
    /// Weights, shape `[out_features, in_features]`, input features
    /// channel-major.
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub w_quant: WeightQuantizer,
}

// ---------------------------------------------------------------------------
// Conv1D
// ---------------------------------------------------------------------------

/// Same-padded cross-correlation over the first `c_out_act` filters.
///
/// `x` is `[n, c_in_act, l]` where `c_in_act <= c_in` selects the active
/// input channels; each filter reads only those.
pub fn conv1d_forward(x: &Tensor, weights: &Tensor, bias: &[f64], c_out_act: usize) -> Result<Tensor> {
    let (n, c_in_act, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, c_in, k) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if c_in_act > c_in {
        return Err(Error::Dimension(format!(
            "input has {c_in_act} channels but conv accepts at most {c_in}"
        )));
    }
    if c_out_act > c_out {
        return Err(Error::Dimension(format!(
            "requested {c_out_act} output channels but conv has {c_out}"
        )));
    }
    if l == 0 {
        return Err(Error::Dimension("conv input length must be >= 1".into()));
    }
    let pad = (k - 1) / 2;
    let mut y = Tensor::zeros(&[n, c_out_act, l]);
    for ni in 0..n {
        for o in 0..c_out_act {
            let b = bias[o];
            for t in 0..l {
                let mut acc = b;
                for i in 0..c_in_act {
                    for j in 0..k {
                        let src = t + j;
                        if src >= pad && src - pad < l {
                            acc += weights.at3(o, i, j) * x.at3(ni, i, src - pad);
                        }
                    }
                }
                let idx = y.idx3(ni, o, t);
                y.data_mut()[idx] = acc;
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv1d_forward`]. Returns `(grad_x, grad_w, grad_b)` with
/// `grad_w`/`grad_b` full-sized and zero outside the active region.
pub fn conv1d_backward(
    x: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (n, c_in_act, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, _c_in, k) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    let c_out_act = grad_out.shape()[1];
    if grad_out.shape()[0] != n || grad_out.shape()[2] != l || c_out_act > c_out {
        return Err(Error::Dimension("conv grad_out shape mismatch".into()));
    }
    let pad = (k - 1) / 2;
    let mut gx = Tensor::zeros(&[n, c_in_act, l]);
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = vec![0.0; c_out];
    for ni in 0..n {
        for o in 0..c_out_act {
            for t in 0..l {
                let go = grad_out.at3(ni, o, t);
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                for i in 0..c_in_act {
                    for j in 0..k {
                        let src = t + j;
                        if src >= pad && src - pad < l {
                            let xi = x.at3(ni, i, src - pad);
                            let wi = gw.idx3(o, i, j);
                            gw.data_mut()[wi] += go * xi;
                            let gi = gx.idx3(ni, i, src - pad);
                            gx.data_mut()[gi] += go * weights.at3(o, i, j);
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Cache from a BatchNorm forward, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub invstd: Vec<f64>,
    pub mode: BnMode,
}

const BN_MOMENTUM: f64 = 0.1;

/// Normalizes `[n, c_act, l]` using the parameter set of `width`.
///
/// Train mode normalizes by batch statistics and updates only that width's
/// running statistics; eval mode uses the stored running statistics.
pub fn batchnorm_forward(
    x: &Tensor,
    bank: &mut BatchNormBank,
    width: f64,
    mode: BnMode,
) -> Result<(Tensor, BnCache)> {
    let wi = bank.index_of(width)?;
    let eps = bank.epsilon;
    let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let set = &mut bank.sets[wi];
    if c != set.gamma.len() {
        return Err(Error::Dimension(format!(
            "batchnorm set at width {width} covers {} channels, input has {c}",
            set.gamma.len()
        )));
    }
    let m = (n * l) as f64;
    let mut y = Tensor::zeros(&[n, c, l]);
    let mut xhat = Tensor::zeros(&[n, c, l]);
    let mut invstd = vec![0.0; c];
    for ch in 0..c {
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for ni in 0..n {
                    for t in 0..l {
                        let v = x.at3(ni, ch, t);
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                set.running_mean[ch] = (1.0 - BN_MOMENTUM) * set.running_mean[ch] + BN_MOMENTUM * mean;
                set.running_var[ch] = (1.0 - BN_MOMENTUM) * set.running_var[ch] + BN_MOMENTUM * unbiased;
                (mean, var)
            }
            BnMode::Eval => (set.running_mean[ch], set.running_var[ch]),
        };
        if var + eps <= 0.0 {
            return Err(Error::Numeric(format!(
                "batchnorm variance + epsilon not positive on channel {ch}"
            )));
        }
        let istd = 1.0 / (var + eps).sqrt();
        invstd[ch] = istd;
        let (g, b) = (set.gamma[ch], set.beta[ch]);
        for ni in 0..n {
            for t in 0..l {
                let h = (x.at3(ni, ch, t) - mean) * istd;
                let xi = xhat.idx3(ni, ch, t);
                xhat.data_mut()[xi] = h;
                let yi = y.idx3(ni, ch, t);
                y.data_mut()[yi] = g * h + b;
            }
        }
    }
    Ok((y, BnCache { xhat, invstd, mode }))
}

/// Gradients of [`batchnorm_forward`]: `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BnCache,
    gamma: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (n, c, l) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    let m = (n * l) as f64;
    let mut gx = Tensor::zeros(&[n, c, l]);
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let mut sum_go = 0.0;
        let mut sum_goxh = 0.0;
        for ni in 0..n {
            for t in 0..l {
                let go = grad_out.at3(ni, ch, t);
                sum_go += go;
                sum_goxh += go * cache.xhat.at3(ni, ch, t);
            }
        }
        gb[ch] = sum_go;
        gg[ch] = sum_goxh;
        let scale = gamma[ch] * cache.invstd[ch];
        for ni in 0..n {
            for t in 0..l {
                let go = grad_out.at3(ni, ch, t);
                let v = match cache.mode {
                    BnMode::Train => {
                        scale / m * (m * go - sum_go - cache.xhat.at3(ni, ch, t) * sum_goxh)
                    }
                    BnMode::Eval => scale * go,
                };
                let gi = gx.idx3(ni, ch, t);
                gx.data_mut()[gi] = v;
            }
        }
    }
    (gx, gg, gb)
}

/// Folds eval-mode BatchNorm into a per-channel affine `y = scale*z + bias`.
pub fn fold_bn(bank: &BatchNormBank, width: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let wi = bank.index_of(width)?;
    let set = &bank.sets[wi];
    let mut scale = Vec::with_capacity(set.gamma.len());
    let mut bias = Vec::with_capacity(set.gamma.len());
    for ch in 0..set.gamma.len() {
        let denom = set.running_var[ch] + bank.epsilon;
        if denom <= 0.0 {
            return Err(Error::Numeric(format!(
                "variance + epsilon not positive on channel {ch}"
            )));
        }
        let istd = 1.0 / denom.sqrt();
        scale.push(set.gamma[ch] * istd);
        bias.push(set.beta[ch] - set.gamma[ch] * set.running_mean[ch] * istd);
    }
    Ok((scale, bias))
}

// ---------------------------------------------------------------------------
// MaxPool1D
// ---------------------------------------------------------------------------

/// Cache of winning input positions for the pooling backward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub in_shape: Vec<usize>,
    /// Flat input index of the max element for each output element; empty when
    /// the layer is absent.
    pub argmax: Vec<usize>,
}

/// Non-overlapping window max; an absent layer is the identity.
pub fn maxpool_forward(x: &Tensor, layer: &MaxPool1dLayer) -> Result<(Tensor, PoolCache)> {
    if !layer.present {
        return Ok((
            x.clone(),
            PoolCache { in_shape: x.shape().to_vec(), argmax: Vec::new() },
        ));
    }
    let (n, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s = layer.s;
    if l < s {
        return Err(Error::Dimension(format!("input length {l} shorter than pool size {s}")));
    }
    let lo = l / s;
    let mut y = Tensor::zeros(&[n, c, lo]);
    let mut argmax = vec![0usize; n * c * lo];
    for ni in 0..n {
        for ch in 0..c {
            for t in 0..lo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for j in 0..s {
                    let idx = x.idx3(ni, ch, t * s + j);
                    let v = x.data()[idx];
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let yi = y.idx3(ni, ch, t);
                y.data_mut()[yi] = best;
                argmax[yi] = best_idx;
            }
        }
    }
    Ok((y, PoolCache { in_shape: vec![n, c, l], argmax }))
}

/// Routes gradients to the winning input positions.
pub fn maxpool_backward(grad_out: &Tensor, cache: &PoolCache) -> Tensor {
    if cache.argmax.is_empty() {
        return grad_out.clone();
    }
    let mut gx = Tensor::zeros(&cache.in_shape);
    for (o, &src) in cache.argmax.iter().enumerate() {
        gx.data_mut()[src] += grad_out.data()[o];
    }
    gx
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// Linear layer over the first `x.shape()[1]` input features.
///
/// Input features are channel-major, so slicing a `[c, l]` activation to its
/// first channels selects a prefix of the feature vector and a prefix of each
/// weight row.
pub fn fc_forward(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (n, f_act) = (x.shape()[0], x.shape()[1]);
    let (out, f_full) = (weights.shape()[0], weights.shape()[1]);
    if f_act > f_full {
        return Err(Error::Dimension(format!(
            "fc input has {f_act} features but layer accepts at most {f_full}"
        )));
    }
    let mut y = Tensor::zeros(&[n, out]);
    for ni in 0..n {
        for o in 0..out {
            let mut acc = bias[o];
            let row = o * f_full;
            for j in 0..f_act {
                acc += weights.data()[row + j] * x.at2(ni, j);
            }
            let yi = y.idx2(ni, o);
            y.data_mut()[yi] = acc;
        }
    }
    Ok(y)
}

/// Gradients of [`fc_forward`]: `(grad_x, grad_w, grad_b)` with `grad_w`
/// full-sized, zero on inactive columns.
pub fn fc_backward(x: &Tensor, weights: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Vec<f64>) {
    let (n, f_act) = (x.shape()[0], x.shape()[1]);
    let (out, f_full) = (weights.shape()[0], weights.shape()[1]);
    let mut gx = Tensor::zeros(&[n, f_act]);
    let mut gw = Tensor::zeros(&[out, f_full]);
    let mut gb = vec![0.0; out];
    for ni in 0..n {
        for o in 0..out {
            let go = grad_out.at2(ni, o);
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let row = o * f_full;
            for j in 0..f_act {
                gw.data_mut()[row + j] += go * x.at2(ni, j);
                let gi = gx.idx2(ni, j);
                gx.data_mut()[gi] += go * weights.data()[row + j];
            }
        }
    }
    (gx, gw, gb)
}
