//! Training loops: class-weighted cross-entropy, Adam with decoupled weight
//! decay, fixed-precision QAT, slimmable multi-width training, and the
//! cost-regularized variant used by the mixed-precision search.
//!
//! The schedule follows one protocol for every run: the learning rate decays
//! by 0.1 after 3 consecutive epochs without a training-loss improvement, and
//! training stops early after 5 epochs without a holdout-score improvement,
//! returning the snapshot from the best holdout epoch.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{class_weights, metrics, stratified_split, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{
    backward, forward, EpochStat, ForwardOpts, Grads, InputQuant, ParamId, TrainedModel,
};
use crate::nas::{expected_bits_grad_logits, total_expected_bits};
use crate::quantize::ForwardMode;
use crate::tensor::Tensor;

/// Hyper-parameters shared by all training entry points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProtocol {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    /// Epochs of stale training loss before a decay.
    pub lr_patience: usize,
    /// Epochs of stale holdout score before stopping.
    pub early_stop_patience: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Per-class loss weights; empty means "compute from the training data".
    pub class_weights: Vec<f64>,
    pub seed: u64,
    /// Class-stratified fraction of the training data held out for snapshot
    /// selection.
    pub holdout_fraction: f64,
    /// Disables all quantization (float sanity mode).
    pub pure_float: bool,
    /// Suppresses the per-epoch progress lines on stdout.
    pub quiet: bool,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        TrainProtocol {
            initial_lr: 1e-3,
            batch_size: 32,
            lr_decay_factor: 0.1,
            lr_patience: 3,
            early_stop_patience: 5,
            weight_decay: 0.0,
            max_epochs: 100,
            class_weights: Vec::new(),
            seed: 0,
            holdout_fraction: 0.25,
            pure_float: false,
            quiet: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Class-weighted cross-entropy: mean over the batch of
/// `w[label] * (-log softmax(scores)[label])`, plus its gradient.
pub fn weighted_cross_entropy(
    scores: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} score rows vs {} labels", labels.len())));
    }
    if !scores.all_finite() {
        return Err(Error::Numeric("non-finite scores in cross-entropy".into()));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let label = labels[i];
        if label >= c {
            return Err(Error::Schema(format!("label {label} out of range")));
        }
        let w = weights[label];
        let row = &scores.data()[i * c..(i + 1) * c];
        let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for &s in row {
            z += (s - mx).exp();
        }
        let log_z = z.ln() + mx;
        loss += w * (log_z - row[label]);
        for j in 0..c {
            let p = (row[j] - mx).exp() / z;
            let gi = grad.idx2(i, j);
            grad.data_mut()[gi] = w * (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one slot per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    m: HashMap<ParamId, Vec<f64>>,
    v: HashMap<ParamId, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> AdamState {
        AdamState::default()
    }
}

/// One Adam update over every parameter that has a gradient. Weight decay is
/// decoupled and applies to weight matrices only.
pub fn adam_step(
    model: &mut TrainedModel,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for id in model.param_ids() {
        let Some(g) = grads.get(id) else { continue };
        let p = model.param_mut(id);
        let m = state.m.entry(id).or_insert_with(|| vec![0.0; p.len()]);
        let v = state.v.entry(id).or_insert_with(|| vec![0.0; p.len()]);
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            if weight_decay > 0.0 && id.is_weight_tensor() {
                p[j] -= lr * weight_decay * p[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

fn forward_mode(protocol: &TrainProtocol) -> ForwardMode {
    if protocol.pure_float {
        ForwardMode::Float
    } else {
        ForwardMode::Quant
    }
}

/// Balanced accuracy of a model on a dataset at one width (eval mode).
pub fn evaluate_score(model: &mut TrainedModel, data: &WindowedDataset, width: f64) -> Result<f64> {
    let mut pred = Vec::with_capacity(data.len());
    let opts = ForwardOpts { width, mode: ForwardMode::Quant, train_bn: false };
    let batch = 64;
    let mut i = 0;
    while i < data.len() {
        let idx: Vec<usize> = (i..(i + batch).min(data.len())).collect();
        let x = data.batch(&idx);
        let (scores, _) = forward(model, &x, opts)?;
        for r in 0..idx.len() {
            let row = &scores.data()[r * scores.shape()[1]..(r + 1) * scores.shape()[1]];
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            pred.push(best);
        }
        i += batch;
    }
    Ok(metrics(&pred, &data.labels, data.n_classes())?.balanced_accuracy)
}

/// Quantization-aware training at the model's fixed per-tensor bit-widths.
pub fn train_fixed(
    model: TrainedModel,
    data: &WindowedDataset,
    protocol: &TrainProtocol,
) -> Result<TrainedModel> {
    train_multi(model, data, protocol, &[1.0], None)
}

/// Slimmable training: per batch, gradients from every width (each with its
/// own BatchNorm parameters) are accumulated before a single optimizer step.
pub fn train_slimmable(
    model: TrainedModel,
    data: &WindowedDataset,
    protocol: &TrainProtocol,
    widths: &[f64],
) -> Result<TrainedModel> {
    train_multi(model, data, protocol, widths, None)
}

/// Search-mode training: same loop with the size-regularized loss. The
/// cost-term gradient reaches site logits directly.
pub fn train_with_cost(
    model: TrainedModel,
    data: &WindowedDataset,
    protocol: &TrainProtocol,
    lambda: Option<f64>,
) -> Result<TrainedModel> {
    train_multi(model, data, protocol, &[1.0], lambda)
}

fn train_multi(
    mut model: TrainedModel,
    data: &WindowedDataset,
    protocol: &TrainProtocol,
    widths: &[f64],
    lambda: Option<f64>,
) -> Result<TrainedModel> {
    // Fixed and slimmable training return the best-holdout snapshot; the
    // cost-regularized search returns the converged final state, since the
    // bit assignment is the argmax of the trained logits.
    let keep_final = lambda.is_some();
    if data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    if protocol.lr_patience == 0 || protocol.early_stop_patience == 0 {
        return Err(Error::Config("patience values must be positive".into()));
    }
    if protocol.class_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config("class weights must be strictly positive".into()));
    }
    for &w in widths {
        for block in &model.blocks {
            block.bn.index_of(w)?;
        }
    }
    if protocol.max_epochs == 0 {
        return Ok(model);
    }
    if model.input_quant.is_none() {
        model.input_quant = Some(InputQuant::calibrate(&data.windows));
    }
    let weights = if protocol.class_weights.is_empty() {
        class_weights(&data.labels, data.n_classes())?
    } else {
        protocol.class_weights.clone()
    };

    let (train_set, holdout) = if protocol.holdout_fraction > 0.0 && data.len() >= 8 {
        stratified_split(data, protocol.holdout_fraction, protocol.seed ^ 0x5d0f_9a1b)
    } else {
        (data.clone(), data.clone())
    };
    let mode = forward_mode(protocol);
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed ^ 0x00c0_ffee);
    let mut adam = AdamState::new();
    let mut lr = protocol.initial_lr;
    let mut best_loss = f64::INFINITY;
    let mut stale_loss = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snapshot = model.clone();
    let mut history: Vec<EpochStat> = Vec::new();

    for epoch in 1..=protocol.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(protocol.batch_size.max(1)) {
            let x = train_set.batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let mut grads = Grads::new();
            let mut batch_loss = 0.0;
            for &w in widths {
                let opts = ForwardOpts { width: w, mode, train_bn: true };
                let (scores, trace) = forward(&mut model, &x, opts)?;
                let (loss, g_scores) = weighted_cross_entropy(&scores, &labels, &weights)?;
                backward(&model, &trace, &g_scores, &mut grads)?;
                batch_loss += loss;
            }
            batch_loss /= widths.len() as f64;
            if let (Some(lambda), Some(nas)) = (lambda, &model.nas) {
                batch_loss += lambda * total_expected_bits(nas);
                for (i, site) in nas.conv_w.iter().enumerate() {
                    let mut g = expected_bits_grad_logits(site);
                    for v in &mut g {
                        *v *= lambda;
                    }
                    grads.add(ParamId::NasConvWLogits(i), &g);
                }
                for (i, site) in nas.conv_a.iter().enumerate() {
                    let mut g = expected_bits_grad_logits(site);
                    for v in &mut g {
                        *v *= lambda;
                    }
                    grads.add(ParamId::NasConvALogits(i), &g);
                }
                let mut g = expected_bits_grad_logits(&nas.fc_w);
                for v in &mut g {
                    *v *= lambda;
                }
                grads.add(ParamId::NasFcWLogits, &g);
            }
            adam_step(&mut model, &grads, &mut adam, lr, protocol.weight_decay);
            model.clamp_quantizer_params();
            epoch_loss += batch_loss;
            batches += 1;
        }
        epoch_loss /= batches.max(1) as f64;

        let mut score = 0.0;
        for &w in widths {
            score += evaluate_score(&mut model, &holdout, w)?;
        }
        score /= widths.len() as f64;

        history.push(EpochStat { epoch, train_loss: epoch_loss, holdout_score: score, lr });
        if !protocol.quiet {
            println!("epoch={epoch} loss={epoch_loss:.6} holdout={score:.4} lr={lr:.6}");
        }

        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            if !keep_final {
                best_snapshot = model.clone();
            }
        } else if epoch - best_epoch >= protocol.early_stop_patience {
            break;
        }

        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            stale_loss = 0;
        } else {
            stale_loss += 1;
            if stale_loss == protocol.lr_patience {
                lr *= protocol.lr_decay_factor;
                stale_loss = 0;
            }
        }
    }
    let mut out = if keep_final { model } else { best_snapshot };
    out.history = history;
    Ok(out)
}

/// Writes the per-epoch history as CSV (`epoch,train_loss,holdout_score,lr`).
pub fn history_csv(history: &[EpochStat]) -> String {
    let mut s = String::from("epoch,train_loss,holdout_score,lr\n");
    for e in history {
        s.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.holdout_score, e.lr));
    }
    s
}
