//! Input-adaptive big/little execution over one variable-width compiled
//! model.
//!
//! The small path (first `ceil(c * w_small)` channels of every layer) runs
//! first; when the score margin of its softmax output exceeds the threshold
//! the result is committed, otherwise the full-width path runs. Sweeping the
//! threshold turns a single deployed model into a family of operating points.

use crate::data::{metrics, pareto_indices, WindowedDataset};
use crate::engine::{cost_report_at_width, CompiledModel, CostTable};
use crate::error::{Error, Result};

/// Tunables of the adaptive runtime that are not part of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    /// Cycle-units charged per class for the softmax + margin policy.
    pub policy_cost_per_class: f64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { policy_cost_per_class: 1.0 }
    }
}

/// A compiled backbone with a small-width execution path and a confidence
/// threshold.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    pub backbone: CompiledModel,
    pub w_small: f64,
    pub threshold: f64,
    pub cost_small: f64,
    pub cost_big: f64,
    pub cost_policy: f64,
}

impl AdaptiveModel {
    /// Wraps a compiled model that carries requantization banks for both
    /// `w_small` and full width. Fully binarized backbones are refused:
    /// their scores are not calibrated, which defeats the score-margin
    /// policy.
    pub fn new(
        backbone: CompiledModel,
        w_small: f64,
        threshold: f64,
        table: &CostTable,
        cfg: &AdaptiveConfig,
    ) -> Result<AdaptiveModel> {
        if backbone.arch.is_fully_binary() {
            return Err(Error::Selection(
                "adaptive execution refuses fully binarized backbones: their score margins \
                 do not track correctness; pick a higher-precision backbone"
                    .into(),
            ));
        }
        if !backbone.widths.contains(&w_small) || !backbone.widths.contains(&1.0) {
            return Err(Error::Config(format!(
                "backbone must be compiled at widths {w_small} and 1.0"
            )));
        }
        if !(w_small == 0.25 || w_small == 0.5) {
            return Err(Error::Config(format!("w_small must be 0.25 or 0.5, got {w_small}")));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {threshold}")));
        }
        let cost_small = cost_report_at_width(&backbone, table, w_small).cycle_units;
        let cost_big = cost_report_at_width(&backbone, table, 1.0).cycle_units;
        let cost_policy = cfg.policy_cost_per_class * backbone.arch.n_classes as f64;
        Ok(AdaptiveModel { backbone, w_small, threshold, cost_small, cost_big, cost_policy })
    }
}

/// Softmax over raw (dequantized) scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Difference between the two largest probabilities; a single-class vector
/// returns its only entry.
pub fn score_margin(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Dimension("score margin of an empty vector".into()));
    }
    if probs.len() == 1 {
        return Ok(probs[0]);
    }
    let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in probs {
        if p > top {
            second = top;
            top = p;
        } else if p > second {
            second = p;
        }
    }
    Ok(top - second)
}

/// Expected cost per input: `c_small + c_policy + (1 - p_e) * c_big`.
pub fn expected_cost(c_small: f64, c_policy: f64, c_big: f64, p_e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::Config(format!("p_e must be in [0, 1], got {p_e}")));
    }
    if c_small < 0.0 || c_policy < 0.0 || c_big < 0.0 {
        return Err(Error::Config("costs must be non-negative".into()));
    }
    Ok(c_small + c_policy + (1.0 - p_e) * c_big)
}

/// Runs the adaptive scheme on one 8-bit input window. Returns the committed
/// label, whether the big path ran, and the cycle-units spent.
pub fn adaptive_classify(am: &AdaptiveModel, input: &[u8]) -> Result<(usize, bool, f64)> {
    let small = am.backbone.forward_at_width(input, am.w_small)?;
    let probs = softmax(&am.backbone.dequantize_scores(&small));
    let sm = score_margin(&probs)?;
    let mut cost = am.cost_small + am.cost_policy;
    if sm > am.threshold {
        let mut best = 0;
        for i in 1..small.len() {
            if small[i] > small[best] {
                best = i;
            }
        }
        Ok((best, false, cost))
    } else {
        let big = am.backbone.forward_at_width(input, 1.0)?;
        cost += am.cost_big;
        let mut best = 0;
        for i in 1..big.len() {
            if big[i] > big[best] {
                best = i;
            }
        }
        Ok((best, true, cost))
    }
}

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Balanced accuracy of the committed labels.
    pub score: f64,
    /// Empirical fraction of inputs committed early.
    pub p_e: f64,
    pub avg_cost: f64,
    /// Expected cost computed from the measured `p_e`.
    pub predicted_cost: f64,
}

/// The default threshold grid: 0, then 100 log-spaced values over
/// `[1e-4, 1]` ending exactly at 1.
pub fn default_thresholds() -> Vec<f64> {
    let mut t = vec![0.0];
    let n = 100;
    let ln_lo = (1e-4f64).ln();
    for i in 0..n {
        let frac = i as f64 / (n - 1) as f64;
        // exp(ln(lo) * (1 - frac)) walks from lo to exactly exp(0) = 1.
        t.push((ln_lo * (1.0 - frac)).exp());
    }
    t
}

/// Evaluates every threshold over the dataset. The per-sample small/big
/// results are computed once; the sweep itself is pure accounting.
pub fn threshold_sweep(
    am: &AdaptiveModel,
    data: &WindowedDataset,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    if data.is_empty() {
        return Err(Error::Data("threshold sweep needs a non-empty dataset".into()));
    }
    let n_classes = data.n_classes();
    let mut margins = Vec::with_capacity(data.len());
    let mut small_labels = Vec::with_capacity(data.len());
    let mut big_labels = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let codes = am.backbone.quantize_input(&data.window(i))?;
        let small = am.backbone.forward_at_width(&codes, am.w_small)?;
        let probs = softmax(&am.backbone.dequantize_scores(&small));
        margins.push(score_margin(&probs)?);
        small_labels.push(argmax_i32(&small));
        let big = am.backbone.forward_at_width(&codes, 1.0)?;
        big_labels.push(argmax_i32(&big));
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut pred = Vec::with_capacity(data.len());
        let mut early = 0usize;
        let mut total_cost = 0.0;
        for i in 0..data.len() {
            if margins[i] > t {
                early += 1;
                pred.push(small_labels[i]);
                total_cost += am.cost_small + am.cost_policy;
            } else {
                pred.push(big_labels[i]);
                total_cost += am.cost_small + am.cost_policy + am.cost_big;
            }
        }
        let p_e = early as f64 / data.len() as f64;
        let m = metrics(&pred, &data.labels, n_classes)?;
        points.push(SweepPoint {
            threshold: t,
            score: m.balanced_accuracy,
            p_e,
            avg_cost: total_cost / data.len() as f64,
            predicted_cost: expected_cost(am.cost_small, am.cost_policy, am.cost_big, p_e)?,
        });
    }
    Ok(points)
}

fn argmax_i32(v: &[i32]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Serializes sweep points to CSV.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("threshold,score,p_e,avg_cost,predicted_cost\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.threshold, p.score, p.p_e, p.avg_cost, p.predicted_cost
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Backbone selection
// ---------------------------------------------------------------------------

/// Picks the backbone from a Pareto front ordered by increasing score, using
/// the marginal gain `G_i = (P_i - P_{i-1}) / (C_i - C_{i-1})`.
///
/// Only models within 5 score points (0.05) of the best are eligible; among
/// those the largest gain wins, ties going to the smaller cost. Pairs with a
/// zero cost delta are skipped.
pub fn select_backbone(front: &[(f64, f64)]) -> Result<usize> {
    if front.len() < 2 {
        return Err(Error::Selection(format!(
            "need at least two Pareto points to select a backbone, got {}",
            front.len()
        )));
    }
    for w in front.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
            return Err(Error::Selection(
                "Pareto front must be ordered by increasing score and cost".into(),
            ));
        }
    }
    let best_score = front.last().unwrap().0;
    let mut chosen: Option<(usize, f64)> = None;
    for i in 1..front.len() {
        let (p_prev, c_prev) = front[i - 1];
        let (p, c) = front[i];
        if best_score - p >= 0.05 {
            continue;
        }
        if c == c_prev {
            continue; // zero cost delta
        }
        let gain = (p - p_prev) / (c - c_prev);
        let better = match chosen {
            None => true,
            Some((j, g)) => gain > g || (gain == g && c < front[j].1),
        };
        if better {
            chosen = Some((i, gain));
        }
    }
    chosen
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Selection("no eligible backbone within 5 points of the best".into()))
}

/// Picks the small-path width by sweeping both candidates and counting whose
/// operating points survive on the union's Pareto front; ties prefer 0.25.
pub fn choose_width(
    backbone: &CompiledModel,
    data: &WindowedDataset,
    table: &CostTable,
    cfg: &AdaptiveConfig,
) -> Result<(f64, Vec<SweepPoint>)> {
    let thresholds = default_thresholds();
    let mut candidates = Vec::new();
    for &w in &[0.25, 0.5] {
        let am = AdaptiveModel::new(backbone.clone(), w, 0.0, table, cfg)?;
        let sweep = threshold_sweep(&am, data, &thresholds)?;
        candidates.push((w, sweep));
    }
    let mut union: Vec<(f64, f64)> = Vec::new();
    let mut owner = Vec::new();
    for (ci, (_, sweep)) in candidates.iter().enumerate() {
        for p in sweep {
            union.push((p.score, p.avg_cost));
            owner.push(ci);
        }
    }
    let front = pareto_indices(&union);
    let mut counts = [0usize; 2];
    for &i in &front {
        counts[owner[i]] += 1;
    }
    // Ties prefer the smaller width (candidate 0 = 0.25).
    let winner = if counts[1] > counts[0] { 1 } else { 0 };
    let (w, sweep) = candidates.swap_remove(winner);
    Ok((w, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_margin_hand_values() {
        assert!((score_margin(&[0.55, 0.35, 0.10]).unwrap() - 0.20).abs() < 1e-12);
        let uniform = vec![0.25; 4];
        assert_eq!(score_margin(&uniform).unwrap(), 0.0);
        let onehot = vec![0.0, 1.0, 0.0];
        assert_eq!(score_margin(&onehot).unwrap(), 1.0);
        assert_eq!(score_margin(&[0.7]).unwrap(), 0.7);
        assert!(score_margin(&[]).is_err());
    }

    #[test]
    fn expected_cost_hand_values() {
        assert!((expected_cost(100.0, 2.0, 300.0, 0.75).unwrap() - 177.0).abs() < 1e-12);
        assert_eq!(expected_cost(10.0, 1.0, 40.0, 1.0).unwrap(), 11.0);
        assert_eq!(expected_cost(10.0, 1.0, 40.0, 0.0).unwrap(), 51.0);
        assert!(expected_cost(1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn default_thresholds_shape() {
        let t = default_thresholds();
        assert_eq!(t.len(), 101);
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 1e-4).abs() < 1e-12);
        assert_eq!(*t.last().unwrap(), 1.0);
        for w in t.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn select_backbone_hand_case() {
        // Scores as fractions: [(0.70,100),(0.80,200),(0.81,400)].
        // G = [0.1/100, 0.01/200]; index 1 wins and is within 5 points.
        let front = vec![(0.70, 100.0), (0.80, 200.0), (0.81, 400.0)];
        assert_eq!(select_backbone(&front).unwrap(), 1);
    }

    #[test]
    fn select_backbone_eligibility_filter_first() {
        // Second model has the worse gain but is the only one within
        // 5 points of the best.
        let front = vec![(0.70, 100.0), (0.90, 120.0), (0.905, 500.0)];
        // G_1 = 0.2/20 = 0.01, G_2 = 0.005/380 ~ 1.3e-5; both eligible?
        // model 1: 0.905-0.90 < 0.05 eligible; model 0: drop 0.205 not.
        assert_eq!(select_backbone(&front).unwrap(), 1);
        // Degenerate front.
        assert!(select_backbone(&[(0.5, 1.0)]).is_err());
    }

    #[test]
    fn select_backbone_zero_deltas() {
        // Identical scores give zero gain; the eligible pair with positive
        // gain wins even when later pairs are flat.
        let front = vec![(0.80, 100.0), (0.84, 150.0), (0.84, 150.0), (0.85, 300.0)];
        // Pair at i=2 has zero cost delta and is skipped.
        let i = select_backbone(&front).unwrap();
        assert_eq!(i, 1);
    }
}
