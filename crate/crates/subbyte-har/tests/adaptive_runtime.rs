//! Adaptive runtime behavior on real compiled models: degenerate thresholds,
//! the score-margin decision rule, and small-width selection.

mod common;

use subbyte_har::adaptive::{
    adaptive_classify, choose_width, score_margin, softmax, threshold_sweep, AdaptiveConfig,
    AdaptiveModel,
};
use subbyte_har::data::{stratified_split, synth_har};
use subbyte_har::engine::{compile_multi, CostTable};
use subbyte_har::model::{instantiate, ArchConfig, PoolSpec, Template};
use subbyte_har::train::{train_slimmable, TrainProtocol};

fn slim_fixture(seed: u64) -> (subbyte_har::model::TrainedModel, subbyte_har::data::WindowedDataset) {
    let data = synth_har(30, 3, 3, 32, 0.8, seed);
    let (train_set, test_set) = stratified_split(&data, 0.25, seed ^ 1);
    let arch = ArchConfig::fixed(
        Template::B,
        &[8, 8],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        8,
        3,
        3,
        32,
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 12,
        quiet: true,
        seed,
        ..TrainProtocol::default()
    };
    let slim = train_slimmable(
        instantiate(&arch, seed).unwrap(),
        &train_set,
        &protocol,
        &[0.25, 0.5, 1.0],
    )
    .unwrap();
    (slim, test_set)
}

#[test]
fn degenerate_thresholds() {
    let (slim, test_set) = slim_fixture(21);
    let cm = compile_multi(&slim, &[0.5, 1.0]).unwrap();
    let table = CostTable::default();
    let cfg = AdaptiveConfig::default();

    // T_h = 0: committed early whenever the small argmax is unique.
    let am0 = AdaptiveModel::new(cm.clone(), 0.5, 0.0, &table, &cfg).unwrap();
    let mut early = 0;
    for i in 0..test_set.len() {
        let codes = am0.backbone.quantize_input(&test_set.window(i)).unwrap();
        let small = am0.backbone.forward_at_width(&codes, 0.5).unwrap();
        let probs = softmax(&am0.backbone.dequantize_scores(&small));
        let unique = score_margin(&probs).unwrap() > 0.0;
        let (_, used_big, cost) = adaptive_classify(&am0, &codes).unwrap();
        assert_eq!(used_big, !unique);
        if !used_big {
            early += 1;
            assert!((cost - (am0.cost_small + am0.cost_policy)).abs() < 1e-9);
        }
    }
    assert!(early as f64 >= 0.95 * test_set.len() as f64, "early {early}/{}", test_set.len());

    // T_h = 1: the margin never exceeds 1, so the big path always runs and
    // its label is committed.
    let am1 = AdaptiveModel::new(cm, 0.5, 1.0, &table, &cfg).unwrap();
    for i in 0..test_set.len() {
        let codes = am1.backbone.quantize_input(&test_set.window(i)).unwrap();
        let (label, used_big, cost) = adaptive_classify(&am1, &codes).unwrap();
        assert!(used_big);
        let big = am1.backbone.forward_at_width(&codes, 1.0).unwrap();
        let expect = (0..big.len()).max_by_key(|&j| big[j]).unwrap();
        assert_eq!(label, expect);
        assert!(
            (cost - (am1.cost_small + am1.cost_policy + am1.cost_big)).abs() < 1e-9
        );
    }
}

#[test]
fn low_margin_inputs_escalate() {
    let (slim, test_set) = slim_fixture(22);
    let cm = compile_multi(&slim, &[0.5, 1.0]).unwrap();
    let am = AdaptiveModel::new(cm, 0.5, 0.3, &table_default(), &AdaptiveConfig::default())
        .unwrap();
    let mut saw_low_margin = false;
    for i in 0..test_set.len() {
        let codes = am.backbone.quantize_input(&test_set.window(i)).unwrap();
        let small = am.backbone.forward_at_width(&codes, 0.5).unwrap();
        let probs = softmax(&am.backbone.dequantize_scores(&small));
        let sm = score_margin(&probs).unwrap();
        let (_, used_big, _) = adaptive_classify(&am, &codes).unwrap();
        assert_eq!(used_big, sm <= 0.3, "sm={sm}");
        if sm <= 0.3 {
            saw_low_margin = true;
        }
    }
    assert!(saw_low_margin, "fixture produced no low-margin inputs");
}

fn table_default() -> CostTable {
    CostTable::default()
}

#[test]
fn broken_small_width_is_not_chosen() {
    // Zeroing the width-0.25 BN gamma makes that path constant (chance
    // level); width selection must fall back to 0.5.
    let (mut slim, test_set) = slim_fixture(23);
    for block in &mut slim.blocks {
        let q = block.bn.index_of(0.25).unwrap();
        for g in block.bn.sets[q].gamma.iter_mut() {
            *g = 0.0;
        }
        for b in block.bn.sets[q].beta.iter_mut() {
            *b = 0.0;
        }
    }
    let cm = compile_multi(&slim, &[0.25, 0.5, 1.0]).unwrap();
    let (w, sweep) =
        choose_width(&cm, &test_set, &table_default(), &AdaptiveConfig::default()).unwrap();
    assert_eq!(w, 0.5);
    assert!(!sweep.is_empty());
}

#[test]
fn identical_widths_tie_toward_quarter() {
    // With 2-channel layers, widths 0.25 and 0.5 activate the same single
    // channel; mirroring the BN banks makes both paths identical, and the
    // tie rule picks 0.25.
    let data = synth_har(20, 2, 3, 32, 1.0, 24);
    let arch = ArchConfig::fixed(
        Template::B,
        &[2, 2],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        8,
        2,
        3,
        32,
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 8,
        quiet: true,
        seed: 24,
        ..TrainProtocol::default()
    };
    let mut slim = train_slimmable(
        instantiate(&arch, 24).unwrap(),
        &data,
        &protocol,
        &[0.25, 0.5, 1.0],
    )
    .unwrap();
    for block in &mut slim.blocks {
        let half = block.bn.sets[block.bn.index_of(0.5).unwrap()].clone();
        let qi = block.bn.index_of(0.25).unwrap();
        block.bn.sets[qi] = half;
    }
    let cm = compile_multi(&slim, &[0.25, 0.5, 1.0]).unwrap();
    let (w, _) = choose_width(&cm, &data, &table_default(), &AdaptiveConfig::default()).unwrap();
    assert_eq!(w, 0.25);
}

#[test]
fn fully_binary_backbone_is_refused() {
    let data = synth_har(16, 2, 3, 32, 1.0, 25);
    let arch = ArchConfig::fixed(
        Template::B,
        &[4, 4],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        1, // fully binarized
        2,
        3,
        32,
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 2,
        quiet: true,
        ..TrainProtocol::default()
    };
    let slim = train_slimmable(
        instantiate(&arch, 25).unwrap(),
        &data,
        &protocol,
        &[0.25, 0.5, 1.0],
    )
    .unwrap();
    let cm = compile_multi(&slim, &[0.5, 1.0]).unwrap();
    let err = AdaptiveModel::new(cm, 0.5, 0.0, &table_default(), &AdaptiveConfig::default())
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("binarized"), "{msg}");
}

#[test]
fn sweep_from_dataset_is_consistent_with_classify() {
    let (slim, test_set) = slim_fixture(26);
    let cm = compile_multi(&slim, &[0.5, 1.0]).unwrap();
    let table = table_default();
    let cfg = AdaptiveConfig::default();
    let am = AdaptiveModel::new(cm, 0.5, 0.37, &table, &cfg).unwrap();
    let points = threshold_sweep(&am, &test_set, &[0.37]).unwrap();
    let p = &points[0];
    // Replaying adaptive_classify at the same threshold reproduces the
    // sweep's accounting exactly.
    let mut total_cost = 0.0;
    let mut early = 0usize;
    for i in 0..test_set.len() {
        let codes = am.backbone.quantize_input(&test_set.window(i)).unwrap();
        let (_, used_big, cost) = adaptive_classify(&am, &codes).unwrap();
        total_cost += cost;
        if !used_big {
            early += 1;
        }
    }
    assert!((p.avg_cost - total_cost / test_set.len() as f64).abs() < 1e-9);
    assert!((p.p_e - early as f64 / test_set.len() as f64).abs() < 1e-12);
}
