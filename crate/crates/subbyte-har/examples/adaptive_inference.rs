//! Input-adaptive big/little inference: a slimmable backbone with switchable
//! BatchNorm, a score-margin policy, and a threshold sweep over operating
//! points.
//!
//! Run with: cargo run --example adaptive_inference

use subbyte_har::adaptive::{
    default_thresholds, threshold_sweep, AdaptiveConfig, AdaptiveModel,
};
use subbyte_har::data::{stratified_split, synth_har};
use subbyte_har::engine::{compile_multi, cost_report, CostTable};
use subbyte_har::model::{instantiate, ArchConfig, PoolSpec, Template};
use subbyte_har::train::{train_slimmable, TrainProtocol};

fn main() {
    // 70% easy inputs: the small path should commit most of them early.
    let data = synth_har(50, 4, 3, 64, 0.7, 0);
    let (train_set, test_set) = stratified_split(&data, 0.25, 1);
    let arch = ArchConfig::fixed(
        Template::B,
        &[8, 16],
        7,
        &[PoolSpec::of(2), PoolSpec::of(2)],
        8,
        data.n_classes(),
        data.channels(),
        data.window_len(),
    );
    let protocol = TrainProtocol {
        initial_lr: 0.01,
        max_epochs: 25,
        quiet: true,
        ..TrainProtocol::default()
    };
    let model = instantiate(&arch, 0).unwrap();
    let slim = train_slimmable(model, &train_set, &protocol, &[0.25, 0.5, 1.0]).unwrap();

    let cm = compile_multi(&slim, &[0.5, 1.0]).unwrap();
    let table = CostTable::default();
    let static_cost = cost_report(&cm, &table).cycle_units;
    let am = AdaptiveModel::new(cm, 0.5, 0.0, &table, &AdaptiveConfig::default()).unwrap();
    println!(
        "costs: small={:.0} policy={:.0} big={:.0} cycle-units",
        am.cost_small, am.cost_policy, am.cost_big
    );

    let sweep = threshold_sweep(&am, &test_set, &default_thresholds()).unwrap();
    println!("threshold  score   p_e     avg_cost  predicted");
    for p in sweep.iter().step_by(10) {
        println!(
            "{:<9.4} {:<7.4} {:<7.3} {:<9.1} {:.1}",
            p.threshold, p.score, p.p_e, p.avg_cost, p.predicted_cost
        );
    }
    let best = sweep
        .iter()
        .filter(|p| p.score >= sweep.last().unwrap().score - 0.01)
        .min_by(|a, b| a.avg_cost.partial_cmp(&b.avg_cost).unwrap())
        .unwrap();
    println!(
        "cheapest point within 1pt of the full model: T_h={:.4} score={:.4} cost={:.1} ({}% of static {:.1})",
        best.threshold,
        best.score,
        best.avg_cost,
        (100.0 * best.avg_cost / static_cost).round(),
        static_cost
    );
}
