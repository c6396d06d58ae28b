//! Driver-level pipeline: grid -> mixed-precision stage -> adaptive build,
//! exercising the results store, resumability, and the stage wiring.

mod common;

use subbyte_har::driver::{
    build_adaptive, load_store, run_grid, run_mixed, DatasetSpec, ExperimentPlan,
};
use subbyte_har::model::{PoolSpec, Template};
use subbyte_har::nas::NasConfig;
use subbyte_har::train::TrainProtocol;

fn pipeline_plan(dir: &std::path::Path) -> ExperimentPlan {
    ExperimentPlan {
        dataset: DatasetSpec::Synth {
            n_per_class: 30,
            classes: 3,
            channels: 3,
            length: 64,
            easy_fraction: 0.8,
        },
        template: Template::B,
        c_out_choices: vec![4, 8],
        k_choices: vec![7],
        pool_choices: vec![PoolSpec::of(2)],
        bit_widths: vec![8],
        nas: NasConfig { lambda_sweep: vec![1e-4, 1e-3] },
        protocol: TrainProtocol {
            initial_lr: 0.01,
            max_epochs: 12,
            quiet: true,
            ..TrainProtocol::default()
        },
        out_dir: dir.to_path_buf(),
        jobs: 2,
        seed: 3,
        test_fraction: 0.25,
    }
}

#[test]
fn grid_mixed_adaptive_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let plan = pipeline_plan(dir.path());

    let grid = run_grid(&plan).unwrap();
    assert_eq!(grid.rows.len(), 4, "2 couts x 2 conv positions");
    assert_eq!(grid.stats.failed, 0);
    for r in &grid.rows {
        assert!(std::path::Path::new(&r.artifact).exists());
    }

    // Mixed stage: at most (pareto parents x lambdas) new rows, each using
    // no more memory than its 8-bit parent.
    let mixed = run_mixed(&plan, &grid.rows).unwrap();
    assert!(mixed.stats.failed == 0);
    assert!(
        mixed.rows.len() <= grid.rows.len() * plan.nas.lambda_sweep.len(),
        "{} mixed rows",
        mixed.rows.len()
    );
    for r in &mixed.rows {
        // The 8-bit parent shares the layer shapes; mixed bits never exceed
        // 8, so the packed memory can only shrink.
        let parent = grid
            .rows
            .iter()
            .find(|g| {
                g.arch.conv_channels == r.arch.conv_channels
                    && g.arch.kernel == r.arch.kernel
                    && g.arch.pools == r.arch.pools
            })
            .expect("mixed row without a matching 8-bit parent");
        assert!(
            r.memory_bytes <= parent.memory_bytes,
            "mixed row {} heavier than parent {}",
            r.memory_bytes,
            parent.memory_bytes
        );
    }
    assert!(dir.path().join("nas_sweep.csv").exists());
    let report = std::fs::read_to_string(dir.path().join("nas_sweep.csv")).unwrap();
    assert!(report.starts_with("parent,lambda,digest,site_bits,model_bits,holdout_score"));

    // The store now holds both stages and reloads cleanly.
    let store = load_store(&dir.path().join("results.csv")).unwrap();
    assert_eq!(store.len(), grid.rows.len() + mixed.rows.len());

    // Adaptive stage from the combined rows.
    let out = build_adaptive(&plan, &store).unwrap();
    assert!(out.w_small == 0.25 || out.w_small == 0.5);
    assert!(!out.sweep.is_empty());
    assert!(out.adaptive_file_bytes as f64 <= 1.15 * out.static_file_bytes as f64);
    assert!(out.model_path.exists());
    assert!(out.sweep_path.exists());
    let reloaded = subbyte_har::format::load_compiled(&out.model_path).unwrap();
    assert!(reloaded.widths.contains(&out.w_small));
    assert!(reloaded.widths.contains(&1.0));

    // Re-running the mixed stage trains nothing new.
    let again = run_mixed(&plan, &grid.rows).unwrap();
    assert_eq!(again.stats.trained, 0);
}
