//! Experiment orchestration: quantized grid search per bit-width,
//! mixed-precision search seeded from the 8-bit memory front, Pareto
//! extraction, and adaptive-model construction.
//!
//! Results live in an append-only CSV store keyed by a content digest of
//! (architecture, protocol, seed, dataset), which makes every stage
//! resumable: digests already present are not retrained. Jobs run on a small
//! worker pool; rows are written in plan order regardless of completion
//! order, so identical runs produce byte-identical stores.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::adaptive::{
    choose_width, select_backbone, sweep_csv, AdaptiveConfig, AdaptiveModel, SweepPoint,
};
use crate::data::{load_csv, metrics, pareto_indices, stratified_split, synth_har, WindowedDataset};
use crate::engine::{compile, compile_multi, cost_report, CompiledModel, CostTable};
use crate::error::{Error, Result};
use crate::format::{compiled_to_bytes, save_compiled, save_trained};
use crate::model::{
    enumerate_grid, fnv64, instantiate, ArchConfig, GridSpec, PoolSpec, Template, TrainedModel,
};
use crate::nas::{nas_search, NasConfig};
use crate::train::{history_csv, train_fixed, train_slimmable, TrainProtocol};

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synth {
        n_per_class: usize,
        classes: usize,
        channels: usize,
        length: usize,
        easy_fraction: f64,
    },
    Csv {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<WindowedDataset> {
        match self {
            DatasetSpec::Synth { n_per_class, classes, channels, length, easy_fraction } => {
                Ok(synth_har(*n_per_class, *classes, *channels, *length, *easy_fraction, seed))
            }
            DatasetSpec::Csv { path } => load_csv(path),
        }
    }
}

/// Everything one experiment needs, serializable as a key=value plan file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub dataset: DatasetSpec,
    pub template: Template,
    pub c_out_choices: Vec<usize>,
    pub k_choices: Vec<usize>,
    pub pool_choices: Vec<PoolSpec>,
    pub bit_widths: Vec<u8>,
    pub nas: NasConfig,
    pub protocol: TrainProtocol,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.bit_widths.is_empty() {
            return Err(Error::Config("bit-width set must be non-empty".into()));
        }
        for &b in &self.bit_widths {
            if !crate::quantize::bits_supported(b) {
                return Err(Error::Config(format!("unsupported bit-width {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0 {
            return Err(Error::Config("test_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    fn protocol_digest_text(&self) -> String {
        let p = &self.protocol;
        format!(
            "lr={};batch={};decay={};lrpat={};stop={};wd={};epochs={};holdout={};float={}",
            p.initial_lr,
            p.batch_size,
            p.lr_decay_factor,
            p.lr_patience,
            p.early_stop_patience,
            p.weight_decay,
            p.max_epochs,
            p.holdout_fraction,
            p.pure_float
        )
    }
}

/// One line of the results store.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub digest: String,
    pub arch: ArchConfig,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub memory_bytes: u64,
    pub cycle_units: f64,
    pub artifact: String,
}

pub const STORE_HEADER: &str = "digest,template,k,couts,pools,wbits,abits,fcw,classes,in_channels,window,accuracy,balanced_accuracy,macro_f1,memory_bytes,cycle_units,artifact";

fn join<T: ToString>(v: impl Iterator<Item = T>) -> String {
    v.map(|x| x.to_string()).collect::<Vec<_>>().join("|")
}

impl ResultRow {
    pub fn to_csv_row(&self) -> String {
        let a = &self.arch;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.digest,
            a.template.as_str(),
            a.kernel,
            join(a.conv_channels.iter()),
            join(a.pools.iter().map(|p| if p.present { p.s } else { 0 })),
            join(a.conv_bits.iter().map(|b| b.weight)),
            join(a.conv_bits.iter().map(|b| b.activation)),
            a.fc_weight_bits,
            a.n_classes,
            a.in_channels,
            a.window,
            self.accuracy,
            self.balanced_accuracy,
            self.macro_f1,
            self.memory_bytes,
            self.cycle_units,
            self.artifact
        )
    }

    pub fn from_csv_row(line: &str) -> Result<ResultRow> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 17 {
            return Err(Error::Parse(format!("result row has {} fields, expected 17", f.len())));
        }
        let parse_list = |s: &str| -> Result<Vec<usize>> {
            s.split('|')
                .map(|x| x.parse::<usize>().map_err(|_| Error::Parse(format!("bad list '{s}'"))))
                .collect()
        };
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")))
        };
        let couts = parse_list(f[3])?;
        let pools: Vec<PoolSpec> = parse_list(f[4])?
            .into_iter()
            .map(|s| if s == 0 { PoolSpec::absent() } else { PoolSpec::of(s) })
            .collect();
        let wbits = parse_list(f[5])?;
        let abits = parse_list(f[6])?;
        let arch = ArchConfig {
            template: Template::parse(f[1])?,
            conv_channels: couts,
            kernel: f[2].parse().map_err(|_| Error::Parse("bad kernel".into()))?,
            pools,
            conv_bits: wbits
                .iter()
                .zip(&abits)
                .map(|(&w, &a)| crate::model::LayerBits { weight: w as u8, activation: a as u8 })
                .collect(),
            fc_weight_bits: f[7].parse().map_err(|_| Error::Parse("bad fc bits".into()))?,
            n_classes: f[8].parse().map_err(|_| Error::Parse("bad classes".into()))?,
            in_channels: f[9].parse().map_err(|_| Error::Parse("bad channels".into()))?,
            window: f[10].parse().map_err(|_| Error::Parse("bad window".into()))?,
        };
        Ok(ResultRow {
            digest: f[0].to_string(),
            arch,
            accuracy: num(f[11])?,
            balanced_accuracy: num(f[12])?,
            macro_f1: num(f[13])?,
            memory_bytes: num(f[14])? as u64,
            cycle_units: num(f[15])?,
            artifact: f[16].to_string(),
        })
    }
}

/// Reads every row of a results store, skipping the header.
pub fn load_store(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("digest,") || line.starts_with('#') {
            continue;
        }
        rows.push(ResultRow::from_csv_row(line).map_err(|e| {
            Error::Parse(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Job execution
// ---------------------------------------------------------------------------

/// Content digest identifying one training job.
fn job_digest(plan: &ExperimentPlan, arch: &ArchConfig, dataset_digest: &str) -> String {
    let text = format!(
        "{}\nprotocol:{}\nseed:{}\ndataset:{}\n",
        arch.to_config_string(),
        plan.protocol_digest_text(),
        plan.seed,
        dataset_digest
    );
    format!("{:016x}", fnv64(text.as_bytes()))
}

fn job_seed(plan_seed: u64, digest: &str) -> u64 {
    plan_seed ^ fnv64(digest.as_bytes())
}

/// Statistics of one grid or mixed-precision run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunStats {
    pub trained: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Integer-engine predictions over a dataset.
pub fn predict_integer(cm: &CompiledModel, data: &WindowedDataset) -> Result<Vec<usize>> {
    let mut pred = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let codes = cm.quantize_input(&data.window(i))?;
        let scores = cm.integer_forward(&codes)?;
        let mut best = 0;
        for j in 1..scores.len() {
            if scores[j] > scores[best] {
                best = j;
            }
        }
        pred.push(best);
    }
    Ok(pred)
}

fn train_and_measure(
    plan: &ExperimentPlan,
    arch: &ArchConfig,
    digest: &str,
    train_data: &WindowedDataset,
    test_data: &WindowedDataset,
    table: &CostTable,
    from_model: Option<TrainedModel>,
) -> Result<ResultRow> {
    let seed = job_seed(plan.seed, digest);
    let mut protocol = plan.protocol.clone();
    protocol.seed = seed;
    let trained = match from_model {
        Some(m) => m,
        None => {
            let model = instantiate(arch, seed)?;
            train_fixed(model, train_data, &protocol)?
        }
    };
    let models_dir = plan.out_dir.join("models");
    let history_dir = plan.out_dir.join("history");
    std::fs::create_dir_all(&models_dir)?;
    std::fs::create_dir_all(&history_dir)?;
    let trained_path = models_dir.join(format!("{digest}.sbht"));
    save_trained(&trained, &trained_path)?;
    std::fs::write(history_dir.join(format!("{digest}.csv")), history_csv(&trained.history))?;
    let cm = compile(&trained, 1.0)?;
    let compiled_path = models_dir.join(format!("{digest}.sbh"));
    save_compiled(&cm, &compiled_path)?;
    let pred = predict_integer(&cm, test_data)?;
    let m = metrics(&pred, &test_data.labels, test_data.n_classes())?;
    let report = cost_report(&cm, table);
    Ok(ResultRow {
        digest: digest.to_string(),
        arch: arch.clone(),
        accuracy: m.accuracy,
        balanced_accuracy: m.balanced_accuracy,
        macro_f1: m.macro_f1,
        memory_bytes: report.memory_bytes,
        cycle_units: report.cycle_units,
        artifact: compiled_path.display().to_string(),
    })
}

/// Runs `f` for indices `0..n` on `jobs` worker threads, delivering results
/// to `sink` in index order.
fn run_pool<F, T>(n: usize, jobs: usize, f: F, mut sink: impl FnMut(usize, T)) -> Result<()>
where
    F: Fn(usize) -> T + Sync,
    T: Send,
{
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, T)>();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(n.max(1)) {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let out = f(i);
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut buffer = BTreeMap::new();
        let mut expect = 0usize;
        for (i, out) in rx {
            buffer.insert(i, out);
            while let Some(out) = buffer.remove(&expect) {
                sink(expect, out);
                expect += 1;
            }
        }
    });
    Ok(())
}

fn append_rows(
    store_path: &Path,
    rows: &[std::result::Result<ResultRow, String>],
) -> Result<(Vec<ResultRow>, RunStats)> {
    let mut stats = RunStats::default();
    let new_store = !store_path.exists();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(store_path)?;
    if new_store {
        writeln!(file, "{STORE_HEADER}")?;
    }
    let mut ok_rows = Vec::new();
    let mut errors = String::new();
    for r in rows {
        match r {
            Ok(row) => {
                writeln!(file, "{}", row.to_csv_row())?;
                ok_rows.push(row.clone());
                stats.trained += 1;
            }
            Err(msg) => {
                errors.push_str(msg);
                errors.push('\n');
                stats.failed += 1;
            }
        }
    }
    if !errors.is_empty() {
        let err_path = store_path.with_file_name("errors.log");
        let mut ef = std::fs::OpenOptions::new().create(true).append(true).open(err_path)?;
        ef.write_all(errors.as_bytes())?;
    }
    Ok((ok_rows, stats))
}

/// Splits the plan's dataset deterministically into train and test parts.
pub fn plan_splits(plan: &ExperimentPlan) -> Result<(WindowedDataset, WindowedDataset)> {
    let ds = plan.dataset.load(plan.seed)?;
    Ok(stratified_split(&ds, plan.test_fraction, plan.seed ^ 0x7e57_da7a))
}

/// Outcome of a grid (or mixed) stage: the plan's rows in enumeration order.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub rows: Vec<ResultRow>,
    pub stats: RunStats,
}

/// Trains every (configuration x bit-width) of the plan's grid, evaluating
/// on the test split with the integer engine. Digests already present in the
/// results store are skipped, so a completed plan re-runs without training.
pub fn run_grid(plan: &ExperimentPlan) -> Result<StageOutcome> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.out_dir)?;
    let (train_data, test_data) = plan_splits(plan)?;
    let dataset_digest = train_data.digest();
    let table = CostTable::default();

    let mut work: Vec<(ArchConfig, String)> = Vec::new();
    for &bits in &plan.bit_widths {
        let spec = GridSpec {
            template: plan.template,
            c_out_choices: plan.c_out_choices.clone(),
            k_choices: plan.k_choices.clone(),
            pool_choices: plan.pool_choices.clone(),
            bits,
        };
        for cfg in enumerate_grid(
            &spec,
            train_data.n_classes(),
            train_data.channels(),
            train_data.window_len(),
        )? {
            let digest = job_digest(plan, &cfg, &dataset_digest);
            work.push((cfg, digest));
        }
    }

    let store_path = plan.out_dir.join("results.csv");
    let existing = load_store(&store_path)?;
    let known: HashSet<String> = existing.iter().map(|r| r.digest.clone()).collect();
    let mut rows_by_digest: BTreeMap<String, ResultRow> =
        existing.into_iter().map(|r| (r.digest.clone(), r)).collect();

    let todo: Vec<&(ArchConfig, String)> =
        work.iter().filter(|(_, d)| !known.contains(d)).collect();
    let skipped = work.len() - todo.len();

    let mut results: Vec<std::result::Result<ResultRow, String>> = Vec::new();
    run_pool(
        todo.len(),
        plan.jobs,
        |i| {
            let (cfg, digest) = todo[i];
            train_and_measure(plan, cfg, digest, &train_data, &test_data, &table, None)
                .map_err(|e| format!("{digest}: {e}"))
        },
        |_, r| results.push(r),
    )?;
    let (new_rows, mut stats) = append_rows(&store_path, &results)?;
    stats.skipped = skipped;
    for r in new_rows {
        rows_by_digest.insert(r.digest.clone(), r);
    }
    let rows = work
        .iter()
        .filter_map(|(_, d)| rows_by_digest.get(d).cloned())
        .collect();
    Ok(StageOutcome { rows, stats })
}

/// Runs the mixed-precision search from every 8-bit row on the memory-Pareto
/// front, fine-tunes each extracted configuration, and appends the resulting
/// rows to the store.
pub fn run_mixed(plan: &ExperimentPlan, rows: &[ResultRow]) -> Result<StageOutcome> {
    plan.validate()?;
    let eight: Vec<&ResultRow> = rows
        .iter()
        .filter(|r| {
            r.arch.fc_weight_bits == 8
                && r.arch.conv_bits.iter().all(|b| b.weight == 8 && b.activation == 8)
        })
        .collect();
    if eight.is_empty() {
        return Err(Error::Selection("no 8-bit rows to seed the mixed-precision stage".into()));
    }
    let points: Vec<(f64, f64)> =
        eight.iter().map(|r| (r.balanced_accuracy, r.memory_bytes as f64)).collect();
    let parents: Vec<&ResultRow> =
        pareto_indices(&points).into_iter().map(|i| eight[i]).collect();

    let (train_data, test_data) = plan_splits(plan)?;
    let dataset_digest = train_data.digest();
    let table = CostTable::default();
    let store_path = plan.out_dir.join("results.csv");
    let existing = load_store(&store_path)?;
    let mut known: HashSet<String> = existing.iter().map(|r| r.digest.clone()).collect();

    let mut sweep_report = String::from("parent,lambda,digest,site_bits,model_bits,holdout_score\n");
    let mut results: Vec<std::result::Result<ResultRow, String>> = Vec::new();
    let searches: Vec<std::result::Result<Vec<crate::nas::NasResult>, String>> = {
        let mut out = Vec::new();
        run_pool(
            parents.len(),
            plan.jobs,
            |i| {
                let parent = parents[i];
                let seed = job_seed(plan.seed, &parent.digest);
                let mut protocol = plan.protocol.clone();
                protocol.seed = seed;
                nas_search(&parent.arch, &train_data, &protocol, &plan.nas)
                    .map_err(|e| format!("{}: {e}", parent.digest))
            },
            |_, r| out.push(r),
        )?;
        out
    };
    let mut stats = RunStats::default();
    for (parent, search) in parents.iter().zip(searches) {
        match search {
            Err(e) => {
                results.push(Err(e));
            }
            Ok(found) => {
                for r in found {
                    let digest = job_digest(plan, &r.arch, &dataset_digest);
                    let site_bits: Vec<String> = r
                        .arch
                        .conv_bits
                        .iter()
                        .map(|b| format!("{}w{}a", b.weight, b.activation))
                        .collect();
                    sweep_report.push_str(&format!(
                        "{},{},{},{}|fc{}w,{},{}\n",
                        parent.digest,
                        r.lambda,
                        digest,
                        site_bits.join("|"),
                        r.arch.fc_weight_bits,
                        r.arch.weight_bits_total(),
                        r.model.history.last().map(|h| h.holdout_score).unwrap_or(0.0)
                    ));
                    if known.contains(&digest) {
                        stats.skipped += 1;
                        continue;
                    }
                    known.insert(digest.clone());
                    results.push(
                        train_and_measure(
                            plan,
                            &r.arch,
                            &digest,
                            &train_data,
                            &test_data,
                            &table,
                            Some(r.model),
                        )
                        .map_err(|e| format!("{digest}: {e}")),
                    );
                }
            }
        }
    }
    std::fs::write(plan.out_dir.join("nas_sweep.csv"), sweep_report)?;
    let (new_rows, s2) = append_rows(&store_path, &results)?;
    stats.trained = s2.trained;
    stats.failed = s2.failed;
    Ok(StageOutcome { rows: new_rows, stats })
}

/// Result of building the adaptive system from the cycle-Pareto front.
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub backbone_digest: String,
    pub w_small: f64,
    pub sweep: Vec<SweepPoint>,
    pub static_score: f64,
    pub static_cost: f64,
    pub adaptive_file_bytes: u64,
    pub static_file_bytes: u64,
    pub model_path: PathBuf,
    pub sweep_path: PathBuf,
}

/// Selects a backbone by gain on the cycle-proxy Pareto front, retrains it
/// slimmable with switchable BatchNorm, picks the small width, and emits the
/// threshold sweep over the test split.
pub fn build_adaptive(plan: &ExperimentPlan, rows: &[ResultRow]) -> Result<AdaptiveOutcome> {
    plan.validate()?;
    if rows.is_empty() {
        return Err(Error::Selection("no result rows to build an adaptive model from".into()));
    }
    let points: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.balanced_accuracy, r.cycle_units)).collect();
    let front_idx = pareto_indices(&points);
    let front: Vec<(f64, f64)> = front_idx.iter().map(|&i| points[i]).collect();
    let sel = select_backbone(&front)?;
    let backbone_row = rows[front_idx[sel]].clone();
    if backbone_row.arch.is_fully_binary() {
        return Err(Error::Selection(format!(
            "selected backbone {} is fully binarized; adaptive execution refuses it \
             (score margins are uncalibrated)",
            backbone_row.digest
        )));
    }

    let (train_data, test_data) = plan_splits(plan)?;
    let seed = job_seed(plan.seed, &backbone_row.digest) ^ 0xada7;
    let mut protocol = plan.protocol.clone();
    protocol.seed = seed;
    let model = instantiate(&backbone_row.arch, seed)?;
    let slim = train_slimmable(model, &train_data, &protocol, &[0.25, 0.5, 1.0])?;

    let table = CostTable::default();
    let acfg = AdaptiveConfig::default();
    let cm_all = compile_multi(&slim, &[0.25, 0.5, 1.0])?;
    let (w_small, _train_sweep) = choose_width(&cm_all, &train_data, &table, &acfg)?;

    // Deployable artifact carries exactly the two widths it needs.
    let cm = compile_multi(&slim, &[w_small, 1.0])?;
    let static_cm = compile(&slim, 1.0)?;
    let adaptive_bytes = compiled_to_bytes(&cm);
    let static_bytes = compiled_to_bytes(&static_cm);

    let am = AdaptiveModel::new(cm, w_small, 0.0, &table, &acfg)?;
    let sweep = crate::adaptive::threshold_sweep(&am, &test_data, &crate::adaptive::default_thresholds())?;

    let static_pred = predict_integer(&static_cm, &test_data)?;
    let static_score =
        metrics(&static_pred, &test_data.labels, test_data.n_classes())?.balanced_accuracy;
    let static_cost = cost_report(&static_cm, &table).cycle_units;

    std::fs::create_dir_all(&plan.out_dir)?;
    let model_path = plan.out_dir.join("adaptive.sbh");
    std::fs::write(&model_path, &adaptive_bytes)?;
    let sweep_path = plan.out_dir.join("adaptive_sweep.csv");
    std::fs::write(&sweep_path, sweep_csv(&sweep))?;

    Ok(AdaptiveOutcome {
        backbone_digest: backbone_row.digest,
        w_small,
        sweep,
        static_score,
        static_cost,
        adaptive_file_bytes: adaptive_bytes.len() as u64,
        static_file_bytes: static_bytes.len() as u64,
        model_path,
        sweep_path,
    })
}

// ---------------------------------------------------------------------------
// Plan file
// ---------------------------------------------------------------------------

pub fn plan_to_string(plan: &ExperimentPlan) -> String {
    let mut s = String::new();
    s.push_str(&format!("seed={}\n", plan.seed));
    s.push_str(&format!("jobs={}\n", plan.jobs));
    s.push_str(&format!("test_fraction={}\n", plan.test_fraction));
    match &plan.dataset {
        DatasetSpec::Synth { n_per_class, classes, channels, length, easy_fraction } => {
            s.push_str("dataset.kind=synth\n");
            s.push_str(&format!("dataset.per_class={n_per_class}\n"));
            s.push_str(&format!("dataset.classes={classes}\n"));
            s.push_str(&format!("dataset.channels={channels}\n"));
            s.push_str(&format!("dataset.length={length}\n"));
            s.push_str(&format!("dataset.easy_fraction={easy_fraction}\n"));
        }
        DatasetSpec::Csv { path } => {
            s.push_str("dataset.kind=csv\n");
            s.push_str(&format!("dataset.path={}\n", path.display()));
        }
    }
    s.push_str(&format!("template={}\n", plan.template.as_str()));
    s.push_str(&format!(
        "couts={}\n",
        plan.c_out_choices.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
    ));
    s.push_str(&format!(
        "ks={}\n",
        plan.k_choices.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
    ));
    s.push_str(&format!(
        "pools={}\n",
        plan.pool_choices
            .iter()
            .map(|p| if p.present { p.s.to_string() } else { "none".to_string() })
            .collect::<Vec<_>>()
            .join(",")
    ));
    s.push_str(&format!(
        "bits={}\n",
        plan.bit_widths.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
    ));
    s.push_str(&format!(
        "nas.lambdas={}\n",
        plan.nas.lambda_sweep.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    ));
    let p = &plan.protocol;
    s.push_str(&format!("protocol.lr={}\n", p.initial_lr));
    s.push_str(&format!("protocol.batch_size={}\n", p.batch_size));
    s.push_str(&format!("protocol.weight_decay={}\n", p.weight_decay));
    s.push_str(&format!("protocol.max_epochs={}\n", p.max_epochs));
    s.push_str(&format!("protocol.holdout_fraction={}\n", p.holdout_fraction));
    s
}

/// Parses a plan file; `out_dir` and `quiet` come from the caller.
pub fn plan_from_string(text: &str, out_dir: PathBuf) -> Result<ExperimentPlan> {
    let mut map = std::collections::HashMap::new();
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
    let get = |k: &str, default: &str| map.get(k).cloned().unwrap_or_else(|| default.to_string());
    let req = |k: &str| -> Result<String> {
        map.get(k).cloned().ok_or_else(|| Error::Parse(format!("missing key '{k}'")))
    };
    let parse_usize_list = |s: &str| -> Result<Vec<usize>> {
        s.split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad list '{s}'"))))
            .collect()
    };
    let dataset = match get("dataset.kind", "synth").as_str() {
        "synth" => DatasetSpec::Synth {
            n_per_class: get("dataset.per_class", "40").parse().map_err(|_| Error::Parse("bad per_class".into()))?,
            classes: get("dataset.classes", "4").parse().map_err(|_| Error::Parse("bad classes".into()))?,
            channels: get("dataset.channels", "3").parse().map_err(|_| Error::Parse("bad channels".into()))?,
            length: get("dataset.length", "64").parse().map_err(|_| Error::Parse("bad length".into()))?,
            easy_fraction: get("dataset.easy_fraction", "1").parse().map_err(|_| Error::Parse("bad easy_fraction".into()))?,
        },
        "csv" => DatasetSpec::Csv { path: PathBuf::from(req("dataset.path")?) },
        other => return Err(Error::Parse(format!("unknown dataset.kind '{other}'"))),
    };
    let pools = get("pools", "2")
        .split(',')
        .map(|p| {
            let p = p.trim();
            if p == "none" || p == "0" {
                Ok(PoolSpec::absent())
            } else {
                p.parse::<usize>()
                    .map(PoolSpec::of)
                    .map_err(|_| Error::Parse(format!("bad pool '{p}'")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let lambdas_text = get("nas.lambdas", "");
    let nas = if lambdas_text.is_empty() {
        NasConfig::default()
    } else {
        NasConfig {
            lambda_sweep: lambdas_text
                .split(',')
                .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Parse("bad lambda".into())))
                .collect::<Result<Vec<f64>>>()?,
        }
    };
    let protocol = TrainProtocol {
        initial_lr: get("protocol.lr", "0.001").parse().map_err(|_| Error::Parse("bad lr".into()))?,
        batch_size: get("protocol.batch_size", "32").parse().map_err(|_| Error::Parse("bad batch".into()))?,
        weight_decay: get("protocol.weight_decay", "0").parse().map_err(|_| Error::Parse("bad wd".into()))?,
        max_epochs: get("protocol.max_epochs", "100").parse().map_err(|_| Error::Parse("bad epochs".into()))?,
        holdout_fraction: get("protocol.holdout_fraction", "0.25").parse().map_err(|_| Error::Parse("bad holdout".into()))?,
        quiet: true,
        ..TrainProtocol::default()
    };
    let plan = ExperimentPlan {
        dataset,
        template: Template::parse(&get("template", "B"))?,
        c_out_choices: parse_usize_list(&get("couts", "4,16"))?,
        k_choices: parse_usize_list(&get("ks", "7"))?,
        pool_choices: pools,
        bit_widths: parse_usize_list(&get("bits", "8"))?.into_iter().map(|b| b as u8).collect(),
        nas,
        protocol,
        out_dir,
        jobs: get("jobs", "1").parse().map_err(|_| Error::Parse("bad jobs".into()))?,
        seed: get("seed", "0").parse().map_err(|_| Error::Parse("bad seed".into()))?,
        test_fraction: get("test_fraction", "0.2").parse().map_err(|_| Error::Parse("bad test_fraction".into()))?,
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan(dir: &Path) -> ExperimentPlan {
        ExperimentPlan {
            dataset: DatasetSpec::Synth {
                n_per_class: 12,
                classes: 2,
                channels: 3,
                length: 32,
                easy_fraction: 1.0,
            },
            template: Template::B,
            c_out_choices: vec![4],
            k_choices: vec![7],
            pool_choices: vec![PoolSpec::of(2)],
            bit_widths: vec![8],
            nas: NasConfig { lambda_sweep: vec![0.0] },
            protocol: TrainProtocol {
                max_epochs: 2,
                quiet: true,
                initial_lr: 0.01,
                ..TrainProtocol::default()
            },
            out_dir: dir.to_path_buf(),
            jobs: 1,
            seed: 0,
            test_fraction: 0.25,
        }
    }

    #[test]
    fn plan_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path());
        let text = plan_to_string(&plan);
        let back = plan_from_string(&text, dir.path().to_path_buf()).unwrap();
        assert_eq!(plan.c_out_choices, back.c_out_choices);
        assert_eq!(plan.bit_widths, back.bit_widths);
        assert_eq!(plan.dataset, back.dataset);
        assert_eq!(plan.nas, back.nas);
    }

    #[test]
    fn result_row_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path());
        let arch = ArchConfig::fixed(
            Template::B,
            &[4, 8],
            7,
            &[PoolSpec::of(2), PoolSpec::absent()],
            8,
            2,
            3,
            32,
        );
        let row = ResultRow {
            digest: job_digest(&plan, &arch, "abc"),
            arch,
            accuracy: 0.5,
            balanced_accuracy: 0.625,
            macro_f1: 0.4,
            memory_bytes: 1234,
            cycle_units: 777.5,
            artifact: "/tmp/x.sbh".into(),
        };
        let line = row.to_csv_row();
        let back = ResultRow::from_csv_row(&line).unwrap();
        assert_eq!(row, back);
    }

    #[test]
    fn grid_counts_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path());
        plan.c_out_choices = vec![4, 8];
        plan.bit_widths = vec![8, 1];
        // 2 couts per 2 conv positions x 1 k x 1 pool option = 4 configs,
        // times 2 bit-widths = 8 rows.
        let out = run_grid(&plan).unwrap();
        assert_eq!(out.rows.len(), 8);
        assert_eq!(out.stats.trained, 8);
        assert_eq!(out.stats.skipped, 0);
        // Resume: no retraining, identical rows.
        let again = run_grid(&plan).unwrap();
        assert_eq!(again.stats.trained, 0);
        assert_eq!(again.stats.skipped, 8);
        assert_eq!(again.rows.len(), 8);
        for (a, b) in out.rows.iter().zip(&again.rows) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grid_parallel_matches_serial() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut p1 = tiny_plan(dir1.path());
        p1.c_out_choices = vec![4, 8];
        let mut p2 = p1.clone();
        p2.out_dir = dir2.path().to_path_buf();
        p2.jobs = 4;
        let a = run_grid(&p1).unwrap();
        let b = run_grid(&p2).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.digest, y.digest);
            assert_eq!(x.balanced_accuracy, y.balanced_accuracy);
        }
        let s1 = std::fs::read_to_string(dir1.path().join("results.csv")).unwrap();
        let s2 = std::fs::read_to_string(dir2.path().join("results.csv")).unwrap();
        // Artifact paths embed the temp dirs; compare everything else.
        let strip = |s: &str| -> String {
            s.lines()
                .map(|l| l.rsplit_once(',').map(|(a, _)| a.to_string()).unwrap_or_default())
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&s1), strip(&s2));
    }
}
