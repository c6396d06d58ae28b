//! Command-line interface.
//!
//! One subcommand per pipeline stage: `gen-data`, `train`, `grid`, `nas`,
//! `compile`, `eval`, `adaptive`, `sweep`, `report`. Every command accepts
//! `--seed` and `--out`; the default output root is `./subbyte-har-out`,
//! overridable with the `SUBBYTE_HAR_DIR` environment variable.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or training
//! failure. Failures print one machine-parsable line to stderr:
//! `error: kind=<kind> msg="..."`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::adaptive::{
    default_thresholds, sweep_csv, threshold_sweep, AdaptiveConfig, AdaptiveModel,
};
use crate::data::{metrics, pareto_indices, save_csv, stratified_split};
use crate::driver::{
    build_adaptive, load_store, plan_from_string, run_grid, run_mixed, DatasetSpec,
    ExperimentPlan, ResultRow,
};
use crate::engine::{compile_multi, cost_report, CostTable};
use crate::error::{Error, Result};
use crate::format::{dump_json, load_compiled, load_trained, save_compiled, save_trained};
use crate::model::{
    forward, instantiate, ArchConfig, ForwardOpts, PoolSpec, Template, TrainedModel,
};
use crate::nas::NasConfig;
use crate::train::{history_csv, train_fixed, train_slimmable, TrainProtocol};

#[derive(Parser)]
#[command(
    name = "subbyte-har",
    version,
    about = "Tiny quantized 1D CNNs: train, search, compress, and run them as bit-packed integer models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Seed for all randomness in this command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (defaults to $SUBBYTE_HAR_DIR or ./subbyte-har-out).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os("SUBBYTE_HAR_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("subbyte-har-out"))
        })
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset CSV (v1 header format). Omit to use a synthetic dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic dataset: samples per class.
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Synthetic dataset: number of classes.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Synthetic dataset: input channels.
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Synthetic dataset: window length.
    #[arg(long, default_value_t = 64)]
    length: usize,
    /// Synthetic dataset: fraction of low-noise samples.
    #[arg(long, default_value_t = 1.0)]
    easy_fraction: f64,
}

impl DataArgs {
    fn spec(&self) -> DatasetSpec {
        match &self.data {
            Some(path) => DatasetSpec::Csv { path: path.clone() },
            None => DatasetSpec::Synth {
                n_per_class: self.per_class,
                classes: self.classes,
                channels: self.channels,
                length: self.length,
                easy_fraction: self.easy_fraction,
            },
        }
    }
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Initial learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Stratified fraction of training data held out for snapshot selection.
    #[arg(long, default_value_t = 0.25)]
    holdout_fraction: f64,
    /// Train without any quantization (float sanity mode).
    #[arg(long, default_value_t = false)]
    pure_float: bool,
}

impl ProtocolArgs {
    fn protocol(&self, seed: u64, quiet: bool) -> TrainProtocol {
        TrainProtocol {
            initial_lr: self.lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            max_epochs: self.epochs,
            holdout_fraction: self.holdout_fraction,
            pure_float: self.pure_float,
            seed,
            quiet,
            ..TrainProtocol::default()
        }
    }
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// Architecture config file (key=value; see README).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Template when no config file is given.
    #[arg(long, default_value = "B")]
    template: String,
    /// Output channels per conv layer, comma separated.
    #[arg(long, default_value = "8,16")]
    couts: String,
    /// Kernel size (7 or 15).
    #[arg(long, default_value_t = 7)]
    k: usize,
    /// Pooling per conv position: `none`, `2`, or `4`, comma separated.
    #[arg(long, default_value = "2,2")]
    pools: String,
    /// Uniform weight/activation bit-width.
    #[arg(long, default_value_t = 8)]
    bits: u8,
}

fn parse_pools(text: &str) -> Result<Vec<PoolSpec>> {
    text.split(',')
        .map(|p| {
            let p = p.trim();
            if p == "none" || p == "0" {
                Ok(PoolSpec::absent())
            } else {
                p.parse::<usize>()
                    .map(PoolSpec::of)
                    .map_err(|_| Error::Parse(format!("bad pool spec '{p}'")))
            }
        })
        .collect()
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|x| {
            x.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad number '{x}'")))
        })
        .collect()
}

impl ArchArgs {
    fn arch(&self, n_classes: usize, in_channels: usize, window: usize) -> Result<ArchConfig> {
        if let Some(path) = &self.config {
            let cfg = ArchConfig::from_config_string(&std::fs::read_to_string(path)?)?;
            return Ok(cfg);
        }
        let template = Template::parse(&self.template)?;
        let couts = parse_usize_list(&self.couts)?;
        let pools = parse_pools(&self.pools)?;
        let cfg = ArchConfig::fixed(
            template,
            &couts,
            self.k,
            &pools,
            self.bits,
            n_classes,
            in_channels,
            window,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct PlanArgs {
    /// Experiment plan file; flags below are ignored when present.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Template to search.
    #[arg(long, default_value = "B")]
    template: String,
    /// Channel choices for the grid, comma separated.
    #[arg(long, default_value = "4,16")]
    couts: String,
    /// Kernel choices, comma separated.
    #[arg(long, default_value = "7")]
    ks: String,
    /// Pooling choices (`none`, `2`, `4`), comma separated.
    #[arg(long, default_value = "2")]
    pools: String,
    /// Bit-widths to sweep, comma separated.
    #[arg(long, default_value = "8")]
    bits: String,
    /// Lambda values for the mixed-precision stage, comma separated
    /// (default: 10 values over [1e-4, 1e-3]).
    #[arg(long)]
    lambdas: Option<String>,
    /// Worker threads for independent training jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Fraction of the dataset reserved for the test split.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

impl PlanArgs {
    fn plan(&self, common: &CommonArgs) -> Result<ExperimentPlan> {
        if let Some(path) = &self.plan {
            let mut plan =
                plan_from_string(&std::fs::read_to_string(path)?, common.out_dir())?;
            plan.seed = common.seed;
            return Ok(plan);
        }
        let nas = match &self.lambdas {
            None => NasConfig::default(),
            Some(text) => NasConfig {
                lambda_sweep: text
                    .split(',')
                    .map(|l| {
                        l.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad lambda '{l}'")))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            },
        };
        let plan = ExperimentPlan {
            dataset: self.data.spec(),
            template: Template::parse(&self.template)?,
            c_out_choices: parse_usize_list(&self.couts)?,
            k_choices: parse_usize_list(&self.ks)?,
            pool_choices: parse_pools(&self.pools)?,
            bit_widths: parse_usize_list(&self.bits)?.into_iter().map(|b| b as u8).collect(),
            nas,
            protocol: self.protocol.protocol(common.seed, true),
            out_dir: common.out_dir(),
            jobs: self.jobs,
            seed: common.seed,
            test_fraction: self.test_fraction,
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset CSV.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "synth.csv")]
        name: String,
    },
    /// Train one model with quantization-aware training.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        protocol: ProtocolArgs,
        #[command(flatten)]
        arch: ArchArgs,
        /// Train all widths {0.25, 0.5, 1.0} with switchable BatchNorm.
        #[arg(long, default_value_t = false)]
        slimmable: bool,
        /// Output model file name.
        #[arg(long, default_value = "model.sbht")]
        name: String,
    },
    /// Exhaustive architecture grid search with QAT per bit-width.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Mixed-precision search from the 8-bit memory-Pareto front.
    Nas {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Lower a trained model to the integer engine and report costs.
    Compile {
        #[command(flatten)]
        common: CommonArgs,
        /// Trained model file (.sbht).
        #[arg(long)]
        model: PathBuf,
        /// Widths to compile requantization banks for, comma separated.
        #[arg(long, default_value = "1")]
        widths: String,
        /// Also write a lossless JSON dump next to the compiled model.
        #[arg(long, default_value_t = false)]
        dump_json: bool,
        /// Cycle-cost table file overriding the defaults.
        #[arg(long)]
        cost_table: Option<PathBuf>,
        /// Output file name.
        #[arg(long, default_value = "model.sbh")]
        name: String,
    },
    /// Evaluate a model on a dataset.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Model file (.sbht for float, .sbh for integer).
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Engine: `integer` (compiled) or `float` (fake-quant forward).
        #[arg(long, default_value = "integer")]
        engine: String,
    },
    /// Build an input-adaptive model from grid results.
    Adaptive {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Threshold sweep of an adaptive model over a dataset.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Compiled multi-width model (.sbh with small and full banks).
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Small-path width (0.25 or 0.5).
        #[arg(long, default_value_t = 0.5)]
        w_small: f64,
        /// Cycle-cost table file overriding the defaults.
        #[arg(long)]
        cost_table: Option<PathBuf>,
        /// Cycle-units charged per class for the policy.
        #[arg(long, default_value_t = 1.0)]
        policy_cost: f64,
        /// Output file name.
        #[arg(long, default_value = "sweep.csv")]
        name: String,
    },
    /// Pareto tables from a results store.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Results store (defaults to <out>/results.csv).
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    return 0;
                }
                _ => {
                    eprintln!("{e}");
                    eprintln!("error: kind=usage msg=\"invalid arguments\"");
                    return 1;
                }
            }
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_dataset(args: &DataArgs, seed: u64) -> Result<crate::data::WindowedDataset> {
    args.spec().load(seed)
}

fn print_row_summary(rows: &[ResultRow]) {
    println!("digest           bits         bacc    f1      memory  cycles");
    for r in rows {
        let bits: Vec<String> = r
            .arch
            .conv_bits
            .iter()
            .map(|b| format!("{}w{}a", b.weight, b.activation))
            .collect();
        println!(
            "{} {:<12} {:.4}  {:.4}  {:>6}  {:.1}",
            r.digest,
            format!("{}+{}w", bits.join("/"), r.arch.fc_weight_bits),
            r.balanced_accuracy,
            r.macro_f1,
            r.memory_bytes,
            r.cycle_units
        );
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { common, data, name } => {
            let ds = load_dataset(&data, common.seed)?;
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(name);
            save_csv(&ds, &path)?;
            println!(
                "# seed={} windows={} classes={} channels={} length={}",
                common.seed,
                ds.len(),
                ds.n_classes(),
                ds.channels(),
                ds.window_len()
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Train { common, data, protocol, arch, slimmable, name } => {
            let ds = load_dataset(&data, common.seed)?;
            let (train_set, test_set) = stratified_split(&ds, 0.2, common.seed ^ 0x7e57_da7a);
            let cfg = arch.arch(ds.n_classes(), ds.channels(), ds.window_len())?;
            let p = protocol.protocol(common.seed, false);
            let model = instantiate(&cfg, common.seed)?;
            let trained = if slimmable {
                train_slimmable(model, &train_set, &p, &[0.25, 0.5, 1.0])?
            } else {
                train_fixed(model, &train_set, &p)?
            };
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(&name);
            save_trained(&trained, &path)?;
            std::fs::write(
                path.with_extension("history.csv"),
                history_csv(&trained.history),
            )?;
            let cm = compile_multi(&trained, &[1.0])?;
            let pred = crate::driver::predict_integer(&cm, &test_set)?;
            let m = metrics(&pred, &test_set.labels, test_set.n_classes())?;
            println!("# seed={} digest={}", common.seed, cfg.digest());
            println!(
                "test accuracy={:.4} balanced_accuracy={:.4} macro_f1={:.4}",
                m.accuracy, m.balanced_accuracy, m.macro_f1
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Grid { common, plan } => {
            let plan = plan.plan(&common)?;
            let out = run_grid(&plan)?;
            println!(
                "# seed={} trained={} skipped={} failed={}",
                plan.seed, out.stats.trained, out.stats.skipped, out.stats.failed
            );
            print_row_summary(&out.rows);
            println!("results: {}", plan.out_dir.join("results.csv").display());
            Ok(())
        }
        Cmd::Nas { common, plan } => {
            let plan = plan.plan(&common)?;
            let rows = load_store(&plan.out_dir.join("results.csv"))?;
            if rows.is_empty() {
                return Err(Error::Data(
                    "results store is empty; run `grid` with 8-bit first".into(),
                ));
            }
            let out = run_mixed(&plan, &rows)?;
            println!(
                "# seed={} trained={} skipped={} failed={}",
                plan.seed, out.stats.trained, out.stats.skipped, out.stats.failed
            );
            print_row_summary(&out.rows);
            println!("sweep report: {}", plan.out_dir.join("nas_sweep.csv").display());
            Ok(())
        }
        Cmd::Compile { common, model, widths, dump_json: dj, cost_table, name } => {
            let trained = load_trained(&model)?;
            let widths: Vec<f64> = widths
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad width '{w}'")))
                })
                .collect::<Result<_>>()?;
            let cm = compile_multi(&trained, &widths)?;
            let table = match cost_table {
                Some(p) => CostTable::load(&p)?,
                None => CostTable::default(),
            };
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(&name);
            save_compiled(&cm, &path)?;
            if dj {
                std::fs::write(path.with_extension("json"), dump_json(&cm)?)?;
            }
            let report = cost_report(&cm, &table);
            println!("# seed={} digest={}", common.seed, cm.digest);
            println!("layer   w_bits a_bits macs     weight_B requant_B cycle_units");
            for l in &report.layers {
                println!(
                    "{:<7} {:<6} {:<6} {:<8} {:<8} {:<9} {:.2}",
                    l.name, l.w_bits, l.a_bits, l.macs, l.weight_bytes, l.requant_bytes, l.cycle_units
                );
            }
            println!(
                "total memory_bytes={} macs={} cycle_units={:.2}",
                report.memory_bytes, report.total_macs, report.cycle_units
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Eval { common, model, data, engine } => {
            let ds = load_dataset(&data, common.seed)?;
            let pred = match engine.as_str() {
                "integer" => {
                    let magic = std::fs::read(&model)?;
                    let cm = if magic.starts_with(b"SBH1") {
                        load_compiled(&model)?
                    } else {
                        compile_multi(&load_trained(&model)?, &[1.0])?
                    };
                    crate::driver::predict_integer(&cm, &ds)?
                }
                "float" => {
                    let mut m = load_trained(&model)?;
                    float_predict(&mut m, &ds)?
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown engine '{other}' (use integer or float)"
                    )))
                }
            };
            let m = metrics(&pred, &ds.labels, ds.n_classes())?;
            println!("# seed={} engine={engine}", common.seed);
            println!(
                "accuracy={:.4} balanced_accuracy={:.4} macro_f1={:.4}",
                m.accuracy, m.balanced_accuracy, m.macro_f1
            );
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let conf = dir.join("confusion.csv");
            std::fs::write(&conf, m.confusion.to_csv())?;
            println!("confusion matrix: {}", conf.display());
            Ok(())
        }
        Cmd::Adaptive { common, plan } => {
            let plan = plan.plan(&common)?;
            let rows = load_store(&plan.out_dir.join("results.csv"))?;
            if rows.is_empty() {
                return Err(Error::Data("results store is empty; run `grid` first".into()));
            }
            let out = build_adaptive(&plan, &rows)?;
            println!("# seed={} backbone={}", plan.seed, out.backbone_digest);
            println!(
                "w_small={} static_score={:.4} static_cost={:.1}",
                out.w_small, out.static_score, out.static_cost
            );
            println!(
                "adaptive_file_bytes={} static_file_bytes={} overhead={:.3}x",
                out.adaptive_file_bytes,
                out.static_file_bytes,
                out.adaptive_file_bytes as f64 / out.static_file_bytes as f64
            );
            println!("model: {}", out.model_path.display());
            println!("sweep: {}", out.sweep_path.display());
            Ok(())
        }
        Cmd::Sweep { common, model, data, w_small, cost_table, policy_cost, name } => {
            let cm = load_compiled(&model)?;
            let ds = load_dataset(&data, common.seed)?;
            let table = match cost_table {
                Some(p) => CostTable::load(&p)?,
                None => CostTable::default(),
            };
            let cfg = AdaptiveConfig { policy_cost_per_class: policy_cost };
            let am = AdaptiveModel::new(cm, w_small, 0.0, &table, &cfg)?;
            let points = threshold_sweep(&am, &ds, &default_thresholds())?;
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(&name);
            std::fs::write(&path, sweep_csv(&points))?;
            println!("# seed={} w_small={} points={}", common.seed, w_small, points.len());
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Report { common, results } => {
            let dir = common.out_dir();
            let store = results.unwrap_or_else(|| dir.join("results.csv"));
            let rows = load_store(&store)?;
            if rows.is_empty() {
                return Err(Error::Data(format!("no rows in {}", store.display())));
            }
            std::fs::create_dir_all(&dir)?;
            let mem_points: Vec<(f64, f64)> =
                rows.iter().map(|r| (r.balanced_accuracy, r.memory_bytes as f64)).collect();
            let cyc_points: Vec<(f64, f64)> =
                rows.iter().map(|r| (r.balanced_accuracy, r.cycle_units)).collect();
            let fronts = [
                ("front_memory.csv", pareto_indices(&mem_points), "memory_bytes"),
                ("front_cycles.csv", pareto_indices(&cyc_points), "cycle_units"),
            ];
            println!("# seed={} rows={}", common.seed, rows.len());
            for (name, idx, cost_name) in fronts {
                let mut csv = format!("digest,balanced_accuracy,{cost_name}\n");
                for &i in &idx {
                    let r = &rows[i];
                    let cost = if cost_name == "memory_bytes" {
                        r.memory_bytes as f64
                    } else {
                        r.cycle_units
                    };
                    csv.push_str(&format!("{},{},{}\n", r.digest, r.balanced_accuracy, cost));
                }
                let path = dir.join(name);
                std::fs::write(&path, csv)?;
                println!("{}: {} points", path.display(), idx.len());
            }
            let front_rows: Vec<ResultRow> =
                pareto_indices(&cyc_points).into_iter().map(|i| rows[i].clone()).collect();
            print_row_summary(&front_rows);
            Ok(())
        }
    }
}

fn float_predict(
    model: &mut TrainedModel,
    ds: &crate::data::WindowedDataset,
) -> Result<Vec<usize>> {
    let mut pred = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let x = ds.window(i);
        let (scores, _) = forward(model, &x, ForwardOpts::eval())?;
        let row = scores.data();
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        pred.push(best);
    }
    Ok(pred)
}
