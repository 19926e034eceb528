//! `rescan` command line: dataset synthesis, training, deraining,
//! evaluation and the self-checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rescan::audit::{model_gradient_check, op_gradient_suite, param_audit, rf_check};
use rescan::kv::KvMap;
use rescan::model::{DerainNet, RescanConfig, ScanConfig};
use rescan::nn::RecurrentKind;
use rescan::rain::{load_split, make_dataset, DatasetSpec, RainModel, Split};
use rescan::raster::Raster;
use rescan::train::{evaluate, init_network, train, TrainConfig, TrainOptions};
use rescan::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "rescan", version, about = "Single-image rain streak removal with recurrent context aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise rainy/clean/residual PNG triples plus a manifest.
    Synth(SynthArgs),
    /// Train a network on a synthesised dataset.
    Train(TrainArgs),
    /// Remove rain from images with a trained checkpoint.
    Derain(DerainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Compare the closed-form receptive field with a perturbation probe.
    RfCheck(RfCheckArgs),
    /// Finite-difference gradient check of every op and of a whole network.
    GradCheck(GradCheckArgs),
    /// Weight counts of the recurrent units against a plain convolution.
    ParamAudit(ParamAuditArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file (keys: model, pairs, test_pairs, size, seed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rain composition: single, layered or hazy.
    #[arg(long)]
    model: Option<RainModel>,
    /// Total number of pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// How many of the last pairs form the test split.
    #[arg(long)]
    test_pairs: Option<usize>,
    /// Image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    /// Single stage, no recurrence.
    Scan,
    /// Multi-stage with recurrent state.
    Rescan,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    /// 2000 iterations at batch 16.
    Desk,
    /// 20000 iterations at batch 64.
    FullScale,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// `scan` forces one stage, no unit and the additive framework.
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    /// Recurrent unit: none, rnn, gru or lstm.
    #[arg(long)]
    unit: Option<String>,
    /// Stage composition: iter, additive or full.
    #[arg(long)]
    framework: Option<String>,
    /// Drop the squeeze-and-excitation blocks.
    #[arg(long)]
    no_se: bool,
    /// Set every dilation to one.
    #[arg(long)]
    plain: bool,
}

impl ModelFlags {
    fn overrides(&self) -> Result<KvMap> {
        let mut kv = KvMap::new();
        if let Some(v) = self.depth {
            kv.set("depth", v);
        }
        if let Some(v) = self.width {
            kv.set("width", v);
        }
        if let Some(v) = self.stages {
            kv.set("stages", v);
        }
        if let Some(v) = &self.unit {
            kv.set("unit", v);
        }
        if let Some(v) = &self.framework {
            kv.set("framework", v);
        }
        if self.no_se {
            kv.set("use_se", false);
        }
        if self.plain {
            kv.set("all_dilation_one", true);
        }
        if self.arch == Some(Arch::Scan) {
            let conflicting = self.stages.is_some_and(|s| s != 1)
                || self.unit.as_deref().is_some_and(|u| !u.eq_ignore_ascii_case("none"))
                || self.framework.is_some();
            if conflicting {
                return Err(Error::Config(
                    "--arch scan fixes stages = 1, unit = none and the additive framework".into(),
                ));
            }
            kv.set("stages", 1);
            kv.set("unit", "none");
            kv.set("framework", "additive");
        }
        Ok(kv)
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Base schedule the other flags adjust.
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated iterations at which the learning rate drops tenfold.
    #[arg(long)]
    lr_drops: Option<String>,
    /// Seeds the initial weights, the crops and the batch order.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Score the test split every this many iterations (0: never).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
}

impl TrainFlags {
    fn overrides(&self) -> KvMap {
        let mut kv = KvMap::new();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(key, v);
            }
        };
        put("iterations", self.iterations.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("patch_size", self.patch_size.map(|v| v.to_string()));
        put("patches_per_image", self.patches_per_image.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("lr_drops", self.lr_drops.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()));
        put("eval_every", self.eval_every.map(|v| v.to_string()));
        put("log_every", self.log_every.map(|v| v.to_string()));
        kv
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long)]
    data: PathBuf,
    /// Where checkpoints, the log and the effective config go.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file with model and training keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    schedule: TrainFlags,
}

#[derive(Args)]
struct DerainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write exact 32-bit raw dumps next to every PNG.
    #[arg(long)]
    raw: bool,
    /// Also write each stage's streak prediction.
    #[arg(long)]
    dump_stages: bool,
    /// Rainy images (PNG, or raw dumps with a `.raw` extension).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Per-image CSV destination.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct RfCheckArgs {
    #[arg(long, default_value_t = 7)]
    depth: usize,
    /// Probe the network with every dilation set to one.
    #[arg(long)]
    plain: bool,
}

#[derive(Args)]
struct GradCheckArgs {
    /// `key = value` file with model keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Probed parameter elements per check.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Rnn,
    Gru,
    Lstm,
    All,
}

#[derive(Args)]
struct ParamAuditArgs {
    #[arg(long, value_enum, default_value = "all")]
    unit: UnitArg,
    /// Input and hidden width of the audited layer.
    #[arg(long, default_value_t = 8)]
    channels: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Derain(a) => derain(a),
        Command::Eval(a) => eval(a),
        Command::RfCheck(a) => run_rf_check(a),
        Command::GradCheck(a) => grad_check(a),
        Command::ParamAudit(a) => run_param_audit(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Config-file values over `defaults`, then flag values over both.
fn layered_config(defaults: KvMap, file: Option<&Path>, flags: &KvMap) -> Result<KvMap> {
    let mut kv = defaults;
    if let Some(path) = file {
        kv.merge(&KvMap::read(path)?);
    }
    kv.merge(flags);
    Ok(kv)
}

fn print_effective(kv: &KvMap) {
    println!("# effective configuration\n{kv}");
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn synth(args: SynthArgs) -> Result<()> {
    let base = DatasetSpec::desk_default(0);
    let mut defaults = KvMap::new();
    defaults.set("model", base.model);
    defaults.set("pairs", base.pairs);
    defaults.set("test_pairs", base.test_pairs);
    defaults.set("size", base.height);
    defaults.set("seed", base.seed);
    let mut flags = KvMap::new();
    if let Some(v) = args.model {
        flags.set("model", v);
    }
    if let Some(v) = args.pairs {
        flags.set("pairs", v);
    }
    if let Some(v) = args.test_pairs {
        flags.set("test_pairs", v);
    }
    if let Some(v) = args.size {
        flags.set("size", v);
    }
    if let Some(v) = args.seed {
        flags.set("seed", v);
    }
    let kv = layered_config(defaults, args.config.as_deref(), &flags)?;
    print_effective(&kv);
    let spec = DatasetSpec {
        test_pairs: kv.parse_or("test_pairs", base.test_pairs)?,
        ..DatasetSpec::new(
            kv.parse_or("model", base.model)?,
            kv.parse_or("pairs", base.pairs)?,
            base.test_pairs,
            kv.parse_or("size", base.height)?,
            kv.parse_or("seed", base.seed)?,
        )
    };
    let manifest = make_dataset(&spec, &args.out)?;
    println!(
        "wrote {} pairs ({} test) to {}",
        manifest.records.len(),
        manifest.split(Split::Test).count(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let schedule = match args.schedule.protocol {
        Some(Protocol::FullScale) => TrainConfig::full_scale(),
        _ => TrainConfig::desk(),
    };
    let mut defaults = RescanConfig::default().to_kv();
    defaults.merge(&schedule.to_kv());
    let mut flags = args.model.overrides()?;
    flags.merge(&args.schedule.overrides());
    let kv = layered_config(defaults, args.config.as_deref(), &flags)?;
    let model_cfg = RescanConfig::from_kv(&kv, &RescanConfig::default())?;
    let train_cfg = TrainConfig::from_kv(&kv, &schedule)?;
    let mut effective = model_cfg.to_kv();
    effective.merge(&train_cfg.to_kv());
    print_effective(&effective);
    create_dir(&args.out)?;
    effective.write(&args.out.join("effective.cfg"))?;

    let train_set = load_split(&args.data, Split::Train)?;
    let test_set = load_split(&args.data, Split::Test)?;
    let net = init_network(&model_cfg, train_cfg.seed)?;
    println!("{} trainable parameters", net.param_count());
    let options = TrainOptions {
        out_dir: Some(args.out.clone()),
        eval_set: (!test_set.is_empty()).then_some(test_set.as_slice()),
    };
    train(&net, &train_set, &train_cfg, &options)?;
    if !test_set.is_empty() {
        let report = evaluate(&net, &test_set)?;
        write_text(&args.out.join("eval.csv"), &report.to_csv())?;
        println!("{}", report.summary());
    }
    println!("checkpoint written to {}", args.out.join("final.ckpt").display());
    Ok(())
}

fn load_input(path: &Path) -> Result<Raster> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw")) {
        Raster::load_raw(path)
    } else {
        Raster::load_png(path)
    }
}

fn derain(args: DerainArgs) -> Result<()> {
    let net: DerainNet = DerainNet::load(&args.checkpoint)?;
    let mut effective = net.config.to_kv();
    effective.set("checkpoint", args.checkpoint.display());
    effective.set("raw", args.raw);
    effective.set("dump_stages", args.dump_stages);
    print_effective(&effective);
    create_dir(&args.out)?;
    for input in &args.inputs {
        let rainy = load_input(input)?;
        let result = net.rescan_forward(&rainy.to_tensor(), false)?;
        let stem = input
            .file_stem()
            .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
        let background = Raster::from_tensor(&result.background.detach(), 0)?;
        let out = args.out.join(format!("{stem}_derained.png"));
        background.save_png(&out)?;
        if args.raw {
            background.save_raw(&out.with_extension("raw"))?;
        }
        if args.dump_stages {
            for (s, pred) in result.stage_preds.iter().enumerate() {
                let streaks = Raster::from_tensor(&pred.detach(), 0)?;
                let path = args.out.join(format!("{stem}_stage{}.png", s + 1));
                streaks.save_residual_png(&path)?;
                if args.raw {
                    streaks.save_raw(&path.with_extension("raw"))?;
                }
            }
        }
        println!("{} -> {}", input.display(), out.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let net: DerainNet = DerainNet::load(&args.checkpoint)?;
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut effective = net.config.to_kv();
    effective.set("checkpoint", args.checkpoint.display());
    effective.set("data", args.data.display());
    effective.set("split", split.name());
    print_effective(&effective);
    let samples = load_split(&args.data, split)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", split.name())));
    }
    let report = evaluate(&net, &samples)?;
    if let Some(path) = &args.csv {
        write_text(path, &report.to_csv())?;
    }
    println!("{}", report.summary());
    Ok(())
}

fn run_rf_check(args: RfCheckArgs) -> Result<()> {
    let rf = rf_check(args.depth, args.plain)?;
    let mode = if rf.plain { "undilated" } else { "dilated" };
    println!(
        "depth {} ({mode}): analytic {} (dilated formula), expected {}, empirical {}×{}  {}",
        rf.depth,
        rf.analytic,
        rf.expected,
        rf.empirical.height,
        rf.empirical.width,
        if rf.passes() { "PASS" } else { "FAIL" }
    );
    if rf.passes() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!(
            "measured {}×{}, expected {}",
            rf.empirical.height, rf.empirical.width, rf.expected
        )))
    }
}

fn grad_check(args: GradCheckArgs) -> Result<()> {
    let base = RescanConfig {
        scan: ScanConfig {
            depth: 5,
            width: 4,
            ..ScanConfig::default()
        },
        stages: 2,
        ..RescanConfig::default()
    };
    let kv = layered_config(base.to_kv(), args.config.as_deref(), &args.model.overrides()?)?;
    let config = RescanConfig::from_kv(&kv, &base)?;
    let mut effective = config.to_kv();
    effective.set("samples", args.samples);
    effective.set("tol", args.tol);
    effective.set("seed", args.seed);
    print_effective(&effective);

    let mut failed = Vec::new();
    let mut line = |name: &str, max: f64, probes: usize, kinks: usize| {
        let ok = probes > 0 && max < args.tol;
        println!(
            "{name:<22} max rel err {max:.3e} over {probes} probes ({kinks} kinks redrawn)  {}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(name.to_string());
        }
    };
    for (name, report) in op_gradient_suite(args.samples, args.seed)? {
        line(name, report.max_rel_err(), report.probes.len(), report.kinks);
    }
    let report = model_gradient_check(&config, args.samples, args.seed)?;
    line("network", report.max_rel_err(), report.probes.len(), report.kinks);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient mismatch in {}", failed.join(", "))))
    }
}

fn run_param_audit(args: ParamAuditArgs) -> Result<()> {
    let units: &[RecurrentKind] = match args.unit {
        UnitArg::Rnn => &[RecurrentKind::Rnn],
        UnitArg::Gru => &[RecurrentKind::Gru],
        UnitArg::Lstm => &[RecurrentKind::Lstm],
        UnitArg::All => &[RecurrentKind::Rnn, RecurrentKind::Gru, RecurrentKind::Lstm],
    };
    let mut failed = Vec::new();
    for &unit in units {
        let audit = param_audit(unit, args.channels)?;
        let ok = audit.matches_stated();
        println!(
            "{:<5} plain {:>6}  unit {:>6}  ratio {:.3} (stated {}.000)  {}",
            unit.name(),
            audit.plain_weights,
            audit.unit_weights,
            audit.ratio(),
            audit.stated_ratio,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{} is {:.3}× rather than {}×", unit.name(), audit.ratio(), audit.stated_ratio));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(failed.join("; ")))
    }
}
