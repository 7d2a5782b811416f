//! `drivesurv`: command-line pipeline from SMART snapshot CSVs to trained,
//! evaluated, and exported reliability models.
//!
//! Every command writes a run manifest (resolved arguments plus input
//! digests) sufficient to replay it bit-for-bit via `drivesurv replay`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use drivesurv::dataset::{
    build_classification_dataset, build_survival_dataset, choose_test_serials, default_catalog,
    read_class_csv, read_survival_csv, split_by_serial, write_class_csv, write_survival_csv,
    DatasetSidecar, FeatureCatalog, SurvivalSample,
};
use drivesurv::eval::{
    classification_scores, confusion_at, evaluate_table, roc_curve, select_threshold, write_roc_csv,
    EvalReport, EvalRow, ScoredSet, HORIZON_LABEL_NOTE,
};
use drivesurv::export::{tree_to_dot, write_leaf_km_csv};
use drivesurv::synth::{generate_fleet, reference_rule_spec, FleetSpec};
use drivesurv::telemetry::{
    collect_smart_keys, open_snapshot_file, read_snapshots, write_snapshots_csv,
    DriveDaySnapshot, ReadOptions,
};
use drivesurv::tree::{
    aggregate_importance, fit, fit_with_cp_grid, variable_importance, TrainConfig, Tree,
    TreeData, TreeExport, TreeKind, DEFAULT_CP_GRID,
};

#[derive(Parser)]
#[command(name = "drivesurv", version, about = "Interpretable drive-reliability modeling from SMART telemetry")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Optional JSON config merged beneath flags (flags > config > defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; per-purpose subseeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Chattier progress reporting on stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Parse snapshot CSVs (plain or .gz), optionally filter one drive model,
    /// and write a combined snapshot cache.
    Ingest(IngestArgs),
    /// Build a labeled train/test dataset from a snapshot cache.
    Dataset(DatasetArgs),
    /// Train a decision tree on a dataset produced by `dataset`.
    Train(TrainArgs),
    /// Evaluate trained trees on a held-out survival dataset.
    Evaluate(EvaluateArgs),
    /// Render a trained tree as DOT or per-leaf KM CSV.
    Export(ExportArgs),
    /// Generate a synthetic fleet with planted hazard rules.
    Synth(SynthArgs),
    /// Re-run a previously written manifest, reproducing its outputs.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Input snapshot CSV files.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Keep only rows of this exact drive model.
    #[arg(long)]
    model: Option<String>,
    /// Output cache file name (inside --out-dir).
    #[arg(long)]
    out: Option<String>,
    /// Abort when the bad-row fraction exceeds this value.
    #[arg(long)]
    max_bad_fraction: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Survival,
    Classify,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Survival => "survival",
            Mode::Classify => "classify",
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Snapshot cache produced by `ingest` (or any snapshot CSV).
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Snapshot window start (YYYY-MM-DD); defaults to the earliest cached day.
    #[arg(long)]
    window_start: Option<NaiveDate>,
    /// Snapshot window end (YYYY-MM-DD); defaults to the latest cached day.
    #[arg(long)]
    window_end: Option<NaiveDate>,
    /// Label horizon in days (classify mode).
    #[arg(long)]
    horizon: Option<u32>,
    /// Keep only drives whose failure is observed (survival mode).
    #[arg(long)]
    failing_only: bool,
    /// Fraction of drive serials assigned to the test side.
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training CSV written by `dataset`.
    #[arg(long)]
    train: PathBuf,
    /// Dataset sidecar JSON (carries the feature catalog and mode).
    #[arg(long)]
    sidecar: PathBuf,
    #[arg(long)]
    max_depth: Option<u32>,
    #[arg(long)]
    min_samples_leaf: Option<u32>,
    /// Per-split complexity penalty: a number, or `auto` for grid selection
    /// on an internal validation split.
    #[arg(long)]
    cp: Option<String>,
    /// Local-search rounds after greedy growth.
    #[arg(long)]
    rounds: Option<u32>,
    /// Output file prefix (default `tree`).
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Classification tree JSON.
    #[arg(long)]
    class_tree: PathBuf,
    /// Survival tree JSON.
    #[arg(long)]
    survival_tree: PathBuf,
    /// Held-out survival-mode dataset CSV.
    #[arg(long)]
    test: PathBuf,
    /// Sidecar of the test dataset.
    #[arg(long)]
    sidecar: PathBuf,
    /// Horizon the classification tree was trained for.
    #[arg(long)]
    class_horizon: Option<u32>,
    /// Survival-tree evaluation horizons, comma separated.
    #[arg(long)]
    horizons: Option<String>,
    /// Probability threshold: a number (default 0.05), or `youden` to pick
    /// each row's operating point by Youden's J.
    #[arg(long)]
    threshold: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExportFormat {
    Dot,
    KmCsv,
}

#[derive(Args)]
struct ExportArgs {
    /// Trained tree JSON.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Output file name (inside --out-dir).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Generate the built-in reference fleet (1000 drives x 90 days with a
    /// planted two-condition hazard rule).
    #[arg(long, conflicts_with = "spec")]
    reference: bool,
    /// Fleet specification JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest JSON written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    /// Fully resolved argument vector (config and defaults folded in),
    /// excluding `--out-dir`; replay appends its own.
    argv: Vec<String>,
    /// SHA-256 digest per input file.
    inputs: BTreeMap<String, String>,
    seed: u64,
    timestamp: String,
}

/// Flat key/value config file merged beneath command-line flags.
#[derive(Default)]
struct Config(serde_json::Map<String, serde_json::Value>);

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("config {} is not valid JSON", path.display()))?;
        match value {
            serde_json::Value::Object(map) => Ok(Config(map)),
            _ => bail!("config {} must be a JSON object", path.display()),
        }
    }

    fn str(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(|v| v.as_str()).map(str::to_string)
    }

    fn u64(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(|v| v.as_u64())
    }

    fn u32(&self, key: &str) -> Option<u32> {
        self.u64(key).map(|v| v as u32)
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(|v| v.as_f64())
    }

    fn date(&self, key: &str) -> Option<NaiveDate> {
        self.str(key).and_then(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").ok())
    }
}

/// Derive a per-purpose subseed from the master seed, so independent stages
/// draw from independent streams: first eight bytes (big endian) of
/// `SHA-256("drivesurv:<purpose>:<seed>")`.
fn subseed(seed: u64, purpose: &str) -> u64 {
    let digest = Sha256::digest(format!("drivesurv:{purpose}:{seed}").as_bytes());
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)
        .with_context(|| format!("cannot open input {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Write a file atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot rename into {}", path.display()))?;
    Ok(())
}

struct Ctx {
    out_dir: PathBuf,
    config: Config,
    seed: u64,
    verbose: bool,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn say(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    fn write_manifest(
        &self,
        command: &str,
        argv: Vec<String>,
        inputs: &[&Path],
    ) -> Result<()> {
        let mut digests = BTreeMap::new();
        for path in inputs {
            digests.insert(path.display().to_string(), sha256_file(path)?);
        }
        let manifest = RunManifest {
            tool: "drivesurv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            inputs: digests,
            seed: self.seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        write_atomic(
            &self.out(&format!("{command}_manifest.json")),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.or_else(|| config.u64("seed")).unwrap_or(0);
    let ctx = Ctx { out_dir: cli.out_dir.clone(), config, seed, verbose: cli.verbose };
    fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("cannot create out-dir {}", ctx.out_dir.display()))?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&ctx, args),
        Command::Dataset(args) => cmd_dataset(&ctx, args),
        Command::Train(args) => cmd_train(&ctx, args),
        Command::Evaluate(args) => cmd_evaluate(&ctx, args),
        Command::Export(args) => cmd_export(&ctx, args),
        Command::Synth(args) => cmd_synth(&ctx, args),
        Command::Replay(args) => cmd_replay(&ctx, args),
    }
}

fn cmd_ingest(ctx: &Ctx, args: IngestArgs) -> Result<()> {
    let model = args.model.or_else(|| ctx.config.str("model"));
    let out_name = args
        .out
        .or_else(|| ctx.config.str("out"))
        .unwrap_or_else(|| "cache.csv".into());
    let max_bad = args
        .max_bad_fraction
        .or_else(|| ctx.config.f64("max_bad_fraction"))
        .unwrap_or(ReadOptions::default().max_bad_fraction);

    let mut snapshots: Vec<DriveDaySnapshot> = Vec::new();
    let mut total_rows = 0usize;
    let mut bad_rows = 0usize;
    for path in &args.inputs {
        let reader = open_snapshot_file(path)
            .with_context(|| format!("cannot ingest {}", path.display()))?;
        let (mut snaps, errors) =
            read_snapshots(reader, &ReadOptions { max_bad_fraction: max_bad })
                .with_context(|| format!("cannot ingest {}", path.display()))?;
        total_rows += snaps.len() + errors.len();
        bad_rows += errors.len();
        for e in &errors {
            eprintln!("{}: rejected row, {e}", path.display());
        }
        if let Some(m) = &model {
            snaps.retain(|s| &s.model == m);
        }
        snapshots.extend(snaps);
    }
    let failures = snapshots.iter().filter(|s| s.failed).count();
    eprintln!(
        "ingest: {total_rows} rows read, {bad_rows} rejected, {} kept, {failures} failure rows",
        snapshots.len()
    );

    let keys = collect_smart_keys(&snapshots);
    let mut buf = Vec::new();
    write_snapshots_csv(&mut buf, &snapshots, &keys)?;
    write_atomic(&ctx.out(&out_name), &buf)?;
    ctx.say(&format!("ingest: wrote {}", ctx.out(&out_name).display()));

    let mut argv = vec!["ingest".to_string()];
    for p in &args.inputs {
        argv.push("--input".into());
        argv.push(p.display().to_string());
    }
    if let Some(m) = &model {
        argv.push("--model".into());
        argv.push(m.clone());
    }
    argv.push("--out".into());
    argv.push(out_name);
    argv.push("--max-bad-fraction".into());
    argv.push(max_bad.to_string());
    argv.push("--seed".into());
    argv.push(ctx.seed.to_string());
    let inputs: Vec<&Path> = args.inputs.iter().map(PathBuf::as_path).collect();
    ctx.write_manifest("ingest", argv, &inputs)
}

fn read_cache(path: &Path) -> Result<Vec<DriveDaySnapshot>> {
    let reader = open_snapshot_file(path)
        .with_context(|| format!("cannot read cache {}", path.display()))?;
    let (snapshots, errors) = read_snapshots(reader, &ReadOptions::default())
        .with_context(|| format!("cannot read cache {}", path.display()))?;
    for e in &errors {
        eprintln!("{}: rejected row, {e}", path.display());
    }
    Ok(snapshots)
}

fn read_sidecar(path: &Path) -> Result<DatasetSidecar> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read sidecar {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("sidecar {} is not valid", path.display()))
}

fn cmd_dataset(ctx: &Ctx, args: DatasetArgs) -> Result<()> {
    let snapshots = read_cache(&args.cache)?;
    if snapshots.is_empty() {
        bail!("cache {} holds no snapshots", args.cache.display());
    }
    let window_start = args
        .window_start
        .or_else(|| ctx.config.date("window_start"))
        .unwrap_or_else(|| snapshots.iter().map(|s| s.date).min().unwrap());
    let window_end = args
        .window_end
        .or_else(|| ctx.config.date("window_end"))
        .unwrap_or_else(|| snapshots.iter().map(|s| s.date).max().unwrap());
    let horizon = args.horizon.or_else(|| ctx.config.u32("horizon")).unwrap_or(30);
    let test_fraction = args
        .test_fraction
        .or_else(|| ctx.config.f64("test_fraction"))
        .unwrap_or(0.3);
    let failing_only = args.failing_only;

    let catalog = default_catalog(snapshots.iter().flat_map(|s| s.smart.keys().map(|k| k.id)));
    // The partition is chosen over every serial in the cache, so datasets
    // built in different modes from the same cache and seed never leak a
    // drive across the train/test boundary.
    let serials: Vec<&str> = snapshots.iter().map(|s| s.serial.as_str()).collect();
    let split_seed = subseed(ctx.seed, "serial-split");
    let test_serials = choose_test_serials(&serials, test_fraction, split_seed)
        .context("cannot split by serial")?;

    let sidecar = DatasetSidecar {
        mode: args.mode.as_str().into(),
        catalog: catalog.clone(),
        window_start,
        window_end,
        horizon_days: match args.mode {
            Mode::Classify => Some(horizon),
            Mode::Survival => None,
        },
        failing_only: match args.mode {
            Mode::Survival => Some(failing_only),
            Mode::Classify => None,
        },
        test_fraction,
        split_seed,
    };

    let (n_train, n_test) = match args.mode {
        Mode::Survival => {
            let samples = build_survival_dataset(
                &snapshots, window_start, window_end, &catalog, failing_only,
            )?;
            let (train, test): (Vec<_>, Vec<_>) =
                samples.into_iter().partition(|s| !test_serials.contains(&s.serial));
            let mut buf = Vec::new();
            write_survival_csv(&mut buf, &train, &catalog)?;
            write_atomic(&ctx.out("train.csv"), &buf)?;
            let mut buf = Vec::new();
            write_survival_csv(&mut buf, &test, &catalog)?;
            write_atomic(&ctx.out("test.csv"), &buf)?;
            (train.len(), test.len())
        }
        Mode::Classify => {
            let samples = build_classification_dataset(
                &snapshots, window_start, window_end, horizon, &catalog,
            )?;
            let (train, test): (Vec<_>, Vec<_>) =
                samples.into_iter().partition(|s| !test_serials.contains(&s.serial));
            let mut buf = Vec::new();
            write_class_csv(&mut buf, &train, &catalog)?;
            write_atomic(&ctx.out("train.csv"), &buf)?;
            let mut buf = Vec::new();
            write_class_csv(&mut buf, &test, &catalog)?;
            write_atomic(&ctx.out("test.csv"), &buf)?;
            (train.len(), test.len())
        }
    };
    write_atomic(
        &ctx.out("dataset.json"),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    eprintln!(
        "dataset: {n_train} train samples, {n_test} test samples, {} features",
        catalog.len()
    );

    let mut argv = vec![
        "dataset".to_string(),
        "--cache".into(),
        args.cache.display().to_string(),
        "--mode".into(),
        args.mode.as_str().into(),
        "--window-start".into(),
        window_start.to_string(),
        "--window-end".into(),
        window_end.to_string(),
        "--test-fraction".into(),
        test_fraction.to_string(),
        "--seed".into(),
        ctx.seed.to_string(),
    ];
    if args.mode == Mode::Classify {
        argv.push("--horizon".into());
        argv.push(horizon.to_string());
    }
    if failing_only {
        argv.push("--failing-only".into());
    }
    ctx.write_manifest("dataset", argv, &[&args.cache])
}

fn cmd_train(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let sidecar = read_sidecar(&args.sidecar)?;
    let catalog = &sidecar.catalog;
    let max_depth = args.max_depth.or_else(|| ctx.config.u32("max_depth")).unwrap_or(5);
    let min_samples_leaf = args
        .min_samples_leaf
        .or_else(|| ctx.config.u32("min_samples_leaf"))
        .unwrap_or(100);
    let rounds = args.rounds.or_else(|| ctx.config.u32("rounds")).unwrap_or(10);
    let cp_arg = args.cp.or_else(|| ctx.config.str("cp")).unwrap_or_else(|| "0".into());
    let prefix = args.prefix.or_else(|| ctx.config.str("prefix")).unwrap_or_else(|| "tree".into());

    let config = TrainConfig {
        max_depth,
        min_samples_leaf,
        complexity: 0.0,
        local_search_rounds: rounds,
        seed: subseed(ctx.seed, "local-search"),
    };

    let train_text = fs::File::open(&args.train)
        .with_context(|| format!("cannot read dataset {}", args.train.display()))?;
    let (tree, data, cp_used) = if sidecar.mode == "classify" {
        let samples = read_class_csv(train_text, catalog)?;
        train_samples(&samples, catalog, &config, &cp_arg, ctx, |s| {
            TreeData::from_class_samples(s).map_err(Into::into)
        })?
    } else {
        let samples = read_survival_csv(train_text, catalog)?;
        train_samples(&samples, catalog, &config, &cp_arg, ctx, |s| {
            TreeData::from_survival_samples(s).map_err(Into::into)
        })?
    };

    eprintln!(
        "train: {} tree, {} splits, depth {}, cp {cp_used}",
        match tree.kind {
            TreeKind::Classification => "classification",
            TreeKind::Survival => "survival",
        },
        tree.root.n_splits(),
        tree.root.depth()
    );

    let export = tree.export(catalog.column_names());
    write_atomic(&ctx.out(&format!("{prefix}.json")), export.to_json().as_bytes())?;

    let scores = variable_importance(&tree, &data);
    let mut csv = String::from("feature,score\n");
    for (name, score) in catalog.column_names().iter().zip(&scores) {
        csv.push_str(&format!("{name},{score}\n"));
    }
    write_atomic(&ctx.out(&format!("{prefix}_importance.csv")), csv.as_bytes())?;

    let mut csv = String::from("smart_id,score\n");
    for (id, score) in aggregate_importance(&scores, catalog) {
        csv.push_str(&format!("{id},{score}\n"));
    }
    write_atomic(&ctx.out(&format!("{prefix}_importance_by_id.csv")), csv.as_bytes())?;

    let argv = vec![
        "train".to_string(),
        "--train".into(),
        args.train.display().to_string(),
        "--sidecar".into(),
        args.sidecar.display().to_string(),
        "--max-depth".into(),
        max_depth.to_string(),
        "--min-samples-leaf".into(),
        min_samples_leaf.to_string(),
        "--cp".into(),
        cp_arg,
        "--rounds".into(),
        rounds.to_string(),
        "--prefix".into(),
        prefix,
        "--seed".into(),
        ctx.seed.to_string(),
    ];
    ctx.write_manifest("train", argv, &[&args.train, &args.sidecar])
}

/// Shared train path over either sample type: direct fit at a fixed cp, or
/// grid selection on an internal serial-level validation split for `auto`.
fn train_samples<S: drivesurv::dataset::HasSerial + Clone>(
    samples: &[S],
    _catalog: &FeatureCatalog,
    config: &TrainConfig,
    cp_arg: &str,
    ctx: &Ctx,
    to_data: impl Fn(&[S]) -> Result<TreeData>,
) -> Result<(Tree, TreeData, f64)> {
    let data = to_data(samples)?;
    if cp_arg == "auto" {
        let (sub, val) = split_by_serial(
            samples.to_vec(),
            0.3,
            subseed(ctx.seed, "cp-validation"),
        )
        .context("cannot build cp validation split")?;
        let (tree_sel, cp) =
            fit_with_cp_grid(&to_data(&sub)?, &to_data(&val)?, config, &DEFAULT_CP_GRID)?;
        drop(tree_sel);
        ctx.say(&format!("train: cp grid selected {cp}"));
        let tree = fit(&data, &TrainConfig { complexity: cp, ..config.clone() })?;
        Ok((tree, data, cp))
    } else {
        let cp: f64 = cp_arg
            .parse()
            .with_context(|| format!("--cp must be a number or `auto`, got {cp_arg:?}"))?;
        let tree = fit(&data, &TrainConfig { complexity: cp, ..config.clone() })?;
        Ok((tree, data, cp))
    }
}

fn read_tree(path: &Path) -> Result<Tree> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read tree {}", path.display()))?;
    let export = TreeExport::from_json(&text)
        .with_context(|| format!("tree {} is not valid", path.display()))?;
    Ok(Tree::from_export(export))
}

fn cmd_evaluate(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let sidecar = read_sidecar(&args.sidecar)?;
    if sidecar.mode != "survival" {
        bail!("evaluate needs a survival-mode test dataset (labels are re-derived per horizon)");
    }
    let class_tree = read_tree(&args.class_tree)?;
    let survival_tree = read_tree(&args.survival_tree)?;
    let test_file = fs::File::open(&args.test)
        .with_context(|| format!("cannot read dataset {}", args.test.display()))?;
    let test: Vec<SurvivalSample> = read_survival_csv(test_file, &sidecar.catalog)?;

    let class_horizon = args
        .class_horizon
        .or_else(|| ctx.config.u32("class_horizon"))
        .unwrap_or(30);
    let horizons_arg = args
        .horizons
        .or_else(|| ctx.config.str("horizons"))
        .unwrap_or_else(|| "30,60,90".into());
    let horizons: Vec<u32> = horizons_arg
        .split(',')
        .map(|h| h.trim().parse().with_context(|| format!("bad horizon {h:?}")))
        .collect::<Result<_>>()?;
    let threshold_arg = args
        .threshold
        .or_else(|| ctx.config.str("threshold"))
        .unwrap_or_else(|| "0.05".into());

    let report = if threshold_arg == "youden" {
        youden_report(&class_tree, &survival_tree, &test, class_horizon, &horizons)?
    } else {
        let threshold: f64 = threshold_arg
            .parse()
            .with_context(|| format!("--threshold must be a number or `youden`, got {threshold_arg:?}"))?;
        evaluate_table(&class_tree, &survival_tree, &test, class_horizon, &horizons, threshold)?
    };

    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&ctx.out("report.csv"), &buf)?;
    write_atomic(&ctx.out("report.json"), report.to_json().as_bytes())?;
    for row in &report.rows {
        eprintln!(
            "evaluate: {}-{}d auc {:.3} sensitivity {:.3} false-alarm {:.3}",
            row.model, row.horizon_days, row.auc, row.confusion.sensitivity,
            row.confusion.false_alarm_rate
        );
    }

    // ROC point files, one per table row.
    let scored = classification_scores(&class_tree, &test, class_horizon)?;
    let mut buf = Vec::new();
    write_roc_csv(&roc_curve(&scored)?, &mut buf)?;
    write_atomic(&ctx.out(&format!("roc_oct_{class_horizon}.csv")), &buf)?;
    for &h in &horizons {
        let scored = drivesurv::eval::survival_scores_at_horizon(&survival_tree, &test, h)?;
        let mut buf = Vec::new();
        write_roc_csv(&roc_curve(&scored)?, &mut buf)?;
        write_atomic(&ctx.out(&format!("roc_ost_{h}.csv")), &buf)?;
    }

    // Per-leaf survival curves of the survival tree.
    let mut buf = Vec::new();
    write_leaf_km_csv(&mut buf, &survival_tree)?;
    write_atomic(&ctx.out("leaf_km.csv"), &buf)?;

    let argv = vec![
        "evaluate".to_string(),
        "--class-tree".into(),
        args.class_tree.display().to_string(),
        "--survival-tree".into(),
        args.survival_tree.display().to_string(),
        "--test".into(),
        args.test.display().to_string(),
        "--sidecar".into(),
        args.sidecar.display().to_string(),
        "--class-horizon".into(),
        class_horizon.to_string(),
        "--horizons".into(),
        horizons_arg,
        "--threshold".into(),
        threshold_arg,
        "--seed".into(),
        ctx.seed.to_string(),
    ];
    ctx.write_manifest(
        "evaluate",
        argv,
        &[&args.class_tree, &args.survival_tree, &args.test, &args.sidecar],
    )
}

/// Comparison table with each row's threshold chosen by Youden's J on its own
/// ROC curve.
fn youden_report(
    class_tree: &Tree,
    survival_tree: &Tree,
    test: &[SurvivalSample],
    class_horizon: u32,
    horizons: &[u32],
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let mut add_row = |model: &str, horizon: u32, scored: &ScoredSet| -> Result<()> {
        let points = roc_curve(scored)?;
        let t = select_threshold(&points);
        rows.push(EvalRow {
            model: model.into(),
            horizon_days: horizon,
            auc: drivesurv::eval::auc(scored)?,
            confusion: confusion_at(scored, t),
        });
        Ok(())
    };
    let scored = classification_scores(class_tree, test, class_horizon)?;
    add_row("OCT", class_horizon, &scored)?;
    for &h in horizons {
        let scored = drivesurv::eval::survival_scores_at_horizon(survival_tree, test, h)?;
        add_row("OST", h, &scored)?;
    }
    let threshold = rows[0].confusion.threshold;
    Ok(EvalReport {
        threshold,
        note: format!("{HORIZON_LABEL_NOTE}; thresholds chosen per row by Youden's J"),
        rows,
    })
}

fn cmd_export(ctx: &Ctx, args: ExportArgs) -> Result<()> {
    let tree = read_tree(&args.tree)?;
    let text = fs::read_to_string(&args.tree)?;
    let export = TreeExport::from_json(&text)?;
    let (default_name, bytes) = match args.format {
        ExportFormat::Dot => (
            "tree.dot",
            tree_to_dot(&tree, &export.feature_names).into_bytes(),
        ),
        ExportFormat::KmCsv => {
            let mut buf = Vec::new();
            write_leaf_km_csv(&mut buf, &tree)?;
            ("leaf_km.csv", buf)
        }
    };
    let out_name = args
        .out
        .or_else(|| ctx.config.str("out"))
        .unwrap_or_else(|| default_name.to_string());
    write_atomic(&ctx.out(&out_name), &bytes)?;
    ctx.say(&format!("export: wrote {}", ctx.out(&out_name).display()));

    let argv = vec![
        "export".to_string(),
        "--tree".into(),
        args.tree.display().to_string(),
        "--format".into(),
        match args.format {
            ExportFormat::Dot => "dot".into(),
            ExportFormat::KmCsv => "km-csv".into(),
        },
        "--out".into(),
        out_name,
        "--seed".into(),
        ctx.seed.to_string(),
    ];
    ctx.write_manifest("export", argv, &[&args.tree])
}

fn cmd_synth(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let (spec, inputs): (FleetSpec, Vec<&Path>) = if args.reference {
        (reference_rule_spec(subseed(ctx.seed, "fleet")), vec![])
    } else if let Some(path) = &args.spec {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read spec {}", path.display()))?;
        let spec: FleetSpec = serde_json::from_str(&text)
            .with_context(|| format!("spec {} is not valid", path.display()))?;
        (spec, vec![path.as_path()])
    } else {
        bail!("synth needs either --reference or --spec <file>");
    };

    let (snapshots, truth) = generate_fleet(&spec)?;
    let failures = snapshots.iter().filter(|s| s.failed).count();
    eprintln!(
        "synth: {} drives, {} drive-days, {failures} failures",
        spec.n_drives,
        snapshots.len()
    );

    let keys = collect_smart_keys(&snapshots);
    let mut buf = Vec::new();
    write_snapshots_csv(&mut buf, &snapshots, &keys)?;
    write_atomic(&ctx.out("fleet.csv"), &buf)?;
    write_atomic(
        &ctx.out("truth.json"),
        serde_json::to_string_pretty(&truth)?.as_bytes(),
    )?;

    let mut argv = vec!["synth".to_string()];
    if args.reference {
        argv.push("--reference".into());
    } else {
        argv.push("--spec".into());
        argv.push(args.spec.as_ref().unwrap().display().to_string());
    }
    argv.push("--seed".into());
    argv.push(ctx.seed.to_string());
    ctx.write_manifest("synth", argv, &inputs)
}

fn cmd_replay(ctx: &Ctx, args: ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("cannot read manifest {}", args.manifest.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("manifest {} is not valid", args.manifest.display()))?;
    if manifest.tool != "drivesurv" {
        bail!("manifest {} was not written by this tool", args.manifest.display());
    }
    for (path, digest) in &manifest.inputs {
        let current = sha256_file(Path::new(path))?;
        if &current != digest {
            bail!("input {path} changed since the manifest was written");
        }
    }
    let mut argv = vec!["drivesurv".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    argv.push("--out-dir".into());
    argv.push(ctx.out_dir.display().to_string());
    if ctx.verbose {
        argv.push("--verbose".into());
    }
    ctx.say(&format!("replay: {}", argv.join(" ")));
    let cli = Cli::try_parse_from(&argv)
        .with_context(|| format!("manifest {} replays to invalid arguments", args.manifest.display()))?;
    run(cli)
}
