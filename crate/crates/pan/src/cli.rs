//! Command-line front end: multi-seed training runs, checkpoint
//! evaluation, MET inspection, the gradient-check suite, and raw-CSV
//! ingestion.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! failure, 5 gradient-check failure. Stdout is stable across reruns of
//! the same flags; wall-clock timing goes to stderr and per-epoch logs.

use crate::checkpoint;
use crate::data::{self, Dataset, SyntheticTask};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::met::{met_matrix, Normalization, PathWeights};
use crate::model::{Model, ModelConfig, Variant};
use crate::train::{evaluate, evaluate_or_none, train};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(name = "pan", version, about = "Path-integral graph convolution: train, evaluate, inspect")]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one or more seeded runs and summarize their ROC-AUC.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Print a graph's MET matrix, diagonal, and centrality ranking.
    InspectMet(InspectArgs),
    /// Verify tape gradients against finite differences on a fixture.
    Gradcheck(GradcheckArgs),
    /// Convert a raw CSV dataset directory to the JSON format.
    Ingest(IngestArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Pan,
    Hpan,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Pan => Variant::Pan,
            VariantArg::Hpan => Variant::Hpan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Symmetric,
    RowStochastic,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Normalization {
        match n {
            NormArg::Symmetric => Normalization::Symmetric,
            NormArg::RowStochastic => Normalization::RowStochastic,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file with flat keys; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset in the JSON graph format.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate a synthetic triangle-detection dataset of N graphs
    /// instead of loading one.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    /// Seed for the synthetic dataset (not the model).
    #[arg(long)]
    synthetic_seed: Option<u64>,
    /// Output directory for logs, checkpoints, and summary.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of independent runs; run i trains with seed + i.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<VariantArg>,
    #[arg(long)]
    emb_dim: Option<usize>,
    /// Per-layer path cutoffs, comma separated (e.g. 3,2,2).
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
    #[arg(long)]
    pool_ratio: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    normalization: Option<NormArg>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Keep the Boltzmann path weights fixed instead of training them.
    #[arg(long)]
    fixed_path_weights: bool,
    /// Print the summary as one JSON document.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Optional config cross-check: must agree with the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

impl SplitArg {
    fn name(self) -> &'static str {
        match self {
            SplitArg::Train => "train",
            SplitArg::Valid => "valid",
            SplitArg::Test => "test",
            SplitArg::All => "all",
        }
    }
}

#[derive(Args)]
struct InspectArgs {
    /// Dataset in the JSON graph format.
    #[arg(long)]
    data: PathBuf,
    /// Graph index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Maximal path length L.
    #[arg(long, default_value_t = 3)]
    cutoff: usize,
    /// Boltzmann temperature for the path weights.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Explicit per-length weights w_0,..,w_L (overrides cutoff and
    /// temperature), e.g. 1,1,1 for unweighted walk sums.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["cutoff", "temperature"])]
    weights: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = NormArg::Symmetric)]
    normalization: NormArg,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Variant to check; both when omitted.
    #[arg(long)]
    variant: Option<VariantArg>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Relative error tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Embedding width of the fixture model.
    #[arg(long)]
    emb_dim: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Directory holding the raw CSV files (edge.csv, node-feat.csv, ...).
    #[arg(long)]
    raw: PathBuf,
    /// Destination JSON file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::InspectMet(args) => cmd_inspect_met(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::Ingest(args) => cmd_ingest(args),
    }
}

/// Everything a training invocation needs: the model config plus data
/// sourcing and run-count bookkeeping. A config file carries the same
/// keys, flat, next to the model keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub synthetic_seed: u64,
    pub out: PathBuf,
    pub runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            data: None,
            synthetic: None,
            synthetic_seed: 0,
            out: PathBuf::from("pan-runs"),
            runs: 1,
        }
    }
}

fn take<T: serde::de::DeserializeOwned>(
    map: &mut serde_json::Map<String, Value>,
    key: &str,
) -> Result<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| Error::Config(format!("config key {key}: {e}"))),
    }
}

/// Parses a flat-key JSON config: run-level keys are peeled off, the rest
/// must form a valid model config (unknown keys rejected).
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut map: serde_json::Map<String, Value> = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config file is not a JSON object: {e}")))?;
    let defaults = RunConfig::default();
    let data = take(&mut map, "data")?;
    let synthetic = take(&mut map, "synthetic")?;
    let synthetic_seed = take(&mut map, "synthetic_seed")?.unwrap_or(defaults.synthetic_seed);
    let out = take(&mut map, "out")?.unwrap_or(defaults.out);
    let runs = take(&mut map, "runs")?.unwrap_or(defaults.runs);
    let model: ModelConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::Config(format!("config: {e}")))?;
    Ok(RunConfig {
        model,
        data,
        synthetic,
        synthetic_seed,
        out,
        runs,
    })
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            if !p.is_file() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            parse_run_config(&fs::read_to_string(p)?)
        }
    }
}

fn apply_train_overrides(rc: &mut RunConfig, args: &TrainArgs) {
    macro_rules! set {
        ($target:expr, $src:expr) => {
            if let Some(v) = $src {
                $target = v;
            }
        };
    }
    set!(rc.data, args.data.clone().map(Some));
    set!(rc.synthetic, args.synthetic.map(Some));
    set!(rc.synthetic_seed, args.synthetic_seed);
    set!(rc.out, args.out.clone());
    set!(rc.runs, args.runs);
    set!(rc.model.seed, args.seed);
    set!(rc.model.variant, args.variant.map(Variant::from));
    set!(rc.model.emb_dim, args.emb_dim);
    set!(rc.model.conv_cutoffs, args.cutoffs.clone());
    set!(rc.model.pool_ratio, args.pool_ratio);
    set!(rc.model.alpha, args.alpha.map(Some));
    set!(rc.model.normalization, args.normalization.map(Normalization::from));
    set!(rc.model.temperature, args.temperature);
    set!(rc.model.epochs, args.epochs);
    set!(rc.model.batch_size, args.batch_size);
    set!(rc.model.learning_rate, args.learning_rate);
    if args.fixed_path_weights {
        rc.model.trainable_path_weights = false;
    }
}

fn load_dataset(rc: &RunConfig) -> Result<Dataset> {
    match (&rc.data, rc.synthetic) {
        (Some(_), Some(_)) => Err(Error::Config(
            "give either a data path or a synthetic size, not both".into(),
        )),
        (Some(path), None) => data::load_json_graphs(path),
        (None, Some(n)) => data::make_synthetic(SyntheticTask::TriangleDetection, n, rc.synthetic_seed),
        (None, None) => Err(Error::Config(
            "no dataset: pass --data FILE or --synthetic N".into(),
        )),
    }
}

/// Worker-pool width: PAN_NUM_THREADS if set, else available parallelism.
fn thread_cap() -> Result<usize> {
    match std::env::var("PAN_NUM_THREADS") {
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::Config(format!("PAN_NUM_THREADS must be a positive integer, got {raw:?}"))
            }),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, usize::from)),
    }
}

/// Per-run outcome; everything here is deterministic given the config.
#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    run: usize,
    seed: u64,
    best_epoch: Option<usize>,
    final_loss: f64,
    train_auc: Option<f64>,
    val_auc: Option<f64>,
    test_auc: Option<f64>,
    log: String,
    checkpoint: String,
}

#[derive(Debug, Clone, Serialize)]
struct Aggregate {
    n: usize,
    mean: f64,
    /// Sample standard deviation; absent for fewer than two values.
    std: Option<f64>,
}

fn aggregate(values: &[f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Some(Aggregate { n, mean, std })
}

/// Mean ± sample std as percentages, the usual benchmark-table format.
fn percent_line(agg: &Option<Aggregate>) -> String {
    match agg {
        None => "n/a".into(),
        Some(a) => match a.std {
            Some(std) => format!("{:.2} ± {:.2}", a.mean * 100.0, std * 100.0),
            None => format!("{:.2} (single run)", a.mean * 100.0),
        },
    }
}

#[derive(Serialize)]
struct TrainReport {
    config: ModelConfig,
    runs: Vec<RunSummary>,
    train_auc: Option<Aggregate>,
    val_auc: Option<Aggregate>,
    test_auc: Option<Aggregate>,
}

fn one_run(rc: &RunConfig, dataset: &Dataset, run: usize) -> Result<RunSummary> {
    let mut config = rc.model.clone();
    config.seed = rc.model.seed + run as u64;
    let log_path = rc.out.join(format!("run-{run}.jsonl"));
    let ckpt_path = rc.out.join(format!("run-{run}.panw"));
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path)?);
    let mut write_err: Option<std::io::Error> = None;
    let started = std::time::Instant::now();
    let result = train(&config, dataset, |rec| {
        if write_err.is_none() {
            let line = serde_json::to_string(rec).expect("epoch records serialize");
            if let Err(e) = writeln!(log, "{line}") {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log.flush()?;
    checkpoint::save(&result.model, &ckpt_path)?;
    let splits = dataset.splits();
    let summary = RunSummary {
        run,
        seed: config.seed,
        best_epoch: result.best_epoch,
        final_loss: result.history.last().expect("at least one epoch").mean_loss,
        train_auc: evaluate_or_none(&result.model, dataset, &splits.train)?,
        val_auc: evaluate_or_none(&result.model, dataset, &splits.valid)?,
        test_auc: evaluate_or_none(&result.model, dataset, &splits.test)?,
        log: log_path.display().to_string(),
        checkpoint: ckpt_path.display().to_string(),
    };
    eprintln!(
        "run {run} done in {:.1} s ({} epochs)",
        started.elapsed().as_secs_f64(),
        result.history.len()
    );
    Ok(summary)
}

fn run_all(rc: &RunConfig, dataset: &Dataset, threads: usize) -> Result<Vec<RunSummary>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunSummary>>>> =
        (0..rc.runs).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(rc.runs) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= rc.runs {
                    break;
                }
                let outcome = one_run(rc, dataset, i);
                *slots[i].lock().expect("no poisoned run slot") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned run slot").expect("every run executed"))
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut rc = load_run_config(args.config.as_deref())?;
    apply_train_overrides(&mut rc, &args);
    rc.model.validate()?;
    if rc.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let dataset = load_dataset(&rc)?;
    fs::create_dir_all(&rc.out)?;

    // One probe init for the parameter breakdown; runs re-init per seed.
    let probe = Model::init(
        rc.model.clone(),
        dataset.node_cardinalities(),
        dataset.edge_cardinalities(),
        &mut ChaCha8Rng::seed_from_u64(rc.model.seed),
    )?;
    let report = probe.count_parameters();
    drop(probe);

    let results = run_all(&rc, &dataset, thread_cap()?)?;
    let collect = |pick: fn(&RunSummary) -> Option<f64>| -> Vec<f64> {
        results.iter().filter_map(pick).collect()
    };
    let train_auc = aggregate(&collect(|r| r.train_auc));
    let val_auc = aggregate(&collect(|r| r.val_auc));
    let test_auc = aggregate(&collect(|r| r.test_auc));
    let doc = TrainReport {
        config: rc.model.clone(),
        runs: results,
        train_auc,
        val_auc,
        test_auc,
    };
    fs::write(rc.out.join("summary.json"), serde_json::to_string_pretty(&doc)?)?;

    if args.json {
        println!("{}", serde_json::to_string_pretty(&doc)?);
        return Ok(0);
    }
    println!("{} model, {} graphs, {} run(s)", rc.model.variant, dataset.len(), rc.runs);
    print!("{report}");
    for r in &doc.runs {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "n/a".into(),
        };
        println!(
            "run {}: seed {}, best epoch {}, final loss {:.4}, val auc {}, test auc {}",
            r.run,
            r.seed,
            r.best_epoch.map_or("final".into(), |e| e.to_string()),
            r.final_loss,
            fmt(r.val_auc),
            fmt(r.test_auc),
        );
    }
    println!("summary (roc-auc %, mean ± sample std over {} runs)", doc.runs.len());
    println!("  train: {}", percent_line(&doc.train_auc));
    println!("  val:   {}", percent_line(&doc.val_auc));
    println!("  test:  {}", percent_line(&doc.test_auc));
    println!("artifacts in {}", rc.out.display());
    Ok(0)
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let model = checkpoint::load(&args.checkpoint)?;
    if let Some(cfg_path) = &args.config {
        let rc = load_run_config(Some(cfg_path))?;
        let stored = model.config();
        if rc.model.emb_dim != stored.emb_dim {
            return Err(Error::Config(format!(
                "config emb_dim {} disagrees with checkpoint emb_dim {}",
                rc.model.emb_dim, stored.emb_dim
            )));
        }
        if rc.model != *stored {
            return Err(Error::Config(
                "config disagrees with the checkpoint's stored config".into(),
            ));
        }
    }
    let dataset = data::load_json_graphs(&args.data)?;
    let (node_cards, edge_cards) = (dataset.node_cardinalities(), dataset.edge_cardinalities());
    for (what, have, need) in [
        ("node", model.node_cardinalities(), node_cards),
        ("edge", model.edge_cardinalities(), edge_cards),
    ] {
        if need.len() > have.len() || need.iter().zip(have).any(|(n, h)| n > h) {
            return Err(Error::Config(format!(
                "checkpoint encodes {what} fields {have:?}, dataset needs {need:?}"
            )));
        }
    }
    let all: Vec<usize>;
    let splits = dataset.splits();
    let indices: &[usize] = match args.split {
        SplitArg::Train => &splits.train,
        SplitArg::Valid => &splits.valid,
        SplitArg::Test => &splits.test,
        SplitArg::All => {
            all = (0..dataset.len()).collect();
            &all
        }
    };
    if indices.is_empty() {
        return Err(Error::Config(format!("split {} is empty", args.split.name())));
    }
    let auc = evaluate(&model, &dataset, indices)?;
    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "split": args.split.name(),
                "graphs": indices.len(),
                "roc_auc": auc,
            })
        );
    } else {
        println!("roc-auc on {} ({} graphs): {:.6}", args.split.name(), indices.len(), auc);
    }
    Ok(0)
}

fn cmd_inspect_met(args: InspectArgs) -> Result<i32> {
    let dataset = data::load_json_graphs(&args.data)?;
    if args.index >= dataset.len() {
        return Err(Error::IndexOutOfRange {
            index: args.index,
            len: dataset.len(),
        });
    }
    let g = dataset.graph(args.index);
    let weights = match &args.weights {
        None => PathWeights::boltzmann(args.cutoff, args.temperature)?,
        Some(w) => {
            if w.is_empty() || w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config(format!(
                    "explicit weights must be positive, got {w:?}"
                )));
            }
            PathWeights::from_weights(w)
        }
    };
    let cutoff = weights.cutoff();
    let norm = Normalization::from(args.normalization);
    let met = met_matrix(g, &weights, norm)?;
    let n = g.num_nodes();
    let mut ranking: Vec<usize> = (0..n).collect();
    // Ranking by centrality: higher diagonal first, ties by lower index.
    ranking.sort_by(|&a, &b| {
        met.diag[b].partial_cmp(&met.diag[a]).expect("finite diagonal").then(a.cmp(&b))
    });
    if args.json {
        let matrix: Vec<Vec<f64>> = (0..n).map(|i| met.m.row(i).to_vec()).collect();
        println!(
            "{}",
            serde_json::json!({
                "num_nodes": n,
                "cutoff": cutoff,
                "weights": weights.weights(),
                "normalization": norm,
                "matrix": matrix,
                "diag": met.diag,
                "partition": met.z,
                "ranking": ranking,
            })
        );
        return Ok(0);
    }
    println!(
        "MET matrix of graph {} (n = {}, L = {}, {:?}):",
        args.index, n, cutoff, norm
    );
    for i in 0..n {
        let row: Vec<String> = met.m.row(i).iter().map(|v| format!("{v:9.6}")).collect();
        println!("  {}", row.join(" "));
    }
    let diag: Vec<String> = met.diag.iter().map(|v| format!("{v:.6}")).collect();
    println!("diag: {}", diag.join(" "));
    let rank: Vec<String> = ranking.iter().map(usize::to_string).collect();
    println!("ranking by centrality: {}", rank.join(" "));
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let variants: Vec<Variant> = match args.variant {
        Some(v) => vec![v.into()],
        None => vec![Variant::Pan, Variant::Hpan],
    };
    let mut reports = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut config = gradcheck::fixture_config(variant);
        if let Some(d) = args.emb_dim {
            config.emb_dim = d;
        }
        reports.push(gradcheck::check_fixture(&config, args.h, args.tol)?);
    }
    let all_pass = reports.iter().all(|r| r.all_pass());
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for r in &reports {
            println!("{r}");
        }
    }
    Ok(if all_pass { 0 } else { 5 })
}

fn cmd_ingest(args: IngestArgs) -> Result<i32> {
    let loaded = data::load_ogb_raw(&args.raw)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    data::save_json(&loaded.dataset, &args.out)?;
    let ds = &loaded.dataset;
    let s = ds.splits();
    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "graphs": ds.len(),
                "train": s.train.len(),
                "valid": s.valid.len(),
                "test": s.test.len(),
                "node_cardinalities": ds.node_cardinalities(),
                "edge_cardinalities": ds.edge_cardinalities(),
                "warnings": loaded.warnings.len(),
                "out": args.out.display().to_string(),
            })
        );
    } else {
        println!(
            "wrote {} graphs ({} train / {} valid / {} test) to {}",
            ds.len(),
            s.train.len(),
            s.valid.len(),
            s.test.len(),
            args.out.display()
        );
    }
    Ok(0)
}
