//! Command-line front end: `prepare`, `train`, `evaluate` and `export`.
//!
//! Training options come from built-in defaults, then an optional flat
//! `key = value` config file, then command-line flags. Relative data paths are
//! resolved against `$NCCF_DATA_ROOT` when it is set.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, Format, SplitRatios};
use crate::error::Error;
use crate::evaluator::{full_rank_eval, sparsity_group_report, EvalOptions, Target};
use crate::graph::NormalizedAdjacency;
use crate::model::{self, forward, Checkpoint, ExportKind};
use crate::trainer::{ClusterSource, TrainConfig, Trainer};

pub const DATA_ROOT_ENV: &str = "NCCF_DATA_ROOT";
pub const MODEL_FILE: &str = "model.ckpt";
pub const RESUME_FILE: &str = "resume.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "nccf", version, about = "Graph collaborative filtering with neighborhood contrast")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter an interaction log and write train/valid/test splits.
    Prepare(PrepareArgs),
    /// Train a model on a prepared split.
    Train(Box<TrainArgs>),
    /// Full-ranking evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Write user and item representations of a checkpoint.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "tsv")]
    pub format: Format,
    /// Minimum interactions per user and per item (k-core); 0 or 1 disables.
    #[arg(long, default_value_t = 0)]
    pub min_count: usize,
    /// Keep only records whose rating (third field) is at least this value.
    #[arg(long)]
    pub min_rating: Option<f64>,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: SplitRatios,
    #[arg(long, default_value_t = 2021)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reuse the config recorded in a previous run manifest.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Continue from `<out>/resume.ckpt`.
    #[arg(long)]
    pub resume: bool,
    /// Validate config and data, then exit without training.
    #[arg(long)]
    pub dry_run: bool,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(flatten)]
    pub overrides: ConfigFlags,
}

/// One flag per training option.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "layers")]
    pub layers: Option<usize>,
    #[arg(long)]
    pub k_layer: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    /// Comma-separated cluster counts.
    #[arg(long)]
    pub k_users: Option<String>,
    #[arg(long)]
    pub k_items: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kmeans_iters: Option<usize>,
    #[arg(long)]
    pub kmeans_tol: Option<f64>,
    #[arg(long)]
    pub cluster_source: Option<ClusterSource>,
    /// Number of validation users per epoch, or `all`.
    #[arg(long)]
    pub valid_user_cap: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(ToString::to_string)
        }
        let source = self.cluster_source.map(|c| match c {
            ClusterSource::Embeddings => "embeddings".to_string(),
            ClusterSource::Readout => "readout".to_string(),
        });
        [
            ("d", s(&self.d)),
            ("layers", s(&self.layers)),
            ("k_layer", s(&self.k_layer)),
            ("tau", s(&self.tau)),
            ("alpha", s(&self.alpha)),
            ("lambda1", s(&self.lambda1)),
            ("lambda2", s(&self.lambda2)),
            ("lambda3", s(&self.lambda3)),
            ("k_users", self.k_users.clone()),
            ("k_items", self.k_items.clone()),
            ("batch_size", s(&self.batch_size)),
            ("lr", s(&self.lr)),
            ("beta1", s(&self.beta1)),
            ("beta2", s(&self.beta2)),
            ("eps", s(&self.eps)),
            ("max_epochs", s(&self.max_epochs)),
            ("patience", s(&self.patience)),
            ("seed", s(&self.seed)),
            ("kmeans_iters", s(&self.kmeans_iters)),
            ("kmeans_tol", s(&self.kmeans_tol)),
            ("cluster_source", source),
            ("valid_user_cap", self.valid_user_cap.clone()),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub target: TargetArg,
    #[arg(long, value_delimiter = ',', default_value = "10,20,50")]
    pub ns: Vec<usize>,
    /// Also report this many sparsity groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Rank validation positives as candidates when evaluating the test split.
    #[arg(long)]
    pub no_mask_valid: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Binary,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Readout,
    Embeddings,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split directory supplying the original user and item keys.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ExportFormat,
    #[arg(long, value_enum, default_value = "readout")]
    pub kind: KindArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub config: TrainConfig,
    pub split_dir: PathBuf,
    /// SHA-256 of every split file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output written by the run.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        // Ignored when a pool already exists, which only happens in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

/// Resolves a relative data path against `$NCCF_DATA_ROOT`.
pub fn data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn cmd_prepare(a: &PrepareArgs) -> anyhow::Result<()> {
    let input = data_path(&a.input);
    let mut raw = dataset::load_interactions(&input, a.format)?;
    if let Some(threshold) = a.min_rating {
        raw = dataset::filter_min_rating(&raw, threshold)?;
    }
    let filtered = dataset::k_core_filter(&raw, a.min_count)?;
    let mut split = dataset::build_split(&filtered, a.ratios, a.seed)?;
    split.min_count = a.min_count;
    dataset::write_split(&split, &a.out)?;

    let mut files = BTreeMap::new();
    files.insert("input".to_string(), sha256_file(&input)?);
    for name in split_file_names() {
        files.insert(name.to_string(), sha256_file(&a.out.join(name))?);
    }
    let manifest = serde_json::json!({
        "input": input,
        "format": a.format,
        "min_count": a.min_count,
        "min_rating": a.min_rating,
        "ratios": a.ratios,
        "seed": a.seed,
        "checksums": files,
    });
    let path = a.out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    let h = split.header();
    eprintln!(
        "prepared {} users, {} items: {} train / {} valid / {} test",
        h.n_users, h.n_items, h.counts.train, h.counts.valid, h.counts.test
    );
    Ok(())
}

fn split_file_names() -> Vec<&'static str> {
    let mut names = vec![dataset::HEADER_FILE];
    names.extend(dataset::SPLIT_FILES);
    names.extend([dataset::USER_MAP_FILE, dataset::ITEM_MAP_FILE]);
    names
}

/// Reads a flat `key = value` config file. `#` starts a comment.
pub fn parse_config_text(text: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`, found `{line}`", n + 1);
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn canonical_key(key: &str) -> String {
    match key.replace('-', "_").as_str() {
        "layers" | "l" | "L" => "L".into(),
        "batch" => "batch_size".into(),
        other => other.into(),
    }
}

/// Sets one config field from its textual value.
pub fn apply_setting(config: &mut TrainConfig, key: &str, value: &str) -> Result<(), Error> {
    let key = canonical_key(key);
    let mut json = serde_json::to_value(&*config)?;
    let obj = json
        .as_object_mut()
        .ok_or_else(|| Error::invalid(&key, "config is not an object"))?;
    let current = obj
        .get(&key)
        .ok_or_else(|| Error::invalid(&key, "unknown config key"))?;
    let bad = |what: &str| Error::invalid(&key, format!("expected {what}, found `{value}`"));
    let parsed = match key.as_str() {
        "valid_user_cap" => match value {
            "all" | "none" => serde_json::Value::Null,
            v => v.parse::<u64>().map_err(|_| bad("a count or `all`"))?.into(),
        },
        "cluster_source" => {
            let source: ClusterSource = value.parse().map_err(|e: String| Error::invalid(&key, e))?;
            serde_json::to_value(source)?
        }
        _ => match current {
            serde_json::Value::Array(_) => value
                .split(',')
                .map(|v| v.trim().parse::<u64>().map(serde_json::Value::from))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("a comma-separated list of counts"))?
                .into(),
            serde_json::Value::Number(n) if n.is_f64() => {
                value.parse::<f64>().map_err(|_| bad("a number"))?.into()
            }
            serde_json::Value::Number(_) => value.parse::<u64>().map_err(|_| bad("a nonnegative integer"))?.into(),
            _ => value.into(),
        },
    };
    obj.insert(key.clone(), parsed);
    *config = serde_json::from_value(json).map_err(|e| Error::invalid(&key, e.to_string()))?;
    Ok(())
}

/// The config as a `key = value` file that [`parse_config_text`] reads back.
pub fn config_to_text(config: &TrainConfig) -> anyhow::Result<String> {
    let json = serde_json::to_value(config)?;
    let mut out = String::new();
    if let Some(obj) = json.as_object() {
        for (k, v) in obj {
            let text = match v {
                serde_json::Value::Array(xs) => xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Null => "all".into(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
    }
    Ok(out)
}

pub fn resolve_config(a: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let mut config = match &a.manifest {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunManifest>(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?
                .config
        }
        None => TrainConfig::default(),
    };
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (k, v) in parse_config_text(&text)? {
            apply_setting(&mut config, &k, &v)?;
        }
    }
    for (k, v) in a.overrides.pairs() {
        apply_setting(&mut config, k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let config = resolve_config(a)?;
    if a.print_config {
        print!("{}", config_to_text(&config)?);
        return Ok(());
    }
    let split_dir = data_path(&a.split);
    let split = dataset::read_split(&split_dir)?;
    if a.dry_run {
        let adj = NormalizedAdjacency::from_split(&split)?;
        if config.lambda2 > 0.0 {
            for (field, ks, n) in [
                ("k_users", &config.k_users, split.n_users),
                ("k_items", &config.k_items, split.n_items),
            ] {
                if let Some(k) = ks.iter().find(|&&k| k > n) {
                    return Err(Error::invalid(field, format!("{k} clusters for {n} points")).into());
                }
            }
        }
        eprintln!(
            "dry run ok: {} users, {} items, {} train edges, d={}, L={}, backbone={}",
            split.n_users,
            split.n_items,
            adj.nnz() / 2,
            config.d,
            config.layers,
            config.backbone_tag()
        );
        return Ok(());
    }

    let started = unix_now();
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let resume_path = a.out.join(RESUME_FILE);
    let mut trainer = Trainer::new(config.clone(), &split)?;
    if a.resume {
        let ckpt = Checkpoint::read(&resume_path)?;
        trainer = trainer.resume(&ckpt)?;
        eprintln!("resuming after epoch {}", ckpt.header.epoch);
    }
    let trainer = trainer.with_checkpoint(&resume_path);
    let (table, history) = trainer.run(&mut |r| {
        eprintln!(
            "epoch {:>4}  loss {:.6}  bpr {:.6}  recall@10 {:.4}  ndcg@10 {:.4}  {:.2}s",
            r.epoch,
            r.loss.total,
            r.loss.bpr,
            r.valid.get("recall@10").copied().unwrap_or(0.0),
            r.valid.get("ndcg@10").copied().unwrap_or(0.0),
            r.seconds
        );
    })?;

    let best_epoch = history.best_epoch.unwrap_or(0);
    let model_path = a.out.join(MODEL_FILE);
    Checkpoint::for_table(&table, config.layers, best_epoch).write(&model_path)?;
    let history_path = a.out.join(HISTORY_FILE);
    fs::write(&history_path, history.to_json_lines(true)?)
        .with_context(|| format!("writing {}", history_path.display()))?;
    let config_path = a.out.join(CONFIG_FILE);
    fs::write(&config_path, config_to_text(&config)?).with_context(|| format!("writing {}", config_path.display()))?;

    let mut inputs = BTreeMap::new();
    for name in split_file_names() {
        inputs.insert(name.to_string(), sha256_file(&split_dir.join(name))?);
    }
    let mut outputs = BTreeMap::new();
    for path in [&model_path, &history_path, &config_path] {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        outputs.insert(name, sha256_file(path)?);
    }
    let manifest = RunManifest {
        run_id: run_id(&config, &inputs)?,
        version: env!("CARGO_PKG_VERSION").into(),
        config,
        split_dir,
        inputs,
        outputs,
        started_unix: started,
        finished_unix: unix_now(),
    };
    let manifest_path = a.out.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    eprintln!(
        "best epoch {best_epoch} of {}, backbone={}, run {}",
        history.records.len(),
        history.backbone,
        manifest.run_id
    );
    Ok(())
}

/// Short content hash of the config and the input checksums.
pub fn run_id(config: &TrainConfig, inputs: &BTreeMap<String, String>) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(serde_json::to_vec(inputs)?);
    let hex = format!("{:x}", h.finalize());
    Ok(hex[..12].to_string())
}

fn load_for_split(checkpoint: &Path, split: &dataset::DatasetSplit) -> anyhow::Result<(Checkpoint, model::EmbeddingTable)> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let h = &ckpt.header;
    if h.n_users != split.n_users || h.n_items != split.n_items {
        return Err(Error::DimensionMismatch {
            expected: format!("split with {} users x {} items", split.n_users, split.n_items),
            actual: format!("checkpoint with {} users x {} items", h.n_users, h.n_items),
        }
        .into());
    }
    let table = ckpt.table()?;
    Ok((ckpt, table))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let split = dataset::read_split(&data_path(&a.split))?;
    let (ckpt, table) = load_for_split(&a.checkpoint, &split)?;
    let adj = NormalizedAdjacency::from_split(&split)?;
    let fp = forward(&adj, &table, ckpt.header.layers)?;
    let target = match a.target {
        TargetArg::Valid => Target::Valid,
        TargetArg::Test => Target::Test,
    };
    let opts = EvalOptions {
        ns: a.ns.clone(),
        mask_valid_on_test: !a.no_mask_valid,
    };
    let report = match a.groups {
        Some(g) => sparsity_group_report(&fp, &split, target, g, &opts)?,
        None => full_rank_eval(&fp, &split, target, &opts)?,
    };
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &a.out {
        fs::write(out, json.clone() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    if a.json {
        println!("{json}");
    } else {
        print!("{report}");
    }
    Ok(())
}

pub fn cmd_export(a: &ExportArgs) -> anyhow::Result<()> {
    let split = dataset::read_split(&data_path(&a.split))?;
    let (ckpt, table) = load_for_split(&a.checkpoint, &split)?;
    let (kind, matrix) = match a.kind {
        KindArg::Embeddings => (ExportKind::Embeddings, table.matrix().clone()),
        KindArg::Readout => {
            let adj = NormalizedAdjacency::from_split(&split)?;
            (ExportKind::Readout, forward(&adj, &table, ckpt.header.layers)?.readout)
        }
    };
    match a.format {
        ExportFormat::Text => model::export_text(&a.out, &split, kind, &matrix)?,
        ExportFormat::Binary => model::export_binary(&a.out, &split, kind, &matrix)?,
    }
    eprintln!("wrote {} rows to {}", matrix.rows(), a.out.display());
    Ok(())
}
