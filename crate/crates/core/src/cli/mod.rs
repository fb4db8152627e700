//! Command-line front end.
//!
//! Settings resolve as flag > `--config` file > defaults. Every command
//! writes a `manifest.json` into its output directory.

pub mod manifest;
pub mod settings;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::error::{Error, Result};
use crate::eval::{self, BetaEval, EvalOptions, MetricsReport};
use crate::ingest::{self, AttributeMode, Dataset, PrepareOptions};
use crate::model::{self, parse_ks, Ablation, Model, TrainConfig};
use crate::toy;
use manifest::{digests, sha256_hex, RunManifest};
pub use settings::Settings;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const PLOT_FILE: &str = "plotdata.csv";
pub const DEFAULT_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const DEFAULT_SEED: u64 = 42;

const PREPARE_KEYS: [&str; 6] = ["boundary_days", "levels", "attr_dim", "vectors", "label_vectors", "seed"];

#[derive(Parser, Debug)]
#[command(name = "nirrec", version, about = "Session-based new-item recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Flat key=value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub attr_dim: Option<usize>,
    /// GGNN propagation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// `full_vocab` or `sampled:N`.
    #[arg(long)]
    pub candidate_mode: Option<String>,
    /// Seed for the Beta sampler only.
    #[arg(long)]
    pub beta_seed: Option<u64>,
    /// Cutoffs, e.g. `10,20`.
    #[arg(long)]
    pub k: Option<String>,
}

impl ModelFlags {
    fn settings(&self) -> Settings {
        let mut s = Settings::default();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                s.insert(k, v);
            }
        };
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("gamma", self.gamma.map(|v| v.to_string()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("dim", self.dim.map(|v| v.to_string()));
        put("attr_dim", self.attr_dim.map(|v| v.to_string()));
        put("steps", self.steps.map(|v| v.to_string()));
        put("candidate_mode", self.candidate_mode.clone());
        put("beta_seed", self.beta_seed.map(|v| v.to_string()));
        put("eval_ks", self.k.clone());
        s
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest sessions and a catalog into a processed shard.
    Prepare {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Days before the last timestamp where the test period starts.
        #[arg(long)]
        boundary_days: Option<i64>,
        /// Cluster counts for synthesized taxonomies, fine to coarse.
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        attr_dim: Option<usize>,
        /// Pretrained token vectors; freezes attribute embeddings.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Vectors for taxonomy labels.
        #[arg(long)]
        label_vectors: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a prepared shard.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// no_alpha, no_beta or no_lzero.
        #[arg(long)]
        ablate: Option<String>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cutoffs, e.g. `5,10,20`.
        #[arg(long)]
        k: Option<String>,
        /// Report hits/k instead of the hit rate.
        #[arg(long)]
        strict_precision: bool,
        /// Sample Beta points and average over this many seeds.
        #[arg(long)]
        sampled: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate the ablated variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// One variant, or all of them when omitted.
        #[arg(long)]
        which: Option<String>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate over a grid of lambda or gamma values.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// lambda or gamma.
        #[arg(long)]
        param: String,
        /// Comma-separated values (default 0.1,0.3,0.5,0.7,0.9).
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic toy dataset.
    GenToy {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare { .. } => "prepare",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::GenToy { .. } => "gen-toy",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Prepare { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Sweep { common, .. }
            | Command::GenToy { common } => common,
        }
    }
}

/// Effective settings: config file overlaid by flags, with the seed
/// resolved.
fn resolve(common: &Common, flags: Settings) -> Result<(Settings, u64)> {
    let file = match &common.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let mut s = file.merged(&flags);
    if let Some(seed) = common.seed {
        s.insert("seed", seed);
    }
    let seed = match s.get("seed") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("invalid seed {v:?}")))?,
        None => DEFAULT_SEED,
    };
    s.insert("seed", seed);
    Ok((s, seed))
}

/// Applies training keys over `base`; prepare-only keys are skipped.
pub fn train_config(base: TrainConfig, settings: &Settings) -> Result<TrainConfig> {
    let mut cfg = base;
    for (k, v) in &settings.0 {
        if PREPARE_KEYS.contains(&k.as_str()) && !matches!(k.as_str(), "attr_dim" | "seed") {
            continue;
        }
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_options(settings: &Settings, seed: u64) -> Result<PrepareOptions> {
    let mut opts = PrepareOptions {
        seed,
        ..Default::default()
    };
    let mut attr_dim = 32;
    let mut vectors = None;
    for (k, v) in &settings.0 {
        let bad = || Error::Config(format!("invalid value {v:?} for {k}"));
        match k.as_str() {
            "boundary_days" => opts.boundary_days = v.parse().map_err(|_| bad())?,
            "levels" => {
                let ks = parse_ks(v)?;
                opts.level_sizes = ks.try_into().map_err(|_| bad())?;
            }
            "attr_dim" | "d_a" => attr_dim = v.parse().map_err(|_| bad())?,
            "vectors" => vectors = Some(PathBuf::from(v)),
            "label_vectors" => opts.label_vectors = Some(PathBuf::from(v)),
            "seed" => {}
            other => {
                // training keys may share the file
                TrainConfig::default().set(other, v)?;
            }
        }
    }
    opts.attribute_mode = match vectors {
        Some(path) => AttributeMode::Pretrained { path },
        None => AttributeMode::Trainable { dim: attr_dim },
    };
    Ok(opts)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn as_ingest(e: Error) -> Error {
    match e {
        Error::Ingest(_) | Error::Config(_) => e,
        other => Error::Ingest(other.to_string()),
    }
}

fn as_train(e: Error) -> Error {
    match e {
        Error::Divergence { .. } | Error::Config(_) | Error::Io { .. } | Error::Train(_) => e,
        other => Error::Train(other.to_string()),
    }
}

fn as_eval(e: Error) -> Error {
    match e {
        Error::Eval(_) | Error::Config(_) | Error::Io { .. } => e,
        other => Error::Eval(other.to_string()),
    }
}

fn load_data(dir: &Path) -> Result<Dataset> {
    ingest::read_shard(dir).map_err(as_ingest)
}

/// Writes checkpoint, config and epoch log for a trained model.
fn save_training(dir: &Path, outcome: &model::TrainOutcome) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    outcome.model.save(&ckpt)?;
    let cfg = dir.join(CONFIG_FILE);
    let mut json = serde_json::to_string_pretty(&outcome.model.config)?;
    json.push('\n');
    write_text(&cfg, &json)?;
    let log = dir.join(EPOCH_LOG_FILE);
    let mut lines = String::new();
    for e in &outcome.epochs {
        lines.push_str(&serde_json::to_string(e)?);
        lines.push('\n');
    }
    write_text(&log, &lines)?;
    Ok(vec![ckpt, cfg, log])
}

fn train_and_eval(ds: &Dataset, cfg: &TrainConfig, dir: &Path) -> Result<MetricsReport> {
    let outcome = model::train(ds, cfg).map_err(as_train)?;
    save_training(dir, &outcome)?;
    let opts = EvalOptions {
        ks: cfg.eval_ks.clone(),
        seed: cfg.seed,
        ..Default::default()
    };
    let (report, results) = eval::evaluate(&outcome.model, ds, &opts).map_err(as_eval)?;
    eval::write_report(dir, &report, &eval::rankings_csv(ds, &results))?;
    Ok(report)
}

struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: String,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli, args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    let common = cli.command.common().clone();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let name = cli.command.name();
    let (run, seed) = pool.install(|| dispatch(cli.command))?;
    create_dir(&common.out)?;
    let manifest = RunManifest {
        command: name.to_string(),
        args: args.into_iter().skip(1).collect(),
        config_sha256: sha256_hex(run.config.as_bytes()),
        seed,
        inputs: digests(&run.inputs)?,
        outputs: run.outputs.iter().map(|p| p.display().to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.write(&common.out)
}

fn dispatch(command: Command) -> Result<(Run, u64)> {
    match command {
        Command::Prepare {
            sessions,
            catalog,
            boundary_days,
            levels,
            attr_dim,
            vectors,
            label_vectors,
            common,
        } => {
            let mut flags = Settings::default();
            if let Some(v) = boundary_days {
                flags.insert("boundary_days", v);
            }
            if let Some(v) = levels {
                flags.insert("levels", v);
            }
            if let Some(v) = attr_dim {
                flags.insert("attr_dim", v);
            }
            if let Some(v) = vectors {
                flags.insert("vectors", v.display());
            }
            if let Some(v) = label_vectors {
                flags.insert("label_vectors", v.display());
            }
            let (settings, seed) = resolve(&common, flags)?;
            let opts = prepare_options(&settings, seed)?;
            let log = ingest::load_sessions(&sessions).map_err(as_ingest)?;
            let records = ingest::catalog::load_catalog(&catalog).map_err(as_ingest)?;
            let ds = ingest::prepare(log, &records, &opts).map_err(as_ingest)?;
            ingest::write_shard(&ds, &common.out)?;
            let stats = ds.stats();
            write_text(&common.out.join(STATS_FILE), &stats.to_csv())?;
            print!("{}", stats.to_csv());
            let mut inputs = vec![sessions, catalog];
            inputs.extend(opts.label_vectors.clone());
            if let AttributeMode::Pretrained { path } = &opts.attribute_mode {
                inputs.push(path.clone());
            }
            let outputs = [ingest::shard::SHARD_FILE, ingest::shard::INDEX_FILE, STATS_FILE]
                .iter()
                .map(|f| common.out.join(f))
                .collect();
            Ok((
                Run {
                    inputs,
                    outputs,
                    config: settings.render(),
                },
                seed,
            ))
        }
        Command::Train {
            data,
            ablate,
            model,
            common,
        } => {
            let (settings, seed) = resolve(&common, model.settings())?;
            let mut cfg = train_config(TrainConfig::default(), &settings)?;
            if let Some(which) = ablate {
                cfg = cfg.with_ablation(which.parse::<Ablation>()?);
            }
            let ds = load_data(&data)?;
            let outcome = model::train(&ds, &cfg).map_err(as_train)?;
            let outputs = save_training(&common.out, &outcome)?;
            Ok((
                Run {
                    inputs: vec![data],
                    outputs,
                    config: serde_json::to_string(&cfg)?,
                },
                seed,
            ))
        }
        Command::Eval {
            data,
            checkpoint,
            k,
            strict_precision,
            sampled,
            common,
        } => {
            let mut flags = Settings::default();
            if let Some(k) = &k {
                flags.insert("eval_ks", k);
            }
            let (settings, seed) = resolve(&common, flags)?;
            let saved = checkpoint.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file());
            let base = match &saved {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str(&text)?
                }
                None => TrainConfig::default(),
            };
            // the training seed stays as recorded; --seed only drives evaluation
            let mut eval_settings = settings.clone();
            eval_settings.0.remove("seed");
            let cfg = train_config(base, &eval_settings)?;
            let ds = load_data(&data)?;
            let model = Model::load(&ds, &cfg, &checkpoint).map_err(as_eval)?;
            let opts = EvalOptions {
                ks: cfg.eval_ks.clone(),
                strict_precision,
                beta: match sampled {
                    Some(repeats) => BetaEval::Sampled { repeats },
                    None => BetaEval::Mean,
                },
                seed,
            };
            let (report, results) = eval::evaluate(&model, &ds, &opts).map_err(as_eval)?;
            eval::write_report(&common.out, &report, &eval::rankings_csv(&ds, &results))?;
            print!("{}", report.table());
            let mut inputs = vec![data, checkpoint];
            inputs.extend(saved);
            Ok((
                Run {
                    inputs,
                    outputs: vec![common.out.join("metrics.json"), common.out.join("rankings.csv")],
                    config: settings.render(),
                },
                seed,
            ))
        }
        Command::Ablate {
            data,
            which,
            model,
            common,
        } => {
            let (settings, seed) = resolve(&common, model.settings())?;
            let base = train_config(TrainConfig::default(), &settings)?;
            let variants: Vec<(String, TrainConfig)> = match which {
                Some(w) => {
                    let a: Ablation = w.parse()?;
                    vec![(a.name().to_string(), base.clone().with_ablation(a))]
                }
                None => std::iter::once(("full".to_string(), base.clone()))
                    .chain(Ablation::ALL.iter().map(|&a| (a.name().to_string(), base.clone().with_ablation(a))))
                    .collect(),
            };
            let ds = load_data(&data)?;
            let mut summary = String::from("variant");
            for k in &base.eval_ks {
                let _ = write!(summary, ",P@{k}");
            }
            for k in &base.eval_ks {
                let _ = write!(summary, ",MRR@{k}");
            }
            summary.push('\n');
            let mut outputs = Vec::new();
            for (name, cfg) in &variants {
                info!("ablation {name}: lambda={} gamma={}", cfg.lambda, cfg.gamma);
                let dir = common.out.join(name);
                let report = train_and_eval(&ds, cfg, &dir)?;
                summary.push_str(name);
                for k in &cfg.eval_ks {
                    let _ = write!(summary, ",{:.4}", report.p[&k.to_string()]);
                }
                for k in &cfg.eval_ks {
                    let _ = write!(summary, ",{:.4}", report.mrr[&k.to_string()]);
                }
                summary.push('\n');
                outputs.push(dir);
            }
            create_dir(&common.out)?;
            let path = common.out.join("ablation.csv");
            write_text(&path, &summary)?;
            print!("{summary}");
            outputs.push(path);
            Ok((
                Run {
                    inputs: vec![data],
                    outputs,
                    config: settings.render(),
                },
                seed,
            ))
        }
        Command::Sweep {
            data,
            param,
            values,
            model,
            common,
        } => {
            if param != "lambda" && param != "gamma" {
                return Err(Error::Config(format!("sweep parameter must be lambda or gamma, got {param:?}")));
            }
            let mut grid: Vec<f64> = match values {
                Some(v) => v
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("invalid sweep value {x:?}")))
                    })
                    .collect::<Result<_>>()?,
                None => DEFAULT_GRID.to_vec(),
            };
            if let Some(bad) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Config(format!("sweep values must lie in [0, 1], got {bad}")));
            }
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let (settings, seed) = resolve(&common, model.settings())?;
            let mut base = train_config(TrainConfig::default(), &settings)?;
            if !base.eval_ks.contains(&20) {
                base.eval_ks.push(20);
            }
            let ds = load_data(&data)?;
            let (plot, outputs) = sweep(&ds, &base, &param, &grid, &common.out)?;
            print!("{plot}");
            Ok((
                Run {
                    inputs: vec![data],
                    outputs,
                    config: settings.render(),
                },
                seed,
            ))
        }
        Command::GenToy { common } => {
            let (settings, seed) = resolve(&common, Settings::default())?;
            toy::write(&common.out, seed)?;
            Ok((
                Run {
                    inputs: vec![],
                    outputs: vec![common.out.join(toy::SESSIONS_FILE), common.out.join(toy::CATALOG_FILE)],
                    config: settings.render(),
                },
                seed,
            ))
        }
    }
}

/// One train+eval per value; a failed run is recorded and the sweep goes on.
fn sweep(ds: &Dataset, base: &TrainConfig, param: &str, grid: &[f64], out: &Path) -> Result<(String, Vec<PathBuf>)> {
    let mut plot = String::from("param,value,p_at_20,mrr_at_20,status\n");
    let mut outputs = Vec::new();
    for &v in grid {
        let mut cfg = base.clone();
        cfg.set(param, &v.to_string())?;
        let dir = out.join(format!("{param}_{v}"));
        info!("sweep {param}={v}");
        match train_and_eval(ds, &cfg, &dir) {
            Ok(r) => {
                let _ = writeln!(plot, "{param},{v},{:.6},{:.6},ok", r.p["20"], r.mrr["20"]);
            }
            Err(e) => {
                log::warn!("sweep {param}={v} failed: {e}");
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(plot, "{param},{v},,,failed: {msg}");
            }
        }
        outputs.push(dir);
    }
    create_dir(out)?;
    let path = out.join(PLOT_FILE);
    write_text(&path, &plot)?;
    outputs.push(path);
    Ok((plot, outputs))
}
