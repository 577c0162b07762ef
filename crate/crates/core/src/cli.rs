//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 I/O or
//! dataset format error, 4 non-finite training loss, 5 checkpoint mismatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{RunConfig, PRESETS};
use crate::data::{build_windows, read_dataset, simulate, write_dataset, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::model::{Baseline, Model};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, Checkpoint};
use crate::train::{
    export_embeddings, inference_csv, metrics_csv, sliding_inference, train, EmbeddingRow, EpochMetrics, EvalReport,
    Protocol, METRICS_HEADER,
};

#[derive(Debug, Parser)]
#[command(name = "hiprssm", version, about = "Hidden-parameter recurrent state space models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a full configuration with every default filled in.
    PrintConfig {
        /// One of: default, benchmark, smoke.
        #[arg(long, default_value = "default")]
        preset: String,
    },
    /// Simulate a changing-dynamics dataset.
    GenerateData {
        /// JSON run configuration (defaults when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides sim.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint plus metrics.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory written by generate-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory (checkpoint/ and metrics.csv).
        #[arg(long)]
        out: PathBuf,
        /// Ablation wiring: none, context_free or np. Overrides model.baseline.
        #[arg(long)]
        baseline: Option<Baseline>,
        /// Resume from this checkpoint, continuing the optimizer state.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// full, imputed_50 or multi_step[:H]; repeatable. Defaults to eval.protocols.
        #[arg(long)]
        protocol: Vec<Protocol>,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train.eval_seed.
        #[arg(long)]
        eval_seed: Option<u64>,
    },
    /// Sliding-window task inference over one trajectory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index within the dataset.
        #[arg(long)]
        trajectory: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-window task posterior means and their 2-D PCA projection.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// test or train.
        #[arg(long, default_value = "test")]
        split: String,
        /// Index of the hidden parameter used as label.
        #[arg(long, default_value_t = 0)]
        hidden_index: usize,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::ManifestMismatch(_) | Error::ShortFile { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        Error::CheckpointMismatch(_) => 5,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    c.resolve()?;
    Ok(c)
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model(dir: &Path) -> Result<(Model, RunConfig, Checkpoint)> {
    let ckpt = load_checkpoint(dir)?;
    let cfg: RunConfig = serde_json::from_value(ckpt.manifest.config.clone())
        .map_err(|e| Error::CheckpointMismatch(format!("embedded config: {e}")))?;
    let mut model = Model::new(cfg.model.clone(), ckpt.manifest.seed)
        .map_err(|e| Error::CheckpointMismatch(format!("embedded model config: {e}")))?;
    ckpt.apply(&mut model.params)?;
    Ok((model, cfg, ckpt))
}

fn check_dims(model: &Model, ds: &TrajectoryDataset) -> Result<()> {
    let c = &model.config;
    if c.obs_dim != ds.obs_dim() || c.action_dim != ds.action_dim() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint expects obs/action dims ({}, {}), dataset has ({}, {})",
            c.obs_dim,
            c.action_dim,
            ds.obs_dim(),
            ds.action_dim()
        )));
    }
    if ds.traj_len() < 2 * c.context_size {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint context size {} needs trajectories of at least {} steps, dataset has {}",
            c.context_size,
            2 * c.context_size,
            ds.traj_len()
        )));
    }
    Ok(())
}

/// Keeps rows of an existing metrics file up to `epoch`.
fn previous_metrics(path: &Path, epoch: usize) -> String {
    let Ok(text) = fs::read_to_string(path) else {
        return String::new();
    };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epoch))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::PrintConfig { preset } => {
            let mut c = RunConfig::preset(&preset)
                .map_err(|_| Error::Config(format!("unknown preset '{preset}' ({})", PRESETS.join(" | "))))?;
            c.resolve()?;
            println!("{}", c.to_json());
            Ok(())
        }
        Command::GenerateData { config, out, seed } => {
            let mut c = load_config(config.as_deref())?;
            if let Some(s) = seed {
                c.sim.seed = s;
            }
            let ds = simulate(&c.sim)?;
            write_dataset(&ds, &out)?;
            let st = &ds.stats;
            println!(
                "wrote {} trajectories ({} train / {} test) of {} steps to {}",
                ds.n_traj(),
                c.sim.n_train,
                ds.n_traj() - c.sim.n_train,
                ds.traj_len(),
                out.display()
            );
            println!("obs mean {:?} std {:?}", st.obs_mean, st.obs_std);
            println!("delta mean {:?} std {:?}", st.delta_mean, st.delta_std);
            Ok(())
        }
        Command::Train { config, data, out, baseline, checkpoint, seed, epochs } => {
            let ds = read_dataset(&data)?;
            let (mut model, cfg, mut adam, start_epoch) = match &checkpoint {
                Some(dir) => {
                    let (model, mut cfg, ckpt) = load_model(dir)?;
                    if let Some(b) = baseline.filter(|b| *b != cfg.model.baseline) {
                        return Err(Error::CheckpointMismatch(format!(
                            "checkpoint was trained with baseline {:?}, not {b:?}",
                            cfg.model.baseline
                        )));
                    }
                    if let Some(e) = epochs {
                        cfg.train.epochs = e;
                    }
                    let mut adam = Adam::new(cfg.train.lr);
                    ckpt.restore_optimizer(&model.params, &mut adam)?;
                    (model, cfg, adam, ckpt.manifest.epoch)
                }
                None => {
                    let mut cfg = load_config(config.as_deref())?;
                    if let Some(b) = baseline {
                        cfg.model.baseline = b;
                    }
                    if let Some(s) = seed {
                        cfg.train.seed = s;
                    }
                    if let Some(e) = epochs {
                        cfg.train.epochs = e;
                    }
                    cfg.model.obs_dim = ds.obs_dim();
                    cfg.model.action_dim = ds.action_dim();
                    cfg.sim = ds.spec.clone();
                    cfg.validate()?;
                    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
                    let adam = Adam::new(cfg.train.lr);
                    (model, cfg, adam, 0)
                }
            };
            check_dims(&model, &ds)?;
            let norm = ds.normalized();
            let windows = build_windows(&ds, cfg.model.context_size)?;
            let train_w = windows.filter(|t| ds.is_train(t));
            let test_w = windows.filter(|t| !ds.is_train(t));
            let ckpt_dir = out.join("checkpoint");
            let metrics_path = out.join("metrics.csv");
            let mut csv = if checkpoint.is_some() {
                previous_metrics(&metrics_path, start_epoch)
            } else {
                String::new()
            };
            let config_value = serde_json::to_value(&cfg)?;
            let history = {
                let mut on_epoch = |m: &EpochMetrics, model: &Model, adam: &Adam| -> Result<()> {
                    eprintln!(
                        "epoch {:>4}  train_loss {:.6}  eval_rmse {}",
                        m.epoch,
                        m.train_loss,
                        m.eval_rmse.map_or("-".to_string(), |v| format!("{v:.6}"))
                    );
                    save_checkpoint(&ckpt_dir, &model.params, Some(adam), config_value.clone(), cfg.train.seed, m.epoch)?;
                    csv.push_str(metrics_csv(std::slice::from_ref(m)).trim_start_matches(METRICS_HEADER).trim_start());
                    write_text(&metrics_path, &format!("{METRICS_HEADER}\n{csv}"))
                };
                train(&mut model, &mut adam, &norm, &train_w, Some(&test_w), &cfg.train, start_epoch, &mut on_epoch)
            };
            match history {
                Ok(h) => {
                    if h.is_empty() {
                        save_checkpoint(&ckpt_dir, &model.params, Some(&adam), config_value, cfg.train.seed, start_epoch)?;
                        write_text(&metrics_path, &format!("{METRICS_HEADER}\n{csv}"))?;
                    }
                    println!("trained {} epochs; checkpoint in {}", h.len(), ckpt_dir.display());
                    Ok(())
                }
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    let dump = out.join("nonfinite_dump");
                    save_checkpoint(&dump, &model.params, Some(&adam), config_value, cfg.train.seed, start_epoch)?;
                    eprintln!("parameter state at failure written to {}", dump.display());
                    Err(e)
                }
                Err(e) => Err(e),
            }
        }
        Command::Eval { checkpoint, data, protocol, out, eval_seed } => {
            let (model, cfg, _) = load_model(&checkpoint)?;
            let ds = read_dataset(&data)?;
            check_dims(&model, &ds)?;
            let protocols = if protocol.is_empty() { cfg.eval.parsed()? } else { protocol };
            let norm = ds.normalized();
            let test_w = build_windows(&ds, cfg.model.context_size)?.filter(|t| !ds.is_train(t));
            let seed = eval_seed.unwrap_or(cfg.train.eval_seed);
            let report = EvalReport::run(&model, &norm, &test_w, &protocols, seed, cfg.eval.batch_size)?;
            eprintln!("evaluated {} windows in {:.2}s", test_w.len(), report.wall_clock_s);
            emit(out.as_deref(), &report.to_csv())
        }
        Command::Infer { checkpoint, data, trajectory, out } => {
            let (model, _, _) = load_model(&checkpoint)?;
            let ds = read_dataset(&data)?;
            check_dims(&model, &ds)?;
            if trajectory >= ds.n_traj() {
                return Err(Error::Config(format!("--trajectory {trajectory} out of range (dataset has {})", ds.n_traj())));
            }
            let tr = ds.trajectory(trajectory);
            let rows = sliding_inference(&model, &tr, &tr.normalized(&ds.stats))?;
            emit(out.as_deref(), &inference_csv(&rows))
        }
        Command::ExportEmbeddings { checkpoint, data, out, split, hidden_index } => {
            let (model, cfg, _) = load_model(&checkpoint)?;
            let ds = read_dataset(&data)?;
            check_dims(&model, &ds)?;
            let want_train = match split.as_str() {
                "train" => true,
                "test" => false,
                other => return Err(Error::Config(format!("--split must be train or test, got '{other}'"))),
            };
            if hidden_index >= ds.hidden_dim() {
                return Err(Error::Config(format!("--hidden-index {hidden_index} out of range")));
            }
            let norm = ds.normalized();
            let windows = build_windows(&ds, cfg.model.context_size)?.filter(|t| ds.is_train(t) == want_train);
            let result = crate::train::evaluate(&model, &norm, &windows, Protocol::Full, cfg.train.eval_seed, cfg.eval.batch_size)?;
            let rows = windows
                .windows
                .iter()
                .zip(result.task_means)
                .map(|(w, (traj, window, mean))| EmbeddingRow { traj, window, hidden: w.hidden[hidden_index], mean })
                .collect();
            write_text(&out, &export_embeddings(rows).to_csv())
        }
    }
}
