use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metashift::checkpoint;
use metashift::config::ExperimentConfig;
use metashift::experiment::{ablation_table, fresh_state, run_ablation, run_meta_test, run_meta_train, run_pretrain};
use metashift::meta::Phase;
use metashift::metrics::{plot_columns, read_metrics, MetricsLog};
use metashift::model::ss_statistics;
use metashift::{Error, Result};

const PRETRAIN_CKPT: &str = "pretrain.mtck";
const META_CKPT: &str = "meta.mtck";
const METRICS: &str = "metrics.jsonl";

#[derive(Parser)]
#[command(name = "metashift", version, about = "Few-shot meta-transfer learning with scaling/shifting and a hard-task curriculum")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `out` from the config, else `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set meta.inner_epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the extractor on all train classes, then freeze it.
    Pretrain,
    /// Meta-train the configured mode on a pretrained extractor.
    MetaTrain {
        /// Default: `<out>/pretrain.mtck`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a meta-trained model on unseen tasks.
    MetaTest {
        /// Default: `<out>/meta.mtck`, or `<out>/pretrain.mtck` with
        /// `--allow-no-meta` when no meta checkpoint exists.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Accept a pretrain-only checkpoint (no-meta-learning baselines).
        #[arg(long)]
        allow_no_meta: bool,
    },
    /// Meta-train and meta-test every mode in `ablate.modes` on one pretrained extractor.
    Ablate {
        /// Reuse this pretrain checkpoint instead of pretraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Convert a metrics log into numeric column files.
    PlotData {
        /// Default: `<out>/metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::MetaTrain { .. } => "meta-train",
            Command::MetaTest { .. } => "meta-test",
            Command::Ablate { .. } => "ablate",
            Command::PlotData { .. } => "plot-data",
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={}", seed));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    write(&out.join(format!("{}.resolved.toml", cli.command.name())), &cfg.resolved()?)?;
    let mut metrics = MetricsLog::append(out.join(METRICS))?;

    match cli.command {
        Command::Pretrain => {
            let p = cfg.prepare()?;
            let (state, outcome) = run_pretrain(&cfg, &p, &mut metrics)?;
            checkpoint::save(&state, &out.join(PRETRAIN_CKPT))?;
            let mut curve = String::from("# iteration loss accuracy lr\n");
            for c in &outcome.curve {
                curve += &format!("{} {} {} {}\n", c.iteration, c.loss, c.accuracy, c.lr);
            }
            write(&out.join("pretrain_curve.txt"), &curve)?;
            println!("pretrain: train accuracy {:.4}, checkpoint {}", outcome.train_accuracy, out.join(PRETRAIN_CKPT).display());
        }
        Command::MetaTrain { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| out.join(PRETRAIN_CKPT));
            let pre = checkpoint::load(&path)?;
            let p = cfg.prepare()?;
            let (state, report) = run_meta_train(&cfg, &p, pre.extractor, cfg.meta.mode, &mut metrics)?;
            checkpoint::save(&state, &out.join(META_CKPT))?;
            let mut trace = String::from("# iteration meta_steps kind loss accuracy\n");
            for t in &report.trace {
                trace += &format!("{} {} {:?} {} {}\n", t.iteration, t.meta_steps, t.kind, t.loss, t.accuracy);
            }
            write(&out.join("meta_trace.txt"), &trace)?;
            println!(
                "meta-train: mode {}, {} meta steps over {} tasks, {} hard phases, checkpoint {}",
                state.mode,
                report.trainer.steps,
                report.trainer.tasks,
                report.phases.len(),
                out.join(META_CKPT).display()
            );
        }
        Command::MetaTest { checkpoint, allow_no_meta } => {
            let path = checkpoint.unwrap_or_else(|| {
                let meta = out.join(META_CKPT);
                if allow_no_meta && !meta.exists() {
                    out.join(PRETRAIN_CKPT)
                } else {
                    meta
                }
            });
            let mut state = checkpoint::load(&path)?;
            if state.phase == Phase::Pretrain {
                if !allow_no_meta {
                    return Err(Error::Checkpoint(format!(
                        "{} holds a pretrain-only model; pass --allow-no-meta to evaluate it without meta-training",
                        path.display()
                    )));
                }
                state = fresh_state(&cfg, state.extractor, cfg.meta.mode)?;
            }
            let p = cfg.prepare()?;
            let report = run_meta_test(&cfg, &p, &state, &mut metrics)?;
            let text = format!("mode = {}\n{}", state.mode, report.to_text());
            write(&out.join("meta_test.txt"), &text)?;
            print!("{}", text);
        }
        Command::Ablate { checkpoint } => {
            let p = cfg.prepare()?;
            let extractor = match checkpoint {
                Some(path) => checkpoint::load(&path)?.extractor,
                None => {
                    let (state, _) = run_pretrain(&cfg, &p, &mut metrics)?;
                    checkpoint::save(&state, &out.join(PRETRAIN_CKPT))?;
                    state.extractor
                }
            };
            let rows = run_ablation(&cfg, &p, &extractor, &cfg.ablate.modes, &mut metrics)?;
            let table = ablation_table(&rows);
            write(&out.join("ablation.txt"), &table)?;
            print!("{}", table);
        }
        Command::PlotData { metrics: path } => {
            let path = path.unwrap_or_else(|| out.join(METRICS));
            let records = read_metrics(&path)?;
            let dir = out.join("plot");
            fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            let cols = plot_columns(&records);
            for (phase, text) in &cols {
                write(&dir.join(format!("{}.txt", phase)), text)?;
            }
            let meta = out.join(META_CKPT);
            if meta.exists() {
                let state = checkpoint::load(&meta)?;
                write(&dir.join("ss_statistics.txt"), &ss_statistics(&state.ss).to_plot_text())?;
            }
            println!("plot-data: {} series in {}", cols.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("METASHIFT_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
