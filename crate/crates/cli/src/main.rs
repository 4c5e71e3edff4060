use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmc_cli::commands::{self, TaskStream};
use mmc_cli::experiment;
use mmc_cli::{CliError, Result, RunConfig};

/// Train, evaluate and plot meta-learned Mahalanobis few-shot classifiers.
#[derive(Parser, Debug)]
#[command(
    name = "mmc",
    version,
    after_long_help = "Settings are resolved in three layers: built-in defaults, then keys from --config, \
then command-line flags. A flag always wins over the same key in the file.\n\n\
Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.\n\
MMC_THREADS caps the number of experiment cells run in parallel."
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Config file of `key = value` lines (`#` starts a comment).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// moons, circles or gaussians.
    #[arg(long, global = true, value_name = "NAME")]
    dataset: Option<String>,
    /// proto-mahalanobis, protonet, protonet-sn, shrinkage-per-class or shrinkage-shared.
    #[arg(long, global = true, value_name = "NAME")]
    head: Option<String>,
    /// Low-rank factor count of the proto-mahalanobis head (0 = diagonal).
    #[arg(long, global = true, value_name = "R")]
    rank: Option<usize>,
    /// Training episodes.
    #[arg(long, global = true, value_name = "N")]
    episodes: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Monte Carlo samples per prediction.
    #[arg(long = "mc-samples", global = true, value_name = "M")]
    mc_samples: Option<usize>,
    /// Upper limit of the energy temperature search.
    #[arg(long, global = true, value_name = "N")]
    tmax: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train, calibrate and write a checkpoint with its training log.
    Train,
    /// Evaluate a checkpoint on held-out episodes and write report CSVs.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Render the entropy surface, covariance ellipses and eigenvalue histogram.
    Plot {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Train and evaluate the full model grid over 5 seeds.
    Experiment {
        /// moons, circles or gaussians.
        suite: String,
    },
    /// Write one sampled task as CSV.
    DumpTask {
        #[arg(long, value_enum, default_value = "evaluation")]
        stream: TaskStream,
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
}

fn resolve(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &o.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        cfg.merge_text(&text)?;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.dataset {
        cfg.set("dataset", v)?;
    }
    if let Some(v) = &o.head {
        cfg.head = v.clone();
    }
    if let Some(v) = o.rank {
        cfg.rank = v;
    }
    if let Some(v) = o.episodes {
        cfg.train_episodes = v;
    }
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.mc_samples {
        cfg.mc_samples = v;
    }
    if let Some(v) = o.tmax {
        cfg.t_max = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.overrides)?;
    match cli.command {
        Command::Train => {
            let s = commands::cmd_train(&cfg)?;
            let tail = &s.log[s.log.len().saturating_sub(500)..];
            let acc = tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len().max(1) as f64;
            println!("checkpoint: {}", s.checkpoint.display());
            println!("final training accuracy (last {} episodes): {acc:.4}", tail.len());
            if let Some(c) = s.calibration {
                println!("calibration: {c:?}");
            }
        }
        Command::Eval { checkpoint } => {
            let r = commands::cmd_eval(&cfg, &checkpoint)?;
            let m = &r.report;
            println!("{} on {} (seed {}, M = {}, T = {})", r.head, r.dataset, r.seed, r.mc_samples, r.temperature);
            println!(
                "accuracy {:.4}  nll {:.4}  ece {:.4}  ood_ece {:.4}  aupr {:.4}  auroc {:.4}",
                m.accuracy, m.nll, m.ece, m.ood_ece, m.aupr, m.auroc
            );
            println!("report: {}", cfg.out_dir.join("report.csv").display());
        }
        Command::Plot { checkpoint } => {
            let s = commands::cmd_plot(&cfg, &checkpoint)?;
            println!(
                "entropy at box corners {:.4}, at prototypes {:.4} (max {:.4})",
                s.corner_entropy, s.prototype_entropy, s.max_entropy
            );
            for f in s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Experiment { suite } => {
            let (result, files) = experiment::cmd_experiment(&cfg, &suite)?;
            for row in &result.table {
                let (acc, ood) = (row.cells[0], row.cells[3]);
                println!(
                    "{:<28} accuracy {:.4} ± {:.4}  ood_ece {:.4} ± {:.4}",
                    row.model, acc.0, acc.1, ood.0, ood.1
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::DumpTask { stream, episode } => {
            let path = commands::cmd_dump_task(&cfg, stream, episode)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
