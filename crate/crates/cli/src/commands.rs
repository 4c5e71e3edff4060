use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmc_core::evaluation::{evaluate, Evaluation};
use mmc_core::metrics::eigen_spectrum_report;
use mmc_core::model::{entropy, Model};
use mmc_core::rng::{stream_rng, Stream};
use mmc_core::tasks::{sample_task, Task};
use mmc_core::training::{fit, training_task, Calibration, TrainOutcome};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::plot;
use crate::report::{self, LogRow, ReportRow};

pub const CHECKPOINT_FILE: &str = "model.mmc";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Model::from_bytes(&bytes)?)
}

/// Trains and calibrates a fresh model in memory.
pub fn train_model(cfg: &RunConfig) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model_config()?, cfg.seed)?;
    let every = (cfg.train_episodes / 10).max(1);
    let outcome = fit(&mut model, &cfg.task_config(), &cfg.train_config(), |e| {
        if (e.episode + 1) % every == 0 {
            log::info!("episode {}: loss {:.4} accuracy {:.3}", e.episode + 1, e.loss, e.accuracy);
        }
    })?;
    Ok((model, outcome))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: Vec<LogRow>,
    pub calibration: Option<Calibration>,
}

fn calibration_text(c: Option<&Calibration>) -> String {
    let mut s = String::from("kind,temperature,capped,deterministic_nll,sampled_nll\n");
    match c {
        Some(Calibration::Energy(t)) => {
            let _ = writeln!(s, "energy,{},{},{:?},{:?}", t.temperature, t.capped, t.deterministic_nll, t.sampled_nll);
        }
        Some(Calibration::Logit(tau)) => {
            let _ = writeln!(s, "logit,{tau:?},false,,");
        }
        None => s.push_str("none,1,false,,\n"),
    }
    s
}

/// Writes `model.mmc`, `train_log.csv`, `calibration.csv` and the resolved
/// `config.txt` into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let (model, outcome) = train_model(cfg)?;
    ensure_dir(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let bytes = model.to_bytes()?;
    std::fs::write(&checkpoint, bytes).map_err(|e| CliError::io(&checkpoint, e))?;
    let log = report::log_rows(&outcome.log);
    report::write_train_log(&cfg.out_dir.join("train_log.csv"), &log)?;
    write_file(&cfg.out_dir.join("calibration.csv"), &calibration_text(outcome.calibration.as_ref()))?;
    write_file(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    Ok(TrainSummary { checkpoint, log, calibration: outcome.calibration })
}

pub fn temperature_of(model: &Model) -> f64 {
    if model.head().is_logit_normal() {
        f64::from(model.energy_temperature)
    } else {
        model.logit_temperature
    }
}

pub fn report_row(cfg: &RunConfig, model: &Model, ev: Evaluation) -> ReportRow {
    ReportRow {
        head: ev.head.to_string(),
        dataset: cfg.dataset.name().to_string(),
        seed: cfg.seed,
        mc_samples: ev.mc_samples,
        temperature: temperature_of(model),
        mean_spread: ev.mean_spread,
        report: ev.report,
    }
}

/// Evaluates a checkpoint and writes `report.csv` plus `report_bins.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<ReportRow> {
    cfg.validate()?;
    let mut model = load_checkpoint(checkpoint)?;
    let ev = evaluate(&mut model, &cfg.task_config(), &cfg.eval_config())?;
    let row = report_row(cfg, &model, ev);
    ensure_dir(&cfg.out_dir)?;
    report::write_report(&cfg.out_dir.join("report.csv"), std::slice::from_ref(&row))?;
    Ok(row)
}

#[derive(Clone, Debug)]
pub struct PlotSummary {
    pub files: Vec<PathBuf>,
    pub corner_entropy: f64,
    pub prototype_entropy: f64,
    pub max_entropy: f64,
}

/// Episodes pooled into the eigenvalue histogram.
const HISTOGRAM_EPISODES: u64 = 20;

/// Renders `entropy.svg`, `covariance.svg` and `eigenvalues.svg` for the
/// first evaluation episode. The model is only read.
pub fn cmd_plot(cfg: &RunConfig, checkpoint: &Path) -> Result<PlotSummary> {
    cfg.validate()?;
    let mut model = load_checkpoint(checkpoint)?;
    if model.config().input_dim != 2 {
        return Err(CliError::Config(format!("plots need 2-D inputs, model has {}", model.config().input_dim)));
    }
    let tasks = cfg.task_config();
    let task = sample_task(&tasks, &mut stream_rng(cfg.seed, Stream::Evaluation, 0))?;
    let states = model.class_states(&task)?;
    let bounds = task.support_bounds().expanded(cfg.box_expansion);
    let mut rng = stream_rng(cfg.seed, Stream::Plot, 0);
    let surface = plot::entropy_surface(&mut model, &states, &bounds, cfg.grid_resolution, cfg.mc_samples, &mut rng)?;

    let n = cfg.grid_resolution;
    let corners = [0, n - 1, n * (n - 1), n * n - 1];
    let corner_entropy = corners.iter().map(|&i| surface[i]).sum::<f64>() / 4.0;
    let mut prototype_entropy = 0.0;
    for s in &states {
        prototype_entropy += entropy(&model.predictive(&states, &s.prototype, cfg.mc_samples, &mut rng)?) / states.len() as f64;
    }

    let support_features: Vec<(Vec<f64>, usize)> =
        model.features(&task.support_inputs())?.into_iter().zip(task.support_labels()).collect();
    let mut eigenvalues = Vec::new();
    for e in 0..HISTOGRAM_EPISODES {
        let t = sample_task(&tasks, &mut stream_rng(cfg.seed, Stream::Evaluation, e))?;
        for s in eigen_spectrum_report(&model.class_states(&t)?)? {
            eigenvalues.extend(s.values);
        }
    }

    ensure_dir(&cfg.out_dir)?;
    let files = vec![cfg.out_dir.join("entropy.svg"), cfg.out_dir.join("covariance.svg"), cfg.out_dir.join("eigenvalues.svg")];
    write_file(&files[0], &plot::render_entropy(&task, &bounds, n, &surface))?;
    write_file(&files[1], &plot::render_covariances(&states, &support_features)?)?;
    write_file(&files[2], &plot::render_histogram(&eigenvalues, 30))?;
    Ok(PlotSummary { files, corner_entropy, prototype_entropy, max_entropy: (task.ways as f64).ln() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskStream {
    Train,
    Validation,
    Evaluation,
}

pub fn task_for(cfg: &RunConfig, stream: TaskStream, episode: u64) -> Result<Task> {
    let tasks = cfg.task_config();
    Ok(match stream {
        TaskStream::Train => training_task(&tasks, cfg.seed, episode as usize)?,
        TaskStream::Validation => sample_task(&tasks, &mut stream_rng(cfg.seed, Stream::Validation, episode))?,
        TaskStream::Evaluation => sample_task(&tasks, &mut stream_rng(cfg.seed, Stream::Evaluation, episode))?,
    })
}

/// Writes one task as CSV (`x0, x1, …, label, split`).
pub fn cmd_dump_task(cfg: &RunConfig, stream: TaskStream, episode: u64) -> Result<PathBuf> {
    cfg.validate()?;
    let task = task_for(cfg, stream, episode)?;
    ensure_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("task_{}_{episode}.csv", format!("{stream:?}").to_lowercase()));
    write_task(&path, &task)?;
    Ok(path)
}

pub fn write_task(path: &Path, task: &Task) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Config(format!("{other:?}")),
    })?;
    let mut header: Vec<String> = (0..task.input_dim()).map(|j| format!("x{j}")).collect();
    header.extend(["label".to_string(), "split".to_string()]);
    w.write_record(&header)?;
    for (split, samples) in [("support", &task.support), ("query", &task.query)] {
        for s in samples {
            let mut rec: Vec<String> = s.x.iter().map(|v| format!("{v:?}")).collect();
            rec.push(s.label.to_string());
            rec.push(split.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
