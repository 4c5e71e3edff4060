//! Model-grid × seed experiment suites.

use std::path::PathBuf;

use mmc_core::evaluation::{entropy_contrast, evaluate, EntropyContrast};
use mmc_core::metrics::{eigen_perturbation_experiment, eigen_spectrum_report, PerturbationTable};
use mmc_core::model::{HeadKind, Model, ShrinkageVariant};
use mmc_core::rng::{stream_rng, Stream};
use mmc_core::tasks::{sample_task, DatasetKind};
use mmc_core::training::fit;
use rayon::prelude::*;

use crate::commands::report_row;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{self, mean_std, ReportRow, TableRow};

pub const SUITES: [&str; 3] = ["moons", "circles", "gaussians"];
pub const SEEDS: usize = 5;

/// Episodes fed to the eigenvalue perturbation and spectrum reports.
pub const PERTURBATION_EPISODES: usize = 20;

pub fn model_grid() -> Vec<HeadKind> {
    vec![
        HeadKind::ProtonetEuclidean,
        HeadKind::ProtonetEuclideanSN,
        HeadKind::EmpiricalShrinkage(ShrinkageVariant::PerClass),
        HeadKind::EmpiricalShrinkage(ShrinkageVariant::Shared),
        HeadKind::ProtoMahalanobis { rank: 0 },
        HeadKind::ProtoMahalanobis { rank: 1 },
        HeadKind::ProtoMahalanobis { rank: 2 },
        HeadKind::ProtoMahalanobis { rank: 4 },
    ]
}

pub fn parse_suite(name: &str) -> Result<DatasetKind> {
    if !SUITES.contains(&name) {
        return Err(CliError::Config(format!("unknown suite {name:?}; available suites: {}", SUITES.join(", "))));
    }
    name.parse().map_err(|e: mmc_core::Error| CliError::Config(e.to_string()))
}

#[derive(Clone, Debug)]
pub struct SuitePlan {
    /// Dataset, sizes and training knobs shared by every cell.
    pub base: RunConfig,
    pub models: Vec<HeadKind>,
    pub seeds: Vec<u64>,
    pub perturbation_episodes: usize,
}

impl SuitePlan {
    /// Full grid over seeds `base.seed .. base.seed + 5`.
    pub fn new(base: RunConfig) -> Self {
        let seeds = (0..SEEDS as u64).map(|i| base.seed + i).collect();
        SuitePlan { base, models: model_grid(), seeds, perturbation_episodes: PERTURBATION_EPISODES }
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub head: HeadKind,
    pub seed: u64,
    pub row: ReportRow,
    /// Mean training accuracy over the last 500 (or fewer) episodes.
    pub final_train_accuracy: f64,
    pub perturbation: Option<PerturbationTable>,
    /// Mean predictive entropy at the expanded-box corners vs at the prototypes.
    pub entropy: EntropyContrast,
    /// `(episode, class, descending precision eigenvalues)`.
    pub spectra: Vec<(usize, usize, Vec<f64>)>,
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub dataset: DatasetKind,
    pub cells: Vec<CellResult>,
    pub table: Vec<TableRow>,
}

impl SuiteResult {
    pub fn cells_for(&self, head: HeadKind) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.head == head)
    }

    pub fn row_for(&self, head: HeadKind) -> Option<&TableRow> {
        self.table.iter().find(|r| r.model == head.to_string())
    }
}

pub fn run_cell(base: &RunConfig, head: HeadKind, seed: u64, perturbation_episodes: usize) -> Result<CellResult> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let mut mcfg = cfg.model_config()?;
    mcfg.head = head;
    mcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let tasks = cfg.task_config();
    let mut model = Model::new(mcfg, seed)?;
    let outcome = fit(&mut model, &tasks, &cfg.train_config(), |_| {})?;
    let tail = &outcome.log[outcome.log.len().saturating_sub(500)..];
    let final_train_accuracy = tail.iter().map(|e| e.accuracy).sum::<f64>() / tail.len().max(1) as f64;
    let ev = evaluate(&mut model, &tasks, &cfg.eval_config())?;
    let row = report_row(&cfg, &model, ev);
    let entropy = entropy_contrast(&mut model, &tasks, &cfg.eval_config())?;

    let (mut perturbation, mut spectra) = (None, Vec::new());
    if head.is_logit_normal() && perturbation_episodes > 0 {
        let probe: Vec<_> = (0..perturbation_episodes as u64)
            .map(|e| sample_task(&tasks, &mut stream_rng(seed, Stream::Evaluation, e)))
            .collect::<std::result::Result<_, _>>()?;
        for (e, t) in probe.iter().enumerate() {
            for (c, s) in eigen_spectrum_report(&model.class_states(t)?)?.into_iter().enumerate() {
                spectra.push((e, c, s.values));
            }
        }
        let seed_p = mmc_core::rng::derive_seed(seed, Stream::Sampling, u64::MAX);
        perturbation = Some(eigen_perturbation_experiment(&mut model, &probe, cfg.mc_samples, seed_p)?);
    }
    log::info!(
        "{head} seed {seed}: accuracy {:.3} ood_ece {:.3} T {}",
        row.report.accuracy,
        row.report.ood_ece,
        row.temperature
    );
    Ok(CellResult { head, seed, row, final_train_accuracy, perturbation, entropy, spectra })
}

/// Worker count from `MMC_THREADS`, else the machine's parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("MMC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!("MMC_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every (model, seed) cell on a pool of `threads` workers. Results
/// come back in grid order, so output does not depend on scheduling.
pub fn run_suite(plan: &SuitePlan, threads: usize) -> Result<SuiteResult> {
    plan.base.validate()?;
    let grid: Vec<(HeadKind, u64)> =
        plan.models.iter().flat_map(|&h| plan.seeds.iter().map(move |&s| (h, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        grid.par_iter()
            .map(|&(h, s)| run_cell(&plan.base, h, s, plan.perturbation_episodes))
            .collect::<Result<Vec<_>>>()
    })?;
    let table = plan
        .models
        .iter()
        .map(|&h| {
            let rows: Vec<&ReportRow> = cells.iter().filter(|c| c.head == h).map(|c| &c.row).collect();
            let metric = |f: &dyn Fn(&ReportRow) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            TableRow {
                model: h.to_string(),
                seeds: rows.len(),
                cells: vec![
                    metric(&|r| r.report.accuracy),
                    metric(&|r| r.report.nll),
                    metric(&|r| r.report.ece),
                    metric(&|r| r.report.ood_ece),
                    metric(&|r| r.report.aupr),
                    metric(&|r| r.report.auroc),
                    metric(&|r| r.mean_spread),
                ],
            }
        })
        .collect();
    Ok(SuiteResult { dataset: plan.base.dataset, cells, table })
}

/// Writes `<suite>_table.csv`, `<suite>_cells.csv` (+ bins),
/// `<suite>_entropy.csv`, `<suite>_perturbation.csv` and `<suite>_spectrum.csv`.
pub fn write_suite(result: &SuiteResult, out_dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let name = result.dataset.name();
    let table = out_dir.join(format!("{name}_table.csv"));
    report::write_table(&table, &result.table)?;
    let cells = out_dir.join(format!("{name}_cells.csv"));
    report::write_report(&cells, &result.cells.iter().map(|c| c.row.clone()).collect::<Vec<_>>())?;

    let entropy = out_dir.join(format!("{name}_entropy.csv"));
    let mut w = csv::Writer::from_path(&entropy)?;
    w.write_record(["model", "seed", "final_train_accuracy", "corner_entropy", "prototype_entropy"])?;
    for c in &result.cells {
        w.write_record([
            c.head.to_string(),
            c.seed.to_string(),
            format!("{:?}", c.final_train_accuracy),
            format!("{:?}", c.entropy.corners),
            format!("{:?}", c.entropy.prototypes),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&entropy, e))?;

    let perturbation = out_dir.join(format!("{name}_perturbation.csv"));
    let mut w = csv::Writer::from_path(&perturbation)?;
    w.write_record([
        "model", "seed", "episode", "class", "eigen_index", "eigenvalue", "nll_predicted", "nll_modified", "accuracy_predicted",
        "accuracy_modified", "ece_predicted", "ece_modified", "nll_score",
    ])?;
    for c in &result.cells {
        for r in c.perturbation.iter().flat_map(|p| &p.rows) {
            let f = |v: f64| format!("{v:?}");
            w.write_record([
                c.head.to_string(),
                c.seed.to_string(),
                r.episode.to_string(),
                r.class.to_string(),
                r.eigen_index.to_string(),
                f(r.eigenvalue),
                f(r.predicted.nll),
                f(r.modified.nll),
                f(r.predicted.accuracy),
                f(r.modified.accuracy),
                f(r.predicted.ece),
                f(r.modified.ece),
                f(r.nll_score),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&perturbation, e))?;

    let spectrum = out_dir.join(format!("{name}_spectrum.csv"));
    let mut w = csv::Writer::from_path(&spectrum)?;
    w.write_record(["model", "seed", "episode", "class", "index", "eigenvalue"])?;
    for c in &result.cells {
        for (e, class, values) in &c.spectra {
            for (i, v) in values.iter().enumerate() {
                w.write_record([c.head.to_string(), c.seed.to_string(), e.to_string(), class.to_string(), i.to_string(), format!("{v:?}")])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&spectrum, e))?;
    Ok(vec![table, cells, entropy, perturbation, spectrum])
}

pub fn cmd_experiment(cfg: &RunConfig, suite: &str) -> Result<(SuiteResult, Vec<PathBuf>)> {
    let mut base = cfg.clone();
    base.dataset = parse_suite(suite)?;
    let result = run_suite(&SuitePlan::new(base), thread_count()?)?;
    let files = write_suite(&result, &cfg.out_dir)?;
    Ok((result, files))
}
