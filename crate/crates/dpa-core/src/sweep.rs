//! Single runs, sweeps over beta or ablation variants, and their result
//! files. Every run writes `metrics.csv`, `evaluation.json`, `scenario.json`
//! and the effective `config.toml` into its own directory (atomically);
//! sweeps add a `summary.csv` with one row per run plus one aggregate row
//! per axis value.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SweepAxis};
use crate::metrics::{rows_to_csv, write_atomic, MetricsRow};
use crate::scenario::ScenarioError;
use crate::trainer::{Evaluation, TrainError, Trainer};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub evaluation: Evaluation,
}

/// Train one seed of the config and write its artifacts under `out_dir`.
pub fn run_single(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    let scenario = cfg.build_scenario(seed)?;
    let scenario_json = scenario.to_json();
    let mut trainer = Trainer::new(scenario, cfg.trainer_options());
    let (rows, evaluation) = trainer.run()?;

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, &rows_to_csv(&rows)).map_err(io_err(&metrics_path))?;
    let eval_path = out_dir.join("evaluation.json");
    let eval_json =
        serde_json::to_string_pretty(&evaluation).expect("evaluation serializes");
    write_atomic(&eval_path, &eval_json).map_err(io_err(&eval_path))?;
    let scenario_path = out_dir.join("scenario.json");
    write_atomic(&scenario_path, &scenario_json).map_err(io_err(&scenario_path))?;
    let config_path = out_dir.join("config.toml");
    write_atomic(&config_path, &cfg.to_toml_string()).map_err(io_err(&config_path))?;

    Ok(RunArtifacts { out_dir: out_dir.to_path_buf(), rows, evaluation })
}

/// One line of a sweep summary.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub label: String,
    pub seed: u64,
    pub status: String,
    pub target_shared_accuracy: f64,
    pub target_shared_accuracy_tail: f64,
    pub nc_accuracy_tail: f64,
    pub alignment_score: f64,
    pub avg_global_gap: f64,
    pub avg_instance_gap: f64,
    pub avg_weight_gap: f64,
}

/// Per-label aggregate over the seeds that succeeded.
#[derive(Clone, Debug)]
pub struct SweepAggregate {
    pub label: String,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub acc_tail_mean: f64,
    pub acc_tail_std: f64,
    pub nc_tail_mean: f64,
    pub nc_tail_std: f64,
    pub avg_global_gap: f64,
    pub avg_instance_gap: f64,
    pub avg_weight_gap: f64,
}

pub struct SweepOutcome {
    pub runs: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    pub summary_path: PathBuf,
}

/// Time averages over the logged metrics rows of one run.
fn time_averages(rows: &[MetricsRow]) -> (f64, f64, f64) {
    let n = rows.len().max(1) as f64;
    let g = rows.iter().map(|r| r.global_gap).sum::<f64>() / n;
    let i = rows.iter().map(|r| r.instance_gap).sum::<f64>() / n;
    let w = rows.iter().map(|r| (r.w_source - r.w_target).abs()).sum::<f64>() / n;
    (g, i, w)
}

/// Run the configured sweep. Each (value, seed) pair trains independently;
/// failures are recorded in the summary and the sweep continues. `workers`
/// of 1 runs sequentially.
pub fn sweep(cfg: &RunConfig, out_root: &Path, workers: usize) -> Result<SweepOutcome, RunError> {
    cfg.validate()?;
    let variants: Vec<(String, RunConfig)> = match cfg.sweep.axis {
        SweepAxis::Beta => cfg
            .sweep
            .beta_values
            .iter()
            .map(|&b| (format!("beta-{b}"), cfg.with_beta(b)))
            .collect(),
        SweepAxis::Ablation => cfg
            .sweep
            .ablation_variants
            .iter()
            .map(|&v| (v.name().to_string(), cfg.with_ablation(v)))
            .collect(),
    };

    let jobs: Vec<(String, RunConfig, u64)> = variants
        .iter()
        .flat_map(|(label, vcfg)| {
            cfg.scenario.seeds.iter().map(move |&s| (label.clone(), vcfg.clone(), s))
        })
        .collect();

    let results: Vec<Mutex<Option<SweepRow>>> =
        (0..jobs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let (label, vcfg, seed) = &jobs[i];
                let dir = out_root.join(label).join(format!("seed-{seed}"));
                let row = match run_single(vcfg, *seed, &dir) {
                    Ok(artifacts) => {
                        let (g, inst, w) = time_averages(&artifacts.rows);
                        SweepRow {
                            label: label.clone(),
                            seed: *seed,
                            status: "ok".into(),
                            target_shared_accuracy: artifacts
                                .evaluation
                                .target_shared_accuracy,
                            target_shared_accuracy_tail: artifacts
                                .evaluation
                                .target_shared_accuracy_tail,
                            nc_accuracy_tail: artifacts
                                .evaluation
                                .target_shared_nc_accuracy_tail,
                            alignment_score: artifacts.evaluation.alignment_score,
                            avg_global_gap: g,
                            avg_instance_gap: inst,
                            avg_weight_gap: w,
                        }
                    }
                    Err(e) => SweepRow {
                        label: label.clone(),
                        seed: *seed,
                        status: format!("failed: {e}"),
                        target_shared_accuracy: f64::NAN,
                        target_shared_accuracy_tail: f64::NAN,
                        nc_accuracy_tail: f64::NAN,
                        alignment_score: f64::NAN,
                        avg_global_gap: f64::NAN,
                        avg_instance_gap: f64::NAN,
                        avg_weight_gap: f64::NAN,
                    },
                };
                *results[i].lock().expect("result slot") = Some(row);
            });
        }
    });

    let runs: Vec<SweepRow> = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect();

    let aggregates: Vec<SweepAggregate> =
        variants.iter().map(|(label, _)| aggregate(label, &runs)).collect();

    let summary_path = out_root.join("summary.csv");
    write_atomic(&summary_path, &summary_csv(&runs, &aggregates))
        .map_err(io_err(&summary_path))?;
    Ok(SweepOutcome { runs, aggregates, summary_path })
}

fn aggregate(label: &str, runs: &[SweepRow]) -> SweepAggregate {
    let ok: Vec<&SweepRow> =
        runs.iter().filter(|r| r.label == label && r.status == "ok").collect();
    let failed = runs.iter().filter(|r| r.label == label && r.status != "ok").count();
    let n = ok.len().max(1) as f64;
    let mean = |f: fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    let acc_mean = mean(|r| r.target_shared_accuracy);
    let acc_var = ok
        .iter()
        .map(|r| (r.target_shared_accuracy - acc_mean).powi(2))
        .sum::<f64>()
        / n;
    let acc_tail_mean = mean(|r| r.target_shared_accuracy_tail);
    let acc_tail_var = ok
        .iter()
        .map(|r| (r.target_shared_accuracy_tail - acc_tail_mean).powi(2))
        .sum::<f64>()
        / n;
    let nc_tail_mean = mean(|r| r.nc_accuracy_tail);
    let nc_tail_var = ok
        .iter()
        .map(|r| (r.nc_accuracy_tail - nc_tail_mean).powi(2))
        .sum::<f64>()
        / n;
    SweepAggregate {
        label: label.to_string(),
        runs_ok: ok.len(),
        runs_failed: failed,
        acc_mean,
        acc_std: acc_var.sqrt(),
        acc_tail_mean,
        acc_tail_std: acc_tail_var.sqrt(),
        nc_tail_mean,
        nc_tail_std: nc_tail_var.sqrt(),
        avg_global_gap: mean(|r| r.avg_global_gap),
        avg_instance_gap: mean(|r| r.avg_instance_gap),
        avg_weight_gap: mean(|r| r.avg_weight_gap),
    }
}

pub const SUMMARY_HEADER: &str = "row_kind,label,seed,status,target_shared_accuracy,\
acc_std,target_shared_accuracy_tail,acc_tail_std,nc_accuracy_tail,nc_tail_std,\
alignment_score,avg_global_gap,avg_instance_gap,avg_weight_gap";

fn summary_csv(runs: &[SweepRow], aggregates: &[SweepAggregate]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        out.push_str(&format!(
            "run,{},{},{},{},NaN,{},NaN,{},NaN,{},{},{},{}\n",
            r.label,
            r.seed,
            r.status.replace(',', ";"),
            r.target_shared_accuracy,
            r.target_shared_accuracy_tail,
            r.nc_accuracy_tail,
            r.alignment_score,
            r.avg_global_gap,
            r.avg_instance_gap,
            r.avg_weight_gap
        ));
    }
    for a in aggregates {
        out.push_str(&format!(
            "aggregate,{},{},ok={} failed={},{},{},{},{},{},{},NaN,{},{},{}\n",
            a.label,
            a.runs_ok,
            a.runs_ok,
            a.runs_failed,
            a.acc_mean,
            a.acc_std,
            a.acc_tail_mean,
            a.acc_tail_std,
            a.nc_tail_mean,
            a.nc_tail_std,
            a.avg_global_gap,
            a.avg_instance_gap,
            a.avg_weight_gap
        ));
    }
    out
}
