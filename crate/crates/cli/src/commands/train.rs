use std::time::Instant;

use reset_opt::par::map_slice;
use reset_opt::train::{relative_difference, write_metrics_csv, NoObserver};

use super::RunOptions;
use crate::aggregate::{SeedRow, SeedTable};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::{run_training, RunSummary};
use crate::output::{hash_comment, OutputDir, RunMetadata};

pub struct TrainReport {
    pub runs: Vec<RunSummary>,
    /// Matched-seed `r = 0` runs, present when the configured rate is > 0.
    pub baseline: Vec<RunSummary>,
    pub table: SeedTable,
}

pub(crate) const RUN_METRICS: [&str; 8] = [
    "best_val_loss",
    "best_val_acc",
    "test_acc",
    "best_iteration",
    "resets",
    "peak_mem_frac",
    "final_mem_frac",
    "completed",
];

pub(crate) fn run_metrics(r: &RunSummary) -> Vec<Option<f64>> {
    let ok = |v: Option<f64>| if r.completed { v } else { None };
    vec![
        ok(r.best_val_loss),
        ok(r.best_val_accuracy),
        ok(r.test_accuracy),
        Some(r.best_iteration as f64),
        Some(r.resets as f64),
        r.peak_mem_frac,
        r.final_mem_frac,
        Some(r.completed as u8 as f64),
    ]
}

/// `(RDVLoss, RDTAcc)` of a run against its matched baseline; missing when
/// either run failed.
pub(crate) fn relative_to(run: &RunSummary, base: &RunSummary) -> Result<(Option<f64>, Option<f64>)> {
    if !run.completed || !base.completed {
        return Ok((None, None));
    }
    let rd = |v: Option<f64>, b: Option<f64>| -> Result<Option<f64>> {
        match (v, b) {
            (Some(v), Some(b)) => Ok(Some(relative_difference(v, b)?)),
            _ => Ok(None),
        }
    };
    Ok((rd(run.best_val_loss, base.best_val_loss)?, rd(run.test_accuracy, base.test_accuracy)?))
}

pub(crate) fn write_run_files(out: &mut OutputDir, dir: &str, run: &RunSummary, hash: &str, snapshot: bool) -> Result<()> {
    let w = out.file(&format!("{dir}/metrics.csv"))?;
    write_metrics_csv(w, &run.rows, Some(&hash_comment(hash)))?;
    if snapshot {
        if let Some(o) = &run.outcome {
            let w = out.file(&format!("{dir}/best.params"))?;
            o.best.write_snapshot(w)?;
        }
    }
    Ok(())
}

pub(crate) fn train_flags(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let d = cfg.data()?;
    let t = cfg.train()?;
    Ok(serde_json::json!({
        "validation_labels": if d.corrupt_validation { "corrupted" } else { "clean" },
        "standardize": d.cifar.as_ref().map(|c| c.standardize),
        "sampling": t.sampling,
        "validation_interval": t.reset.validation_interval,
        "patience_advance": "validation_interval per stale validation",
        "checkpoint_policy": t.reset.checkpoint,
        "reset_coin_on_improving_iteration": true,
        "momentum_kept_on_reset": true,
        "baseline": "matched-seed r = 0",
        "error_bars": "se and sd columns, n - 1 denominator",
    }))
}

/// Seeded training runs with per-run metrics, snapshots and a summary.
pub fn cmd_train(cfg: &ExperimentConfig, out: &mut OutputDir, opts: RunOptions) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate_training()?;
    let hash = cfg.hash();
    let seeds = cfg.seeds();
    let r = cfg.train()?.reset.reset_probability;

    let runs = map_slice(opts.exec, &seeds, |&s| run_training(cfg, s, &mut NoObserver))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let baseline = if r > 0.0 {
        let base_cfg = cfg.at_point(crate::config::SweepAxis::R, &crate::config::AxisValue::None, 0.0)?;
        map_slice(opts.exec, &seeds, |&s| run_training(&base_cfg, s, &mut NoObserver))
            .into_iter()
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mut metric_columns: Vec<String> = RUN_METRICS.iter().map(|s| s.to_string()).collect();
    if !baseline.is_empty() {
        metric_columns.extend(["rdvloss".to_string(), "rdtacc".to_string()]);
    }
    let mut rows = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let mut metrics = run_metrics(run);
        if let Some(b) = baseline.get(i) {
            let (v, a) = relative_to(run, b)?;
            metrics.extend([v, a]);
        }
        rows.push(SeedRow {
            group: Vec::new(),
            seed: run.seed,
            metrics,
        });
        write_run_files(out, &format!("runs/seed_{}", run.seed), run, &hash, true)?;
    }
    for b in &baseline {
        write_run_files(out, &format!("baseline/seed_{}", b.seed), b, &hash, false)?;
    }
    let table = SeedTable {
        config_hash: hash.clone(),
        group_columns: Vec::new(),
        metric_columns,
        rows,
    };
    table.write(out.file("runs.csv")?)?;
    table.write_aggregate(out.file("summary.csv")?)?;

    let failed: Vec<String> = runs
        .iter()
        .chain(&baseline)
        .filter_map(|r| r.failure.as_ref().map(|f| format!("seed {}: {f}", r.seed)))
        .collect();
    let files = out.files().to_vec();
    RunMetadata {
        command: "train".into(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seeds,
        flags: train_flags(cfg)?,
        warnings: Vec::new(),
        failed_runs: failed,
        files,
        wall_time_secs: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    if runs.iter().all(|r| !r.completed) {
        return Err(CliError::Numeric("every training run diverged".into()));
    }
    Ok(TrainReport { runs, baseline, table })
}
