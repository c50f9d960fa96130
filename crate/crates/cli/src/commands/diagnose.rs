use std::time::Instant;

use reset_opt::data::LabeledDataset;
use reset_opt::diag::{
    decompose_dataset_gradient, estimate_diffusion, log_window_smooth, write_diag_csv, DiagRow,
};
use reset_opt::nn::{Network, Pass};
use reset_opt::par::{map_slice, Execution};
use reset_opt::rng::splitmix64;
use reset_opt::train::{MetricsRow, Observer, TrainConfig, TrainState};

use super::train::{run_metrics, train_flags, write_run_files, RUN_METRICS};
use super::RunOptions;
use crate::aggregate::{fmt_opt, SeedRow, SeedTable, Stat};
use crate::config::{DiagnoseConfig, ExperimentConfig};
use crate::error::{config_err, Result};
use crate::experiment::{build_datasets, build_network, run_prepared, RunSummary};
use crate::output::{hash_comment, OutputDir, RunMetadata};

struct DiagObserver<'a> {
    dc: &'a DiagnoseConfig,
    tc: &'a TrainConfig,
    train: &'a LabeledDataset,
    seed: u64,
    exec: Execution,
    eval_rows: Vec<DiagRow>,
    train_rows: Vec<DiagRow>,
}

impl DiagObserver<'_> {
    fn record(&self, net: &Network, st: &TrainState, pass: Pass, iteration: u64) -> reset_opt::Result<DiagRow> {
        let d = decompose_dataset_gradient(net, &st.params, &st.running, self.train, self.tc.loss, pass, self.dc.chunk, self.exec)?;
        let diff = estimate_diffusion(
            net,
            &st.params,
            &st.running,
            self.train,
            self.tc.loss,
            self.tc.lr_at(iteration),
            self.tc.batch_size,
            self.dc.diffusion_samples,
            splitmix64(self.seed ^ iteration),
            self.exec,
        )?;
        Ok(DiagRow {
            iteration,
            cos_tc: d.cos_tc,
            cos_tw: d.cos_tw,
            cos_cw: d.cos_cw,
            norm_c: d.norm_correct,
            norm_w: d.norm_wrong,
            trace_sigma: diff.trace_sigma,
            trace_d: diff.trace_d,
        })
    }
}

impl Observer for DiagObserver<'_> {
    fn on_validation(&mut self, net: &Network, st: &TrainState, row: &MetricsRow) -> reset_opt::Result<()> {
        if !row.iteration.is_multiple_of(self.dc.every) {
            return Ok(());
        }
        let r = self.record(net, st, Pass::eval(), row.iteration)?;
        self.eval_rows.push(r);
        if self.dc.train_mode {
            let dropout = splitmix64(self.seed.wrapping_add(row.iteration));
            let r = self.record(net, st, Pass::train(dropout), row.iteration)?;
            self.train_rows.push(r);
        }
        Ok(())
    }
}

/// One diagnosed training run.
#[derive(Debug, Clone)]
pub struct DiagnosedRun {
    pub variant: String,
    pub run: RunSummary,
    pub rows: Vec<DiagRow>,
    pub train_mode_rows: Vec<DiagRow>,
}

impl DiagnosedRun {
    /// Mean of `|cos_cw|` over recorded points where it is defined.
    pub fn mean_abs_cos_cw(&self) -> Option<f64> {
        mean(self.rows.iter().filter_map(|r| r.cos_cw.map(f64::abs)))
    }

    /// Same over the train-mode (batch statistics) decompositions.
    pub fn mean_abs_cos_cw_train_mode(&self) -> Option<f64> {
        mean(self.train_mode_rows.iter().filter_map(|r| r.cos_cw.map(f64::abs)))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = it.collect();
    Stat::of(&v).map(|s| s.mean)
}

pub struct DiagnoseReport {
    pub runs: Vec<DiagnosedRun>,
    pub table: SeedTable,
}

const DIAG_METRICS: [&str; 7] = [
    "mean_abs_cos_cw",
    "mean_abs_cos_cw_train_mode",
    "mean_cos_tc",
    "mean_cos_tw",
    "mean_norm_gap",
    "mean_trace_d",
    "records",
];

/// Log-window smoothing of every diagnostics column on a shared grid.
/// Columns with missing values are left empty.
fn write_smoothed<W: std::io::Write>(mut w: W, rows: &[DiagRow], window: usize, hash: &str) -> Result<()> {
    writeln!(w, "# {} smoothing_window={window}", hash_comment(hash))?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(reset_opt::diag::DIAG_HEADER)?;
    let getters: [fn(&DiagRow) -> Option<f64>; 8] = [
        |r| r.cos_tc,
        |r| r.cos_tw,
        |r| r.cos_cw,
        |r| Some(r.norm_c),
        |r| Some(r.norm_w),
        |r| Some(r.norm_w - r.norm_c),
        |r| Some(r.trace_sigma),
        |r| Some(r.trace_d),
    ];
    let mut columns: Vec<Option<Vec<(f64, f64)>>> = Vec::new();
    for g in getters {
        let series: Option<Vec<(f64, f64)>> = rows.iter().map(|r| g(r).map(|v| (r.iteration as f64, v))).collect();
        columns.push(match series {
            Some(s) => Some(log_window_smooth(&s, window)?),
            None => None,
        });
    }
    let grid: Vec<(f64, f64)> = log_window_smooth(
        &rows.iter().map(|r| (r.iteration as f64, 0.0)).collect::<Vec<_>>(),
        window,
    )?;
    for k in 0..grid.len() {
        let mut rec = vec![grid[k].0.to_string()];
        for c in &columns {
            rec.push(fmt_opt(c.as_ref().map(|c| c[k].1)));
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Trains with periodic drift decomposition and diffusion estimates.
pub fn cmd_diagnose(cfg: &ExperimentConfig, out: &mut OutputDir, opts: RunOptions) -> Result<DiagnoseReport> {
    let start = Instant::now();
    cfg.validate_training()?;
    let dc = cfg.diagnose.as_ref().ok_or_else(|| config_err("missing [diagnose] section"))?;
    let tc = cfg.train()?;
    if dc.every == 0 || dc.every % tc.reset.validation_interval != 0 {
        return Err(config_err(format!(
            "diagnose.every must be a positive multiple of the validation interval ({})",
            tc.reset.validation_interval
        )));
    }
    if dc.smoothing_window == 0 {
        return Err(config_err("diagnose.smoothing_window must be >= 1"));
    }
    let hash = cfg.hash();
    let seeds = cfg.seeds();

    let mut variants: Vec<(String, ExperimentConfig)> = Vec::new();
    if dc.batch_norm_pair {
        for (name, bn) in [("bn", true), ("no_bn", false)] {
            let mut c = cfg.clone();
            c.network.as_mut().ok_or_else(|| config_err("missing [network] section"))?.batch_norm = bn;
            variants.push((name.into(), c));
        }
    } else {
        variants.push(("default".into(), cfg.clone()));
    }
    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs = map_slice(opts.exec, &jobs, |&(v, seed)| -> Result<DiagnosedRun> {
        let (name, vc) = &variants[v];
        let net = build_network(vc)?;
        let ds = build_datasets(vc, seed)?;
        let mut obs = DiagObserver {
            dc,
            tc,
            train: &ds.train,
            seed,
            // runs already fan out; keep each run's inner loops sequential
            exec: Execution::Sequential,
            eval_rows: Vec::new(),
            train_rows: Vec::new(),
        };
        let run = run_prepared(vc, &net, &ds, seed, &mut obs)?;
        Ok(DiagnosedRun {
            variant: name.clone(),
            run,
            rows: obs.eval_rows,
            train_mode_rows: obs.train_rows,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut metric_columns: Vec<String> = DIAG_METRICS.iter().map(|s| s.to_string()).collect();
    metric_columns.extend(RUN_METRICS.iter().map(|s| s.to_string()));
    let mut rows = Vec::new();
    for d in &runs {
        let dir = if dc.batch_norm_pair {
            format!("runs/{}/seed_{}", d.variant, d.run.seed)
        } else {
            format!("runs/seed_{}", d.run.seed)
        };
        write_diag_csv(out.file(&format!("{dir}/diagnostics.csv"))?, &d.rows, Some(&hash_comment(&hash)))?;
        write_smoothed(out.file(&format!("{dir}/diagnostics_smoothed.csv"))?, &d.rows, dc.smoothing_window, &hash)?;
        if dc.train_mode {
            write_diag_csv(
                out.file(&format!("{dir}/diagnostics_train_mode.csv"))?,
                &d.train_mode_rows,
                Some(&hash_comment(&hash)),
            )?;
        }
        write_run_files(out, &dir, &d.run, &hash, false)?;
        let mut m = vec![
            d.mean_abs_cos_cw(),
            d.mean_abs_cos_cw_train_mode(),
            mean(d.rows.iter().filter_map(|r| r.cos_tc)),
            mean(d.rows.iter().filter_map(|r| r.cos_tw)),
            mean(d.rows.iter().map(|r| r.norm_w - r.norm_c)),
            mean(d.rows.iter().map(|r| r.trace_d)),
            Some(d.rows.len() as f64),
        ];
        m.extend(run_metrics(&d.run));
        rows.push(SeedRow {
            group: vec![d.variant.clone()],
            seed: d.run.seed,
            metrics: m,
        });
    }
    let table = SeedTable {
        config_hash: hash.clone(),
        group_columns: vec!["variant".into()],
        metric_columns,
        rows,
    };
    table.write(out.file("diag_runs.csv")?)?;
    table.write_aggregate(out.file("diag_summary.csv")?)?;

    let mut flags = train_flags(cfg)?;
    flags["canonical_gradient_mode"] = "eval (running statistics, no dropout)".into();
    flags["train_mode_emitted"] = dc.train_mode.into();
    flags["tau_effective"] = "empirical corrupted fraction".into();
    flags["smoothing"] = format!("{} consecutive points of a log-spaced grid", dc.smoothing_window).into();
    let failed = runs
        .iter()
        .filter_map(|d| d.run.failure.as_ref().map(|f| format!("{} seed {}: {f}", d.variant, d.run.seed)))
        .collect();
    let files = out.files().to_vec();
    RunMetadata {
        command: "diagnose".into(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        seeds,
        flags,
        warnings: Vec::new(),
        failed_runs: failed,
        files,
        wall_time_secs: start.elapsed().as_secs_f64(),
    }
    .write(out)?;
    Ok(DiagnoseReport { runs, table })
}
