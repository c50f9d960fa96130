use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use reset_opt::par::map_slice;
use reset_opt::train::NoObserver;

use super::train::{relative_to, run_metrics, train_flags, write_run_files, RUN_METRICS};
use super::RunOptions;
use crate::aggregate::{SeedRow, SeedTable, Stat};
use crate::config::{AxisValue, ExperimentConfig, SweepAxis};
use crate::error::{config_err, CliError, Result};
use crate::experiment::{run_key, run_training, RunSummary};
use crate::output::{hash_comment, OutputDir, RunMetadata};

/// All seeds at one `(axis value, r)` point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: AxisValue,
    pub r: f64,
    pub runs: Vec<RunSummary>,
    /// Per seed, against the matched `r = 0` run at the same axis value.
    pub rdvloss: Vec<Option<f64>>,
    pub rdtacc: Vec<Option<f64>>,
}

impl SweepPoint {
    pub fn rdvloss_stat(&self) -> Option<Stat> {
        Stat::of(&self.rdvloss.iter().flatten().copied().collect::<Vec<_>>())
    }
}

pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub table: SeedTable,
}

impl SweepReport {
    pub fn at(&self, value: &AxisValue, r: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| &p.value == value && p.r == r)
    }

    /// Lowest mean RDVLoss over `r > 0` at one axis value, with its rate.
    pub fn min_rdvloss(&self, value: &AxisValue) -> Option<(f64, Stat)> {
        self.points
            .iter()
            .filter(|p| &p.value == value && p.r > 0.0)
            .filter_map(|p| p.rdvloss_stat().map(|s| (p.r, s)))
            .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
    }
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::R => "r",
        SweepAxis::BatchSize => "batch_size",
        SweepAxis::Tau => "tau",
        SweepAxis::CheckpointOffset => "checkpoint_offset",
        SweepAxis::Epsilon => "epsilon",
        SweepAxis::SectionMask => "section_mask",
    }
}

/// Runs the grid `axis values x r_values x seeds` and aggregates RDVLoss /
/// RDTAcc against matched-seed `r = 0` runs.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &mut OutputDir, opts: RunOptions) -> Result<SweepReport> {
    let start = Instant::now();
    let sweep = cfg.sweep.as_ref().ok_or_else(|| config_err("missing [sweep] section"))?;
    cfg.validate_training()?;
    let values = sweep.axis_values()?;
    let seeds = cfg.seeds();
    let hash = cfg.hash();

    // (value, r) -> point config; unique runs deduplicated by run key
    let mut grid = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    let mut jobs: Vec<(ExperimentConfig, u64)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for v in &values {
        for &r in &sweep.r_values {
            let pc = cfg.at_point(sweep.axis, v, r)?;
            pc.validate_training()?;
            let mut slots = Vec::new();
            for &s in &seeds {
                let k = run_key(&pc, s);
                let slot = *index.entry(k.clone()).or_insert_with(|| {
                    keys.push(k);
                    jobs.push((pc.clone(), s));
                    jobs.len() - 1
                });
                slots.push(slot);
            }
            grid.push((v.clone(), r, slots));
        }
    }
    let results = map_slice(opts.exec, &jobs, |(c, s)| run_training(c, *s, &mut NoObserver))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    for (v, r, slots) in &grid {
        let base = grid
            .iter()
            .find(|(bv, br, _)| bv == v && *br == 0.0)
            .map(|g| &g.2)
            .expect("r = 0 present");
        let mut rdv = Vec::new();
        let mut rdt = Vec::new();
        for (slot, bslot) in slots.iter().zip(base) {
            let (a, b) = relative_to(&results[*slot], &results[*bslot])?;
            rdv.push(a);
            rdt.push(b);
        }
        points.push(SweepPoint {
            value: v.clone(),
            r: *r,
            runs: slots.iter().map(|&i| results[i].clone()).collect(),
            rdvloss: rdv,
            rdtacc: rdt,
        });
    }

    let name = axis_name(sweep.axis);
    let mut metric_columns: Vec<String> = RUN_METRICS.iter().map(|s| s.to_string()).collect();
    metric_columns.extend(["rdvloss".to_string(), "rdtacc".to_string()]);
    let mut rows = Vec::new();
    for p in &points {
        for (k, run) in p.runs.iter().enumerate() {
            let mut m = run_metrics(run);
            m.extend([p.rdvloss[k], p.rdtacc[k]]);
            rows.push(SeedRow {
                group: vec![p.value.to_string(), p.r.to_string()],
                seed: run.seed,
                metrics: m,
            });
            if sweep.write_metrics {
                let dir = match &p.value {
                    AxisValue::None => format!("runs/r_{}/seed_{}", p.r, run.seed),
                    v => format!("runs/{name}_{v}/r_{}/seed_{}", p.r, run.seed),
                };
                write_run_files(out, &dir, run, &hash, false)?;
            }
        }
    }
    let table = SeedTable {
        config_hash: hash.clone(),
        group_columns: vec![name.to_string(), "r".to_string()],
        metric_columns,
        rows,
    };
    table.write(out.file("sweep_runs.csv")?)?;
    table.write_aggregate(out.file("sweep.csv")?)?;

    let report = SweepReport {
        axis: sweep.axis,
        points,
        table,
    };
    let mut w = out.file("sweep_best.csv")?;
    writeln!(w, "# {}", hash_comment(&hash))?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([name, "best_r", "rdvloss_mean", "rdvloss_se", "rdvloss_sd", "n"])?;
    for v in &values {
        match report.min_rdvloss(v) {
            Some((r, s)) => {
                let [m, se, sd] = Stat::cells(Some(s));
                wr.write_record([v.to_string(), r.to_string(), m, se, sd, s.n.to_string()])?
            }
            None => wr.write_record([v.to_string(), String::new(), String::new(), String::new(), String::new(), "0".into()])?,
        }
    }
    wr.flush()?;
    drop(wr);

    let failed: Vec<String> = report
        .points
        .iter()
        .flat_map(|p| {
            p.runs.iter().filter_map(move |r| {
                r.failure.as_ref().map(|f| format!("{name}={} r={} seed {}: {f}", p.value, p.r, r.seed))
            })
        })
        .collect();
    let mut flags = train_flags(cfg)?;
    flags["axis"] = name.into();
    flags["deduplicated_runs"] = (grid.len() * seeds.len() - jobs.len()).into();
    let files = out.files().to_vec();
    RunMetadata {
        command: "sweep".into(),
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
    if results.iter().all(|r| !r.completed) {
        return Err(CliError::Numeric("every training run diverged".into()));
    }
    Ok(report)
}
