//! Mean / standard error / standard deviation over seeds, and per-seed
//! tables that can be re-aggregated from disk.

use std::io::{BufRead, BufReader, Read, Write};

use serde::Serialize;

use crate::error::{config_err, CliError, Result};

/// Summary over `n` values. `sd` and `se` use the `n - 1` denominator and are
/// absent for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub se: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        });
        Some(Self {
            n,
            mean,
            sd,
            se: sd.map(|s| s / (n as f64).sqrt()),
        })
    }

    /// `mean, se, sd` cells; empty when missing.
    pub fn cells(s: Option<Self>) -> [String; 3] {
        match s {
            Some(s) => [s.mean.to_string(), fmt_opt(s.se), fmt_opt(s.sd)],
            None => Default::default(),
        }
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// A per-seed table: named group columns, then numeric metric columns
/// (empty cell = missing), all tagged with one config hash.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedTable {
    pub config_hash: String,
    pub group_columns: Vec<String>,
    pub metric_columns: Vec<String>,
    pub rows: Vec<SeedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRow {
    pub group: Vec<String>,
    pub seed: u64,
    pub metrics: Vec<Option<f64>>,
}

/// Aggregate row: one group, `Stat` per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub group: Vec<String>,
    pub stats: Vec<Option<Stat>>,
    /// Seeds with at least one missing metric.
    pub missing: usize,
}

pub const HASH_PREFIX: &str = "# config_hash=";

impl SeedTable {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HASH_PREFIX}{}", self.config_hash)?;
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<&str> = self
            .group_columns
            .iter()
            .map(String::as_str)
            .chain(std::iter::once("seed"))
            .chain(self.metric_columns.iter().map(String::as_str))
            .collect();
        wr.write_record(&header)?;
        for r in &self.rows {
            let rec: Vec<String> = r
                .group
                .iter()
                .cloned()
                .chain(std::iter::once(r.seed.to_string()))
                .chain(r.metrics.iter().map(|m| fmt_opt(*m)))
                .collect();
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a table written by [`SeedTable::write`]; `groups` is the number
    /// of leading group columns.
    pub fn read<R: Read>(r: R, groups: usize) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut first = String::new();
        r.read_line(&mut first)?;
        let hash = first
            .trim_end()
            .strip_prefix(HASH_PREFIX)
            .ok_or_else(|| CliError::Io("per-seed table lacks a config hash line".into()))?
            .to_string();
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        if header.len() <= groups || header[groups] != "seed" {
            return Err(CliError::Io("unexpected per-seed table header".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| CliError::Io(format!("bad number {s:?}")))
                }
            };
            rows.push(SeedRow {
                group: rec.iter().take(groups).map(String::from).collect(),
                seed: rec[groups].parse().map_err(|_| CliError::Io("bad seed".into()))?,
                metrics: rec.iter().skip(groups + 1).map(parse).collect::<Result<_>>()?,
            });
        }
        Ok(Self {
            config_hash: hash,
            group_columns: header[..groups].to_vec(),
            metric_columns: header[groups + 1..].to_vec(),
            rows,
        })
    }

    /// Concatenates tables; differing config hashes or layouts are rejected.
    pub fn merge(tables: Vec<SeedTable>) -> Result<Self> {
        let mut it = tables.into_iter();
        let mut out = it.next().ok_or_else(|| config_err("nothing to aggregate"))?;
        for t in it {
            if t.config_hash != out.config_hash {
                return Err(config_err(format!(
                    "refusing to mix rows from configs {} and {}",
                    out.config_hash, t.config_hash
                )));
            }
            if t.group_columns != out.group_columns || t.metric_columns != out.metric_columns {
                return Err(config_err("per-seed tables have different columns"));
            }
            out.rows.extend(t.rows);
        }
        Ok(out)
    }

    /// Groups in first-appearance order; stats over seeds with a value.
    pub fn aggregate(&self) -> Vec<GroupStat> {
        let mut groups: Vec<Vec<String>> = Vec::new();
        for r in &self.rows {
            if !groups.contains(&r.group) {
                groups.push(r.group.clone());
            }
        }
        groups
            .into_iter()
            .map(|g| {
                let rows: Vec<&SeedRow> = self.rows.iter().filter(|r| r.group == g).collect();
                let stats = (0..self.metric_columns.len())
                    .map(|k| Stat::of(&rows.iter().filter_map(|r| r.metrics[k]).collect::<Vec<_>>()))
                    .collect();
                let missing = rows.iter().filter(|r| r.metrics.iter().any(Option::is_none)).count();
                GroupStat { group: g, stats, missing }
            })
            .collect()
    }

    /// Aggregate CSV: group columns, `n_seeds`, `n_missing`, then
    /// `<metric>_mean,<metric>_se,<metric>_sd` per metric.
    pub fn write_aggregate<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{HASH_PREFIX}{}", self.config_hash)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.group_columns.clone();
        header.push("n_seeds".into());
        header.push("n_missing".into());
        for m in &self.metric_columns {
            for s in ["mean", "se", "sd"] {
                header.push(format!("{m}_{s}"));
            }
        }
        wr.write_record(&header)?;
        for g in self.aggregate() {
            let n = self.rows.iter().filter(|r| r.group == g.group).count();
            let mut rec = g.group.clone();
            rec.push(n.to_string());
            rec.push(g.missing.to_string());
            for s in &g.stats {
                rec.extend(Stat::cells(*s));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}
