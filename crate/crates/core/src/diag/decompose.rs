use std::io::Write;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{LossKind, Network, ParamSet, Pass, RunningStats, Tensor};
use crate::par::{map_range, Execution};

/// `a·b / (|a| |b|)`, `None` if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Total gradient split into weighted correct / wrong parts:
/// `g_total = g_correct_hat + g_wrong_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDecomposition {
    pub g_total: Vec<f64>,
    /// `(N^c / N)` times the mean gradient over correctly labeled samples.
    pub g_correct_hat: Vec<f64>,
    /// `(N^w / N)` times the mean gradient over corrupted samples, each
    /// against its corrupted label.
    pub g_wrong_hat: Vec<f64>,
    pub cos_tc: Option<f64>,
    pub cos_tw: Option<f64>,
    pub cos_cw: Option<f64>,
    pub norm_correct: f64,
    pub norm_wrong: f64,
    /// Empirical `N^w / N` from the corruption mask.
    pub tau_effective: f64,
    pub n_correct: usize,
    pub n_wrong: usize,
}

impl DriftDecomposition {
    fn from_parts(g_total: Vec<f64>, g_correct_hat: Vec<f64>, g_wrong_hat: Vec<f64>, n_correct: usize, n_wrong: usize) -> Self {
        let n = (n_correct + n_wrong) as f64;
        Self {
            cos_tc: cosine(&g_total, &g_correct_hat),
            cos_tw: cosine(&g_total, &g_wrong_hat),
            cos_cw: cosine(&g_correct_hat, &g_wrong_hat),
            norm_correct: norm(&g_correct_hat),
            norm_wrong: norm(&g_wrong_hat),
            tau_effective: n_wrong as f64 / n,
            g_total,
            g_correct_hat,
            g_wrong_hat,
            n_correct,
            n_wrong,
        }
    }

    /// `|g_wrong_hat| - |g_correct_hat|`.
    pub fn norm_gap(&self) -> f64 {
        self.norm_wrong - self.norm_correct
    }

    /// Largest `|g_total - (g_c + g_w)|` relative to `|g_total|_inf`.
    pub fn additivity_error(&self) -> f64 {
        let scale = self.g_total.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        self.g_total
            .iter()
            .zip(&self.g_correct_hat)
            .zip(&self.g_wrong_hat)
            .map(|((t, c), w)| (t - c - w).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

/// Sums of per-sample gradients over the correct and wrong rows of `x`,
/// plus the batch gradient computed independently (times the row count).
#[allow(clippy::too_many_arguments)]
fn split_sums(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    x: &Tensor,
    labels: &[usize],
    corrupted: &[bool],
    loss: LossKind,
    pass: Pass,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = net.total_dim();
    let per = net.per_sample_grads(params, stats, x, labels, loss, pass, Execution::Sequential)?;
    let mut c = vec![0.0; d];
    let mut w = vec![0.0; d];
    for (g, &bad) in per.iter().zip(corrupted) {
        let dst = if bad { &mut w } else { &mut c };
        for (a, b) in dst.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = labels.len() as f64;
    let total = net
        .loss_and_grad(params, stats, x, labels, loss, pass)?
        .grad
        .into_iter()
        .map(|g| g * n)
        .collect();
    Ok((total, c, w))
}

fn finish(sums: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>, d: usize, n: usize, n_correct: usize, n_wrong: usize) -> DriftDecomposition {
    let mut t = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut w = vec![0.0; d];
    // fixed chunk order, independent of scheduling
    for (st, sc, sw) in sums {
        for j in 0..d {
            t[j] += st[j];
            c[j] += sc[j];
            w[j] += sw[j];
        }
    }
    let inv = 1.0 / n as f64;
    for v in t.iter_mut().chain(c.iter_mut()).chain(w.iter_mut()) {
        *v *= inv;
    }
    DriftDecomposition::from_parts(t, c, w, n_correct, n_wrong)
}

/// Dataset-level decomposition against the observed labels.
///
/// Rows are processed in fixed chunks of `chunk` samples (in parallel when
/// allowed) and reduced in chunk order. With `Pass::eval()` dropout is off
/// and batch norm uses the running statistics; in train mode each chunk
/// shares its own batch statistics.
#[allow(clippy::too_many_arguments)]
pub fn decompose_dataset_gradient(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    ds: &LabeledDataset,
    loss: LossKind,
    pass: Pass,
    chunk: usize,
    exec: Execution,
) -> Result<DriftDecomposition> {
    if ds.is_empty() {
        return Err(Error::arg("empty dataset"));
    }
    let chunk = chunk.max(1);
    let n = ds.len();
    let n_chunks = n.div_ceil(chunk);
    let sums = map_range(exec, n_chunks, |k| {
        let idx: Vec<usize> = (k * chunk..((k + 1) * chunk).min(n)).collect();
        let x = ds.features().select_rows(&idx)?;
        let y: Vec<usize> = idx.iter().map(|&i| ds.noisy_labels()[i]).collect();
        let m: Vec<bool> = idx.iter().map(|&i| ds.corrupted()[i]).collect();
        split_sums(net, params, stats, &x, &y, &m, loss, pass)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let n_wrong = ds.corrupted().iter().filter(|&&c| c).count();
    Ok(finish(sums, net.total_dim(), n, n - n_wrong, n_wrong))
}

/// Minibatch decomposition with weights `B^c / B` and `B^w / B`.
#[allow(clippy::too_many_arguments)]
pub fn decompose_minibatch_gradient(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    x: &Tensor,
    labels: &[usize],
    corrupted: &[bool],
    loss: LossKind,
    pass: Pass,
) -> Result<DriftDecomposition> {
    if corrupted.len() != labels.len() {
        return Err(Error::dim("one corruption flag per sample required"));
    }
    let sums = split_sums(net, params, stats, x, labels, corrupted, loss, pass)?;
    let n_wrong = corrupted.iter().filter(|&&c| c).count();
    Ok(finish(vec![sums], net.total_dim(), labels.len(), labels.len() - n_wrong, n_wrong))
}

/// One diagnostics record.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub iteration: u64,
    pub cos_tc: Option<f64>,
    pub cos_tw: Option<f64>,
    pub cos_cw: Option<f64>,
    pub norm_c: f64,
    pub norm_w: f64,
    pub trace_sigma: f64,
    pub trace_d: f64,
}

pub const DIAG_HEADER: [&str; 9] = [
    "iteration",
    "cos_tc",
    "cos_tw",
    "cos_cw",
    "norm_c",
    "norm_w",
    "norm_gap",
    "trace_sigma",
    "trace_d",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_diag_csv<W: Write>(mut w: W, rows: &[DiagRow], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(DIAG_HEADER)?;
    for r in rows {
        wr.write_record([
            r.iteration.to_string(),
            opt(r.cos_tc),
            opt(r.cos_tw),
            opt(r.cos_cw),
            r.norm_c.to_string(),
            r.norm_w.to_string(),
            (r.norm_w - r.norm_c).to_string(),
            r.trace_sigma.to_string(),
            r.trace_d.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
