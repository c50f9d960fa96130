//! Central-difference validation of the analytic gradient.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::nn::loss::LossKind;
use crate::nn::network::{Mode, Network, Pass};
use crate::nn::params::{ParamSet, RunningStats};
use crate::nn::tensor::Tensor;
use crate::rng::{stream_rng, Stream};

/// Coordinate differences below this are treated as agreement.
pub const ABS_FLOOR: f64 = 1e-9;

/// Options for [`finite_diff_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Maximum number of coordinates to probe; all when `>= total_dim`.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 200,
            seed: 0,
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Max over compared coordinates of
    /// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose `±step` evaluations flipped a ReLU or changed a
    /// max-pool winner; central differences are meaningless there.
    pub skipped_kinks: usize,
}

/// Max relative error between the analytic gradient and central
/// differences; see [`finite_diff_report`].
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    x: &Tensor,
    labels: &[usize],
    loss: LossKind,
    pass: Pass,
    opts: GradCheck,
) -> Result<f64> {
    Ok(finite_diff_report(net, params, stats, x, labels, loss, pass, opts)?.max_rel_error)
}

/// Compares the analytic gradient with central differences on a sampled
/// coordinate subset.
///
/// In train mode batch-norm statistics are taken from the unperturbed pass
/// and held fixed for both the analytic gradient and every perturbed
/// evaluation; dropout masks are fixed by the pass seed. Differences at or
/// below [`ABS_FLOOR`] count as agreement.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_report(
    net: &Network,
    params: &ParamSet,
    stats: &RunningStats,
    x: &Tensor,
    labels: &[usize],
    loss: LossKind,
    pass: Pass,
    opts: GradCheck,
) -> Result<GradCheckReport> {
    if opts.step <= 0.0 || !opts.step.is_finite() {
        return Err(Error::arg("step must be positive"));
    }
    // validates shapes and labels
    let reference = net.loss_and_grad(params, stats, x, labels, loss, pass)?;
    let frozen = match pass.mode {
        Mode::Train if net.has_batch_norm() => Some(reference.batch_stats.clone()),
        _ => None,
    };
    let frozen = frozen.as_deref();
    let base = params.values();
    let analytic = net.loss_grad_unchecked(base, stats, x, labels, loss, pass, frozen).grad;
    let (_, base_pattern) = net.loss_and_pattern(base, stats, x, labels, loss, pass, frozen);

    let d = params.total_dim();
    let coords: Vec<usize> = if opts.max_coords >= d {
        (0..d).collect()
    } else {
        let mut rng = stream_rng(opts.seed, Stream::Diagnostics, 0);
        let mut c = sample(&mut rng, d, opts.max_coords).into_vec();
        c.sort_unstable();
        c
    };

    let mut work = base.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in coords {
        let orig = work[i];
        work[i] = orig + opts.step;
        let (up, up_pattern) = net.loss_and_pattern(&work, stats, x, labels, loss, pass, frozen);
        work[i] = orig - opts.step;
        let (down, down_pattern) = net.loss_and_pattern(&work, stats, x, labels, loss, pass, frozen);
        work[i] = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            report.skipped_kinks += 1;
            continue;
        }
        report.checked += 1;
        let central = (up - down) / (2.0 * opts.step);
        let diff = (analytic[i] - central).abs();
        if diff <= ABS_FLOOR {
            continue;
        }
        report.max_rel_error = report
            .max_rel_error
            .max(diff / (analytic[i].abs() + central.abs() + 1e-12));
    }
    Ok(report)
}

