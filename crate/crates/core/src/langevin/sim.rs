use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::langevin::mfpt_closed_form;
use crate::par::{map_range, Execution};
use crate::rng::{stream_rng, Stream};

/// Default cutoff in units of the closed-form MFPT.
pub const MAX_TIME_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub diffusion: f64,
    pub drift: f64,
    pub target: f64,
    pub reset_rate: f64,
    pub time_step: f64,
    /// Defaults to `1000 ×` the closed-form MFPT.
    #[serde(default)]
    pub max_time: Option<f64>,
    /// Catch crossings that happen between grid points using the Brownian
    /// bridge exit probability. Removes the O(sqrt(dt)) overshoot bias.
    #[serde(default = "default_bridge")]
    pub bridge_correction: bool,
}

fn default_bridge() -> bool {
    true
}

impl LangevinConfig {
    pub fn new(diffusion: f64, drift: f64, target: f64, reset_rate: f64, time_step: f64) -> Self {
        Self {
            diffusion,
            drift,
            target,
            reset_rate,
            time_step,
            max_time: None,
            bridge_correction: true,
        }
    }

    /// Hard requirements; the simulation refuses to run without them.
    pub fn validate(&self) -> Result<()> {
        let Self {
            diffusion: d,
            drift: v,
            target: l,
            reset_rate: g,
            time_step: dt,
            ..
        } = *self;
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::arg(format!("diffusion must be >= 0, got {d}")));
        }
        if !v.is_finite() {
            return Err(Error::arg("drift must be finite"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::arg(format!("target must be positive, got {l}")));
        }
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::arg(format!("reset rate must be >= 0, got {g}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::arg(format!("time step must be positive, got {dt}")));
        }
        if g * dt >= 1.0 {
            return Err(Error::arg(format!(
                "reset probability per step {} must be below 1",
                g * dt
            )));
        }
        if let Some(t) = self.max_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::arg(format!("max_time must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Soft step-size guard: `gamma dt < 0.1` and
    /// `|v| dt + 3 sqrt(2 D dt) < L / 10`. Violations are reported, not fatal.
    pub fn stability_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let r = self.reset_rate * self.time_step;
        if r >= 0.1 {
            out.push(format!("reset probability per step {r:.3} >= 0.1"));
        }
        let excursion = self.drift.abs() * self.time_step
            + 3.0 * (2.0 * self.diffusion * self.time_step).sqrt();
        if excursion >= self.target / 10.0 {
            out.push(format!(
                "per-step excursion {excursion:.4} >= L/10 = {:.4}",
                self.target / 10.0
            ));
        }
        out
    }

    /// Reset probability per step, `r = gamma dt`.
    pub fn reset_probability(&self) -> f64 {
        self.reset_rate * self.time_step
    }

    pub fn resolved_max_time(&self) -> Result<f64> {
        if let Some(t) = self.max_time {
            return Ok(t);
        }
        let reference = if self.diffusion > 0.0 {
            mfpt_closed_form(self.diffusion, self.drift, self.target, self.reset_rate)?
        } else if self.drift > 0.0 {
            self.target / self.drift
        } else {
            f64::INFINITY
        };
        if reference.is_finite() {
            Ok(MAX_TIME_FACTOR * reference.max(self.time_step))
        } else {
            Err(Error::Config(
                "mean first-passage time is infinite; set max_time explicitly".into(),
            ))
        }
    }
}

/// First-passage samples of one simulation call.
#[derive(Debug, Clone, PartialEq)]
pub struct FptBatch {
    /// Passage times of the trajectories that reached the target, in
    /// trajectory order.
    pub samples: Vec<f64>,
    /// Trajectories still running at `max_time`.
    pub censored: usize,
    pub n_trajectories: usize,
    pub max_time: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl FptBatch {
    pub fn all_censored(&self) -> bool {
        self.samples.is_empty()
    }

    /// `mean(exp(-s T))`; censored walkers count as never arriving.
    pub fn empirical_laplace(&self, s: f64) -> f64 {
        self.samples.iter().map(|t| (-s * t).exp()).sum::<f64>() / self.n_trajectories as f64
    }

    /// Mean ± standard error over uncensored samples, paired with the
    /// closed form.
    pub fn summarize(&self, closed_form: f64) -> Result<MfptResult> {
        if self.all_censored() {
            return Err(Error::Numeric(format!(
                "all {} trajectories censored at t = {}",
                self.n_trajectories, self.max_time
            )));
        }
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        let var = if self.samples.len() > 1 {
            self.samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(MfptResult {
            estimate: mean,
            std_error: (var / n).sqrt(),
            n_effective: self.samples.len(),
            closed_form,
            relative_gap: (mean - closed_form) / closed_form,
            censored: self.censored,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MfptResult {
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
    pub closed_form: f64,
    pub relative_gap: f64,
    pub censored: usize,
}

impl MfptResult {
    /// Estimates built from a censored batch are biased low.
    pub fn flagged(&self) -> bool {
        self.censored > 0
    }

    /// `|gap| <= max(rel_tol, k standard errors)`.
    pub fn agrees(&self, rel_tol: f64, k_se: f64) -> bool {
        let gap = (self.estimate - self.closed_form).abs();
        gap <= (rel_tol * self.closed_form.abs()).max(k_se * self.std_error)
    }
}

/// Euler–Maruyama first-passage sampling with Poissonian resetting.
///
/// Each step either resets to the origin (probability `gamma dt`) or moves
/// by `v dt + sqrt(2 D dt) N(0, 1)`. A walker is absorbed once `x >= L` or,
/// with bridge correction, when the continuous path between two grid points
/// would have touched `L`. Trajectory `i` uses its own stream, so results
/// do not depend on scheduling.
pub fn simulate_fpt(
    cfg: &LangevinConfig,
    n_trajectories: usize,
    seed: u64,
    exec: Execution,
) -> Result<FptBatch> {
    cfg.validate()?;
    if n_trajectories == 0 {
        return Err(Error::arg("need at least one trajectory"));
    }
    let max_time = cfg.resolved_max_time()?;
    let max_steps = (max_time / cfg.time_step).floor() as u64;
    let outcomes = map_range(exec, n_trajectories, |i| {
        run_trajectory(cfg, max_steps, seed, i as u64)
    });
    let samples: Vec<f64> = outcomes
        .iter()
        .filter_map(|k| k.map(|k| k as f64 * cfg.time_step))
        .collect();
    Ok(FptBatch {
        censored: n_trajectories - samples.len(),
        samples,
        n_trajectories,
        max_time,
        seed,
        warnings: cfg.stability_warnings(),
    })
}

/// Returns the absorbing step index (1-based), or `None` if censored.
fn run_trajectory(cfg: &LangevinConfig, max_steps: u64, seed: u64, index: u64) -> Option<u64> {
    let mut rng = stream_rng(seed, Stream::Trajectory, index);
    let l = cfg.target;
    let dt = cfg.time_step;
    let p_reset = cfg.reset_rate * dt;
    let mu = cfg.drift * dt;
    let sigma = (2.0 * cfg.diffusion * dt).sqrt();
    let bridge = cfg.bridge_correction && cfg.diffusion > 0.0;
    let inv_ddt = if bridge { 1.0 / (cfg.diffusion * dt) } else { 0.0 };
    let mut x = 0.0f64;
    for k in 1..=max_steps {
        if p_reset > 0.0 && rng.random::<f64>() < p_reset {
            x = 0.0;
            continue;
        }
        let z: f64 = if sigma > 0.0 {
            StandardNormal.sample(&mut rng)
        } else {
            0.0
        };
        let next = x + mu + sigma * z;
        if next >= l {
            return Some(k);
        }
        if bridge {
            // P(max of bridge from x to next >= L) = exp(-(L-x)(L-next)/(D dt))
            let e = (l - x) * (l - next) * inv_ddt;
            if e < 40.0 && rng.random::<f64>() < (-e).exp() {
                return Some(k);
            }
        }
        x = next;
    }
    None
}
