use std::f64::consts::PI;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn check_dl(d: f64, l: f64) -> Result<()> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::arg(format!("diffusion must be positive, got {d}")));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::arg(format!("target distance must be positive, got {l}")));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 || gamma.is_infinite() {
        return Err(Error::arg(format!("reset rate must be >= 0, got {gamma}")));
    }
    Ok(())
}

/// `sqrt(v^2 + 4 D gamma) - v` without cancellation for `v > 0`.
fn root_gap(d: f64, v: f64, gamma: f64) -> f64 {
    let s = (v * v + 4.0 * d * gamma).sqrt();
    if v > 0.0 {
        4.0 * d * gamma / (s + v)
    } else {
        s - v
    }
}

/// Mean first-passage time under resetting rate `gamma`:
/// `(exp(L/(2D) (sqrt(v^2 + 4 D gamma) - v)) - 1) / gamma`.
///
/// At `gamma = 0` this is `L/v` for positive drift and `+inf` otherwise.
pub fn mfpt_closed_form(d: f64, v: f64, l: f64, gamma: f64) -> Result<f64> {
    check_dl(d, l)?;
    check_gamma(gamma)?;
    if gamma == 0.0 {
        return Ok(if v > 0.0 { l / v } else { f64::INFINITY });
    }
    let a = l / (2.0 * d);
    Ok((a * root_gap(d, v, gamma)).exp_m1() / gamma)
}

/// Laplace transform of the reset-free first-passage density at `gamma`.
pub fn laplace_fpt(d: f64, v: f64, l: f64, gamma: f64) -> Result<f64> {
    check_dl(d, l)?;
    check_gamma(gamma)?;
    let a = l / (2.0 * d);
    // at gamma = 0 and v < 0 this is the hitting probability exp(L v / D)
    Ok((-a * root_gap(d, v, gamma)).exp())
}

/// Renewal equation: MFPT under resetting from any reset-free FPT Laplace
/// transform value.
pub fn mfpt_renewal(laplace_value: f64, gamma: f64) -> Result<f64> {
    if !(laplace_value > 0.0 && laplace_value <= 1.0) {
        return Err(Error::arg(format!(
            "Laplace transform value {laplace_value} outside (0, 1]"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("reset rate must be > 0, got {gamma}")));
    }
    Ok((1.0 - laplace_value) / (gamma * laplace_value))
}

/// Density of surviving walkers at `x <= L` after time `t`, started at the
/// origin, absorbed at `L` (method of images).
pub fn propagator_density(d: f64, v: f64, l: f64, x: f64, t: f64) -> Result<f64> {
    check_dl(d, l)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::arg(format!("time must be positive, got {t}")));
    }
    if x > l {
        return Err(Error::arg(format!("position {x} beyond the target {l}")));
    }
    let four_dt = 4.0 * d * t;
    let e1 = -(x - v * t).powi(2) / four_dt;
    let e2 = l * v / d - (x - 2.0 * l - v * t).powi(2) / four_dt;
    // both exponents in log space so a large image weight cannot overflow
    let diff = if e2 <= e1 {
        e1.exp() * -(e2 - e1).exp_m1()
    } else {
        -(e2.exp() * -(e1 - e2).exp_m1())
    };
    Ok((diff / (PI * four_dt).sqrt()).max(0.0))
}

/// `ln Phi(z)` for the standard normal CDF, accurate deep in the left tail.
fn ln_norm_cdf(z: f64) -> f64 {
    let p = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    if p > 0.0 {
        p.ln()
    } else {
        -0.5 * z * z - (-z * (2.0 * PI).sqrt()).ln()
    }
}

/// Probability that the target has not been reached by time `t` (no
/// resetting). `t = 0` gives 1.
pub fn survival(d: f64, v: f64, l: f64, t: f64) -> Result<f64> {
    check_dl(d, l)?;
    if t.is_nan() || t < 0.0 {
        return Err(Error::arg(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let w = (2.0 * d * t).sqrt();
    let first = ln_norm_cdf((l - v * t) / w).exp();
    let image = (l * v / d + ln_norm_cdf((-l - v * t) / w)).exp();
    Ok((first - image).clamp(0.0, 1.0))
}

/// First-passage density without resetting (inverse Gaussian; defective
/// when `v < 0`).
pub fn fpt_density(d: f64, v: f64, l: f64, t: f64) -> Result<f64> {
    check_dl(d, l)?;
    if t.is_nan() || t <= 0.0 {
        return Err(Error::arg(format!("time must be positive, got {t}")));
    }
    Ok(l / (4.0 * PI * d * t.powi(3)).sqrt() * (-(l - v * t).powi(2) / (4.0 * d * t)).exp())
}

/// `L v / (2 D)`.
pub fn peclet(d: f64, v: f64, l: f64) -> Result<f64> {
    check_dl(d, l)?;
    Ok(l * v / (2.0 * d))
}

/// Resetting lowers the MFPT for small rates iff `Pe <= 1`.
pub fn reset_beneficial(d: f64, v: f64, l: f64) -> Result<bool> {
    Ok(peclet(d, v, l)? <= 1.0)
}
