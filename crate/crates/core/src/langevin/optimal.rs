use crate::error::{Error, Result};
use crate::langevin::{mfpt_closed_form, peclet};

/// Result of the optimal reset-rate search.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalRate {
    pub gamma: f64,
    pub mfpt: f64,
    /// False when `Pe >= 1`: the MFPT is then minimized at `gamma = 0`.
    pub interior: bool,
    /// `(gamma, mfpt)` pairs of the bracketing scan.
    pub scan: Vec<(f64, f64)>,
}

const SCAN_POINTS: usize = 241;
// scan range in units of D / L^2
const SCAN_LO: f64 = 1e-8;
const SCAN_HI: f64 = 1e4;
const REL_TOL: f64 = 1e-9;

/// Minimizes the closed-form MFPT over the reset rate: logarithmic scan to
/// bracket, then golden section in `ln gamma`.
pub fn optimal_reset_rate(d: f64, v: f64, l: f64) -> Result<OptimalRate> {
    let pe = peclet(d, v, l)?;
    if pe >= 1.0 {
        return Ok(OptimalRate {
            gamma: 0.0,
            mfpt: mfpt_closed_form(d, v, l, 0.0)?,
            interior: false,
            scan: Vec::new(),
        });
    }
    let unit = d / (l * l);
    let (lo, hi) = ((SCAN_LO * unit).ln(), (SCAN_HI * unit).ln());
    let f = |u: f64| mfpt_closed_form(d, v, l, u.exp());
    let mut scan = Vec::with_capacity(SCAN_POINTS);
    for i in 0..SCAN_POINTS {
        let u = lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64;
        scan.push((u.exp(), f(u)?));
    }
    let best = scan
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    if best == 0 || best == SCAN_POINTS - 1 {
        return Err(Error::Numeric(format!(
            "could not bracket the optimal reset rate (Pe = {pe}); scan: {:?}",
            scan
        )));
    }
    let mut a = scan[best - 1].0.ln();
    let mut b = scan[best + 1].0.ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut e = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fe = f(e)?;
    while b - a > REL_TOL {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + inv_phi * (b - a);
            fe = f(e)?;
        }
    }
    let u = 0.5 * (a + b);
    Ok(OptimalRate {
        gamma: u.exp(),
        mfpt: f(u)?,
        interior: true,
        scan,
    })
}
