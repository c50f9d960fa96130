use crate::error::{Error, Result};

/// Log-iteration moving average.
///
/// The series is resampled (linear interpolation in `ln iteration`) onto a
/// log-spaced grid with as many points as the input, then averaged over
/// `window` consecutive grid points. Each output point sits at the geometric
/// mean of its window's iterations; `len - window + 1` points are returned.
pub fn log_window_smooth(series: &[(f64, f64)], window: usize) -> Result<Vec<(f64, f64)>> {
    if window == 0 {
        return Err(Error::arg("window must be >= 1"));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    if series[0].0 <= 0.0 || series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::arg("iterations must be positive and strictly increasing"));
    }
    let n = series.len();
    if window > n {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(series.to_vec());
    }
    let logs: Vec<f64> = series.iter().map(|p| p.0.ln()).collect();
    let (lo, hi) = (logs[0], logs[n - 1]);
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let mut j = 0;
    let values: Vec<f64> = grid
        .iter()
        .map(|&u| {
            while j + 1 < n - 1 && logs[j + 1] < u {
                j += 1;
            }
            let (u0, u1) = (logs[j], logs[j + 1]);
            let f = ((u - u0) / (u1 - u0)).clamp(0.0, 1.0);
            series[j].1 + f * (series[j + 1].1 - series[j].1)
        })
        .collect();
    Ok((0..=n - window)
        .map(|s| {
            let u = grid[s..s + window].iter().sum::<f64>() / window as f64;
            let v = values[s..s + window].iter().sum::<f64>() / window as f64;
            (u.exp(), v)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 20.0 * 1000f64.powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn window_one_keeps_grid_values() {
        let s: Vec<(f64, f64)> = log_grid(30).into_iter().map(|t| (t, (t * 0.01).sin())).collect();
        let out = log_window_smooth(&s, 1).unwrap();
        assert_eq!(out.len(), 30);
        for (a, b) in out.iter().zip(&s) {
            assert!((a.0 - b.0).abs() < 1e-9 * b.0 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let s: Vec<(f64, f64)> = (1..=100).map(|t| (20.0 * t as f64, 0.7)).collect();
        let out = log_window_smooth(&s, 50).unwrap();
        assert_eq!(out.len(), 51);
        assert!(out.iter().all(|p| (p.1 - 0.7).abs() < 1e-15));
    }

    #[test]
    fn linear_in_log_is_reproduced() {
        // uniformly recorded iterations: still linear in ln t after resampling
        let s: Vec<(f64, f64)> = (1..=200).map(|t| {
            let it = 20.0 * t as f64;
            (it, 3.0 - 0.5 * it.ln())
        }).collect();
        let out = log_window_smooth(&s, 7).unwrap();
        for (t, v) in out {
            assert!((v - (3.0 - 0.5 * t.ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_cases() {
        assert!(log_window_smooth(&[], 3).unwrap().is_empty());
        assert!(log_window_smooth(&[(1.0, 1.0)], 0).is_err());
        assert!(log_window_smooth(&[(2.0, 1.0), (2.0, 1.0)], 1).is_err());
        assert!(log_window_smooth(&[(1.0, 1.0), (2.0, 1.0)], 3).unwrap().is_empty());
        assert_eq!(log_window_smooth(&[(5.0, 2.0)], 1).unwrap(), vec![(5.0, 2.0)]);
    }
}
