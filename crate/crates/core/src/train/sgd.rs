use crate::error::{Error, Result};

/// One SGD update in place. With `momentum > 0` the heavy-ball buffer is
/// created on first use: `buf = mu buf + g`, `theta -= lr buf`.
pub fn sgd_step(
    params: &mut [f64],
    buffer: &mut Option<Vec<f64>>,
    grad: &[f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grad.len() != params.len() {
        return Err(Error::dim(format!(
            "gradient has {} values, parameters {}",
            grad.len(),
            params.len()
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::arg(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::arg(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
    }
    if momentum == 0.0 {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        return Ok(());
    }
    let buf = buffer.get_or_insert_with(|| vec![0.0; grad.len()]);
    for ((p, b), g) in params.iter_mut().zip(buf.iter_mut()).zip(grad) {
        *b = momentum * *b + g;
        *p -= lr * *b;
    }
    Ok(())
}
