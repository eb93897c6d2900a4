//! Central finite differences for checking analytic and tape gradients.

use super::Matrix;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`, one entry at a time.
pub fn central_difference<E>(
    x: &Matrix,
    step: f64,
    mut f: impl FnMut(&Matrix) -> Result<f64, E>,
) -> Result<Matrix, E> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let v = x.get(i, j);
            let plus = f(&x.with_entry(i, j, v + step))?;
            let minus = f(&x.with_entry(i, j, v - step))?;
            out.push((plus - minus) / (2.0 * step));
        }
    }
    Ok(Matrix::from_raw(x.rows(), x.cols(), out))
}

/// `|a - b| / max(|a|, |b|, floor)` measured in the Frobenius norm.
///
/// The floor keeps the ratio meaningful when both gradients are near zero.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).frobenius_norm();
    let scale = a.frobenius_norm().max(b.frobenius_norm()).max(1e-8);
    diff / scale
}
