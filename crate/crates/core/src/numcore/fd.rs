use super::{GradVector, NumError, Result};

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], h: f64) -> Result<GradVector>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(NumError::NonFinite { index: i, context: "finite-difference evaluation" });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(GradVector::params(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g.values[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant() {
        let g = finite_diff_grad(|_| 4.2, &[1.0, -3.0], 1e-5).unwrap();
        assert_eq!(g.values, vec![0.0, 0.0]);
    }

    #[test]
    fn sine_at_zero() {
        let g = finite_diff_grad(|x| x[0].sin(), &[0.0], 1e-5).unwrap();
        assert!((g.values[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_and_bad_step() {
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-5).is_ok());
        assert!(finite_diff_grad(|x| (x[0] - 1e-5).ln(), &[0.0], 1e-5).is_err());
        assert!(finite_diff_grad(|x| x[0], &[0.0], 0.0).is_err());
    }
}
