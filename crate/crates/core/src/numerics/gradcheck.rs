//! Central finite-difference verification of analytic gradients.
//!
//! This is the independent oracle for the backward pass: it only ever calls
//! the forward path, so it cannot inherit a bug from the gradient rules it
//! checks. Used by the test suites; runs in double precision.

/// Numerical gradient of a scalar function at `x` via central differences.
pub fn central_diff_grad<F>(f: &mut F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Numerical gradient for a selected subset of coordinates.
pub fn central_diff_grad_at<F>(f: &mut F, x: &[f64], coords: &[usize], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(coords.len());
    let mut probe = x.to_vec();
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = f(&probe);
        probe[i] = orig - eps;
        let fm = f(&probe);
        probe[i] = orig;
        grad.push((fp - fm) / (2.0 * eps));
    }
    grad
}

/// Relative error between an analytic and a numerical derivative.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Largest relative error across paired gradient values.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let x = [1.0, -2.0, 0.5];
        let g = central_diff_grad(&mut f, &x, 1e-5);
        let expect = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&expect, &g) < 1e-9);
    }

    #[test]
    fn subset_matches_full() {
        let mut f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum();
        let x = [0.3, 0.7, -1.1, 2.0];
        let full = central_diff_grad(&mut f, &x, 1e-5);
        let sub = central_diff_grad_at(&mut f, &x, &[1, 3], 1e-5);
        assert_eq!(sub, vec![full[1], full[3]]);
    }
}
