//! Shared oracle helpers for the integration suites.

/// Central finite difference of `f` at `at`, one entry per coordinate.
pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + step;
        let plus = f(&probe);
        probe[i] = at[i] - step;
        let minus = f(&probe);
        probe[i] = at[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Relative error with a small denominator floor, so exact zero pairs score
/// zero and finite-difference noise on near-zero gradients cannot blow up
/// the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;
