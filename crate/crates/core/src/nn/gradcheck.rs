//! Central finite differences, used by the test suites to validate every
//! analytic gradient in the crate.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-4)`. The floor keeps
/// components that are zero analytically from being judged on round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / scale
}

/// Largest elementwise relative error between two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = relative_error(*a, *n);
        assert!(
            err <= tol,
            "gradient component {i}: analytic {a:.9e} vs numeric {n:.9e} (rel err {err:.3e})"
        );
    }
}
