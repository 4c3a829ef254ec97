//! Central-difference gradient verification.

/// Compare an analytic gradient against central finite differences of
/// `loss` at the coordinates in `coords`.
///
/// Returns the maximum relative discrepancy `|analytic - numeric| /
/// max(|numeric|, 1e-8)`, so a gradient that is wrong by a factor of two
/// reports an error near 1.0. `params` is restored before returning.
pub fn gradient_check<F>(
    mut loss: F,
    params: &mut [f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "analytic gradient shape mismatch");
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = params[i];
        params[i] = orig + eps;
        let plus = loss(params);
        params[i] = orig - eps;
        let minus = loss(params);
        params[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
