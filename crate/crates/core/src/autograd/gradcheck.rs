/// Compares an analytic gradient with central differences.
///
/// `f` returns the value and the analytic gradient at a point. The result is
/// the largest relative discrepancy `|a - n| / max(1, |a|, |n|)` over all
/// coordinates.
pub fn gradcheck<F>(f: F, point: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len(), "gradient length must match the point");
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let (plus, _) = f(&probe);
        probe[i] = point[i] - step;
        let (minus, _) = f(&probe);
        probe[i] = point[i];
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    worst
}
