//! Central finite-difference gradient checks.

/// Largest mixed error `|a − n| / max(|a|, |n|, floor)` between an analytic
/// gradient and a central difference of `f` at `x`.
pub fn max_gradient_error(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    floor: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut xs = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + step;
        let fp = f(&xs);
        xs[i] = orig - step;
        let fm = f(&xs);
        xs[i] = orig;
        let num = (fp - fm) / (2.0 * step);
        let a = analytic[i];
        let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + step;
            let fp = f(&xs);
            xs[i] = orig - step;
            let fm = f(&xs);
            xs[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}
