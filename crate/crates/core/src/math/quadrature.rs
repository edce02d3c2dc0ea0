//! Gauss–Hermite quadrature in the probabilists' normalization.

use crate::{ensure, Result};

/// Default order for Gaussian expectations in the loss-surface code.
pub const DEFAULT_HERMITE_ORDER: usize = 40;

/// Nodes and weights computing `E[f(η)]` for `η ~ N(0, 1)`.
///
/// Weights sum to one and nodes are symmetric about zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Builds the `order`-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence, then rescales from `e^{-x²}` to the standard
    /// normal weight.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        ensure!(
            order >= 2,
            Config,
            "Gauss-Hermite order must be >= 2, got {order}"
        );
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let n = order;
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[n / 2] = 0.0;
        }
        let total: f64 = w.iter().sum();
        let nodes = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let weights = w.iter().map(|v| v / total).collect();
        Ok(Self {
            nodes,
            weights,
            order,
        })
    }

    /// `E[f(η)]` under the standard normal.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// One-shot `E[f(η)]`, `η ~ N(0,1)`, exact for polynomials of degree `< 2·order`.
pub fn gauss_hermite_expectation(f: impl Fn(f64) -> f64, order: usize) -> Result<f64> {
    Ok(QuadratureRule::gauss_hermite(order)?.expectation(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: i64) -> f64 {
        (1..=k).rev().step_by(2).map(|v| v as f64).product()
    }

    #[test]
    fn low_moments() {
        for order in [2, 3, 5, 20, 40, 80] {
            let r = QuadratureRule::gauss_hermite(order).unwrap();
            assert!((r.expectation(|_| 1.0) - 1.0).abs() < 1e-12);
            assert!(r.expectation(|x| x).abs() < 1e-12);
            assert!((r.expectation(|x| x * x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rule_is_symmetric_and_normalized() {
        let r = QuadratureRule::gauss_hermite(DEFAULT_HERMITE_ORDER).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..r.order {
            assert!((r.nodes[i] + r.nodes[r.order - 1 - i]).abs() < 1e-12);
            assert!((r.weights[i] - r.weights[r.order - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn polynomial_exactness() {
        let order = 10;
        let r = QuadratureRule::gauss_hermite(order).unwrap();
        for deg in 0..(2 * order) as i32 {
            let got = r.expectation(|x| x.powi(deg));
            let want = if deg % 2 == 1 {
                0.0
            } else {
                double_factorial(deg as i64 - 1)
            };
            let scale = double_factorial(deg as i64).max(1.0);
            assert!(
                (got - want).abs() <= 1e-12 * scale,
                "deg {deg}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn moment_generating_function() {
        let r = QuadratureRule::gauss_hermite(20).unwrap();
        for i in 0..=40 {
            let a = i as f64 * 0.05;
            let got = r.expectation(|x| (a * x).exp());
            assert!((got - (a * a / 2.0).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn order_below_two_is_config_error() {
        assert!(matches!(
            gauss_hermite_expectation(|x| x, 1),
            Err(crate::Error::Config(_))
        ));
    }
}
