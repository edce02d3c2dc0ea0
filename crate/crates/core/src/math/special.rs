//! Scalar special functions.

use crate::{ensure, Result};
use std::f64::consts::PI;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without the domain check, for hot loops that already
/// guarantee finite input.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Numerically stable `log σ(x) = -log(1 + e^{-x})`.
pub fn stable_log_sigmoid(x: f64) -> Result<f64> {
    ensure!(x.is_finite(), Domain, "log-sigmoid of non-finite value {x}");
    Ok(log_sigmoid(x))
}

/// Principal branch of the Lambert W function on `x >= 0`.
///
/// Halley iteration seeded with the log asymptotic. Below `e` the iteration
/// runs on `w e^w - x`; above it on `w + ln w - ln x`, which keeps every
/// intermediate finite for large arguments.
pub fn lambert_w0(x: f64) -> Result<f64> {
    ensure!(x >= 0.0, Domain, "lambert_w0 needs x >= 0, got {x}");
    ensure!(x.is_finite(), Domain, "lambert_w0 of non-finite value");
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x < 1.0 {
        x.ln_1p()
    } else {
        let l1 = x.ln();
        let l2 = l1.max(1.0).ln();
        (l1 - l2 + if l1 > 1.0 { l2 / l1 } else { 0.0 }).max(0.5)
    };
    let log_form = x > std::f64::consts::E;
    let ln_x = x.ln();
    for _ in 0..50 {
        let step = if log_form {
            // g(w) = w + ln w - ln x
            let g = w + w.ln() - ln_x;
            let g1 = 1.0 + 1.0 / w;
            let g2 = -1.0 / (w * w);
            g / (g1 - g * g2 / (2.0 * g1))
        } else {
            let ew = w.exp();
            let f = w * ew - x;
            let f1 = ew * (w + 1.0);
            f / (f1 - (w + 2.0) * f / (2.0 * w + 2.0))
        };
        w -= step;
        if step.abs() <= 1e-14 * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(w)
}

/// Upper incomplete gamma function `Γ(1/2, x) = ∫_x^∞ t^{-1/2} e^{-t} dt`.
///
/// Series for the lower part below `x = 1`, Lentz continued fraction above.
pub fn upper_incomplete_gamma_half(x: f64) -> Result<f64> {
    ensure!(x >= 0.0, Domain, "incomplete gamma needs x >= 0, got {x}");
    if x.is_infinite() {
        return Ok(0.0);
    }
    ensure!(!x.is_nan(), Domain, "incomplete gamma of NaN");
    if x == 0.0 {
        return Ok(SQRT_PI);
    }
    let a = 0.5;
    if x < 1.0 {
        // γ(a, x) = x^a e^{-x} Σ x^n / (a (a+1) ... (a+n))
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..500 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        let lower = sum * (a * x.ln() - x).exp();
        Ok(SQRT_PI - lower)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok((a * x.ln() - x).exp() * h)
    }
}

/// Complementary error function, built on [`upper_incomplete_gamma_half`].
pub fn erfc(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z >= 0.0 {
        upper_incomplete_gamma_half(z * z).unwrap_or(0.0) / SQRT_PI
    } else {
        2.0 - erfc(-z)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / 2f64.sqrt())
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite adaptive Simpson, used only as an independent oracle.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb) = (f(a), f(b));
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 60)
    }

    /// ∫_x^∞ t^{-1/2} e^{-t} dt = 2 e^{-x} ∫_0^∞ e^{-2√x s - s²} ds.
    fn gamma_half_oracle(x: f64) -> f64 {
        let r = x.sqrt();
        2.0 * (-x).exp()
            * adaptive_simpson(&|s: f64| (-2.0 * r * s - s * s).exp(), 0.0, 40.0, 1e-15)
    }

    #[test]
    fn log_sigmoid_examples() {
        assert!((stable_log_sigmoid(0.0).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert!((stable_log_sigmoid(-100.0).unwrap() + 100.0).abs() < 1e-12);
        let v = stable_log_sigmoid(100.0).unwrap();
        assert!((v + 3.720_075_976_020_836e-44).abs() < 1e-56);
        assert!(stable_log_sigmoid(1e4).unwrap() <= 0.0);
        assert!((stable_log_sigmoid(-1e4).unwrap() + 1e4).abs() < 1e-9);
        assert!(stable_log_sigmoid(f64::NAN).is_err());
        assert!(stable_log_sigmoid(f64::INFINITY).is_err());
    }

    #[test]
    fn log_sigmoid_is_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in -2000..=2000 {
            let v = log_sigmoid(i as f64 * 0.05);
            assert!(v >= prev);
            prev = v;
        }
    }

    fn w_bisect(x: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0 + x.max(1.0).ln() * 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-14);
        let w = lambert_w0(1000.0).unwrap();
        assert!((w - w_bisect(1000.0)).abs() < 1e-12);
        assert!((w - 5.2496).abs() < 1e-4);
        assert!((lambert_w0(1.0).unwrap() - w_bisect(1.0)).abs() < 1e-13);
        assert!(lambert_w0(-1e-3).is_err());
    }

    #[test]
    fn lambert_round_trip_log_grid() {
        let mut prev = -1.0;
        for i in 0..=320 {
            let x = 10f64.powf(-8.0 + 16.0 * i as f64 / 320.0);
            let w = lambert_w0(x).unwrap();
            assert!((w * w.exp() - x).abs() / x <= 1e-12, "x={x}");
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn incomplete_gamma_examples() {
        assert!((upper_incomplete_gamma_half(0.0).unwrap() - SQRT_PI).abs() < 1e-15);
        assert_eq!(upper_incomplete_gamma_half(f64::INFINITY).unwrap(), 0.0);
        assert!(upper_incomplete_gamma_half(800.0).unwrap() < 1e-300);
        let oracle = gamma_half_oracle(0.125);
        let got = upper_incomplete_gamma_half(0.125).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-10);
        assert!((got - 1.093_737_097).abs() < 1e-8);
        assert!(upper_incomplete_gamma_half(-0.1).is_err());
    }

    #[test]
    fn incomplete_gamma_matches_quadrature_and_decreases() {
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let x = i as f64 * 0.1;
            let got = upper_incomplete_gamma_half(x).unwrap();
            let oracle = gamma_half_oracle(x);
            assert!(
                (got - oracle).abs() / oracle < 1e-10,
                "x={x} got={got} oracle={oracle}"
            );
            assert!(got < prev);
            prev = got;
        }
    }

    #[test]
    fn erfc_known_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-15);
        assert!((erfc(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15);
        assert!((erfc(-1.0) - 1.842_700_792_949_715).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
    }
}
