#![allow(dead_code)]

use std::f64::consts::PI;

/// Regularized lower incomplete gamma P(s, x) by its power series.
pub fn lower_gamma_regularized(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    // Gamma(s) for half-integer or integer s via the recurrence from 1/2 or 1.
    let gamma_s = {
        let (mut g, mut a) = if (s.fract() - 0.5).abs() < 1e-12 {
            (PI.sqrt(), 0.5)
        } else {
            (1.0, 1.0)
        };
        while a + 0.5 < s {
            g *= a;
            a += 1.0;
        }
        g
    };
    let mut term = 1.0 / s;
    let mut sum = term;
    let mut n = 1.0;
    while term > sum * 1e-17 {
        term *= x / (s + n);
        sum += term;
        n += 1.0;
    }
    sum * x.powf(s) * (-x).exp() / gamma_s
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    lower_gamma_regularized(dof as f64 / 2.0, x / 2.0)
}

/// Inverse CDF by bisection.
pub fn chi2_quantile(p: f64, dof: u32) -> f64 {
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
