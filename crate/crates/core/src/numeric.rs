//! Small numerical kernels shared by the chain builders.

use libm::erfc;
use std::f64::consts::{PI, SQRT_2};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Upper tail `P[Z > z]` of the standard normal.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `P[lo < N(mu, sigma^2) < hi]`, accurate in both tails. `sigma = 0` is a
/// point mass on `mu` with the half-open convention `[lo, hi)`.
pub fn normal_interval_mass(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if sigma <= 0.0 {
        return if mu >= lo && mu < hi { 1.0 } else { 0.0 };
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let m = if a >= 0.0 {
        normal_tail(a) - normal_tail(b)
    } else if b <= 0.0 {
        normal_tail(-b) - normal_tail(-a)
    } else {
        1.0 - normal_tail(-a) - normal_tail(b)
    };
    m.max(0.0)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
        let tenth = vec![0.1; 10];
        assert_eq!(compensated_sum(tenth), 1.0);
    }

    #[test]
    fn normal_masses() {
        assert_relative_eq!(normal_interval_mass(0.0, 1.0, -1.96, 1.96), 0.950_004_209_703_559, epsilon = 1e-12);
        assert_relative_eq!(normal_interval_mass(0.0, 1.0, f64::NEG_INFINITY, 0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(normal_interval_mass(0.0, 1.0, 10.0, f64::INFINITY), 7.619_853_024_160_527e-24, max_relative = 1e-10);
        assert_eq!(normal_interval_mass(0.3, 0.0, 0.0, 1.0), 1.0);
        assert_eq!(normal_interval_mass(1.0, 0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1usize, 2, 5, 12] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }
}
