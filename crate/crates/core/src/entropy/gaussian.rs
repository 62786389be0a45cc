//! Discretized Gaussian probabilities on the integer grid.

use std::f64::consts::FRAC_1_SQRT_2;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Lower bound on predicted scales.
pub const SIGMA_MIN: f64 = 0.04;

/// Floor applied to bin probabilities (2^-16).
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `P(y) = Phi((y - mu + 1/2)/sigma) - Phi((y - mu - 1/2)/sigma)`, unfloored.
///
/// Evaluated on the lower tail so distant bins keep relative precision.
pub fn bin_probability(y: f64, mu: f64, sigma: f64) -> f64 {
    let v = (y - mu).abs();
    let upper = normal_cdf((0.5 - v) / sigma);
    let lower = normal_cdf((-0.5 - v) / sigma);
    upper - lower
}

/// Mass of the interval `[lo, hi]` under `N(mu, sigma^2)`.
pub fn interval_probability(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    // mirror into the lower tail where erfc is accurate
    let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    if a + b > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Partial derivatives of [`bin_probability`] with respect to `y` and `sigma`.
/// The derivative with respect to `mu` is the negated `y` derivative.
pub fn bin_probability_grad(y: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let u = (y - mu + 0.5) / sigma;
    let l = (y - mu - 0.5) / sigma;
    let (pu, pl) = (normal_pdf(u), normal_pdf(l));
    ((pu - pl) / sigma, (l * pl - u * pu) / sigma)
}

/// `bin_probability` floored at [`P_MIN`], as used for rate estimates.
pub fn likelihood(y: f64, mu: f64, sigma: f64) -> f64 {
    bin_probability(y, mu, sigma.max(SIGMA_MIN)).max(P_MIN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gaussian_center_bin() {
        assert!((bin_probability(0.0, 0.0, 1.0) - 0.382_924_922_548_026).abs() < 1e-12);
    }

    #[test]
    fn symmetric_about_mean() {
        for k in 0..6 {
            let k = k as f64;
            let a = bin_probability(0.3 + k, 0.3, 1.7);
            let b = bin_probability(0.3 - k, 0.3, 1.7);
            assert!((a - b).abs() <= 1e-14 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn integer_bins_telescope_to_one() {
        for &(mu, sigma) in &[(0.0, 1.0), (0.37, 0.2), (-3.2, 7.5)] {
            let s: f64 = (-400..=400).map(|k| bin_probability(k as f64, mu, sigma)).sum();
            assert!((s - 1.0).abs() < 1e-9, "{mu} {sigma}: {s}");
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let (y, mu, s) = (0.7, -0.2, 0.9);
        let h = 1e-6;
        let (dy, ds) = bin_probability_grad(y, mu, s);
        let ny = (bin_probability(y + h, mu, s) - bin_probability(y - h, mu, s)) / (2.0 * h);
        let ns = (bin_probability(y, mu, s + h) - bin_probability(y, mu, s - h)) / (2.0 * h);
        assert!((dy - ny).abs() < 1e-8);
        assert!((ds - ns).abs() < 1e-8);
    }
}
