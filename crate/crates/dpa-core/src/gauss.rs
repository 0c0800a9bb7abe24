//! Gaussian statistics, error function, and normal CDF.
//!
//! The CDF weights of the global alignment module and the binned Gaussian of
//! the instance module both run through these three functions. `erf` is the
//! Abramowitz–Stegun 7.1.26 rational approximation (max absolute error
//! 1.5e-7), kept dependency-free so it can be checked against an in-repo
//! quadrature oracle.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GaussError {
    #[error("cannot fit a Gaussian to an empty sample")]
    EmptySample,
}

/// Mean and population variance of a batch of values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussStats {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussStats {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Fit mean and population (1/n) variance.
pub fn fit_gauss(values: &[f64]) -> Result<GaussStats, GaussError> {
    if values.is_empty() {
        return Err(GaussError::EmptySample);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let sigma2 = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok(GaussStats { mu, sigma2 })
}

const ERF_A1: f64 = 0.254829592;
const ERF_A2: f64 = -0.284496736;
const ERF_A3: f64 = 1.421413741;
const ERF_A4: f64 = -1.453152027;
const ERF_A5: f64 = 1.061405429;
const ERF_P: f64 = 0.3275911;

/// Gauss error function, odd, range (-1, 1).
pub fn erf(x: f64) -> f64 {
    // the rational coefficients sum to 1 - 1e-9, so x = 0 needs the exact value
    if x == 0.0 {
        return 0.0;
    }
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + ERF_P * x);
    let poly = ((((ERF_A5 * t + ERF_A4) * t + ERF_A3) * t + ERF_A2) * t + ERF_A1) * t;
    sign * (1.0 - poly * (-x * x).exp())
}

/// Sigma floor inside [`cdf`]; early-training batches can have identical
/// probabilities, which would otherwise divide by zero.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Normal cumulative distribution function at `z` for the fitted stats.
pub fn cdf(z: f64, stats: &GaussStats) -> f64 {
    let sigma = stats.sigma().max(SIGMA_FLOOR);
    0.5 * (1.0 + erf((z - stats.mu) / (sigma * std::f64::consts::SQRT_2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Adaptive Simpson quadrature of (2/sqrt(pi)) exp(-t^2) on [0, x]; the
    /// independent oracle for `erf`.
    pub(crate) fn erf_oracle(x: f64) -> f64 {
        fn integrand(t: f64) -> f64 {
            2.0 / std::f64::consts::PI.sqrt() * (-t * t).exp()
        }
        fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        }
        fn adaptive(a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (integrand(lm), integrand(rm));
            let left = simpson(a, m, fa, flm, fm);
            let right = simpson(m, b, fm, frm, fb);
            if (left + right - whole).abs() <= 15.0 * eps {
                left + right + (left + right - whole) / 15.0
            } else {
                adaptive(a, m, fa, flm, fm, left, eps / 2.0)
                    + adaptive(m, b, fm, frm, fb, right, eps / 2.0)
            }
        }
        if x == 0.0 {
            return 0.0;
        }
        let (a, b) = (0.0, x.abs());
        let (fa, fb) = (integrand(a), integrand(b));
        let fm = integrand(0.5 * (a + b));
        let v = adaptive(a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), 1e-12);
        if x < 0.0 {
            -v
        } else {
            v
        }
    }

    #[test]
    fn fit_constant_sample() {
        let s = fit_gauss(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s, GaussStats { mu: 1.0, sigma2: 0.0 });
    }

    #[test]
    fn fit_two_points_population_variance() {
        let s = fit_gauss(&[0.0, 1.0]).unwrap();
        assert_eq!(s, GaussStats { mu: 0.5, sigma2: 0.25 });
    }

    #[test]
    fn fit_empty_is_an_error() {
        assert_eq!(fit_gauss(&[]).unwrap_err(), GaussError::EmptySample);
    }

    #[test]
    fn fit_recovers_sampled_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let draws: Vec<f64> = (0..1000)
            .map(|_| 0.3 + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let s = fit_gauss(&draws).unwrap();
        assert!((s.mu - 0.3).abs() < 0.01, "mu = {}", s.mu);
        assert!((s.sigma() - 0.05).abs() < 0.01, "sigma = {}", s.sigma());
    }

    #[test]
    fn erf_at_zero_and_one() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(1.0) - 0.8427008).abs() < 1.5e-7, "erf(1) = {}", erf(1.0));
    }

    #[test]
    fn erf_is_odd() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let x: f64 = rng.random_range(-4.0..4.0);
            assert_eq!(erf(-x), -erf(x));
        }
    }

    #[test]
    fn erf_matches_quadrature_on_grid() {
        let mut x = -4.0;
        let mut worst: f64 = 0.0;
        while x <= 4.0 + 1e-12 {
            worst = worst.max((erf(x) - erf_oracle(x)).abs());
            x += 0.01;
        }
        assert!(worst <= 1.5e-7, "max |erf - oracle| = {worst:e}");
    }

    #[test]
    fn cdf_at_mean_is_half() {
        let s = GaussStats { mu: 0.37, sigma2: 0.04 };
        assert!((cdf(0.37, &s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cdf_one_sigma_above_mean() {
        let s = GaussStats { mu: 0.2, sigma2: 0.09 };
        // oracle value: quadrature of the standard normal pdf up to z = 1
        let expected = 0.5 * (1.0 + erf_oracle(1.0 / std::f64::consts::SQRT_2));
        assert!((cdf(0.5, &s) - expected).abs() < 1e-6, "cdf = {}", cdf(0.5, &s));
        assert!((expected - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn cdf_degenerate_sigma_steps() {
        let s = GaussStats { mu: 0.5, sigma2: 0.0 };
        assert!(cdf(0.6, &s) > 1.0 - 1e-9);
        assert!(cdf(0.4, &s) < 1e-9);
        assert!((cdf(0.5, &s) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_monotone_and_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let stats = GaussStats {
                mu: rng.random_range(-2.0..2.0),
                sigma2: rng.random_range(0.0..4.0),
            };
            let z1: f64 = rng.random_range(-5.0..5.0);
            let z2: f64 = rng.random_range(-5.0..5.0);
            let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
            assert!(cdf(lo, &stats) <= cdf(hi, &stats) + 1e-15);

            let a: f64 = rng.random_range(0.0..3.0);
            let sum = cdf(stats.mu + a, &stats) + cdf(stats.mu - a, &stats);
            assert!((sum - 1.0).abs() < 1e-6, "symmetry sum = {sum}");
        }
    }
}
