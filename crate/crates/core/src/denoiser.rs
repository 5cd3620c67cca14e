//! Spike-and-slab MMSE denoiser for the decoupled scalar channel
//! `R = x + CN(0, Sigma)` with prior `(1 - lambda) delta(x) + lambda CN(x; mu, tau)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparsity ratios are kept inside `[LAMBDA_MIN, LAMBDA_MAX]`.
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1.0 - 1e-12;
/// Lower bound on posterior variances.
pub const VARIANCE_FLOOR: f64 = 1e-15;

pub fn clamp_lambda(lambda: f64) -> f64 {
    lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Gaussian slab `CN(mu, tau)` of the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slab {
    pub mu: Complex64,
    pub tau: f64,
}

/// Learned parameter set: per-entry sparsity ratios, slab mean and variance,
/// and the noise variance of one subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// `K x M` sparsity ratios.
    #[serde(with = "crate::io::real_matrix")]
    pub lambda: DMatrix<f64>,
    pub mu: Complex64,
    pub tau: f64,
    pub sigma2: f64,
}

impl Hyperparams {
    pub fn uniform(devices: usize, antennas: usize, lambda: f64, mu: Complex64, tau: f64, sigma2: f64) -> Self {
        Self { lambda: DMatrix::from_element(devices, antennas, clamp_lambda(lambda)), mu, tau, sigma2 }
    }

    pub fn slab(&self) -> Slab {
        Slab { mu: self.mu, tau: self.tau }
    }

    pub fn lambda_mean(&self) -> f64 {
        self.lambda.mean()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("slab variance must be positive, got {}", self.tau)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise variance must be positive, got {}", self.sigma2)));
        }
        if !(self.mu.re.is_finite() && self.mu.im.is_finite()) {
            return Err(Error::InvalidConfig("slab mean is not finite".into()));
        }
        if self.lambda.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::InvalidConfig("sparsity ratios must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Which constants the spike/slab log-likelihood ratio carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrForm {
    /// Circularly-symmetric complex Gaussian likelihoods (exact for this model).
    Complex,
    /// Real-Gaussian form with halved terms.
    RealHalf,
}

impl LlrForm {
    #[cfg(not(feature = "real-half-llr"))]
    pub const DEFAULT: LlrForm = LlrForm::Complex;
    #[cfg(feature = "real-half-llr")]
    pub const DEFAULT: LlrForm = LlrForm::RealHalf;
}

impl Default for LlrForm {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Posterior of one coefficient: `(1 - pi) delta(x) + pi CN(x; mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorStats {
    pub pi: f64,
    /// Slab posterior mean `A`.
    pub mean: Complex64,
    /// Slab posterior variance `Delta`.
    pub var: f64,
    /// Slab-vs-spike log-likelihood ratio.
    pub llr: f64,
}

/// Posterior statistics together with the resulting MMSE estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Denoised {
    pub stats: PosteriorStats,
    /// Posterior mean `g_a`.
    pub estimate: Complex64,
    /// Posterior variance `g_c`.
    pub variance: f64,
}

fn check_inputs(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> Result<()> {
    let finite = r.re.is_finite()
        && r.im.is_finite()
        && sigma.is_finite()
        && slab.mu.re.is_finite()
        && slab.mu.im.is_finite()
        && slab.tau.is_finite()
        && lambda.is_finite();
    if !finite {
        return Err(Error::NonFinite(format!(
            "denoiser input R={r}, Sigma={sigma}, mu={}, tau={}, lambda={lambda}",
            slab.mu, slab.tau
        )));
    }
    if sigma <= 0.0 || slab.tau <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "denoiser variances must be positive (Sigma={sigma}, tau={})",
            slab.tau
        )));
    }
    Ok(())
}

pub fn log_likelihood_ratio(r: Complex64, sigma: f64, slab: Slab, form: LlrForm) -> f64 {
    let total = sigma + slab.tau;
    let llr = (sigma / total).ln() + r.norm_sqr() / sigma - (r - slab.mu).norm_sqr() / total;
    match form {
        LlrForm::Complex => llr,
        LlrForm::RealHalf => 0.5 * llr,
    }
}

/// `lambda / (lambda + (1 - lambda) exp(-llr))` evaluated as a logistic of the
/// posterior log-odds.
pub fn activity_probability(llr: f64, lambda: f64) -> f64 {
    let lambda = clamp_lambda(lambda);
    let logit = llr + lambda.ln() - (-lambda).ln_1p();
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

pub fn posterior_stats_with(
    r: Complex64,
    sigma: f64,
    slab: Slab,
    lambda: f64,
    form: LlrForm,
) -> Result<PosteriorStats> {
    check_inputs(r, sigma, slab, lambda)?;
    let total = sigma + slab.tau;
    let mean = (r * slab.tau + slab.mu * sigma) / total;
    let var = slab.tau * sigma / total;
    let llr = log_likelihood_ratio(r, sigma, slab, form);
    let pi = activity_probability(llr, lambda);
    Ok(PosteriorStats { pi, mean, var, llr })
}

pub fn posterior_stats(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> Result<PosteriorStats> {
    posterior_stats_with(r, sigma, slab, lambda, LlrForm::DEFAULT)
}

pub fn denoise_with(r: Complex64, sigma: f64, slab: Slab, lambda: f64, form: LlrForm) -> Result<Denoised> {
    let stats = posterior_stats_with(r, sigma, slab, lambda, form)?;
    let estimate = stats.mean * stats.pi;
    // pi(|A|^2 + Delta) - |pi A|^2 without the cancellation
    let variance = (stats.pi * (1.0 - stats.pi) * stats.mean.norm_sqr() + stats.pi * stats.var).max(VARIANCE_FLOOR);
    Ok(Denoised { stats, estimate, variance })
}

pub fn denoise(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> Result<Denoised> {
    denoise_with(r, sigma, slab, lambda, LlrForm::DEFAULT)
}

/// Posterior mean `g_a(R, Sigma)`.
pub fn g_a(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> Result<Complex64> {
    denoise(r, sigma, slab, lambda).map(|d| d.estimate)
}

/// Posterior variance `g_c(R, Sigma)`, floored at [`VARIANCE_FLOOR`].
pub fn g_c(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> Result<f64> {
    denoise(r, sigma, slab, lambda).map(|d| d.variance)
}

/// Mean and variance of the prior itself, used for the first estimate.
pub fn prior_moments(slab: Slab, lambda: f64) -> (Complex64, f64) {
    let mean = slab.mu * lambda;
    let var = lambda * (slab.mu.norm_sqr() + slab.tau) - mean.norm_sqr();
    (mean, var)
}

/// `ln p(R)` of the pseudo-observation under the spike-and-slab prior.
pub fn log_evidence(r: Complex64, sigma: f64, slab: Slab, lambda: f64) -> f64 {
    let lambda = clamp_lambda(lambda);
    let total = sigma + slab.tau;
    let spike = (-lambda).ln_1p() - (std::f64::consts::PI * sigma).ln() - r.norm_sqr() / sigma;
    let slab_term = lambda.ln() - (std::f64::consts::PI * total).ln() - (r - slab.mu).norm_sqr() / total;
    let hi = spike.max(slab_term);
    hi + ((spike - hi).exp() + (slab_term - hi).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn slab(mu: f64, tau: f64) -> Slab {
        Slab { mu: c(mu, 0.0), tau }
    }

    #[test]
    fn pure_spike_prior_gives_zero() {
        let d = denoise(c(1.3, -0.2), 0.5, slab(0.0, 1.0), 0.0).unwrap();
        assert!(d.stats.pi < 1e-11);
        assert!(d.estimate.norm() < 1e-11);
        assert_eq!(d.variance.max(VARIANCE_FLOOR), d.variance);
        assert!(d.variance < 1e-11);
    }

    #[test]
    fn origin_with_equal_variances() {
        // Complex form: llr = ln(1/2), pi = 0.5 / (0.5 + 0.5 * 2) = 1/3.
        let s = posterior_stats_with(c(0.0, 0.0), 1.0, slab(0.0, 1.0), 0.5, LlrForm::Complex).unwrap();
        assert_eq!(s.mean, c(0.0, 0.0));
        assert!((s.var - 0.5).abs() < 1e-15);
        assert!((s.pi - 1.0 / 3.0).abs() < 1e-14);
        // Halved form: llr = ln(1/2)/2, pi = 1 / (1 + sqrt 2).
        let s = posterior_stats_with(c(0.0, 0.0), 1.0, slab(0.0, 1.0), 0.5, LlrForm::RealHalf).unwrap();
        assert!((s.pi - 1.0 / (1.0 + 2f64.sqrt())).abs() < 1e-14);
        assert!((s.pi - 0.4142).abs() < 1e-4);
    }

    #[test]
    fn zero_llr_is_symmetric() {
        assert!((activity_probability(0.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gaussian_prior_reduces_to_linear_shrinkage() {
        let d = denoise(c(2.0, 0.0), 1.0, slab(0.0, 1.0), 1.0).unwrap();
        assert!((d.estimate - c(1.0, 0.0)).norm() < 1e-11);
        assert!((d.variance - 0.5).abs() < 1e-11);
    }

    #[test]
    fn extreme_llr_saturates_without_nan() {
        assert_eq!(activity_probability(1e4, 0.3), 1.0);
        assert_eq!(activity_probability(-1e4, 0.3), 0.0);
        assert_eq!(activity_probability(f64::MAX, 0.3), 1.0);
    }

    #[test]
    fn prior_moment_cases() {
        let (m, v) = prior_moments(slab(0.0, 1.0), 0.1);
        assert_eq!(m, c(0.0, 0.0));
        assert!((v - 0.1).abs() < 1e-15);
        let (m, v) = prior_moments(slab(2.0, 3.0), 1.0);
        assert_eq!(m, c(2.0, 0.0));
        assert!((v - 3.0).abs() < 1e-15);
        // two-point mixture: E x = 0.5, E|x|^2 = 0.5 * (1 + 1) = 1
        let (m, v) = prior_moments(slab(1.0, 1.0), 0.5);
        assert!((m - c(0.5, 0.0)).norm() < 1e-15);
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(matches!(denoise(c(f64::NAN, 0.0), 1.0, slab(0.0, 1.0), 0.5), Err(Error::NonFinite(_))));
        assert!(matches!(denoise(c(0.0, 0.0), f64::INFINITY, slab(0.0, 1.0), 0.5), Err(Error::NonFinite(_))));
        assert!(denoise(c(0.0, 0.0), 0.0, slab(0.0, 1.0), 0.5).is_err());
    }

    #[test]
    fn evidence_matches_direct_mixture() {
        let (r, sigma, s, lambda) = (c(0.4, -0.9), 0.3, Slab { mu: c(0.2, 0.1), tau: 1.7 }, 0.2);
        let pdf = |z: Complex64, v: f64| (-z.norm_sqr() / v).exp() / (std::f64::consts::PI * v);
        let direct = ((1.0 - lambda) * pdf(r, sigma) + lambda * pdf(r - s.mu, sigma + s.tau)).ln();
        assert!((log_evidence(r, sigma, s, lambda) - direct).abs() < 1e-13);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn outputs_stay_in_range(
                rr in -50.0..50.0f64, ri in -50.0..50.0f64,
                sigma in 1e-8..1e3f64, tau in 1e-6..1e3f64,
                mr in -5.0..5.0f64, mi in -5.0..5.0f64,
                lambda in 0.0..=1.0f64,
            ) {
                let s = Slab { mu: c(mr, mi), tau };
                let d = denoise(c(rr, ri), sigma, s, lambda).unwrap();
                prop_assert!((0.0..=1.0).contains(&d.stats.pi));
                prop_assert!(d.estimate.re.is_finite() && d.estimate.im.is_finite());
                let bound = lambda * (s.mu.norm_sqr() + tau) + s.mu.norm_sqr() + tau;
                prop_assert!(d.variance >= 0.0 && d.variance <= bound.max(VARIANCE_FLOOR));
                prop_assert!(d.stats.var > 0.0 && d.stats.var <= tau.min(sigma));
            }

            #[test]
            fn shrinkage_is_monotone_in_magnitude(
                a in 0.0..20.0f64, b in 0.0..20.0f64, phase in 0.0..std::f64::consts::TAU,
                sigma in 1e-3..10.0f64, tau in 1e-3..10.0f64, lambda in 0.001..0.999f64,
            ) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let s = Slab { mu: c(0.0, 0.0), tau };
                let dir = Complex64::from_polar(1.0, phase);
                let g_lo = g_a(dir * lo, sigma, s, lambda).unwrap().norm();
                let g_hi = g_a(dir * hi, sigma, s, lambda).unwrap().norm();
                prop_assert!(g_hi >= g_lo * (1.0 - 1e-12));
            }
        }
    }
}
