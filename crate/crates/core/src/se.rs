//! Monte-Carlo state evolution for (D)MMV-AMP with EM-tracked hyperparameters.
//!
//! AMP decouples the estimation problem into scalar channels
//! `R = x0 + sqrt(n) z` with `x0 ~ p0` and `z ~ CN(0, 1)`. With pilot
//! entries of variance `s` and `G x K` pilot matrices the residual seen by a
//! factor node has variance `sigma0^2 + s K E` and every pseudo-observation
//! aggregates `G` such residuals with weight `s`, so
//!
//! ```text
//! n     = (c sigma0^2 + E) / (G/K)
//! Sigma = (c sigma^2  + V) / (G/K),      c = 1 / (s K)
//! ```
//!
//! [`RatioMode::PilotNormalized`] uses this `c`; [`RatioMode::Unscaled`]
//! fixes `c = 1`, which is the same recursion for pilots of variance `1/K`.
//! The tracked noise variance follows the EM noise update evaluated on the
//! factor-node statistics `|y - Z|^2 ~ sigma0^2 + E/c` and `V_gm ~ V/c`.
//! The `state_evolution` tests compare the pilot-normalized mode with
//! simulated DMMV-AMP runs.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, LlrForm, Slab};
use crate::em::{self, Lambda0Form, SIGMA2_FLOOR, TAU_FLOOR};
use crate::rng::{self, SimRng};

/// Scalar spike-and-slab prior `(1 - lambda) delta + lambda CN(mu, tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub lambda: f64,
    pub mu: Complex64,
    pub tau: f64,
}

impl Prior {
    pub fn new(lambda: f64, mu: Complex64, tau: f64) -> Self {
        Self { lambda, mu, tau }
    }

    pub fn slab(&self) -> Slab {
        Slab { mu: self.mu, tau: self.tau }
    }

    pub fn second_moment(&self) -> f64 {
        self.lambda * (self.mu.norm_sqr() + self.tau)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        if rng.random::<f64>() < self.lambda {
            self.mu + rng::complex_gaussian(rng, self.tau)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RatioMode {
    /// `Sigma = (sigma^2 + V) / (G/K)`, exact for pilots of per-entry variance `1/K`.
    Unscaled,
    /// Rescaled for pilots with per-entry variance `pilot_scale` and `devices` columns.
    PilotNormalized { pilot_scale: f64, devices: usize },
}

impl RatioMode {
    fn noise_scale(&self) -> f64 {
        match *self {
            RatioMode::Unscaled => 1.0,
            RatioMode::PilotNormalized { pilot_scale, devices } => 1.0 / (pilot_scale * devices as f64),
        }
    }
}

/// Form of the tracked noise-variance recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRecursion {
    /// `(sigma0^2 + E) / (1 + V/sigma^2) + sigma^2 V / (sigma^2 + V)`.
    Unsquared,
    /// Same with `(1 + V/sigma^2)^2`, matching the EM noise update.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeSettings {
    pub n_samples: usize,
    pub t_max: usize,
    /// `G / K`.
    pub measurement_ratio: f64,
    pub mode: RatioMode,
    pub noise_recursion: NoiseRecursion,
    /// True noise variance `sigma0^2` in measurement units.
    pub noise_var: f64,
    pub seed: u64,
    pub llr_form: LlrForm,
    /// Initial tracked prior and noise variance; the true values when absent.
    pub initial: Option<(Prior, f64)>,
}

impl SeSettings {
    pub fn pilot_normalized(pilot_len: usize, devices: usize, pilot_scale: f64, noise_var: f64) -> Self {
        Self {
            n_samples: 100_000,
            t_max: 200,
            measurement_ratio: pilot_len as f64 / devices as f64,
            mode: RatioMode::PilotNormalized { pilot_scale, devices },
            noise_recursion: NoiseRecursion::Squared,
            noise_var,
            seed: 0,
            llr_form: LlrForm::DEFAULT,
            initial: None,
        }
    }

    pub fn unscaled(measurement_ratio: f64, snr_db: f64) -> Self {
        Self {
            n_samples: 100_000,
            t_max: 200,
            measurement_ratio,
            mode: RatioMode::Unscaled,
            noise_recursion: NoiseRecursion::Unsquared,
            noise_var: 10f64.powf(-snr_db / 10.0),
            seed: 0,
            llr_form: LlrForm::DEFAULT,
            initial: None,
        }
    }
}

/// Expected-value analogue of the EM initialization for a system with `M`
/// antennas, returning the tracked prior and noise variance.
pub fn em_matched_init(
    pilot_len: usize,
    devices: usize,
    antennas: usize,
    pilot_scale: f64,
    truth: &Prior,
    noise_var: f64,
    form: Lambda0Form,
) -> (Prior, f64) {
    let lambda0 = em::init_lambda0(pilot_len, devices, form);
    let g = pilot_len as f64;
    let power = pilot_scale * devices as f64 * truth.second_moment() + noise_var;
    let sigma2 = (power / (em::INITIAL_SNR + 1.0)).max(SIGMA2_FLOOR);
    let tau = (g * power - antennas as f64 * sigma2) / (g * devices as f64 * pilot_scale * lambda0);
    (Prior::new(lambda0, Complex64::new(0.0, 0.0), tau.max(TAU_FLOOR)), sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeState {
    pub t: usize,
    /// Mean square error of the estimate.
    pub mse: f64,
    /// Mean posterior variance.
    pub mean_var: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub mu: Complex64,
    pub tau: f64,
    /// Monte-Carlo standard errors of `mse` and `mean_var`.
    pub mse_stderr: f64,
    pub var_stderr: f64,
}

impl SeState {
    pub fn tracked(&self) -> Prior {
        Prior::new(self.lambda, self.mu, self.tau)
    }

    /// Predicted NMSE in dB relative to the second moment of `truth`.
    pub fn nmse_db(&self, truth: &Prior) -> f64 {
        10.0 * (self.mse / truth.second_moment()).log10()
    }
}

/// Running mean and standard error.
#[derive(Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n
    }

    fn stderr(&self) -> f64 {
        let mean = self.mean();
        let var = (self.sum_sq / self.n - mean * mean).max(0.0) * self.n / (self.n - 1.0).max(1.0);
        (var / self.n).sqrt()
    }
}

/// State at `t = 1`: estimates at the tracked prior mean.
pub fn initial_state<R: Rng + ?Sized>(truth: &Prior, settings: &SeSettings, rng: &mut R) -> SeState {
    let (tracked, sigma2) = settings.initial.unwrap_or((*truth, settings.noise_var));
    let (mean, var) = denoiser::prior_moments(tracked.slab(), tracked.lambda);
    let mut err = Moments::default();
    for _ in 0..settings.n_samples {
        err.push((truth.sample(rng) - mean).norm_sqr());
    }
    SeState {
        t: 1,
        mse: err.mean(),
        mean_var: var,
        sigma2: sigma2.max(SIGMA2_FLOOR),
        lambda: tracked.lambda,
        mu: tracked.mu,
        tau: tracked.tau,
        mse_stderr: err.stderr(),
        var_stderr: 0.0,
    }
}

/// One state-evolution iteration.
pub fn se_step<R: Rng + ?Sized>(state: &SeState, truth: &Prior, settings: &SeSettings, rng: &mut R) -> SeState {
    let c = settings.mode.noise_scale();
    let delta = settings.measurement_ratio;
    let effective_noise = (c * settings.noise_var + state.mse) / delta;
    let sigma = ((c * state.sigma2 + state.mean_var) / delta).max(denoiser::VARIANCE_FLOOR);
    let spread = effective_noise.sqrt();
    let slab = Slab { mu: state.mu, tau: state.tau };

    let mut err = Moments::default();
    let mut var = Moments::default();
    let (mut pi_sum, mut pi_mean, mut pi_spread) = (0.0, Complex64::new(0.0, 0.0), 0.0);
    for _ in 0..settings.n_samples {
        let x0 = truth.sample(rng);
        let r = x0 + rng::complex_gaussian(rng, 1.0) * spread;
        let d = denoiser::denoise_with(r, sigma, slab, state.lambda, settings.llr_form)
            .expect("state evolution inputs are finite");
        err.push((d.estimate - x0).norm_sqr());
        var.push(d.variance);
        let pi = d.stats.pi;
        pi_sum += pi;
        pi_mean += d.stats.mean * pi;
        pi_spread += pi * ((state.mu - d.stats.mean).norm_sqr() + d.stats.var);
    }

    let n = settings.n_samples as f64;
    let (mu, tau) =
        if pi_sum > 0.0 { (pi_mean / pi_sum, (pi_spread / pi_sum).max(TAU_FLOOR)) } else { (state.mu, state.tau) };

    // Noise recursion on factor-node statistics.
    let residual = settings.noise_var + state.mse / c;
    let v_factor = state.mean_var / c;
    let gain = 1.0 + v_factor / state.sigma2;
    let gain = match settings.noise_recursion {
        NoiseRecursion::Unsquared => gain,
        NoiseRecursion::Squared => gain * gain,
    };
    let sigma2 = (residual / gain + state.sigma2 * v_factor / (state.sigma2 + v_factor)).max(SIGMA2_FLOOR);

    SeState {
        t: state.t + 1,
        mse: err.mean(),
        mean_var: var.mean(),
        sigma2,
        lambda: denoiser::clamp_lambda(pi_sum / n),
        mu,
        tau,
        mse_stderr: err.stderr(),
        var_stderr: var.stderr(),
    }
}

/// Iterates [`se_step`] up to `t_max` states or until `|E^{t+1} - E^t| < 1e-8`.
pub fn run_se(truth: &Prior, settings: &SeSettings) -> Vec<SeState> {
    let mut rng: SimRng = rng::stream(rng::derive_seed(settings.seed, &[rng::tag::STATE_EVOLUTION]));
    let mut states = vec![initial_state(truth, settings, &mut rng)];
    while states.len() < settings.t_max {
        let last = states.last().expect("non-empty");
        let next = se_step(last, truth, settings, &mut rng);
        let stalled = (next.mse - last.mse).abs() < 1e-8;
        states.push(next);
        if stalled {
            break;
        }
    }
    states
}

pub const SE_HEADER: &str = "t,E,V,sigma2,lambda,mu,tau";

/// Writes a trajectory as CSV; complex `mu` is written as its real part when
/// the imaginary part is zero and as `re+imi` otherwise.
pub fn write_se_csv<W: std::io::Write>(mut w: W, states: &[SeState]) -> std::io::Result<()> {
    writeln!(w, "{SE_HEADER}")?;
    for s in states {
        let mu = if s.mu.im == 0.0 { format!("{}", s.mu.re) } else { format!("{}{:+}i", s.mu.re, s.mu.im) };
        writeln!(w, "{},{},{},{},{},{},{}", s.t, s.mse, s.mean_var, s.sigma2, s.lambda, mu, s.tau)?;
    }
    Ok(())
}
