//! DMMV-AMP: one MMV-AMP instance per pilot subcarrier, run in synchronous
//! rounds with the sparsity ratio and slab parameters shared across
//! subcarriers, followed by threshold activity detection.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::{frobenius_distance, AmpProblem, AmpSettings, AmpState, DivergenceGuard, IterationRecord};
use crate::denoiser::Hyperparams;
use crate::em::{self, Lambda0Form};
use crate::error::{Error, Result};
use crate::model::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionRule {
    /// Count entries with `|x_hat| > magnitude_floor`.
    #[default]
    Magnitude,
    /// Declare active when the learned sparsity ratio reaches `p_th`.
    SparsityRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub p_th: f64,
    pub magnitude_floor: f64,
    pub rule: DetectionRule,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { p_th: 0.99, magnitude_floor: 1e-10, rule: DetectionRule::Magnitude }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_th > 0.0 && self.p_th <= 1.0) {
            return Err(Error::InvalidConfig(format!("p_th must lie in (0, 1], got {}", self.p_th)));
        }
        if self.magnitude_floor.is_nan() || self.magnitude_floor <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "magnitude floor must be positive, got {}",
                self.magnitude_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmmvSettings {
    #[serde(flatten)]
    pub amp: AmpSettings,
    pub lambda0_form: Lambda0Form,
}

/// Output of a DMMV-AMP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmmvResult {
    /// `X_p` estimates (K x M) per subcarrier.
    #[serde(with = "crate::io::complex_stack")]
    pub x_hat: Vec<DMatrix<Complex64>>,
    pub lambda_hat: Vec<f64>,
    pub activity_hat: Vec<bool>,
    pub sigma2_hat: Vec<f64>,
    pub mu_hat: Complex64,
    pub tau_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trajectory: Vec<IterationRecord>,
}

/// Channel estimates of one detected device, one row per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceChannel {
    pub device: usize,
    pub rows: Vec<Vec<Complex64>>,
}

/// `alpha_k = 1` iff `sum_p sum_m r(x_{p,km}) >= p_th M P`, with
/// `r(x) = 1` when `|x| > magnitude_floor`.
pub fn detect_activity(x_hat: &[DMatrix<Complex64>], cfg: &DetectorConfig) -> Vec<bool> {
    let Some(first) = x_hat.first() else {
        return Vec::new();
    };
    let (k, m) = first.shape();
    let needed = cfg.p_th * (m * x_hat.len()) as f64;
    (0..k)
        .map(|i| {
            let count: usize =
                x_hat.iter().map(|x| x.row(i).iter().filter(|v| v.norm() > cfg.magnitude_floor).count()).sum();
            count as f64 >= needed
        })
        .collect()
}

/// Alternative detector on the shared sparsity ratios.
pub fn detect_by_sparsity_ratio(lambda_hat: &[f64], cfg: &DetectorConfig) -> Vec<bool> {
    lambda_hat.iter().map(|&l| l >= cfg.p_th).collect()
}

/// Rows of every detected device, in device order.
pub fn extract_channels(result: &DmmvResult) -> Vec<DeviceChannel> {
    result
        .activity_hat
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(device, _)| DeviceChannel {
            device,
            rows: result.x_hat.iter().map(|x| x.row(device).iter().copied().collect()).collect(),
        })
        .collect()
}

/// Estimates with undetected rows zeroed.
pub fn masked_estimates(result: &DmmvResult) -> Vec<DMatrix<Complex64>> {
    result
        .x_hat
        .iter()
        .map(|x| {
            let mut out = x.clone();
            for (k, &a) in result.activity_hat.iter().enumerate() {
                if !a {
                    out.row_mut(k).fill(Complex64::new(0.0, 0.0));
                }
            }
            out
        })
        .collect()
}

/// Hyperparameter initialization shared by all subcarriers: common
/// sparsity ratio, per-subcarrier noise variances and averaged slab variance.
pub fn initial_hyperparams(problems: &[AmpProblem<'_>], form: Lambda0Form) -> Vec<Hyperparams> {
    let first = &problems[0];
    let (k, m, g) = (first.devices(), first.antennas(), first.pilot_len());
    let lambda0 = em::init_lambda0(g, k, form);
    let inits: Vec<_> = problems.iter().map(|pr| em::init_noise_and_slab(pr.received, pr.pilots, lambda0)).collect();
    let tau = inits.iter().map(|(_, t, _)| t).sum::<f64>() / inits.len() as f64;
    let mu = inits.iter().map(|(_, _, mu)| mu).sum::<Complex64>() / inits.len() as f64;
    inits.iter().map(|&(sigma2, _, _)| Hyperparams::uniform(k, m, lambda0, mu, tau, sigma2)).collect()
}

fn problems(observation: &Observation) -> Result<Vec<AmpProblem<'_>>> {
    observation.validate()?;
    observation.pilots.iter().zip(&observation.received).map(|(s, y)| AmpProblem::new(s, y)).collect()
}

/// Runs DMMV-AMP with the data-driven initialization.
pub fn run_dmmv(observation: &Observation, settings: &DmmvSettings, detector: &DetectorConfig) -> Result<DmmvResult> {
    let problems = problems(observation)?;
    let hp = initial_hyperparams(&problems, settings.lambda0_form);
    run_dmmv_from(&problems, settings, detector, hp)
}

/// Runs DMMV-AMP from explicit per-subcarrier hyperparameters. The sparsity
/// ratio, `mu` and `tau` of `hp[0]` seed the shared prior.
pub fn run_dmmv_with_init(
    observation: &Observation,
    settings: &DmmvSettings,
    detector: &DetectorConfig,
    hp: Vec<Hyperparams>,
) -> Result<DmmvResult> {
    let problems = problems(observation)?;
    run_dmmv_from(&problems, settings, detector, hp)
}

fn run_dmmv_from(
    problems: &[AmpProblem<'_>],
    settings: &DmmvSettings,
    detector: &DetectorConfig,
    mut hp: Vec<Hyperparams>,
) -> Result<DmmvResult> {
    settings.amp.validate()?;
    detector.validate()?;
    if hp.len() != problems.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} hyperparameter sets for {} subcarriers",
            hp.len(),
            problems.len()
        )));
    }
    for h in &hp {
        h.validate()?;
    }
    let amp = &settings.amp;
    let antennas = problems[0].antennas();
    let mut states: Vec<AmpState> = problems.iter().zip(&hp).map(|(pr, h)| AmpState::new(pr, h)).collect();
    let guard = DivergenceGuard::new(mean_over(&states, AmpState::mean_post_var));
    let mut trajectory: Vec<IterationRecord> = Vec::new();
    let mut converged = false;

    for t in 1..=amp.t_max {
        let previous: Vec<DMatrix<Complex64>> = states.iter().map(|s| s.x_hat.clone()).collect();

        // Per-subcarrier message passing and noise variance update.
        let outcome: Vec<Result<()>> = states
            .par_iter_mut()
            .zip(hp.par_iter_mut())
            .zip(problems.par_iter())
            .enumerate()
            .map(|(p, ((state, h), problem))| {
                state.iter = t;
                let step = state
                    .factor_update(problem, h.sigma2)
                    .and_then(|_| state.variable_update(problem, h, amp.damping, amp.llr_form));
                if step.is_ok() {
                    h.sigma2 = em::update_noise_variance(
                        problem.received,
                        &state.residual_mean,
                        &state.residual_var,
                        h.sigma2,
                    );
                }
                step.map_err(|e| tag_subcarrier(e, p))
            })
            .collect();
        for r in outcome {
            r.map_err(|e| with_trajectory(e, &trajectory))?;
        }

        // Shared prior aggregation (the only cross-subcarrier step).
        let views: Vec<&AmpState> = states.iter().collect();
        let shared = em::aggregate_shared(&views, hp[0].mu, hp[0].tau);
        let lambda = em::broadcast_rows(&shared.lambda, antennas);
        for h in hp.iter_mut() {
            h.lambda.copy_from(&lambda);
            h.mu = shared.mu;
            h.tau = shared.tau;
        }

        // Record the subcarrier with the largest relative change.
        let mut all_converged = true;
        let mut worst: Option<(f64, f64, f64)> = None;
        for (state, prev) in states.iter().zip(&previous) {
            let delta = frobenius_distance(&state.x_hat, prev);
            let x_norm = prev.norm();
            all_converged &= delta < amp.epsilon * x_norm;
            let ratio = if x_norm > 0.0 { delta / x_norm } else { f64::INFINITY };
            if worst.is_none_or(|(r, _, _)| ratio > r) {
                worst = Some((ratio, delta, x_norm));
            }
        }
        let (_, delta_max, x_norm_at_max) = worst.unwrap_or_default();
        let record = IterationRecord {
            iter: t,
            mean_v: mean_over(&states, AmpState::mean_post_var),
            sigma2: hp.iter().map(|h| h.sigma2).sum::<f64>() / hp.len() as f64,
            lambda_mean: hp[0].lambda_mean(),
            delta_norm: delta_max,
            x_norm: x_norm_at_max,
            mu: shared.mu,
            tau: shared.tau,
            q_proxy: mean_over(&states, |s| s.log_evidence),
        };
        trajectory.push(record);
        if let Err(reason) = guard.check(record.mean_v) {
            return Err(Error::Diverged { iteration: t, subcarrier: None, reason, trajectory });
        }
        if all_converged {
            converged = true;
            break;
        }
    }

    let x_hat: Vec<DMatrix<Complex64>> = states.into_iter().map(|s| s.x_hat).collect();
    let lambda_hat: Vec<f64> = hp[0].lambda.column(0).iter().copied().collect();
    let activity_hat = match detector.rule {
        DetectionRule::Magnitude => detect_activity(&x_hat, detector),
        DetectionRule::SparsityRatio => detect_by_sparsity_ratio(&lambda_hat, detector),
    };
    Ok(DmmvResult {
        x_hat,
        lambda_hat,
        activity_hat,
        sigma2_hat: hp.iter().map(|h| h.sigma2).collect(),
        mu_hat: hp[0].mu,
        tau_hat: hp[0].tau,
        iterations: trajectory.len(),
        converged,
        trajectory,
    })
}

fn mean_over(states: &[AmpState], f: impl Fn(&AmpState) -> f64) -> f64 {
    states.iter().map(f).sum::<f64>() / states.len() as f64
}

fn tag_subcarrier(e: Error, p: usize) -> Error {
    match e {
        Error::Diverged { iteration, reason, trajectory, .. } => {
            Error::Diverged { iteration, subcarrier: Some(p), reason, trajectory }
        }
        other => other,
    }
}

fn with_trajectory(e: Error, trajectory: &[IterationRecord]) -> Error {
    match e {
        Error::Diverged { iteration, subcarrier, reason, .. } => {
            Error::Diverged { iteration, subcarrier, reason, trajectory: trajectory.to_vec() }
        }
        other => other,
    }
}
