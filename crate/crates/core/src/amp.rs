//! MMV-AMP for a single subcarrier: factor-node and variable-node message
//! updates with a separable spike-and-slab denoiser and a pluggable
//! hyperparameter-learning hook.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, Hyperparams, LlrForm};
use crate::error::{Error, Result};

/// Mean posterior variance may grow at most this much over its initial value.
const DIVERGENCE_GROWTH: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpSettings {
    pub t_max: usize,
    /// Stop once `||X^{t+1} - X^t||_F < epsilon ||X^t||_F`.
    pub epsilon: f64,
    /// Weight of the previous estimate when blending `x_hat` and `v`.
    pub damping: f64,
    pub llr_form: LlrForm,
}

impl Default for AmpSettings {
    fn default() -> Self {
        Self { t_max: 200, epsilon: 1e-5, damping: 0.0, llr_form: LlrForm::DEFAULT }
    }
}

impl AmpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::InvalidConfig("t_max must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Pilots and observations of one subcarrier plus the cached `|S_gk|^2`.
#[derive(Debug, Clone)]
pub struct AmpProblem<'a> {
    pub pilots: &'a DMatrix<Complex64>,
    pub received: &'a DMatrix<Complex64>,
    pub pilot_power: DMatrix<f64>,
}

impl<'a> AmpProblem<'a> {
    pub fn new(pilots: &'a DMatrix<Complex64>, received: &'a DMatrix<Complex64>) -> Result<Self> {
        if pilots.nrows() != received.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "pilots {:?} and observations {:?} disagree on G",
                pilots.shape(),
                received.shape()
            )));
        }
        let pilot_power = pilots.map(|s| s.norm_sqr());
        if let Some(column) = (0..pilot_power.ncols()).find(|&k| pilot_power.column(k).sum() <= 0.0) {
            return Err(Error::DegenerateColumn { column });
        }
        Ok(Self { pilots, received, pilot_power })
    }

    pub fn pilot_len(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn devices(&self) -> usize {
        self.pilots.ncols()
    }

    pub fn antennas(&self) -> usize {
        self.received.ncols()
    }
}

/// Message state of one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// Onsager-corrected residual means `Z` (G x M).
    pub residual_mean: DMatrix<Complex64>,
    /// Residual variances `V` (G x M).
    pub residual_var: DMatrix<f64>,
    /// Pseudo-observations `R` (K x M).
    pub pseudo_obs: DMatrix<Complex64>,
    /// Pseudo-variances `Sigma` (K x M).
    pub pseudo_var: DMatrix<f64>,
    pub x_hat: DMatrix<Complex64>,
    /// Posterior variances `v` (K x M).
    pub post_var: DMatrix<f64>,
    /// Posterior activity probabilities `pi` from the latest denoising pass.
    pub activity_prob: DMatrix<f64>,
    /// Slab posterior means `A`.
    pub slab_mean: DMatrix<Complex64>,
    /// Slab posterior variances `Delta`.
    pub slab_var: DMatrix<f64>,
    /// Mean log-evidence of the pseudo-observations (EM diagnostic).
    pub log_evidence: f64,
    pub iter: usize,
}

impl AmpState {
    /// Prior moments for the estimates, `V = 1` and `Z = Y`.
    pub fn new(problem: &AmpProblem<'_>, hp: &Hyperparams) -> Self {
        let (k, m, g) = (problem.devices(), problem.antennas(), problem.pilot_len());
        let slab = hp.slab();
        let mut x_hat = DMatrix::zeros(k, m);
        let mut post_var = DMatrix::zeros(k, m);
        for j in 0..m {
            for i in 0..k {
                let (mean, var) = denoiser::prior_moments(slab, hp.lambda[(i, j)]);
                x_hat[(i, j)] = mean;
                post_var[(i, j)] = var;
            }
        }
        Self {
            residual_mean: problem.received.clone(),
            residual_var: DMatrix::from_element(g, m, 1.0),
            pseudo_obs: DMatrix::zeros(k, m),
            pseudo_var: DMatrix::from_element(k, m, f64::INFINITY),
            x_hat,
            post_var,
            activity_prob: hp.lambda.clone(),
            slab_mean: DMatrix::from_element(k, m, hp.mu),
            slab_var: DMatrix::from_element(k, m, hp.tau),
            log_evidence: f64::NAN,
            iter: 1,
        }
    }

    fn diverged(&self, reason: impl Into<String>) -> Error {
        Error::Diverged { iteration: self.iter, subcarrier: None, reason: reason.into(), trajectory: Vec::new() }
    }

    /// Factor-node step: `V = |S|^2 v`, `Z = S x_hat - V / (sigma2 + V_prev) (y - Z_prev)`.
    pub fn factor_update(&mut self, problem: &AmpProblem<'_>, sigma2: f64) -> Result<()> {
        let residual_var = &problem.pilot_power * &self.post_var;
        let mut residual_mean = problem.pilots * &self.x_hat;
        for ((z, (&v, &v_prev)), (&y, &z_prev)) in residual_mean
            .iter_mut()
            .zip(residual_var.iter().zip(self.residual_var.iter()))
            .zip(problem.received.iter().zip(self.residual_mean.iter()))
        {
            *z -= (y - z_prev) * (v / (sigma2 + v_prev));
        }
        if residual_var.iter().any(|v| !v.is_finite())
            || residual_mean.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(self.diverged("non-finite factor-node message"));
        }
        self.residual_var = residual_var;
        self.residual_mean = residual_mean;
        Ok(())
    }

    /// Variable-node step: pseudo-observations, then the denoiser, blended
    /// with the previous estimate by `damping`.
    pub fn variable_update(
        &mut self,
        problem: &AmpProblem<'_>,
        hp: &Hyperparams,
        damping: f64,
        form: LlrForm,
    ) -> Result<()> {
        let (k, m) = (problem.devices(), problem.antennas());
        let weight = self.residual_var.map(|v| 1.0 / (hp.sigma2 + v));
        let precision = problem.pilot_power.tr_mul(&weight);
        let mut scaled = problem.received - &self.residual_mean;
        scaled.iter_mut().zip(weight.iter()).for_each(|(q, &w)| *q *= w);
        let back = problem.pilots.ad_mul(&scaled);

        let slab = hp.slab();
        let mut evidence = 0.0;
        for j in 0..m {
            for i in 0..k {
                let prec = precision[(i, j)];
                if prec.is_nan() || prec <= 0.0 {
                    return Err(Error::DegenerateColumn { column: i });
                }
                if !prec.is_finite() {
                    return Err(self.diverged(format!("infinite precision at ({i}, {j})")));
                }
                let sigma = 1.0 / prec;
                let r = self.x_hat[(i, j)] + back[(i, j)] * sigma;
                let lambda = hp.lambda[(i, j)];
                let d =
                    denoiser::denoise_with(r, sigma, slab, lambda, form).map_err(|e| self.diverged(e.to_string()))?;
                evidence += denoiser::log_evidence(r, sigma, slab, lambda);
                self.pseudo_obs[(i, j)] = r;
                self.pseudo_var[(i, j)] = sigma;
                self.activity_prob[(i, j)] = d.stats.pi;
                self.slab_mean[(i, j)] = d.stats.mean;
                self.slab_var[(i, j)] = d.stats.var;
                let (x_prev, v_prev) = (self.x_hat[(i, j)], self.post_var[(i, j)]);
                if damping > 0.0 {
                    self.x_hat[(i, j)] = d.estimate * (1.0 - damping) + x_prev * damping;
                    self.post_var[(i, j)] = (1.0 - damping) * d.variance + damping * v_prev;
                } else {
                    self.x_hat[(i, j)] = d.estimate;
                    self.post_var[(i, j)] = d.variance;
                }
            }
        }
        self.log_evidence = evidence / (k * m) as f64;
        Ok(())
    }

    pub fn mean_post_var(&self) -> f64 {
        self.post_var.mean()
    }
}

/// Hyperparameter refresh run once per iteration after the variable update.
pub trait EmHook {
    fn update(&mut self, state: &AmpState, problem: &AmpProblem<'_>, hp: &mut Hyperparams);
}

/// Keeps the hyperparameters at their initial values.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixedHyperparams;

impl EmHook for FixedHyperparams {
    fn update(&mut self, _: &AmpState, _: &AmpProblem<'_>, _: &mut Hyperparams) {}
}

/// One row of the iteration trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Mean posterior variance, an MSE proxy.
    pub mean_v: f64,
    pub sigma2: f64,
    pub lambda_mean: f64,
    /// `||X^{t+1} - X^t||_F`.
    pub delta_norm: f64,
    /// `||X^t||_F`.
    pub x_norm: f64,
    pub mu: Complex64,
    pub tau: f64,
    /// Mean log-evidence of the pseudo-observations.
    pub q_proxy: f64,
}

impl IterationRecord {
    pub fn converged(&self, epsilon: f64) -> bool {
        self.delta_norm < epsilon * self.x_norm
    }
}

pub const TRAJECTORY_HEADER: &str = "iter,mean_v,sigma2,lambda_mean,delta_norm,x_norm,mu_re,mu_im,tau,q_proxy";

pub fn write_trajectory_csv<W: Write>(mut w: W, records: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iter, r.mean_v, r.sigma2, r.lambda_mean, r.delta_norm, r.x_norm, r.mu.re, r.mu.im, r.tau, r.q_proxy
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AmpOutput {
    pub x_hat: DMatrix<Complex64>,
    pub post_var: DMatrix<f64>,
    pub hp: Hyperparams,
    pub trajectory: Vec<IterationRecord>,
    pub converged: bool,
    pub state: AmpState,
}

impl AmpOutput {
    pub fn iterations(&self) -> usize {
        self.trajectory.len()
    }
}

/// Frobenius norm of the difference of two complex matrices.
pub(crate) fn frobenius_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Divergence watchdog shared by the single- and multi-subcarrier loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DivergenceGuard {
    baseline: f64,
}

impl DivergenceGuard {
    pub(crate) fn new(initial_mean_v: f64) -> Self {
        Self { baseline: initial_mean_v.max(denoiser::VARIANCE_FLOOR) }
    }

    pub(crate) fn check(&self, mean_v: f64) -> std::result::Result<(), String> {
        if !mean_v.is_finite() {
            Err("mean posterior variance is not finite".into())
        } else if mean_v > DIVERGENCE_GROWTH * self.baseline {
            Err(format!("mean posterior variance grew from {} to {mean_v}", self.baseline))
        } else {
            Ok(())
        }
    }
}

/// Runs the single-subcarrier loop until `t_max` iterations or the relative
/// change of `x_hat` falls below `epsilon`.
pub fn run_mmv_amp(
    problem: &AmpProblem<'_>,
    settings: &AmpSettings,
    hp_initial: Hyperparams,
    em_hook: &mut dyn EmHook,
) -> Result<AmpOutput> {
    settings.validate()?;
    hp_initial.validate()?;
    let mut hp = hp_initial;
    let mut state = AmpState::new(problem, &hp);
    let guard = DivergenceGuard::new(state.mean_post_var());
    let mut trajectory = Vec::new();
    let mut converged = false;

    let attach = |e: Error, trajectory: &Vec<IterationRecord>| match e {
        Error::Diverged { iteration, subcarrier, reason, .. } => {
            Error::Diverged { iteration, subcarrier, reason, trajectory: trajectory.clone() }
        }
        other => other,
    };

    for t in 1..=settings.t_max {
        state.iter = t;
        let previous = state.x_hat.clone();
        state.factor_update(problem, hp.sigma2).map_err(|e| attach(e, &trajectory))?;
        state.variable_update(problem, &hp, settings.damping, settings.llr_form).map_err(|e| attach(e, &trajectory))?;
        em_hook.update(&state, problem, &mut hp);

        let record = IterationRecord {
            iter: t,
            mean_v: state.mean_post_var(),
            sigma2: hp.sigma2,
            lambda_mean: hp.lambda_mean(),
            delta_norm: frobenius_distance(&state.x_hat, &previous),
            x_norm: previous.norm(),
            mu: hp.mu,
            tau: hp.tau,
            q_proxy: state.log_evidence,
        };
        trajectory.push(record);
        if let Err(reason) = guard.check(record.mean_v) {
            return Err(Error::Diverged { iteration: t, subcarrier: None, reason, trajectory });
        }
        if record.converged(settings.epsilon) {
            converged = true;
            break;
        }
    }

    Ok(AmpOutput { x_hat: state.x_hat.clone(), post_var: state.post_var.clone(), hp, trajectory, converged, state })
}
