//! Expectation-maximization updates of the hyperparameters run inside the
//! message-passing loop, and their data-driven initialization.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::amp::{AmpProblem, AmpState, EmHook};
use crate::denoiser::{clamp_lambda, Hyperparams, LAMBDA_MAX, LAMBDA_MIN};

/// Lower bound applied to learned noise variances.
pub const SIGMA2_FLOOR: f64 = 1e-20;
/// Lower bound applied to the slab variance.
pub const TAU_FLOOR: f64 = 1e-12;
/// Initial SNR guess used to split received power into signal and noise.
pub const INITIAL_SNR: f64 = 100.0;

/// `sigma2' = mean[ |y - Z|^2 / |1 + V/sigma2|^2 + sigma2 V / (sigma2 + V) ]`.
pub fn update_noise_variance(
    received: &DMatrix<Complex64>,
    residual_mean: &DMatrix<Complex64>,
    residual_var: &DMatrix<f64>,
    sigma2_prev: f64,
) -> f64 {
    let n = received.len() as f64;
    let total: f64 = received
        .iter()
        .zip(residual_mean.iter())
        .zip(residual_var.iter())
        .map(|((&y, &z), &v)| {
            let gain = 1.0 + v / sigma2_prev;
            (y - z).norm_sqr() / (gain * gain) + sigma2_prev * v / (sigma2_prev + v)
        })
        .sum();
    (total / n).max(SIGMA2_FLOOR)
}

/// Result of the slab mean/variance M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabUpdate {
    pub mu: Complex64,
    pub tau: f64,
    /// All activity probabilities were zero; previous values were kept.
    pub degenerate: bool,
}

/// `mu' = sum(pi A) / sum(pi)`, `tau' = sum(pi (|mu_prev - A|^2 + Delta)) / sum(pi)`.
pub fn update_slab(
    pi: &DMatrix<f64>,
    slab_mean: &DMatrix<Complex64>,
    slab_var: &DMatrix<f64>,
    mu_prev: Complex64,
    tau_prev: f64,
) -> SlabUpdate {
    let mut weight = 0.0;
    let mut mean_acc = Complex64::new(0.0, 0.0);
    let mut var_acc = 0.0;
    for ((&p, &a), &d) in pi.iter().zip(slab_mean.iter()).zip(slab_var.iter()) {
        weight += p;
        mean_acc += a * p;
        var_acc += p * ((mu_prev - a).norm_sqr() + d);
    }
    if weight.is_nan() || weight <= 0.0 {
        return SlabUpdate { mu: mu_prev, tau: tau_prev, degenerate: true };
    }
    SlabUpdate { mu: mean_acc / weight, tau: (var_acc / weight).max(TAU_FLOOR), degenerate: false }
}

/// Per-entry update `lambda_km <- pi_km`.
pub fn update_lambda_entrywise(pi: &DMatrix<f64>) -> DMatrix<f64> {
    pi.map(clamp_lambda)
}

/// Row-shared update `lambda_k <- (1/MP) sum_p sum_m pi_{p,km}`.
pub fn update_lambda_shared(pis: &[&DMatrix<f64>]) -> Vec<f64> {
    let Some(first) = pis.first() else {
        return Vec::new();
    };
    let (k, m) = first.shape();
    let count = (m * pis.len()) as f64;
    (0..k)
        .map(|i| {
            let total: f64 = pis.iter().map(|pi| pi.row(i).sum()).sum();
            clamp_lambda(total / count)
        })
        .collect()
}

pub fn broadcast_rows(lambda: &[f64], antennas: usize) -> DMatrix<f64> {
    DMatrix::from_fn(lambda.len(), antennas, |i, _| lambda[i])
}

/// How the sparsity ratio is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaUpdate {
    /// Each entry keeps its own ratio.
    PerEntry,
    /// Ratios are averaged over antennas (and subcarriers) per device.
    RowShared,
}

/// Which algebraic form of the sparsity initialization to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda0Form {
    /// `(1 + c^2) Phi(-c) - c phi(c)` in both places.
    #[default]
    Standard,
    /// `(1 + c)^2 Phi(-c) - c phi(c)` in both places.
    Literal,
}

fn lambda0_objective(c: f64, ratio: f64, form: Lambda0Form) -> f64 {
    let normal = Normal::standard();
    let lead = match form {
        Lambda0Form::Standard => 1.0 + c * c,
        Lambda0Form::Literal => (1.0 + c) * (1.0 + c),
    };
    let psi = lead * normal.cdf(-c) - c * normal.pdf(c);
    (1.0 - 2.0 * psi / ratio) / (1.0 + c * c - 2.0 * psi)
}

/// Initial sparsity ratio
/// `(G/K) max_c [1 - 2(K/G) psi(c)] / [1 + c^2 - 2 psi(c)]`
/// with `psi(c) = (1 + c^2) Phi(-c) - c phi(c)`, maximized by golden-section
/// search on `c in (1e-6, 20]`.
pub fn init_lambda0(pilot_len: usize, devices: usize, form: Lambda0Form) -> f64 {
    let ratio = pilot_len as f64 / devices as f64;
    let f = |c: f64| lambda0_objective(c, ratio, form);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-6, 20.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-9 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    let best = f(0.5 * (a + b)).max(f1).max(f2);
    (ratio * best).clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Noise and slab initialization from the received power:
/// `sigma2 = (1/M) sum_m ||y_m||^2 / ((SNR0 + 1) G)`,
/// `tau = (1/M) sum_m (||y_m||^2 - M sigma2) / (||S||_F^2 lambda0)`, `mu = 0`.
pub fn init_noise_and_slab(
    received: &DMatrix<Complex64>,
    pilots: &DMatrix<Complex64>,
    lambda0: f64,
) -> (f64, f64, Complex64) {
    let (g, m) = received.shape();
    let col_power: Vec<f64> = (0..m).map(|j| received.column(j).norm_squared()).collect();
    let sigma2 =
        (col_power.iter().map(|p| p / ((INITIAL_SNR + 1.0) * g as f64)).sum::<f64>() / m as f64).max(SIGMA2_FLOOR);
    let pilot_energy = pilots.norm_squared();
    let tau = col_power.iter().map(|p| (p - m as f64 * sigma2) / (pilot_energy * lambda0)).sum::<f64>() / m as f64;
    (sigma2, tau.max(TAU_FLOOR), Complex64::new(0.0, 0.0))
}

/// Shared prior state produced by one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedPrior {
    pub lambda: Vec<f64>,
    pub mu: Complex64,
    pub tau: f64,
    pub degenerate: bool,
}

/// Aggregates the posteriors of all subcarriers: row-shared sparsity ratio and
/// subcarrier-averaged slab mean and variance.
pub fn aggregate_shared(states: &[&AmpState], mu_prev: Complex64, tau_prev: f64) -> SharedPrior {
    let pis: Vec<&DMatrix<f64>> = states.iter().map(|s| &s.activity_prob).collect();
    let lambda = update_lambda_shared(&pis);
    let count = states.len() as f64;
    let mut mu = Complex64::new(0.0, 0.0);
    let mut tau = 0.0;
    let mut degenerate = false;
    for s in states {
        let u = update_slab(&s.activity_prob, &s.slab_mean, &s.slab_var, mu_prev, tau_prev);
        degenerate |= u.degenerate;
        mu += u.mu;
        tau += u.tau;
    }
    SharedPrior { lambda, mu: mu / count, tau: tau / count, degenerate }
}

/// Incremental EM: noise variance, then sparsity ratio, then slab mean, then
/// slab variance, each from the current posterior.
#[derive(Debug, Clone)]
pub struct IncrementalEm {
    pub lambda_update: LambdaUpdate,
    pub snapshots: Vec<EmSnapshot>,
    pub degenerate_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmSnapshot {
    pub iteration: usize,
    pub sigma2: f64,
    pub lambda_mean: f64,
    pub mu: Complex64,
    pub tau: f64,
    pub q_proxy: f64,
}

impl IncrementalEm {
    pub fn new(lambda_update: LambdaUpdate) -> Self {
        Self { lambda_update, snapshots: Vec::new(), degenerate_rounds: 0 }
    }
}

impl EmHook for IncrementalEm {
    fn update(&mut self, state: &AmpState, problem: &AmpProblem<'_>, hp: &mut Hyperparams) {
        hp.sigma2 = update_noise_variance(problem.received, &state.residual_mean, &state.residual_var, hp.sigma2);
        match self.lambda_update {
            LambdaUpdate::PerEntry => {
                hp.lambda = update_lambda_entrywise(&state.activity_prob);
                let u = update_slab(&state.activity_prob, &state.slab_mean, &state.slab_var, hp.mu, hp.tau);
                self.degenerate_rounds += usize::from(u.degenerate);
                hp.mu = u.mu;
                hp.tau = u.tau;
            }
            LambdaUpdate::RowShared => {
                let shared = aggregate_shared(&[state], hp.mu, hp.tau);
                self.degenerate_rounds += usize::from(shared.degenerate);
                hp.lambda = broadcast_rows(&shared.lambda, problem.antennas());
                hp.mu = shared.mu;
                hp.tau = shared.tau;
            }
        }
        self.snapshots.push(EmSnapshot {
            iteration: state.iter,
            sigma2: hp.sigma2,
            lambda_mean: hp.lambda_mean(),
            mu: hp.mu,
            tau: hp.tau,
            q_proxy: state.log_evidence,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn noise_update_degenerate_cases() {
        let mut r = rng::stream(1);
        let y = DMatrix::from_fn(4, 3, |_, _| rng::complex_gaussian(&mut r, 1.0));
        let z = DMatrix::from_fn(4, 3, |_, _| rng::complex_gaussian(&mut r, 1.0));
        let zero = DMatrix::zeros(4, 3);
        let direct = y.iter().zip(z.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 12.0;
        assert!((update_noise_variance(&y, &z, &zero, 0.3) - direct).abs() < 1e-15);

        let v = DMatrix::from_element(4, 3, 0.3);
        assert!((update_noise_variance(&y, &y, &v, 0.3) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn slab_update_cases() {
        let pi = DMatrix::from_element(3, 2, 0.4);
        let a = DMatrix::from_element(3, 2, c(0.7, -0.2));
        let d = DMatrix::from_element(3, 2, 0.25);
        let u = update_slab(&pi, &a, &d, c(0.0, 0.0), 1.0);
        assert!((u.mu - c(0.7, -0.2)).norm() < 1e-15);

        let ones = DMatrix::from_element(3, 2, 1.0);
        let u = update_slab(&ones, &a, &d, c(0.7, -0.2), 1.0);
        assert!((u.tau - 0.25).abs() < 1e-15);

        let zeros = DMatrix::zeros(3, 2);
        let u = update_slab(&zeros, &a, &d, c(0.1, 0.0), 2.0);
        assert!(u.degenerate);
        assert_eq!((u.mu, u.tau), (c(0.1, 0.0), 2.0));
    }

    #[test]
    fn shared_lambda_cases() {
        let flat = DMatrix::from_element(3, 2, 0.3);
        let lam = update_lambda_shared(&[&flat, &flat, &flat]);
        assert!(lam.iter().all(|l| (l - 0.3).abs() < 1e-15));

        let ones = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(update_lambda_shared(&[&ones, &ones]), vec![LAMBDA_MAX; 2]);

        // row k across (p, m): p=0 -> {0, 1}, p=1 -> {1, 0}
        let p0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let lam = update_lambda_shared(&[&p0, &p1]);
        assert!((lam[0] - 0.5).abs() < 1e-15);
        assert!((lam[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lambda0_lies_below_measurement_ratio() {
        for (g, k) in [(5, 100), (20, 100), (50, 100), (100, 100), (16, 200)] {
            let l = init_lambda0(g, k, Lambda0Form::Standard);
            assert!(l > 0.0 && l < 1.0);
            assert!(l <= g as f64 / k as f64);
        }
    }

    #[test]
    fn noise_and_slab_initialization() {
        let g = 4;
        let s = DMatrix::from_element(g, 5, c(0.5, 0.0));
        // every column has ||y_m||^2 = 101 G
        let y = DMatrix::from_element(g, 3, c((101.0f64).sqrt(), 0.0));
        let (sigma2, tau, mu) = init_noise_and_slab(&y, &s, 0.2);
        assert!((sigma2 - 1.0).abs() < 1e-12);
        assert!((tau - (101.0 * 4.0 - 3.0) / (5.0 * 0.2)).abs() < 1e-9);
        assert_eq!(mu, c(0.0, 0.0));

        let (sigma2, tau, _) = init_noise_and_slab(&DMatrix::zeros(g, 3), &s, 0.2);
        assert_eq!(sigma2, SIGMA2_FLOOR);
        assert_eq!(tau, TAU_FLOOR);
    }
}
