//! Independent reference implementations shared by the integration tests.
#![allow(dead_code, clippy::excessive_precision)]

use dmmv_amp::amp::{AmpProblem, AmpState};
use dmmv_amp::denoiser::{Hyperparams, LlrForm};
use dmmv_amp::rng::{self, complex_gaussian};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = half * GK_NODES[i];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`, bisecting the
/// interval with the largest error estimate until the total falls below
/// `abs_tol + rel_tol |I|`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..5000 {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if err <= abs_tol + rel_tol * total.abs() {
            break;
        }
        let worst = parts.iter().enumerate().max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1)).map(|(i, _)| i).unwrap();
        let (lo, hi, _) = parts.swap_remove(worst);
        let m = 0.5 * (lo + hi);
        parts.push((lo, m, gk15(&f, lo, m)));
        parts.push((m, hi, gk15(&f, m, hi)));
    }
    parts.iter().map(|p| p.2 .0).sum()
}

/// Posterior of `x ~ (1 - lambda) delta_0 + lambda CN(mu, tau)` observed as
/// `r = x + CN(0, sigma)`, computed by direct numerical integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadraturePosterior {
    pub pi: f64,
    pub mean: Complex64,
    pub var: f64,
}

fn gauss(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub fn quadrature_posterior(r: Complex64, sigma: f64, mu: Complex64, tau: f64, lambda: f64) -> QuadraturePosterior {
    // Real and imaginary parts are independent with half the variance each,
    // so every moment over the complex plane factors into 1-D integrals.
    let (hs, ht) = (0.5 * sigma, 0.5 * tau);
    let width = 14.0 * sigma.max(tau).sqrt();
    let part = |robs: f64, m: f64| {
        let lo = robs.min(m) - width;
        let hi = robs.max(m) + width;
        let dens = move |x: f64| gauss(x, m, ht) * gauss(robs, x, hs);
        let z = integrate(dens, lo, hi, 1e-14, 0.0);
        let first = integrate(move |x| x * dens(x), lo, hi, 1e-14, 0.0);
        (z, first / z, lo, hi, dens)
    };
    let (zr, mr, lor, hir, dr) = part(r.re, mu.re);
    let (zi, mi, loi, hii, di) = part(r.im, mu.im);
    let slab_evidence = lambda * zr * zi;
    let spike_evidence = (1.0 - lambda) * gauss(r.re, 0.0, hs) * gauss(r.im, 0.0, hs);
    let pi = slab_evidence / (slab_evidence + spike_evidence);
    let mean = c(mr, mi) * pi;
    // Second central moment about the full posterior mean, slab part by quadrature.
    let cr = integrate(|x| (x - mean.re).powi(2) * dr(x), lor, hir, 1e-14, 0.0) / zr;
    let ci = integrate(|x| (x - mean.im).powi(2) * di(x), loi, hii, 1e-14, 0.0) / zi;
    let var = pi * (cr + ci) + (1.0 - pi) * mean.norm_sqr();
    QuadraturePosterior { pi, mean, var }
}

/// Textbook spike-and-slab posterior written directly from Bayes' rule.
pub fn direct_posterior(r: Complex64, sigma: f64, mu: Complex64, tau: f64, lambda: f64) -> (f64, Complex64, f64) {
    let slab = lambda / (std::f64::consts::PI * (sigma + tau)) * (-(r - mu).norm_sqr() / (sigma + tau)).exp();
    let spike = (1.0 - lambda) / (std::f64::consts::PI * sigma) * (-r.norm_sqr() / sigma).exp();
    let pi = slab / (slab + spike);
    let a = (r * tau + mu * sigma) / (sigma + tau);
    let delta = tau * sigma / (tau + sigma);
    let mean = a * pi;
    let var = (pi * (a.norm_sqr() + delta) - mean.norm_sqr()).max(1e-15);
    (pi, mean, var)
}

/// Factor-node messages by explicit loops.
pub fn naive_factor_update(
    s: &DMatrix<Complex64>,
    y: &DMatrix<Complex64>,
    x_hat: &DMatrix<Complex64>,
    v: &DMatrix<f64>,
    z_prev: &DMatrix<Complex64>,
    v_prev: &DMatrix<f64>,
    sigma2: f64,
) -> (DMatrix<Complex64>, DMatrix<f64>) {
    let (g, k) = s.shape();
    let m = y.ncols();
    let mut z = DMatrix::zeros(g, m);
    let mut vv = DMatrix::zeros(g, m);
    for gi in 0..g {
        for mi in 0..m {
            let mut acc_v = 0.0;
            let mut acc_z = c(0.0, 0.0);
            for ki in 0..k {
                acc_v += s[(gi, ki)].norm_sqr() * v[(ki, mi)];
                acc_z += s[(gi, ki)] * x_hat[(ki, mi)];
            }
            vv[(gi, mi)] = acc_v;
            z[(gi, mi)] = acc_z - (y[(gi, mi)] - z_prev[(gi, mi)]) * (acc_v / (sigma2 + v_prev[(gi, mi)]));
        }
    }
    (z, vv)
}

pub struct NaiveVariable {
    pub r: DMatrix<Complex64>,
    pub sigma: DMatrix<f64>,
    pub x_hat: DMatrix<Complex64>,
    pub v: DMatrix<f64>,
    pub pi: DMatrix<f64>,
}

/// Variable-node messages by explicit loops followed by [`direct_posterior`].
#[allow(clippy::too_many_arguments)]
pub fn naive_variable_update(
    s: &DMatrix<Complex64>,
    y: &DMatrix<Complex64>,
    z: &DMatrix<Complex64>,
    vres: &DMatrix<f64>,
    x_hat: &DMatrix<Complex64>,
    sigma2: f64,
    lambda: &DMatrix<f64>,
    mu: Complex64,
    tau: f64,
) -> NaiveVariable {
    let (g, k) = s.shape();
    let m = y.ncols();
    let mut out = NaiveVariable {
        r: DMatrix::zeros(k, m),
        sigma: DMatrix::zeros(k, m),
        x_hat: DMatrix::zeros(k, m),
        v: DMatrix::zeros(k, m),
        pi: DMatrix::zeros(k, m),
    };
    for ki in 0..k {
        for mi in 0..m {
            let mut prec = 0.0;
            let mut back = c(0.0, 0.0);
            for gi in 0..g {
                let w = 1.0 / (sigma2 + vres[(gi, mi)]);
                prec += s[(gi, ki)].norm_sqr() * w;
                back += s[(gi, ki)].conj() * (y[(gi, mi)] - z[(gi, mi)]) * w;
            }
            let sig = 1.0 / prec;
            let r = x_hat[(ki, mi)] + back * sig;
            let (pi, mean, var) = direct_posterior(r, sig, mu, tau, lambda[(ki, mi)]);
            out.r[(ki, mi)] = r;
            out.sigma[(ki, mi)] = sig;
            out.x_hat[(ki, mi)] = mean;
            out.v[(ki, mi)] = var;
            out.pi[(ki, mi)] = pi;
        }
    }
    out
}

pub fn max_abs_diff_c(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest entrywise difference relative to the largest entry magnitude.
pub fn rel_diff_c(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let scale = b.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-300);
    max_abs_diff_c(a, b) / scale
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    max_abs_diff(a, b) / scale
}

/// One random denoiser input: `(r, sigma, mu, tau, lambda)`.
pub fn random_denoiser_case<R: rand::Rng>(rng: &mut R) -> (Complex64, f64, Complex64, f64, f64) {
    let log_uniform = |rng: &mut R, lo: f64, hi: f64| (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let lambda = 0.01 + 0.98 * rng.random::<f64>();
    let tau = log_uniform(rng, 0.1, 10.0);
    let sigma = log_uniform(rng, 0.01, 10.0);
    let mu = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let spread = 3.0 * (tau + sigma).sqrt();
    let r = c(rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    (r, sigma, mu, tau, lambda)
}

pub fn random_problem(g: usize, k: usize, m: usize, seed: u64) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let mut r = rng::stream(seed);
    let s = DMatrix::from_fn(g, k, |_, _| complex_gaussian(&mut r, 1.0 / g as f64));
    let y = DMatrix::from_fn(g, m, |_, _| complex_gaussian(&mut r, 1.0));
    (s, y)
}

pub fn random_hp(k: usize, m: usize, seed: u64) -> Hyperparams {
    let mut r = rng::stream(seed);
    let mut hp = Hyperparams::uniform(k, m, 0.2, c(0.1, -0.2), 0.8, 0.05);
    hp.lambda.iter_mut().for_each(|l| *l = r.random_range(0.05..0.95));
    hp
}

/// Runs a few iterations, comparing each step with the loop reference
/// started from the same incoming messages.
pub fn check_steps(g: usize, k: usize, m: usize, seed: u64) -> (f64, f64) {
    let (s, y) = random_problem(g, k, m, seed);
    let problem = AmpProblem::new(&s, &y).unwrap();
    let hp = random_hp(k, m, seed + 1);
    let mut state = AmpState::new(&problem, &hp);
    let (mut factor_err, mut variable_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..4 {
        let (z_ref, v_ref) = naive_factor_update(
            &s,
            &y,
            &state.x_hat,
            &state.post_var,
            &state.residual_mean,
            &state.residual_var,
            hp.sigma2,
        );
        state.factor_update(&problem, hp.sigma2).unwrap();
        factor_err =
            factor_err.max(rel_diff_c(&state.residual_mean, &z_ref)).max(rel_diff(&state.residual_var, &v_ref));

        let reference = naive_variable_update(
            &s,
            &y,
            &state.residual_mean,
            &state.residual_var,
            &state.x_hat,
            hp.sigma2,
            &hp.lambda,
            hp.mu,
            hp.tau,
        );
        state.variable_update(&problem, &hp, 0.0, LlrForm::Complex).unwrap();
        variable_err = variable_err
            .max(rel_diff_c(&state.pseudo_obs, &reference.r))
            .max(rel_diff(&state.pseudo_var, &reference.sigma))
            .max(rel_diff_c(&state.x_hat, &reference.x_hat))
            .max(rel_diff(&state.post_var, &reference.v))
            .max(max_abs_diff(&state.activity_prob, &reference.pi));
    }
    (factor_err, variable_err)
}
