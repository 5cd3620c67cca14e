//! Comparison schemes: simultaneous orthogonal matching pursuit over all
//! antennas and subcarriers, and least squares on a genie-provided support.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tikhonov weight used when the selected columns are rank deficient.
pub const RIDGE: f64 = 1e-10;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SompMode {
    /// One support for all subcarriers (correlations summed over `p` and `m`).
    #[default]
    Joint,
    /// Independent pursuit per subcarrier, fused by a vote.
    PerSubcarrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SompSettings {
    pub max_atoms: usize,
    /// Stop once `||residual||_F <= residual_tol ||Y||_F`.
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub mode: SompMode,
    /// Per-subcarrier mode: fraction of subcarriers that must select a device.
    #[serde(default = "default_vote")]
    pub vote_fraction: f64,
}

fn default_vote() -> f64 {
    0.5
}

impl SompSettings {
    pub fn with_atoms(max_atoms: usize) -> Self {
        Self { max_atoms, residual_tol: None, mode: SompMode::Joint, vote_fraction: default_vote() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SompOutput {
    /// Selected devices in selection order (joint) or sorted (per subcarrier).
    pub support: Vec<usize>,
    pub activity: Vec<bool>,
    pub x_hat: Vec<DMatrix<Complex64>>,
    /// Total residual Frobenius norm after each selection (joint mode).
    pub residual_norms: Vec<f64>,
    /// Some least-squares refit needed the ridge fallback.
    pub regularized: bool,
}

/// Least-squares solution and whether the ridge fallback was used.
#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution {
    pub x: DMatrix<Complex64>,
    pub regularized: bool,
}

/// Solves `min ||A X - B||_F` through a QR factorization, falling back to
/// `(A^H A + RIDGE I) X = A^H B` when `A` is rank deficient.
pub fn least_squares(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> LsSolution {
    let (rows, n) = a.shape();
    if n == 0 {
        return LsSolution { x: DMatrix::zeros(0, b.ncols()), regularized: false };
    }
    if n <= rows {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag_max = (0..n).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
        let full_rank = diag_max > 0.0 && (0..n).all(|i| r[(i, i)].norm() > RANK_TOL * diag_max);
        if full_rank {
            let rhs = qr.q().ad_mul(b);
            if let Some(x) = r.solve_upper_triangular(&rhs) {
                return LsSolution { x, regularized: false };
            }
        }
    }
    let mut gram = a.ad_mul(a);
    for i in 0..n {
        gram[(i, i)] += Complex64::new(RIDGE, 0.0);
    }
    let rhs = a.ad_mul(b);
    let x = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DMatrix::zeros(n, b.ncols())),
    };
    LsSolution { x, regularized: true }
}

fn select_columns(s: &DMatrix<Complex64>, support: &[usize]) -> DMatrix<Complex64> {
    DMatrix::from_fn(s.nrows(), support.len(), |i, j| s[(i, support[j])])
}

fn scatter_rows(devices: usize, support: &[usize], rows: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut x = DMatrix::zeros(devices, rows.ncols());
    for (j, &k) in support.iter().enumerate() {
        x.row_mut(k).copy_from(&rows.row(j));
    }
    x
}

fn check_stack(received: &[DMatrix<Complex64>], pilots: &[DMatrix<Complex64>]) -> Result<(usize, usize)> {
    if received.is_empty() || received.len() != pilots.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observation matrices vs {} pilot matrices",
            received.len(),
            pilots.len()
        )));
    }
    let (g, k) = pilots[0].shape();
    if g == 0 {
        return Err(Error::InvalidConfig("pilot length must be at least 1".into()));
    }
    for (p, (y, s)) in received.iter().zip(pilots).enumerate() {
        if s.shape() != (g, k) || y.nrows() != g {
            return Err(Error::DimensionMismatch(format!(
                "subcarrier {p}: pilots {:?}, observations {:?}",
                s.shape(),
                y.shape()
            )));
        }
    }
    Ok((g, k))
}

struct JointPursuit {
    order: Vec<usize>,
    x_hat: Vec<DMatrix<Complex64>>,
    residual_norms: Vec<f64>,
    regularized: bool,
}

fn joint_pursuit(
    received: &[DMatrix<Complex64>],
    pilots: &[DMatrix<Complex64>],
    max_atoms: usize,
    residual_tol: Option<f64>,
) -> Result<JointPursuit> {
    let (_, k) = check_stack(received, pilots)?;
    let col_energy: Vec<Vec<f64>> =
        pilots.iter().map(|s| (0..k).map(|j| s.column(j).norm_squared()).collect()).collect();
    if let Some(column) = (0..k).find(|&j| col_energy.iter().any(|e| e[j] <= 0.0)) {
        return Err(Error::DegenerateColumn { column });
    }
    let y_norm = received.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    let mut residuals: Vec<DMatrix<Complex64>> = received.to_vec();
    let mut selected = vec![false; k];
    let mut order = Vec::new();
    let mut x_hat: Vec<DMatrix<Complex64>> = received.iter().map(|y| DMatrix::zeros(k, y.ncols())).collect();
    let mut residual_norms = Vec::new();
    let mut regularized = false;

    for _ in 0..max_atoms.min(k) {
        let mut score = vec![0.0; k];
        for ((s, r), energy) in pilots.iter().zip(&residuals).zip(&col_energy) {
            let corr = s.ad_mul(r);
            for (j, sc) in score.iter_mut().enumerate() {
                *sc += corr.row(j).iter().map(|c| c.norm_sqr()).sum::<f64>() / energy[j];
            }
        }
        // strict comparison keeps the lowest index on ties
        let mut best: Option<usize> = None;
        for j in (0..k).filter(|&j| !selected[j]) {
            if best.is_none_or(|b| score[j] > score[b]) {
                best = Some(j);
            }
        }
        let Some(pick) = best else { break };
        selected[pick] = true;
        order.push(pick);

        let mut total = 0.0;
        for (p, (y, s)) in received.iter().zip(pilots).enumerate() {
            let sub = select_columns(s, &order);
            let sol = least_squares(&sub, y);
            regularized |= sol.regularized;
            residuals[p] = y - &sub * &sol.x;
            total += residuals[p].norm_squared();
            x_hat[p] = scatter_rows(k, &order, &sol.x);
        }
        let norm = total.sqrt();
        residual_norms.push(norm);
        if residual_tol.is_some_and(|tol| norm <= tol * y_norm) {
            break;
        }
    }
    Ok(JointPursuit { order, x_hat, residual_norms, regularized })
}

/// Simultaneous OMP: greedily adds the device with the largest normalized
/// correlation energy `sum_p sum_m |<s_pk, r_pm>|^2 / ||s_pk||^2`, then refits
/// all selected columns by least squares on every subcarrier.
pub fn somp(
    received: &[DMatrix<Complex64>],
    pilots: &[DMatrix<Complex64>],
    settings: &SompSettings,
) -> Result<SompOutput> {
    if settings.max_atoms == 0 {
        return Err(Error::InvalidConfig("max_atoms must be at least 1".into()));
    }
    let (_, k) = check_stack(received, pilots)?;
    match settings.mode {
        SompMode::Joint => {
            let run = joint_pursuit(received, pilots, settings.max_atoms, settings.residual_tol)?;
            let mut activity = vec![false; k];
            run.order.iter().for_each(|&j| activity[j] = true);
            Ok(SompOutput {
                support: run.order,
                activity,
                x_hat: run.x_hat,
                residual_norms: run.residual_norms,
                regularized: run.regularized,
            })
        }
        SompMode::PerSubcarrier => {
            let mut votes = vec![0usize; k];
            let mut x_hat = Vec::with_capacity(received.len());
            let mut regularized = false;
            for (y, s) in received.iter().zip(pilots) {
                let run = joint_pursuit(
                    std::slice::from_ref(y),
                    std::slice::from_ref(s),
                    settings.max_atoms,
                    settings.residual_tol,
                )?;
                run.order.iter().for_each(|&j| votes[j] += 1);
                regularized |= run.regularized;
                x_hat.extend(run.x_hat);
            }
            let needed = settings.vote_fraction * received.len() as f64;
            let activity: Vec<bool> = votes.iter().map(|&v| v > 0 && v as f64 >= needed).collect();
            let support = (0..k).filter(|&j| activity[j]).collect();
            Ok(SompOutput { support, activity, x_hat, residual_norms: Vec::new(), regularized })
        }
    }
}

/// Least squares restricted to the true support; zero rows elsewhere.
pub fn oracle_ls(
    received: &[DMatrix<Complex64>],
    pilots: &[DMatrix<Complex64>],
    support: &[usize],
) -> Result<Vec<DMatrix<Complex64>>> {
    let (g, k) = check_stack(received, pilots)?;
    if support.len() > g {
        return Err(Error::SupportTooLarge { support: support.len(), pilot_len: g });
    }
    if let Some(&bad) = support.iter().find(|&&j| j >= k) {
        return Err(Error::DimensionMismatch(format!("support index {bad} out of range for {k} devices")));
    }
    Ok(received
        .iter()
        .zip(pilots)
        .map(|(y, s)| {
            let sol = least_squares(&select_columns(s, support), y);
            scatter_rows(k, support, &sol.x)
        })
        .collect())
}
