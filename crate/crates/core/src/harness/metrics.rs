use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Lowest reported NMSE; exact recovery maps here instead of `-inf`.
pub const NMSE_FLOOR_DB: f64 = -120.0;

/// Fraction of devices whose detected activity differs from the truth.
pub fn compute_pe(activity_hat: &[bool], activity_true: &[bool]) -> Result<f64> {
    if activity_hat.len() != activity_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} detected vs {} true activity flags",
            activity_hat.len(),
            activity_true.len()
        )));
    }
    if activity_true.is_empty() {
        return Err(Error::UndefinedMetric("error probability over zero devices".into()));
    }
    let errors = activity_hat.iter().zip(activity_true).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / activity_true.len() as f64)
}

/// `10 log10( sum_p ||X_hat_p - X_p||^2 / sum_p ||X_p||^2 )`, floored.
pub fn compute_nmse(x_hat: &[DMatrix<Complex64>], x_true: &[DMatrix<Complex64>]) -> Result<f64> {
    if x_hat.len() != x_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated vs {} true subcarriers",
            x_hat.len(),
            x_true.len()
        )));
    }
    let mut err = 0.0;
    let mut power = 0.0;
    for (p, (a, b)) in x_hat.iter().zip(x_true).enumerate() {
        if a.shape() != b.shape() {
            return Err(Error::DimensionMismatch(format!(
                "subcarrier {p}: estimate {:?} vs truth {:?}",
                a.shape(),
                b.shape()
            )));
        }
        err += (a - b).norm_squared();
        power += b.norm_squared();
    }
    if power.is_nan() || power <= 0.0 {
        return Err(Error::UndefinedMetric("NMSE of an all-zero channel".into()));
    }
    let db = 10.0 * (err / power).log10();
    if db.is_nan() {
        return Err(Error::NonFinite("NMSE of a non-finite estimate".into()));
    }
    Ok(db.max(NMSE_FLOOR_DB))
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(vals: &[f64]) -> Vec<DMatrix<Complex64>> {
        vec![DMatrix::from_iterator(vals.len(), 1, vals.iter().map(|&v| Complex64::new(v, -v)))]
    }

    #[test]
    fn pe_examples() {
        let truth = [true, false, true, false, false, false, false, false, true, false];
        assert_eq!(compute_pe(&truth, &truth).unwrap(), 0.0);
        let complement: Vec<bool> = truth.iter().map(|b| !b).collect();
        assert_eq!(compute_pe(&complement, &truth).unwrap(), 1.0);
        let mut two = truth;
        two[0] = false;
        two[5] = true;
        assert!((compute_pe(&two, &truth).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(compute_pe(&truth[..3], &truth), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn nmse_examples() {
        let x = stack(&[1.0, -2.0, 0.5]);
        assert_eq!(compute_nmse(&x, &x).unwrap(), NMSE_FLOOR_DB);
        let zero = stack(&[0.0, 0.0, 0.0]);
        assert!(compute_nmse(&zero, &x).unwrap().abs() < 1e-12);
        let scaled: Vec<_> = x.iter().map(|m| m * Complex64::new(1.1, 0.0)).collect();
        assert!((compute_nmse(&scaled, &x).unwrap() + 20.0).abs() < 1e-9);
        assert!(matches!(compute_nmse(&x, &zero), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn nmse_pools_over_subcarriers() {
        let truth = vec![stack(&[1.0])[0].clone(), stack(&[3.0])[0].clone()];
        let est = vec![stack(&[0.0])[0].clone(), stack(&[3.0])[0].clone()];
        let expected = 10.0 * (2.0f64 / 20.0).log10();
        assert!((compute_nmse(&est, &truth).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
