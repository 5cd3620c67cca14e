//! Fixture container for scenarios, observations and detection results.
//!
//! Every complex matrix is stored as
//!
//! ```text
//! { "rows": R, "cols": C, "data": [re00, im00, re01, im01, ...] }
//! ```
//!
//! i.e. row-major order with real and imaginary parts interleaved as 64-bit
//! floats. Stacks of matrices (one per subcarrier) are JSON arrays of such
//! objects. Real matrices use the same layout without the interleaving.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ComplexArray {
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let z = m[(i, j)];
                data.push(z.re);
                data.push(z.im);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "complex array {}x{} carries {} floats",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            let at = 2 * (i * self.cols + j);
            Complex64::new(self.data[at], self.data[at + 1])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealArray {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "real array {}x{} carries {} floats",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// `serde(with = ...)` adapter for `Vec<DMatrix<Complex64>>`.
pub mod complex_stack {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DMatrix<Complex64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let arrays: Vec<ComplexArray> = v.iter().map(ComplexArray::from_matrix).collect();
        arrays.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<DMatrix<Complex64>>, D::Error> {
        let arrays = Vec::<ComplexArray>::deserialize(d)?;
        arrays.iter().map(|a| a.to_matrix().map_err(serde::de::Error::custom)).collect()
    }
}

/// `serde(with = ...)` adapter for a single `DMatrix<f64>`.
pub mod real_matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        RealArray::from_matrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        RealArray::deserialize(d)?.to_matrix().map_err(serde::de::Error::custom)
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
