//! Connection matrices for decentralized mixing.

use std::path::Path;

use nalgebra::SymmetricEigen;

use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;

/// Tolerance for symmetry and row-sum checks.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Validated symmetric, row-stochastic mixing matrix with its spectrum.
#[derive(Debug, Clone)]
pub struct ConnectionMatrix {
    entries: Mat,
    /// Eigenvalues in descending order.
    eigenvalues: Vec<f64>,
    rho: f64,
}

impl ConnectionMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Mat {
        &self.entries
    }

    /// Second-largest eigenvalue modulus.
    pub fn lambda2(&self) -> f64 {
        self.rho
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Returns `true` when every entry equals `1/K` exactly.
    pub fn is_uniform(&self) -> bool {
        let k = self.size() as f64;
        self.entries.iter().all(|&v| v == 1.0 / k)
    }
}

/// Circulant band: each client averages itself and `bandwidth` neighbors on
/// each side with wrap-around indexing.
pub fn banded_connection(k: usize, bandwidth: usize) -> Result<ConnectionMatrix> {
    if bandwidth == 0 {
        return invalid("bandwidth must be positive");
    }
    let need = 2 * bandwidth + 1;
    if k < need {
        return Err(Error::BandTooWide { k, bandwidth, need });
    }
    let w = 1.0 / need as f64;
    let mut c = Mat::zeros(k, k);
    for i in 0..k {
        for off in 0..need {
            let j = (i + k + off - bandwidth) % k;
            c[(i, j)] = w;
        }
    }
    validate_connection(c)
}

/// `rho * I + (1 - rho) / K * 11^T`.
pub fn rho_mix_connection(k: usize, rho: f64) -> Result<ConnectionMatrix> {
    if k == 0 {
        return invalid("K must be positive");
    }
    if !(0.0..1.0).contains(&rho) {
        return invalid(format!("rho must lie in [0, 1), got {rho}"));
    }
    let off = (1.0 - rho) / k as f64;
    let mut c = Mat::from_element(k, k, off);
    for i in 0..k {
        c[(i, i)] = rho + off;
    }
    validate_connection(c)
}

/// Uniform averaging matrix `11^T / K`.
pub fn uniform_connection(k: usize) -> Result<ConnectionMatrix> {
    if k == 0 {
        return invalid("K must be positive");
    }
    validate_connection(Mat::from_element(k, k, 1.0 / k as f64))
}

pub fn validate_connection(c: Mat) -> Result<ConnectionMatrix> {
    let (rows, cols) = c.shape();
    if rows != cols || rows == 0 {
        return Err(Error::NotSquare { rows, cols });
    }
    let k = rows;
    for i in 0..k {
        for j in 0..k {
            let v = c[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite("connection matrix".into()));
            }
            if v < 0.0 {
                return Err(Error::NegativeEntry { i, j, value: v });
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if (c[(i, j)] - c[(j, i)]).abs() > STRUCTURE_TOL {
                return Err(Error::Asymmetric { i, j, a: c[(i, j)], b: c[(j, i)] });
            }
        }
    }
    for i in 0..k {
        let sum: f64 = c.row(i).iter().sum();
        if (sum - 1.0).abs() > STRUCTURE_TOL {
            return Err(Error::RowSum { row: i, sum });
        }
        if c[(i, i)] <= 0.0 {
            return Err(Error::ZeroDiagonal { i });
        }
    }
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(c.clone()).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    let rho = eigenvalues[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if rho >= 1.0 - 1e-10 {
        return Err(Error::NotConnected { rho });
    }
    Ok(ConnectionMatrix { entries: c, eigenvalues, rho })
}

/// Parses a K x K comma-separated matrix and validates it.
pub fn parse_connection_csv(text: &str) -> Result<ConnectionMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let k = rows.len();
    if k == 0 {
        return Err(Error::NotSquare { rows: 0, cols: 0 });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::NotSquare { rows: k, cols: r.len() });
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    validate_connection(Mat::from_row_slice(k, k, &flat))
}

pub fn load_connection_csv(path: &Path) -> Result<ConnectionMatrix> {
    parse_connection_csv(&std::fs::read_to_string(path)?)
}
