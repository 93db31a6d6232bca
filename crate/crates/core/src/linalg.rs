//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for treating tiny negative eigenvalues as zero.
const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn eig_scale(vals: &Vector) -> f64 {
    vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE)
}

/// Symmetric square root of a PSD matrix. Eigenvalues down to
/// `-1e-10 * max|lambda|` are clipped to zero.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig_scale(&eig.eigenvalues);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd { min_eig: min });
    }
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn inv_sqrt(m: &Mat) -> Result<Mat> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig_scale(&eig.eigenvalues);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::NotPsd { min_eig: min });
    }
    if min <= 1e-12 * scale {
        return Err(Error::Singular);
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * Mat::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Sample covariance (divisor `m - 1`) of the rows given as slices. Sums are
/// shifted by the first row, so identical rows give exactly zero.
pub fn sample_covariance<'a, I>(rows: I, dim: usize) -> Result<Mat>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let m = rows.len();
    if m < 2 {
        return Err(Error::EmptySample);
    }
    let shift = rows[0];
    let mut s1 = vec![0.0; dim];
    let mut s2 = Mat::zeros(dim, dim);
    let mut dev = vec![0.0; dim];
    for r in &rows {
        if r.len() != dim || shift.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        for i in 0..dim {
            dev[i] = r[i] - shift[i];
            s1[i] += dev[i];
        }
        for i in 0..dim {
            for j in 0..dim {
                s2[(i, j)] += dev[i] * dev[j];
            }
        }
    }
    let mf = m as f64;
    for i in 0..dim {
        for j in 0..dim {
            s2[(i, j)] -= s1[i] * s1[j] / mf;
        }
    }
    Ok(s2 / (mf - 1.0))
}

/// Second moment about a fixed center (divisor `m`).
pub fn centered_second_moment<'a, I>(rows: I, center: &[f64]) -> Result<Mat>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let dim = center.len();
    let mut cov = Mat::zeros(dim, dim);
    let mut m = 0usize;
    let mut dev = vec![0.0; dim];
    for r in rows {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        for i in 0..dim {
            dev[i] = r[i] - center[i];
        }
        for i in 0..dim {
            for j in 0..dim {
                cov[(i, j)] += dev[i] * dev[j];
            }
        }
        m += 1;
    }
    if m == 0 {
        return Err(Error::EmptySample);
    }
    Ok(cov / m as f64)
}

/// Relative Frobenius error `|a - b|_F / |b|_F`.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
