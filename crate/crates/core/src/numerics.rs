//! Dense matrix primitives.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. The SVD is backed by
//! nalgebra's Golub-Kahan implementation; the remaining routines are thin
//! layers on top of it with the rank cutoffs the rest of the crate relies on.

use nalgebra::{DMatrix, DVector};

use crate::error::{NmcaError, Result};

pub type Matrix = DMatrix<f64>;

/// Relative cutoff below which a singular value counts as zero when
/// extracting a row-space basis.
pub const RANK_TOL: f64 = 1e-10;

/// Relative cutoff used by [`pinv`].
pub const PINV_TOL: f64 = 1e-12;

const SVD_MAX_ITER: usize = 10_000;

/// Thin singular value decomposition `m = p * diag(d) * q^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors, `rows x r` with `r = min(rows, cols)`.
    pub p: Matrix,
    /// Singular values, non-increasing.
    pub d: DVector<f64>,
    /// Right singular vectors, `cols x r`.
    pub q: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        &self.p * Matrix::from_diagonal(&self.d) * self.q.transpose()
    }
}

/// Builds a matrix from row-major data, rejecting empty shapes and
/// non-finite entries.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(NmcaError::Shape(format!("empty matrix {rows}x{cols}")));
    }
    if data.len() != rows * cols {
        return Err(NmcaError::Shape(format!(
            "{} entries for a {rows}x{cols} matrix",
            data.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, data);
    ensure_finite(&m)?;
    Ok(m)
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(NmcaError::Domain(format!(
            "non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    ensure_finite(m)?;
    let decomposition = nalgebra::SVD::try_new(m.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            NmcaError::NumericalFailure(format!(
                "SVD of {}x{} matrix did not converge",
                m.nrows(),
                m.ncols()
            ))
        })?;
    let u = decomposition.u.expect("left vectors requested");
    let v_t = decomposition.v_t.expect("right vectors requested");
    let values = decomposition.singular_values;

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let r = order.len();
    let mut p = Matrix::zeros(m.nrows(), r);
    let mut q = Matrix::zeros(m.ncols(), r);
    let mut d = DVector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        p.set_column(dst, &u.column(src));
        q.set_column(dst, &v_t.row(src).transpose());
        d[dst] = values[src].max(0.0);
    }
    Ok(SvdResult { p, d, q })
}

pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.d.iter().copied().fold(0.0, f64::max))
}

/// Returns a matrix with the same number of rows as `m` whose rows are
/// orthonormal and span the row space of `m`.
pub fn orthonormal_rowspace_basis(m: &Matrix) -> Result<Matrix> {
    let s = svd(m)?;
    let k = m.nrows();
    let largest = s.d.iter().next().copied().unwrap_or(0.0);
    if s.d.len() < k || largest == 0.0 || s.d[k - 1] <= RANK_TOL * largest {
        return Err(NmcaError::RankDeficient(format!(
            "{}x{} matrix does not have full row rank",
            m.nrows(),
            m.ncols()
        )));
    }
    // Rows of Q^T restricted to the first k right singular vectors.
    Ok(s.q.columns(0, k).transpose())
}

/// Moore-Penrose pseudo-inverse.
pub fn pinv(m: &Matrix) -> Result<Matrix> {
    let s = svd(m)?;
    let largest = s.d.iter().next().copied().unwrap_or(0.0);
    let cutoff = PINV_TOL * largest;
    let inv_d = s.d.map(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 });
    Ok(&s.q * Matrix::from_diagonal(&inv_d) * s.p.transpose())
}

/// Subtracts each row's mean from that row.
pub fn center_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

pub fn row_means(m: &Matrix) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.mean()))
}

/// Serde adapter storing a matrix as an array of rows.
pub mod serde_rows {
    use super::Matrix;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        super::from_nested(&rows).map_err(D::Error::custom)
    }
}

/// Serde adapter for a list of matrices, each stored as an array of rows.
pub mod serde_rows_vec {
    use super::Matrix;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ms.iter().map(|m| {
            m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>()
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        all.iter().map(|rows| super::from_nested(rows).map_err(D::Error::custom)).collect()
    }
}

/// Builds a matrix from a list of equal-length rows.
pub fn from_nested(rows: &[Vec<f64>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(NmcaError::Shape(format!("row {bad} has {} entries, expected {cols}", rows[bad].len())));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    from_row_major(rows.len(), cols, &flat)
}
