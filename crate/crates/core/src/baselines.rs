//! Linear reference methods: two-view CCA and single-view PCA.

use crate::error::{NmcaError, Result};
use crate::numerics::{self, Matrix, RANK_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct CcaSolution {
    /// `K x M_q` projection per view; `b[q] * centred(Y_q)` has identity
    /// sample covariance.
    pub b: Vec<Matrix>,
    /// Canonical correlations, non-increasing.
    pub correlations: Vec<f64>,
    /// Centred, projected views (`K x N` each).
    pub projections: Vec<Matrix>,
}

impl CcaSolution {
    /// Average of the projected views.
    pub fn shared_estimate(&self) -> Matrix {
        (&self.projections[0] + &self.projections[1]) / 2.0
    }
}

/// Inverse square root of a symmetric positive semi-definite covariance,
/// restricted to its numerical range.
fn inverse_sqrt(cov: &Matrix) -> Result<(Matrix, usize)> {
    let eig = cov.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(NmcaError::RankDeficient("view has zero variance".into()));
    }
    let m = cov.nrows();
    let mut out = Matrix::zeros(m, m);
    let mut rank = 0;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > RANK_TOL * top {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / ev.sqrt();
            rank += 1;
        }
    }
    Ok((out, rank))
}

/// Two-view linear CCA with `k` components.
pub fn linear_cca(y1: &Matrix, y2: &Matrix, k: usize) -> Result<CcaSolution> {
    let n = y1.ncols();
    if y2.ncols() != n {
        return Err(NmcaError::Shape(format!("views have {n} and {} samples", y2.ncols())));
    }
    if k == 0 || n < 2 {
        return Err(NmcaError::InvalidConfig("CCA needs k >= 1 and at least two samples".into()));
    }
    numerics::ensure_finite(y1)?;
    numerics::ensure_finite(y2)?;
    let c1 = numerics::center_rows(y1);
    let c2 = numerics::center_rows(y2);
    let nf = n as f64;
    let ridge = |c: &Matrix| {
        let mut cov = c * c.transpose() / nf;
        let r = 1e-10 * cov.trace() / cov.nrows() as f64;
        for i in 0..cov.nrows() {
            cov[(i, i)] += r;
        }
        cov
    };
    let (w1, r1) = inverse_sqrt(&ridge(&c1))?;
    let (w2, r2) = inverse_sqrt(&ridge(&c2))?;
    if k > r1.min(r2) {
        return Err(NmcaError::RankDeficient(format!("k = {k} exceeds view ranks {r1}, {r2}")));
    }
    let cross = &w1 * (&c1 * c2.transpose() / nf) * &w2;
    let svd = numerics::svd(&cross)?;
    let a1 = svd.p.columns(0, k).transpose() * &w1;
    let a2 = svd.q.columns(0, k).transpose() * &w2;
    let correlations = svd.d.iter().take(k).map(|d| d.clamp(0.0, 1.0)).collect();
    let projections = vec![&a1 * &c1, &a2 * &c2];
    Ok(CcaSolution { b: vec![a1, a2], correlations, projections })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSolution {
    /// Orthonormal principal directions as rows (`K x M`).
    pub components: Matrix,
    /// Variance along each direction, non-increasing.
    pub variances: Vec<f64>,
    /// Centred data projected on the components (`K x N`).
    pub scores: Matrix,
}

impl PcaSolution {
    pub fn captured_fraction(&self, total_variance: f64) -> f64 {
        self.variances.iter().sum::<f64>() / total_variance
    }
}

/// Projection of `y` on its top `k` principal directions.
pub fn pca_project(y: &Matrix, k: usize) -> Result<PcaSolution> {
    let m = y.nrows();
    if k == 0 || k > m {
        return Err(NmcaError::InvalidConfig(format!("k = {k} must be in 1..={m}")));
    }
    numerics::ensure_finite(y)?;
    let c = numerics::center_rows(y);
    let n = y.ncols() as f64;
    let svd = numerics::svd(&c)?;
    let components = svd.p.columns(0, k).transpose();
    let variances = svd.d.iter().take(k).map(|d| d * d / n).collect();
    let scores = &components * &c;
    Ok(PcaSolution { components, variances, scores })
}

/// Smallest `k` whose leading components capture at least `fraction` of
/// the total variance.
pub fn pca_energy(y: &Matrix, fraction: f64) -> Result<PcaSolution> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(NmcaError::InvalidConfig(format!("energy fraction {fraction} is not in (0, 1]")));
    }
    numerics::ensure_finite(y)?;
    let c = numerics::center_rows(y);
    let d = numerics::svd(&c)?.d;
    let energy: Vec<f64> = d.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if !(total > 0.0) {
        return Err(NmcaError::RankDeficient("view has zero variance".into()));
    }
    let mut acc = 0.0;
    let mut k = energy.len();
    for (i, e) in energy.iter().enumerate() {
        acc += e;
        if acc >= fraction * total * (1.0 - 1e-12) {
            k = i + 1;
            break;
        }
    }
    pca_project(y, k.max(1))
}
