use crate::error::{NmcaError, Result};
use crate::numerics::{self, Matrix};

/// Closest point to `z` (in Frobenius norm) among `K x N` matrices with
/// `(1/N) U U^T = I` and `U 1 = 0`: `sqrt(N) P Q^T` from the thin SVD of
/// the row-centred `z`.
pub fn procrustes_update(z: &Matrix) -> Result<Matrix> {
    polar_factor(&numerics::center_rows(z))
}

/// Same projection with only the whitening constraint `(1/N) U U^T = I`.
pub fn whitened_update(z: &Matrix) -> Result<Matrix> {
    polar_factor(z)
}

fn polar_factor(zw: &Matrix) -> Result<Matrix> {
    let (k, n) = zw.shape();
    if k > n {
        return Err(NmcaError::RankDeficient(format!("K = {k} exceeds N = {n}")));
    }
    let s = numerics::svd(zw)?;
    let largest = s.d[0];
    if !(largest > 0.0) || s.d[k - 1] <= numerics::RANK_TOL * largest {
        return Err(NmcaError::RankDeficient(format!(
            "consensus matrix has rank below K = {k} (singular values {:?})",
            s.d.as_slice()
        )));
    }
    Ok((&s.p * s.q.transpose()) * (n as f64).sqrt())
}

/// Worst violations of the two latent constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintReport {
    /// `max |(1/N) U U^T - I|`
    pub whitening: f64,
    /// `max |U 1|`
    pub mean: f64,
}

impl ConstraintReport {
    pub fn check(u: &Matrix) -> Self {
        let n = u.ncols() as f64;
        let gram = (u * u.transpose()) / n;
        let whitening = (gram - Matrix::identity(u.nrows(), u.nrows())).amax();
        let mean = u.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        ConstraintReport { whitening, mean }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feasible_point_is_fixed() {
        let z = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let u = procrustes_update(&z).unwrap();
        assert!((u - z).amax() < 1e-14);
    }

    #[test]
    fn three_point_hand_case() {
        // Centred row is [-1, 0, 1]; scaling to unit mean square gives ±sqrt(3/2).
        let u = procrustes_update(&Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        let r = 1.5f64.sqrt();
        assert!((u[(0, 0)] + r).abs() < 1e-12 && u[(0, 1)].abs() < 1e-12 && (u[(0, 2)] - r).abs() < 1e-12);
    }

    #[test]
    fn constant_row_is_rank_deficient() {
        let z = Matrix::from_row_slice(1, 3, &[5.0, 5.0, 5.0]);
        assert!(matches!(procrustes_update(&z), Err(NmcaError::RankDeficient(_))));
        // Without centring the constant row is a valid direction.
        let u = whitened_update(&z).unwrap();
        assert!((u.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_components() {
        assert!(procrustes_update(&Matrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 7.0])).is_err());
    }

    #[test]
    fn random_updates_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, n) in [(1, 5), (2, 50), (4, 300)] {
            let z = Matrix::from_fn(k, n, |_, _| rng.random_range(-2.0..2.0) + 3.0);
            let report = ConstraintReport::check(&procrustes_update(&z).unwrap());
            assert!(report.whitening < 1e-8 && report.mean < 1e-8);
            let report = ConstraintReport::check(&whitened_update(&z).unwrap());
            assert!(report.whitening < 1e-8);
        }
    }
}
