//! Evaluation quantities: subspace distance, interference ratio, and the
//! affine-composition checks on learned maps.

use serde::{Deserialize, Serialize};

use crate::error::{NmcaError, Result};
use crate::nmca::NmcaModel;
use crate::numerics::{self, Matrix};
use crate::synth::GroundTruth;

/// Metrics of one trial of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub dist: f64,
    /// `dist(S, B_q f_q(Y_q))` per view, for methods that embed each view.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub view_dists: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scir_db: Option<f64>,
    /// Relative residual of an affine fit to every learned channel
    /// composition, per view.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affine_residuals: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_abs_b: Option<f64>,
    /// Total training loss after every outer iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
}

/// Sine of the largest principal angle between the row spaces of `s` and
/// `u`: `|| (I - Q_s^T Q_s) Q_u^T ||_2` with orthonormal row bases `Q_s`,
/// `Q_u`.
pub fn subspace_distance(s: &Matrix, u: &Matrix) -> Result<f64> {
    if s.ncols() != u.ncols() {
        return Err(NmcaError::Shape(format!("{} vs {} samples", s.ncols(), u.ncols())));
    }
    let qs = numerics::orthonormal_rowspace_basis(&unit_rows(s)?)?;
    let qu = numerics::orthonormal_rowspace_basis(&unit_rows(u)?)?;
    let qut = qu.transpose();
    let residual = &qut - qs.transpose() * (&qs * &qut);
    Ok(numerics::spectral_norm(&residual)?.clamp(0.0, 1.0))
}

/// Rows rescaled to unit norm. The row space is unchanged, and the rank test
/// no longer sees rows of very different scale (for example PCA scores of
/// data with an exploded channel) as dependent.
fn unit_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(NmcaError::RankDeficient(format!("row {i} has norm {norm}")));
        }
        row /= norm;
    }
    Ok(out)
}

/// Shared-to-interference ratio in dB:
/// `10 log10( (||S||_F^2 / K) / ((1/Q) sum_q ||C_q||_F^2 / R_q) )`.
pub fn measured_scir(shared: &Matrix, private: &[Matrix]) -> Result<f64> {
    let k = shared.nrows();
    if k == 0 || private.is_empty() {
        return Err(NmcaError::DegenerateInput("SCIR needs shared and view-specific components".into()));
    }
    let signal = shared.norm_squared() / k as f64;
    let mut interference = 0.0;
    for c in private {
        if c.nrows() == 0 {
            return Err(NmcaError::DegenerateInput("a view has no view-specific components".into()));
        }
        interference += c.norm_squared() / c.nrows() as f64;
    }
    interference /= private.len() as f64;
    if !(signal > 0.0) || !(interference > 0.0) {
        return Err(NmcaError::DegenerateInput("zero-energy components".into()));
    }
    Ok(10.0 * (signal / interference).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS of the fit residual divided by the standard deviation of `ys`.
    pub rel_residual: f64,
}

/// Least-squares fit `ys ≈ slope * xs + intercept`.
pub fn affine_fit_residual(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return Err(NmcaError::DegenerateInput(format!("need >= 3 paired points, got {n} and {}", ys.len())));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(NmcaError::DegenerateInput("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let rel_residual = if syy > 0.0 {
        (sse / syy).sqrt()
    } else if sse == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(AffineFit { slope, intercept, rel_residual })
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Evaluates the composition `f_i ∘ g_i` of the learned de-distortion and
/// the true distortion of channel `channel` in view `q`, on `grid_size`
/// evenly spaced points between the 1st and 99th percentiles of that
/// channel's realized pre-distortion values.
pub fn composition_probe(
    model: &NmcaModel,
    truth: Option<&GroundTruth>,
    q: usize,
    channel: usize,
    grid_size: usize,
) -> Result<Vec<(f64, f64)>> {
    let truth = truth.ok_or(NmcaError::MissingGroundTruth)?;
    if q >= truth.num_views() || channel >= truth.distortions[q].len() {
        return Err(NmcaError::Shape(format!("no channel {channel} in view {q}")));
    }
    if grid_size < 2 {
        return Err(NmcaError::InvalidConfig("grid_size must be at least 2".into()));
    }
    let pre = truth.pre_distortion(q);
    let mut values: Vec<f64> = pre.row(channel).iter().copied().collect();
    values.sort_by(f64::total_cmp);
    let lo = percentile(&values, 0.01);
    let hi = percentile(&values, 0.99);
    if !(hi > lo) {
        return Err(NmcaError::DegenerateInput("channel has no spread".into()));
    }
    let g = truth.distortions[q][channel];
    (0..grid_size)
        .map(|j| {
            let x = lo + (hi - lo) * j as f64 / (grid_size - 1) as f64;
            Ok((x, model.f_channel(q, channel, g.apply(x)?)?))
        })
        .collect()
}

/// Affine-fit residual of every channel's composition probe.
pub fn composition_residuals(model: &NmcaModel, truth: &GroundTruth, grid_size: usize) -> Result<Vec<Vec<f64>>> {
    (0..truth.num_views())
        .map(|q| {
            (0..truth.distortions[q].len())
                .map(|i| {
                    let probe = composition_probe(model, Some(truth), q, i, grid_size)?;
                    let (xs, ys): (Vec<f64>, Vec<f64>) = probe.into_iter().unzip();
                    Ok(affine_fit_residual(&xs, &ys)?.rel_residual)
                })
                .collect()
        })
        .collect()
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmca::NmcaModel;
    use crate::synth::{generate_views, DistortionKind, SynthConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Principal angles from the singular values of `Q_s Q_u^T`.
    fn largest_angle_sine(s: &Matrix, u: &Matrix) -> f64 {
        let qs = numerics::orthonormal_rowspace_basis(s).unwrap();
        let qu = numerics::orthonormal_rowspace_basis(u).unwrap();
        let cosines = numerics::svd(&(&qs * qu.transpose())).unwrap().d;
        let min_cos = cosines.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
        (1.0 - min_cos * min_cos).max(0.0).sqrt()
    }

    #[test]
    fn distance_cases() {
        let s = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, -1.0, 0.5, 1.0, 0.0, 3.0]);
        assert!(subspace_distance(&s, &s).unwrap() < 1e-10);
        let e1 = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let e2 = Matrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        assert!((subspace_distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        let a = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let b = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!((subspace_distance(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(subspace_distance(&Matrix::zeros(1, 3), &e1), Err(NmcaError::RankDeficient(_))));
        let twice = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(subspace_distance(&twice, &e1), Err(NmcaError::RankDeficient(_))));
    }

    #[test]
    fn distance_handles_rows_of_very_different_scale() {
        let s = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let u = Matrix::from_row_slice(2, 3, &[1e14, 0.0, 0.0, 0.0, 1e-3, 0.0]);
        assert!(subspace_distance(&s, &u).unwrap() < 1e-12);
    }

    #[test]
    fn distance_ignores_nonsingular_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let s = random(3, 40, &mut rng);
            let theta = random(3, 3, &mut rng) + Matrix::identity(3, 3) * 0.5;
            if theta.determinant().abs() < 1e-3 {
                continue;
            }
            assert!(subspace_distance(&s, &(&theta * &s)).unwrap() < 1e-10);
        }
    }

    #[test]
    fn distance_matches_principal_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = random(2, 30, &mut rng);
            let u = &s + random(2, 30, &mut rng) * 0.3;
            let d = subspace_distance(&s, &u).unwrap();
            assert!((d - largest_angle_sine(&s, &u)).abs() < 1e-8);
            // Orthonormal re-basing leaves the value unchanged.
            let qu = numerics::orthonormal_rowspace_basis(&u).unwrap();
            assert!((subspace_distance(&s, &qu).unwrap() - d).abs() < 1e-10);
            let qs = numerics::orthonormal_rowspace_basis(&s).unwrap();
            assert!((subspace_distance(&qs, &u).unwrap() - d).abs() < 1e-10);
        }
    }

    #[test]
    fn scir_cases() {
        let s = Matrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let c = Matrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        assert!(measured_scir(&s, std::slice::from_ref(&c)).unwrap().abs() < 1e-12);
        let louder = measured_scir(&s, &[&c * 10.0]).unwrap();
        assert!((louder + 20.0).abs() < 1e-12);
        assert!(matches!(measured_scir(&s, &[Matrix::zeros(1, 2)]), Err(NmcaError::DegenerateInput(_))));
        assert!(matches!(measured_scir(&Matrix::zeros(1, 2), &[c]), Err(NmcaError::DegenerateInput(_))));
    }

    #[test]
    fn scir_ignores_view_order() {
        let t = generate_views(&SynthConfig::benchmark(3)).unwrap().truth.unwrap();
        let forward = measured_scir(&t.shared, &t.private).unwrap();
        let reversed: Vec<Matrix> = t.private.iter().rev().cloned().collect();
        assert!((measured_scir(&t.shared, &reversed).unwrap() - forward).abs() < 1e-12);
    }

    #[test]
    fn affine_fit_cases() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = affine_fit_residual(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12 && fit.rel_residual < 1e-12);

        // Symmetric grid: x^2 is uncorrelated with x, so the best line is the mean.
        let xs: Vec<f64> = (0..201).map(|i| -1.0 + i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let fit = affine_fit_residual(&xs, &ys).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.rel_residual - 1.0).abs() < 1e-6);

        assert!(affine_fit_residual(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(affine_fit_residual(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert_eq!(affine_fit_residual(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap().rel_residual, 0.0);
    }

    #[test]
    fn probe_of_identity_pipeline() {
        let mut cfg = SynthConfig::benchmark(1);
        cfg.samples = 200;
        for v in &mut cfg.views {
            v.distortions = vec![DistortionKind::Identity; 3];
        }
        let data = generate_views(&cfg).unwrap();
        let model = NmcaModel::identity(vec![Matrix::identity(2, 3); 2], Matrix::zeros(2, 200));
        let probe = composition_probe(&model, data.truth.as_ref(), 1, 2, 200).unwrap();
        assert_eq!(probe.len(), 200);
        assert!(probe.windows(2).all(|w| w[1].0 > w[0].0));
        assert!(probe.iter().all(|(x, h)| (x - h).abs() < 1e-12));
        assert!(matches!(composition_probe(&model, None, 0, 0, 10), Err(NmcaError::MissingGroundTruth)));
    }

    #[test]
    fn raw_sigmoid_distortion_is_not_affine() {
        // Seed 4 mixes this channel over roughly [-3.5, 2.2], well into the
        // sigmoid's curved region.
        let data = generate_views(&SynthConfig::benchmark(4)).unwrap();
        let model = NmcaModel::identity(vec![Matrix::identity(2, 3); 2], Matrix::zeros(2, 1000));
        let residuals = composition_residuals(&model, data.truth.as_ref().unwrap(), 200).unwrap();
        assert!(residuals[0][0] > 0.1, "{residuals:?}");
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    proptest! {
        #[test]
        fn distance_in_unit_interval(seed in any::<u64>(), k in 1usize..4, extra in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random(k, k + extra, &mut rng);
            let u = random(k, k + extra, &mut rng);
            let d = subspace_distance(&s, &u).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
