use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{MapKind, TrainConfig};
use super::procrustes::{procrustes_update, whitened_update};
use crate::error::{NmcaError, Result};
use crate::neural::{BankTape, ChannelMapBank};
use crate::numerics::{serde_rows, serde_rows_vec, Matrix};
use crate::synth::{sample_gaussian_matrix_with_rng, MultiviewDataset};

/// Per-channel affine standardization `(y - mean) / scale` applied to a view
/// before it enters the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl ChannelScaler {
    pub fn identity(dim: usize) -> Self {
        ChannelScaler { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Mean and population standard deviation of every channel (row).
    pub fn fit(view: &Matrix) -> Self {
        let mut mean = Vec::with_capacity(view.nrows());
        let mut scale = Vec::with_capacity(view.nrows());
        for row in view.row_iter() {
            let mu = row.mean();
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / row.len() as f64;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        ChannelScaler { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply(&self, channel: usize, y: f64) -> f64 {
        (y - self.mean[channel]) / self.scale[channel]
    }

    #[inline]
    pub fn invert(&self, channel: usize, z: f64) -> f64 {
        z * self.scale[channel] + self.mean[channel]
    }

    /// Standardized copy of an `M x N` view, returned sample-major
    /// (`N x M`, i.e. the column-major buffer of the standardized view).
    pub fn sample_major(&self, view: &Matrix) -> Result<Vec<f64>> {
        if view.nrows() != self.dim() {
            return Err(NmcaError::Shape(format!(
                "view has {} channels, model expects {}",
                view.nrows(),
                self.dim()
            )));
        }
        let m = self.dim();
        Ok(view.as_slice().iter().enumerate().map(|(idx, &y)| self.apply(idx % m, y)).collect())
    }
}

/// Learnable state: de-distortion maps `f`, re-distortion maps `g`, the
/// linear operators `B` (`K x M_q`) and the shared latent matrix `U`
/// (`K x N`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmcaModel {
    pub f_banks: Vec<ChannelMapBank>,
    pub g_banks: Vec<ChannelMapBank>,
    #[serde(rename = "B", with = "serde_rows_vec")]
    pub b: Vec<Matrix>,
    #[serde(rename = "U", with = "serde_rows")]
    pub u: Matrix,
    pub scalers: Vec<ChannelScaler>,
}

impl NmcaModel {
    /// Identity maps and identity scalers around the given operators.
    pub fn identity(b: Vec<Matrix>, u: Matrix) -> Self {
        let dims: Vec<usize> = b.iter().map(Matrix::ncols).collect();
        NmcaModel {
            f_banks: dims.iter().map(|&m| ChannelMapBank::identity(m)).collect(),
            g_banks: dims.iter().map(|&m| ChannelMapBank::identity(m)).collect(),
            scalers: dims.iter().map(|&m| ChannelScaler::identity(m)).collect(),
            b,
            u,
        }
    }

    pub fn num_views(&self) -> usize {
        self.b.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn samples(&self) -> usize {
        self.u.ncols()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.f_banks.iter().map(|b| b.dim).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.num_views();
        if self.f_banks.len() != q || self.g_banks.len() != q || self.scalers.len() != q {
            return Err(NmcaError::Shape("per-view model parts disagree in count".into()));
        }
        for v in 0..q {
            let m = self.f_banks[v].dim;
            self.f_banks[v].validate()?;
            self.g_banks[v].validate()?;
            if self.g_banks[v].dim != m || self.scalers[v].dim() != m || self.b[v].ncols() != m {
                return Err(NmcaError::Shape(format!("view {v}: inconsistent channel counts")));
            }
            if self.b[v].nrows() != self.latent_dim() {
                return Err(NmcaError::Shape(format!("view {v}: B has {} rows, U has {}", self.b[v].nrows(), self.latent_dim())));
            }
        }
        Ok(())
    }

    fn check_view(&self, view: &Matrix, q: usize) -> Result<()> {
        if q >= self.num_views() {
            return Err(NmcaError::Shape(format!("view index {q} out of range ({} views)", self.num_views())));
        }
        if view.nrows() != self.f_banks[q].dim {
            return Err(NmcaError::Shape(format!(
                "view {q} has {} channels, model expects {}",
                view.nrows(),
                self.f_banks[q].dim
            )));
        }
        Ok(())
    }

    /// `f_q` applied to every column of `view`, as an `M_q x N` matrix.
    pub fn features(&self, view: &Matrix, q: usize) -> Result<Matrix> {
        self.check_view(view, q)?;
        let input = self.scalers[q].sample_major(view)?;
        let mut tape = BankTape::default();
        self.f_banks[q].forward_batch(&input, view.ncols(), &mut tape)?;
        Ok(Matrix::from_column_slice(view.nrows(), view.ncols(), &tape.out))
    }

    /// `g_q` applied to the columns of a feature matrix, mapped back to the
    /// original units of view `q`.
    pub fn redistort(&self, features: &Matrix, q: usize) -> Result<Matrix> {
        let m = self.g_banks[q].dim;
        let mut tape = BankTape::default();
        self.g_banks[q].forward_batch(features.as_slice(), features.ncols(), &mut tape)?;
        let scaler = &self.scalers[q];
        let out: Vec<f64> = tape.out.iter().enumerate().map(|(idx, &z)| scaler.invert(idx % m, z)).collect();
        Ok(Matrix::from_column_slice(m, features.ncols(), &out))
    }

    /// Learned de-distortion of one channel, in the original units of the view.
    pub fn f_channel(&self, q: usize, channel: usize, y: f64) -> Result<f64> {
        if q >= self.num_views() || channel >= self.f_banks[q].dim {
            return Err(NmcaError::Shape(format!("no channel {channel} in view {q}")));
        }
        self.f_banks[q].channel_eval(channel, self.scalers[q].apply(channel, y))
    }

    /// Smallest absolute entry over all `B` matrices.
    pub fn min_abs_b(&self) -> f64 {
        self.b.iter().flat_map(|b| b.iter()).fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }

    /// Replaces `U` by `theta U` and every `B_q` by `theta B_q`.
    pub fn transform_latent(&mut self, theta: &Matrix) -> Result<()> {
        if theta.nrows() != self.latent_dim() || theta.ncols() != self.latent_dim() {
            return Err(NmcaError::Shape("latent transform must be K x K".into()));
        }
        self.u = theta * &self.u;
        for b in &mut self.b {
            *b = theta * &*b;
        }
        Ok(())
    }

    /// Network and `B` parameters, in the order of [`Gradients::slices`](super::Gradients::slices).
    pub fn theta_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.f_banks
            .iter_mut()
            .flat_map(ChannelMapBank::param_slices_mut)
            .chain(self.g_banks.iter_mut().flat_map(ChannelMapBank::param_slices_mut))
            .chain(self.b.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn theta_len(&self) -> usize {
        self.f_banks.iter().chain(&self.g_banks).map(ChannelMapBank::num_params).sum::<usize>()
            + self.b.iter().map(|b| b.len()).sum::<usize>()
    }
}

/// `(1/Q) sum_q B_q F_q` over the full data set.
pub(crate) fn consensus(model: &NmcaModel, projections: &[Matrix]) -> Matrix {
    let mut z = Matrix::zeros(model.latent_dim(), model.samples());
    for p in projections {
        z += p;
    }
    z / projections.len() as f64
}

/// Fresh model: networks from the configured architecture, `B_q` with
/// i.i.d. `N(0, 1/M_q)` entries, and `U` projected from the initial
/// consensus `(1/Q) sum_q B_q F_q`.
pub fn model_init(dataset: &MultiviewDataset, cfg: &TrainConfig) -> Result<NmcaModel> {
    let n = dataset.samples();
    cfg.validate(n)?;
    let k = cfg.latent_dim;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut f_banks = Vec::new();
    let mut g_banks = Vec::new();
    let mut b = Vec::new();
    let mut scalers = Vec::new();
    for view in &dataset.views {
        let m = view.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let init = |hidden: &[usize], rng: &mut ChaCha8Rng| match cfg.map_kind {
            MapKind::PerChannel => ChannelMapBank::init_per_channel(m, hidden, cfg.activation, rng),
            MapKind::Mimo => ChannelMapBank::init_mimo(m, hidden, cfg.activation, rng),
        };
        f_banks.push(init(&cfg.f_hidden, &mut rng)?);
        g_banks.push(init(&cfg.g_hidden, &mut rng)?);
        b.push(sample_gaussian_matrix_with_rng(k, m, 0.0, 1.0 / (m as f64).sqrt(), &mut rng)?);
        scalers.push(if cfg.standardize { ChannelScaler::fit(view) } else { ChannelScaler::identity(m) });
    }

    let mut model = NmcaModel { f_banks, g_banks, b, u: Matrix::zeros(k, n), scalers };
    let projections = dataset
        .views
        .iter()
        .enumerate()
        .map(|(q, y)| Ok(&model.b[q] * model.features(y, q)?))
        .collect::<Result<Vec<_>>>()?;
    let z = consensus(&model, &projections);
    model.u = if cfg.zero_mean { procrustes_update(&z)? } else { whitened_update(&z)? };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmca::ConstraintReport;
    use crate::synth::{generate_views, SynthConfig};

    #[test]
    fn scaler_roundtrip_and_stats() {
        let view = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0]);
        let s = ChannelScaler::fit(&view);
        assert_eq!(s.mean, vec![2.5, 5.0]);
        assert_eq!(s.scale[1], 1.0);
        let sm = s.sample_major(&view).unwrap();
        assert_eq!(sm.len(), 8);
        // Sample-major: entry (l, i) at l * M + i.
        assert!((sm[2 * 3] - (4.0 - 2.5) / s.scale[0]).abs() < 1e-15);
        assert!((s.invert(0, s.apply(0, 3.7)) - 3.7).abs() < 1e-15);
    }

    #[test]
    fn init_shapes_and_constraints() {
        let data = generate_views(&SynthConfig::benchmark(2)).unwrap();
        let cfg = TrainConfig { f_hidden: vec![8], g_hidden: vec![8], ..TrainConfig::default() };
        let model = model_init(&data, &cfg).unwrap();
        assert_eq!(model.b[0].shape(), (2, 3));
        assert_eq!(model.b[1].shape(), (2, 3));
        assert_eq!(model.u.shape(), (2, 1000));
        let report = ConstraintReport::check(&model.u);
        assert!(report.whitening < 1e-8 && report.mean < 1e-8, "{report:?}");
        assert_eq!(model, model_init(&data, &cfg).unwrap());
        model.validate().unwrap();
    }

    #[test]
    fn mimo_init() {
        let data = generate_views(&SynthConfig::benchmark(2)).unwrap();
        let cfg = TrainConfig { map_kind: MapKind::Mimo, f_hidden: vec![16, 16], g_hidden: vec![16], ..TrainConfig::default() };
        let model = model_init(&data, &cfg).unwrap();
        assert!(matches!(model.f_banks[0].kind, crate::neural::BankKind::Mimo { .. }));
        assert_eq!(model.f_banks[0].nets()[0].layers.len(), 3);
    }

    #[test]
    fn transform_latent_applies_to_u_and_b() {
        let mut model = NmcaModel::identity(vec![Matrix::identity(2, 2)], Matrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]));
        let theta = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        model.transform_latent(&theta).unwrap();
        assert_eq!(model.b[0], theta);
        assert_eq!(model.u, Matrix::from_row_slice(2, 2, &[2.0, -2.0, 2.0, -2.0]));
    }

    #[test]
    fn model_json_roundtrip() {
        let data = generate_views(&SynthConfig { samples: 20, ..SynthConfig::benchmark(1) }).unwrap();
        let cfg = TrainConfig { f_hidden: vec![3], g_hidden: vec![3], ..TrainConfig::default() };
        let model = model_init(&data, &cfg).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: NmcaModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.u, model.u);
        assert_eq!(back.f_banks, model.f_banks);
        assert!(json.contains("\"B\":[[["));
    }
}
