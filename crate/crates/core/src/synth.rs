//! Synthetic multiview data: shared plus view-specific latent components,
//! linearly mixed per view and then passed through channel-wise invertible
//! distortions.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NmcaError, Result};
use crate::metrics::measured_scir;
use crate::neural::sigmoid;
use crate::numerics::{self, Matrix};

/// Largest |x| accepted by the exponential distortion.
pub const EXP_LIMIT: f64 = 700.0;

/// Channel distortion `g(x)`; every variant is strictly increasing for valid
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionKind {
    /// `a * sigmoid(x) + b * x`
    SigmoidAffine { a: f64, b: f64 },
    /// `a * tanh(x) + b * x`
    TanhAffine { a: f64, b: f64 },
    Exp,
    /// `alpha * x^3 + x`
    CubicAffine { alpha: f64 },
    Identity,
}

impl DistortionKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistortionKind::SigmoidAffine { a, b } | DistortionKind::TanhAffine { a, b } => {
                a.is_finite() && b.is_finite() && a > 0.0 && b >= 0.0
            }
            DistortionKind::CubicAffine { alpha } => alpha.is_finite() && alpha >= 0.0,
            DistortionKind::Exp | DistortionKind::Identity => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NmcaError::InvalidConfig(format!("{self:?} is not strictly increasing")))
        }
    }

    pub fn apply(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(NmcaError::Domain(format!("non-finite distortion input {x}")));
        }
        Ok(match *self {
            DistortionKind::SigmoidAffine { a, b } => a * sigmoid(x) + b * x,
            DistortionKind::TanhAffine { a, b } => a * x.tanh() + b * x,
            DistortionKind::Exp => {
                if x.abs() > EXP_LIMIT {
                    return Err(NmcaError::Domain(format!("exp distortion input {x} exceeds ±{EXP_LIMIT}")));
                }
                x.exp()
            }
            DistortionKind::CubicAffine { alpha } => alpha * x * x * x + x,
            DistortionKind::Identity => x,
        })
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            DistortionKind::SigmoidAffine { a, b } => {
                let s = sigmoid(x);
                a * s * (1.0 - s) + b
            }
            DistortionKind::TanhAffine { a, b } => {
                let t = x.tanh();
                a * (1.0 - t * t) + b
            }
            DistortionKind::Exp => x.exp(),
            DistortionKind::CubicAffine { alpha } => 3.0 * alpha * x * x + 1.0,
            DistortionKind::Identity => 1.0,
        }
    }
}

pub fn distort(kind: DistortionKind, x: f64) -> Result<f64> {
    kind.apply(x)
}

/// The six channel distortions of the two-view parabola benchmark.
pub fn benchmark_distortions() -> [Vec<DistortionKind>; 2] {
    use DistortionKind::*;
    [
        vec![SigmoidAffine { a: 3.0, b: 0.1 }, SigmoidAffine { a: 5.0, b: 0.2 }, Exp],
        vec![TanhAffine { a: 5.0, b: 0.2 }, TanhAffine { a: 2.0, b: 0.1 }, CubicAffine { alpha: 1.0 }],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedKind {
    /// Two components `(x, x^2)` with `x ~ U[-1, 1]`.
    Parabola,
    /// `K` i.i.d. standard normal components.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    /// Number of observed channels `M_q`.
    pub channels: usize,
    /// Number of view-specific components `R_q`.
    pub private_dim: usize,
    pub interference_mean: f64,
    pub interference_std: f64,
    pub distortions: Vec<DistortionKind>,
    /// Optional stacking permutation: row `i` of the latent vector fed to the
    /// mixing matrix is row `permutation[i]` of `[s; c]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub shared_dim: usize,
    pub shared_kind: SharedKind,
    #[serde(default = "default_mixing_std")]
    pub mixing_std: f64,
    pub views: Vec<ViewSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scir_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_mixing_std() -> f64 {
    1.0
}

impl SynthConfig {
    /// Two views of three channels each: a centred parabola as the shared
    /// pair, one Gaussian interference per view (means -0.5 / 0.8, standard
    /// deviations 1.0 / 1.5) and the six benchmark distortions.
    pub fn benchmark(seed: u64) -> Self {
        let [d1, d2] = benchmark_distortions();
        SynthConfig {
            samples: 1000,
            shared_dim: 2,
            shared_kind: SharedKind::Parabola,
            mixing_std: 1.0,
            views: vec![
                ViewSpec {
                    channels: 3,
                    private_dim: 1,
                    interference_mean: -0.5,
                    interference_std: 1.0,
                    distortions: d1,
                    permutation: None,
                },
                ViewSpec {
                    channels: 3,
                    private_dim: 1,
                    interference_mean: 0.8,
                    interference_std: 1.5,
                    distortions: d2,
                    permutation: None,
                },
            ],
            target_scir_db: None,
            seed,
        }
    }

    /// Gaussian shared and private components with the same `alpha x^3 + x`
    /// distortion on every channel (`K = 3`, `R = 2`, `M = 5`).
    pub fn cubic_sweep(alpha: f64, seed: u64) -> Self {
        let view = ViewSpec {
            channels: 5,
            private_dim: 2,
            interference_mean: 0.0,
            interference_std: 1.0,
            distortions: vec![DistortionKind::CubicAffine { alpha }; 5],
            permutation: None,
        };
        SynthConfig {
            samples: 1000,
            shared_dim: 3,
            shared_kind: SharedKind::Gaussian,
            mixing_std: 1.0,
            views: vec![view.clone(), view],
            target_scir_db: None,
            seed,
        }
    }

    /// Five channels per view, `K` Gaussian shared components and `5 - K`
    /// Gaussian private components; channel distortions cycle through the
    /// saturating benchmark functions.
    pub fn latent_dim_sweep(shared_dim: usize, seed: u64) -> Self {
        use DistortionKind::*;
        let channels: usize = 5;
        let private_dim = channels.saturating_sub(shared_dim);
        let pool = [
            SigmoidAffine { a: 3.0, b: 0.1 },
            TanhAffine { a: 5.0, b: 0.2 },
            SigmoidAffine { a: 5.0, b: 0.2 },
            TanhAffine { a: 2.0, b: 0.1 },
            CubicAffine { alpha: 0.1 },
        ];
        let view = |offset: usize, mean: f64, std: f64| ViewSpec {
            channels,
            private_dim,
            interference_mean: mean,
            interference_std: std,
            distortions: (0..channels).map(|i| pool[(i + offset) % pool.len()]).collect(),
            permutation: None,
        };
        SynthConfig {
            samples: 1000,
            shared_dim,
            shared_kind: SharedKind::Gaussian,
            mixing_std: 1.0,
            views: vec![view(0, 0.0, 1.0), view(2, 0.0, 1.0)],
            target_scir_db: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NmcaError::InvalidConfig(msg));
        if self.samples < 2 {
            return bad(format!("samples = {} (need at least 2)", self.samples));
        }
        if self.shared_dim == 0 {
            return bad("shared_dim must be at least 1".into());
        }
        if self.shared_kind == SharedKind::Parabola && self.shared_dim != 2 {
            return bad(format!("parabola shared components are 2-dimensional, got shared_dim = {}", self.shared_dim));
        }
        if self.views.is_empty() {
            return bad("at least one view is required".into());
        }
        if !(self.mixing_std > 0.0) {
            return bad(format!("mixing_std = {} must be positive", self.mixing_std));
        }
        for (q, v) in self.views.iter().enumerate() {
            if v.channels < self.shared_dim + v.private_dim {
                return bad(format!(
                    "views[{q}]: channels = {} < shared_dim + private_dim = {}",
                    v.channels,
                    self.shared_dim + v.private_dim
                ));
            }
            if v.distortions.len() != v.channels {
                return bad(format!(
                    "views[{q}]: {} distortions for {} channels",
                    v.distortions.len(),
                    v.channels
                ));
            }
            if v.private_dim > 0 && !(v.interference_std > 0.0) {
                return bad(format!("views[{q}]: interference_std must be positive"));
            }
            for d in &v.distortions {
                d.validate()?;
            }
            if let Some(p) = &v.permutation {
                let n = self.shared_dim + v.private_dim;
                let mut seen = vec![false; n];
                if p.len() != n || p.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
                    return bad(format!("views[{q}]: permutation is not a permutation of 0..{n}"));
                }
            }
        }
        if let Some(db) = self.target_scir_db {
            if !db.is_finite() {
                return bad("target_scir_db must be finite".into());
            }
            if self.views.iter().any(|v| v.private_dim == 0) {
                return bad("SCIR targeting needs view-specific components in every view".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Shared components, `K x N`, rows centred.
    pub shared: Matrix,
    /// View-specific components, `R_q x N` each.
    pub private: Vec<Matrix>,
    /// Mixing matrices, `M_q x (K + R_q)` each.
    pub mixing: Vec<Matrix>,
    pub permutations: Vec<Vec<usize>>,
    pub distortions: Vec<Vec<DistortionKind>>,
}

impl GroundTruth {
    pub fn num_views(&self) -> usize {
        self.mixing.len()
    }

    /// `Π [S; C_q]` for view `q`.
    pub fn stacked_latents(&self, q: usize) -> Matrix {
        let k = self.shared.nrows();
        let c = &self.private[q];
        let n = self.shared.ncols();
        let perm = &self.permutations[q];
        Matrix::from_fn(perm.len(), n, |i, l| {
            let src = perm[i];
            if src < k {
                self.shared[(src, l)]
            } else {
                c[(src - k, l)]
            }
        })
    }

    /// Inputs to the channel distortions of view `q`.
    pub fn pre_distortion(&self, q: usize) -> Matrix {
        &self.mixing[q] * self.stacked_latents(q)
    }

    pub fn render_view(&self, q: usize) -> Result<Matrix> {
        let mut x = self.pre_distortion(q);
        for (i, mut row) in x.row_iter_mut().enumerate() {
            let g = self.distortions[q][i];
            for v in row.iter_mut() {
                *v = g.apply(*v)?;
            }
        }
        Ok(x)
    }
}

/// Observed views (`M_q x N` each) with optional generating truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewDataset {
    pub views: Vec<Matrix>,
    pub truth: Option<GroundTruth>,
}

impl MultiviewDataset {
    pub fn new(views: Vec<Matrix>, truth: Option<GroundTruth>) -> Result<Self> {
        if views.is_empty() {
            return Err(NmcaError::InvalidConfig("dataset has no views".into()));
        }
        let n = views[0].ncols();
        for (q, v) in views.iter().enumerate() {
            if v.ncols() != n || v.nrows() == 0 || n == 0 {
                return Err(NmcaError::Shape(format!(
                    "view {q} is {}x{}, expected {n} samples",
                    v.nrows(),
                    v.ncols()
                )));
            }
            numerics::ensure_finite(v)?;
        }
        if let Some(t) = &truth {
            if t.num_views() != views.len() || t.shared.ncols() != n {
                return Err(NmcaError::Shape("ground truth does not match views".into()));
            }
        }
        Ok(MultiviewDataset { views, truth })
    }

    pub fn samples(&self) -> usize {
        self.views[0].ncols()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::nrows).collect()
    }
}

pub fn sample_parabola_shared_with_rng<R: Rng + ?Sized>(samples: usize, rng: &mut R) -> Matrix {
    let mut s = Matrix::zeros(2, samples);
    for l in 0..samples {
        let x: f64 = rng.random_range(-1.0..=1.0);
        s[(0, l)] = x;
        s[(1, l)] = x * x;
    }
    numerics::center_rows(&s)
}

/// Points `(x, x^2)` with `x ~ U[-1, 1]`, each row mean-centred.
pub fn sample_parabola_shared(samples: usize, seed: u64) -> Matrix {
    sample_parabola_shared_with_rng(samples, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_gaussian_matrix_with_rng<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
    rng: &mut R,
) -> Result<Matrix> {
    let normal = Normal::new(mean, std)
        .map_err(|e| NmcaError::InvalidConfig(format!("normal({mean}, {std}): {e}")))?;
    if !(std > 0.0) {
        return Err(NmcaError::InvalidConfig(format!("std = {std} must be positive")));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| normal.sample(rng)))
}

pub fn sample_gaussian_matrix(rows: usize, cols: usize, mean: f64, std: f64, seed: u64) -> Result<Matrix> {
    sample_gaussian_matrix_with_rng(rows, cols, mean, std, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Scales every view-specific matrix by one common positive factor so the
/// shared-to-interference ratio equals `target_db`.
pub fn scale_to_scir(shared: &Matrix, private: &[Matrix], target_db: f64) -> Result<Vec<Matrix>> {
    let current = measured_scir(shared, private)?;
    let factor = 10f64.powf((current - target_db) / 20.0);
    Ok(private.iter().map(|c| c * factor).collect())
}

pub fn generate_views(cfg: &SynthConfig) -> Result<MultiviewDataset> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stream = || ChaCha8Rng::seed_from_u64(master.next_u64());

    let n = cfg.samples;
    let shared = match cfg.shared_kind {
        SharedKind::Parabola => sample_parabola_shared_with_rng(n, &mut stream()),
        SharedKind::Gaussian => {
            numerics::center_rows(&sample_gaussian_matrix_with_rng(cfg.shared_dim, n, 0.0, 1.0, &mut stream())?)
        }
    };

    let mut private = Vec::with_capacity(cfg.views.len());
    let mut mixing = Vec::with_capacity(cfg.views.len());
    for v in &cfg.views {
        let mut rng = stream();
        // Mixing first, so the same seed gives the same A_q at every N.
        let a = sample_gaussian_matrix_with_rng(v.channels, cfg.shared_dim + v.private_dim, 0.0, cfg.mixing_std, &mut rng)?;
        let sv = numerics::svd(&a)?;
        if sv.d[sv.d.len() - 1] <= numerics::RANK_TOL * sv.d[0] {
            return Err(NmcaError::RankDeficient("sampled mixing matrix lost column rank".into()));
        }
        mixing.push(a);
        private.push(if v.private_dim == 0 {
            Matrix::zeros(0, n)
        } else {
            sample_gaussian_matrix_with_rng(v.private_dim, n, v.interference_mean, v.interference_std, &mut rng)?
        });
    }

    if let Some(target) = cfg.target_scir_db {
        private = scale_to_scir(&shared, &private, target)?;
    }

    let truth = GroundTruth {
        shared,
        private,
        mixing,
        permutations: cfg
            .views
            .iter()
            .map(|v| v.permutation.clone().unwrap_or_else(|| (0..cfg.shared_dim + v.private_dim).collect()))
            .collect(),
        distortions: cfg.views.iter().map(|v| v.distortions.clone()).collect(),
    };
    let views = (0..cfg.views.len()).map(|q| truth.render_view(q)).collect::<Result<Vec<_>>>()?;
    MultiviewDataset::new(views, Some(truth))
}
