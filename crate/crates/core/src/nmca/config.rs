use serde::{Deserialize, Serialize};

use crate::error::{NmcaError, Result};
use crate::neural::{ActivationKind, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    PerChannel,
    Mimo,
}

/// Every optimization knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Latent dimension `K`.
    pub latent_dim: usize,
    /// Weight of the reconstruction term.
    pub lambda: f64,
    /// Outer iterations; each ends with one `U` update.
    pub epochs: usize,
    /// Adam steps on the network/linear parameters per outer iteration.
    pub inner_steps: usize,
    /// Mini-batch size; `None` means `min(1000, N)`.
    pub batch_size: Option<usize>,
    pub adam: AdamConfig,
    /// Step size reached at the last epoch. When set, the step size decays
    /// geometrically from `adam.lr`; otherwise it stays constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_final: Option<f64>,
    /// Enforce `U 1 = 0`. Switching this off is the ablation that keeps only
    /// the whitening constraint.
    pub zero_mean: bool,
    pub map_kind: MapKind,
    pub f_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub activation: ActivationKind,
    /// Standardize every observed channel before it enters the networks.
    pub standardize: bool,
    /// Record the subspace distance to the ground truth every this many
    /// epochs (0 disables it).
    pub dist_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 2,
            lambda: 1e-3,
            epochs: 5000,
            inner_steps: 100,
            batch_size: None,
            adam: AdamConfig::default(),
            lr_final: None,
            zero_mean: true,
            map_kind: MapKind::PerChannel,
            f_hidden: vec![256],
            g_hidden: vec![256],
            activation: ActivationKind::Relu,
            standardize: true,
            dist_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// A reduced budget that runs a benchmark trial in seconds on one core.
    pub fn desk(latent_dim: usize, seed: u64) -> Self {
        TrainConfig {
            latent_dim,
            epochs: 500,
            inner_steps: 10,
            f_hidden: vec![64],
            g_hidden: vec![64],
            adam: AdamConfig { lr: 5e-3, ..AdamConfig::default() },
            seed,
            ..TrainConfig::default()
        }
    }

    /// Step size used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(f) if self.epochs > 1 => {
                let t = (epoch.clamp(1, self.epochs) - 1) as f64 / (self.epochs - 1) as f64;
                self.adam.lr * (f / self.adam.lr).powf(t)
            }
            _ => self.adam.lr,
        }
    }

    pub fn effective_batch(&self, samples: usize) -> usize {
        self.batch_size.unwrap_or(1000).min(samples)
    }

    pub fn validate(&self, samples: usize) -> Result<()> {
        let bad = |msg: String| Err(NmcaError::InvalidConfig(msg));
        if self.latent_dim == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be a finite non-negative number", self.lambda));
        }
        if !(self.adam.lr > 0.0) {
            return bad(format!("adam.lr = {} must be positive", self.adam.lr));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f <= self.adam.lr) {
                return bad(format!("lr_final = {f} must lie in (0, adam.lr]"));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) || !(self.adam.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        match self.batch_size {
            Some(0) => return bad("batch_size must be at least 1".into()),
            Some(b) if b > samples => return bad(format!("batch_size = {b} exceeds N = {samples}")),
            _ => {}
        }
        if self.latent_dim >= samples {
            return bad(format!("latent_dim = {} must be below N = {samples}", self.latent_dim));
        }
        if self.activation == ActivationKind::Linear && (!self.f_hidden.is_empty() || !self.g_hidden.is_empty()) {
            return bad("hidden layers cannot use the linear activation".into());
        }
        if self.f_hidden.contains(&0) || self.g_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}
