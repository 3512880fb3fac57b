use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{consensus, model_init, NmcaModel};
use super::objective::{Gradients, LossBreakdown, Workspace};
use super::procrustes::{procrustes_update, whitened_update, ConstraintReport};
use crate::error::{NmcaError, Result};
use crate::metrics::subspace_distance;
use crate::neural::{AdamConfig, AdamState};
use crate::numerics::Matrix;
use crate::synth::MultiviewDataset;

/// One outer iteration of training, measured on the full data set right
/// after the `U` update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Matching term with the new parameters but the previous `U`.
    pub matching_before_u: f64,
    pub whitening_error: f64,
    pub mean_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Optimizer state for the network and linear parameters.
pub struct ThetaOptimizer {
    pub adam: AdamState,
    /// Step size override; `None` uses `cfg.adam.lr`.
    pub lr: Option<f64>,
    rng: ChaCha8Rng,
    workspace: Workspace,
    grads: Gradients,
    inputs: Vec<Vec<f64>>,
    batch: Vec<usize>,
}

impl ThetaOptimizer {
    pub fn new(model: &NmcaModel, dataset: &MultiviewDataset, seed: u64) -> Result<Self> {
        let inputs = dataset
            .views
            .iter()
            .zip(&model.scalers)
            .map(|(v, s)| s.sample_major(v))
            .collect::<Result<Vec<_>>>()?;
        Ok(ThetaOptimizer {
            adam: AdamState::new(model.theta_len()),
            lr: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            workspace: Workspace::new(),
            grads: Gradients::zeros_like(model),
            inputs,
            batch: Vec::new(),
        })
    }

    /// Runs one Adam step on a fresh mini-batch and returns the batch loss
    /// at the parameters before the step.
    pub fn step(&mut self, model: &mut NmcaModel, cfg: &TrainConfig) -> Result<LossBreakdown> {
        let n = model.samples();
        let size = cfg.effective_batch(n);
        self.batch.clear();
        if size == n {
            self.batch.extend(0..n);
        } else {
            self.batch.extend(sample(&mut self.rng, n, size).iter());
        }
        self.grads.fill_zero();
        let loss = self.workspace.accumulate(model, &self.inputs, &self.batch, cfg.lambda, &mut self.grads)?;
        let adam = AdamConfig { lr: self.lr.unwrap_or(cfg.adam.lr), ..cfg.adam };
        self.adam.step(model.theta_slices_mut(), self.grads.slices(), &adam)?;
        Ok(loss)
    }
}

/// `cfg.inner_steps` Adam steps on the network and linear parameters with
/// `U` held fixed.
pub fn theta_epoch(model: &mut NmcaModel, opt: &mut ThetaOptimizer, cfg: &TrainConfig) -> Result<()> {
    for _ in 0..cfg.inner_steps {
        opt.step(model, cfg)?;
    }
    Ok(())
}

/// Alternates network updates with the closed-form `U` projection for
/// `cfg.epochs` outer iterations.
pub fn run_nmca(dataset: &MultiviewDataset, cfg: &TrainConfig) -> Result<(NmcaModel, TrainTrace)> {
    if dataset.num_views() < 2 {
        return Err(NmcaError::InvalidConfig(format!("need at least two views, got {}", dataset.num_views())));
    }
    let mut model = model_init(dataset, cfg)?;
    let mut opt = ThetaOptimizer::new(&model, dataset, cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let mut trace = TrainTrace::default();

    for epoch in 1..=cfg.epochs {
        let with_epoch = |e: NmcaError| NmcaError::Training { epoch, source: Box::new(e) };
        opt.lr = Some(cfg.lr_at(epoch));
        theta_epoch(&mut model, &mut opt, cfg).map_err(with_epoch)?;

        let mut features = Vec::with_capacity(dataset.num_views());
        let mut projections = Vec::with_capacity(dataset.num_views());
        for (q, y) in dataset.views.iter().enumerate() {
            let f = model.features(y, q).map_err(with_epoch)?;
            projections.push(&model.b[q] * &f);
            features.push(f);
        }
        let matching_before_u = matching_term(&model.u, &projections);
        let z = consensus(&model, &projections);
        model.u = if cfg.zero_mean { procrustes_update(&z) } else { whitened_update(&z) }.map_err(with_epoch)?;
        let matching = matching_term(&model.u, &projections);

        let mut reconstruction = 0.0;
        if cfg.lambda > 0.0 {
            for (q, f) in features.iter().enumerate() {
                let rebuilt = model.redistort(f, q).map_err(with_epoch)?;
                let scaler = &model.scalers[q];
                for (idx, (y, r)) in dataset.views[q].iter().zip(rebuilt.iter()).enumerate() {
                    let i = idx % f.nrows();
                    let d = scaler.apply(i, *y) - scaler.apply(i, *r);
                    reconstruction += d * d;
                }
            }
        }

        let report = ConstraintReport::check(&model.u);
        let dist = match (&dataset.truth, cfg.dist_every) {
            (Some(t), every) if every > 0 && (epoch % every == 0 || epoch == cfg.epochs) => {
                Some(subspace_distance(&t.shared, &model.u).map_err(with_epoch)?)
            }
            _ => None,
        };
        trace.epochs.push(EpochRecord {
            epoch,
            loss: LossBreakdown { matching, reconstruction, total: matching + cfg.lambda * reconstruction },
            matching_before_u,
            whitening_error: report.whitening,
            mean_error: report.mean,
            dist,
        });
    }
    Ok((model, trace))
}

fn matching_term(u: &Matrix, projections: &[Matrix]) -> f64 {
    projections.iter().map(|p| (u - p).norm_squared()).sum()
}

/// `B_q f_q(y)` for every column of `view`.
pub fn embed(model: &NmcaModel, view: &Matrix, q: usize) -> Result<Matrix> {
    let f = model.features(view, q)?;
    Ok(&model.b[q] * f)
}

/// `g_q(f_q(y))` for every column of `view`, in the units of `view`.
pub fn reconstruct(model: &NmcaModel, view: &Matrix, q: usize) -> Result<Matrix> {
    let f = model.features(view, q)?;
    model.redistort(&f, q)
}
