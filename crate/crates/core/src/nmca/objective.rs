use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::NmcaModel;
use crate::error::{NmcaError, Result};
use crate::neural::{BankTape, ChannelMapBank};
use crate::numerics::Matrix;
use crate::synth::MultiviewDataset;

const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `sum_q sum_l ||u_l - B_q f_q(y_l)||^2`
    pub matching: f64,
    /// `sum_q sum_l ||y_l - g_q(f_q(y_l))||^2` on standardized channels.
    pub reconstruction: f64,
    /// `matching + lambda * reconstruction`
    pub total: f64,
}

/// Gradients with the same layout as the trainable part of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub f: Vec<ChannelMapBank>,
    pub g: Vec<ChannelMapBank>,
    pub b: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &NmcaModel) -> Self {
        Gradients {
            f: model.f_banks.iter().map(ChannelMapBank::zeros_like).collect(),
            g: model.g_banks.iter().map(ChannelMapBank::zeros_like).collect(),
            b: model.b.iter().map(|b| Matrix::zeros(b.nrows(), b.ncols())).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.f.iter_mut().chain(&mut self.g).for_each(ChannelMapBank::fill_zero);
        self.b.iter_mut().for_each(|b| b.fill(0.0));
    }

    /// Slices in the same order as the model's trainable parameters.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.f
            .iter()
            .flat_map(ChannelMapBank::param_slices)
            .chain(self.g.iter().flat_map(ChannelMapBank::param_slices))
            .chain(self.b.iter().map(|b| b.as_slice()))
    }
}

/// Reusable buffers for mini-batch loss and gradient evaluation.
#[derive(Debug, Default)]
pub struct Workspace {
    f_tapes: Vec<BankTape>,
    g_tapes: Vec<BankTape>,
    x: Vec<f64>,
    up_f: Vec<f64>,
    up_g: Vec<f64>,
    dg: Vec<f64>,
    resid: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the loss over `batch` and its gradient with respect to all
    /// network and linear parameters (with `U` fixed) into `grads`.
    /// `inputs[q]` is the standardized view `q`, sample-major.
    pub fn accumulate(
        &mut self,
        model: &NmcaModel,
        inputs: &[Vec<f64>],
        batch: &[usize],
        lambda: f64,
        grads: &mut Gradients,
    ) -> Result<LossBreakdown> {
        let q_count = model.num_views();
        if inputs.len() != q_count {
            return Err(NmcaError::Shape(format!("{} input views for a {q_count}-view model", inputs.len())));
        }
        let n = model.samples();
        if let Some(&bad) = batch.iter().find(|&&l| l >= n) {
            return Err(NmcaError::Shape(format!("batch index {bad} out of range for N = {n}")));
        }
        self.f_tapes.resize_with(q_count, BankTape::default);
        self.g_tapes.resize_with(q_count, BankTape::default);
        let mut matching = 0.0;
        let mut reconstruction = 0.0;

        for q in 0..q_count {
            let m = model.f_banks[q].dim;
            if inputs[q].len() != n * m {
                return Err(NmcaError::Shape(format!("input view {q} has wrong size")));
            }
            // Samples are independent given U, so chunks keep the tapes cache-sized.
            for chunk in batch.chunks(CHUNK) {
                let (mt, rt) = self.chunk(model, q, &inputs[q], chunk, lambda, grads)?;
                matching += mt;
                reconstruction += rt;
            }
        }

        Ok(LossBreakdown { matching, reconstruction, total: matching + lambda * reconstruction })
    }

    fn chunk(
        &mut self,
        model: &NmcaModel,
        q: usize,
        input: &[f64],
        batch: &[usize],
        lambda: f64,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let m = model.f_banks[q].dim;
        let k = model.latent_dim();
        let nb = batch.len();
        let mut matching = 0.0;
        let mut reconstruction = 0.0;
        self.x.clear();
        for &l in batch {
            self.x.extend_from_slice(&input[l * m..(l + 1) * m]);
        }
        model.f_banks[q].forward_batch(&self.x, nb, &mut self.f_tapes[q])?;
        self.up_f.clear();
        self.up_f.resize(nb * m, 0.0);

        if lambda > 0.0 {
            model.g_banks[q].forward_batch(&self.f_tapes[q].out, nb, &mut self.g_tapes[q])?;
            self.up_g.clear();
            for (x, gx) in self.x.iter().zip(&self.g_tapes[q].out) {
                let r = x - gx;
                reconstruction += r * r;
                self.up_g.push(-2.0 * lambda * r);
            }
            self.dg.resize(nb * m, 0.0);
            model.g_banks[q].backward_batch(&mut self.g_tapes[q], &self.up_g, &mut grads.g[q], Some(&mut self.dg))?;
            self.up_f.copy_from_slice(&self.dg);
        }

        let b = &model.b[q];
        let gb = &mut grads.b[q];
        let fx = &self.f_tapes[q].out;
        self.resid.resize(k, 0.0);
        for (bi, &l) in batch.iter().enumerate() {
            let feat = &fx[bi * m..(bi + 1) * m];
            for r in 0..k {
                let mut proj = 0.0;
                for (i, &fv) in feat.iter().enumerate() {
                    proj += b[(r, i)] * fv;
                }
                let e = model.u[(r, l)] - proj;
                matching += e * e;
                self.resid[r] = -2.0 * e;
            }
            let up = &mut self.up_f[bi * m..(bi + 1) * m];
            for (i, &fv) in feat.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..k {
                    let d = self.resid[r];
                    gb[(r, i)] += d * fv;
                    acc += b[(r, i)] * d;
                }
                up[i] += acc;
            }
        }
        model.f_banks[q].backward_batch(&mut self.f_tapes[q], &self.up_f, &mut grads.f[q], None)?;
        Ok((matching, reconstruction))
    }
}

/// Batch loss and exact gradients with `U` held fixed.
pub fn loss_and_grads(
    model: &NmcaModel,
    dataset: &MultiviewDataset,
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if dataset.num_views() != model.num_views() || dataset.samples() != model.samples() {
        return Err(NmcaError::Shape("dataset does not match the model".into()));
    }
    let inputs = dataset
        .views
        .iter()
        .zip(&model.scalers)
        .map(|(v, s)| s.sample_major(v))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = Gradients::zeros_like(model);
    let loss = Workspace::new().accumulate(model, &inputs, batch, cfg.lambda, &mut grads)?;
    Ok((loss, grads))
}
