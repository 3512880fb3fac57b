use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{init_params_with_rng, Layer, MlpParams, Tape};
use super::ActivationKind;
use crate::error::{NmcaError, Result};

/// How a bank maps an `M`-vector to an `M`-vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankKind {
    /// One scalar-to-scalar network per channel.
    PerChannel { nets: Vec<MlpParams> },
    /// One fully connected `M`-in/`M`-out network.
    Mimo { net: MlpParams },
}

/// A vector-valued map built from neural networks, either channel-wise or
/// fully connected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMapBank {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: BankKind,
}

#[derive(Debug, Clone, Default)]
pub struct BankTape {
    pub batch: usize,
    /// Sample-major `batch x dim` output of the last forward pass.
    pub out: Vec<f64>,
    tapes: Vec<Tape>,
    column: Vec<f64>,
    column_grad: Vec<f64>,
}

impl ChannelMapBank {
    pub fn per_channel(nets: Vec<MlpParams>) -> Result<Self> {
        let bank = ChannelMapBank { dim: nets.len(), kind: BankKind::PerChannel { nets } };
        bank.validate()?;
        Ok(bank)
    }

    pub fn mimo(net: MlpParams) -> Result<Self> {
        let bank = ChannelMapBank { dim: net.input_dim(), kind: BankKind::Mimo { net } };
        bank.validate()?;
        Ok(bank)
    }

    /// Per-channel bank of `dim` networks with layer sizes `[1, hidden.., 1]`.
    pub fn init_per_channel<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(1).chain(hidden.iter().copied()).chain([1]).collect();
        let nets = (0..dim)
            .map(|_| init_params_with_rng(&sizes, activation, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::per_channel(nets)
    }

    /// Fully connected bank with layer sizes `[dim, hidden.., dim]`.
    pub fn init_mimo<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: ActivationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(dim).chain(hidden.iter().copied()).chain([dim]).collect();
        Self::mimo(init_params_with_rng(&sizes, activation, rng)?)
    }

    /// Channel-wise identity made of single linear units.
    pub fn identity(dim: usize) -> Self {
        let unit = MlpParams {
            layers: vec![Layer { out_dim: 1, in_dim: 1, weight: vec![1.0], bias: vec![0.0] }],
            hidden_activation: ActivationKind::Relu,
        };
        ChannelMapBank { dim, kind: BankKind::PerChannel { nets: vec![unit; dim] } }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(NmcaError::InvalidConfig("bank dimension must be positive".into()));
        }
        match &self.kind {
            BankKind::PerChannel { nets } => {
                if nets.len() != self.dim {
                    return Err(NmcaError::Shape(format!("{} channel nets for dim {}", nets.len(), self.dim)));
                }
                for (i, net) in nets.iter().enumerate() {
                    net.validate()?;
                    if net.input_dim() != 1 || net.output_dim() != 1 {
                        return Err(NmcaError::Shape(format!("channel net {i} is not scalar-to-scalar")));
                    }
                }
            }
            BankKind::Mimo { net } => {
                net.validate()?;
                if net.input_dim() != self.dim || net.output_dim() != self.dim {
                    return Err(NmcaError::Shape(format!(
                        "fully connected net maps {} -> {}, bank dim is {}",
                        net.input_dim(),
                        net.output_dim(),
                        self.dim
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn nets(&self) -> &[MlpParams] {
        match &self.kind {
            BankKind::PerChannel { nets } => nets,
            BankKind::Mimo { net } => std::slice::from_ref(net),
        }
    }

    fn nets_mut(&mut self) -> &mut [MlpParams] {
        match &mut self.kind {
            BankKind::PerChannel { nets } => nets,
            BankKind::Mimo { net } => std::slice::from_mut(net),
        }
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(MlpParams::num_params).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let kind = match &self.kind {
            BankKind::PerChannel { nets } => BankKind::PerChannel { nets: nets.iter().map(MlpParams::zeros_like).collect() },
            BankKind::Mimo { net } => BankKind::Mimo { net: net.zeros_like() },
        };
        ChannelMapBank { dim: self.dim, kind }
    }

    pub fn fill_zero(&mut self) {
        self.nets_mut().iter_mut().for_each(MlpParams::fill_zero);
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.nets().iter().flat_map(MlpParams::param_slices)
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.nets_mut().iter_mut().flat_map(MlpParams::param_slices_mut)
    }

    /// Applies the bank to a single `dim`-vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut tape = BankTape::default();
        self.forward_batch(input, 1, &mut tape)?;
        Ok(tape.out)
    }

    /// Evaluates the scalar map of one channel. Only meaningful for
    /// per-channel banks.
    pub fn channel_eval(&self, channel: usize, x: f64) -> Result<f64> {
        match &self.kind {
            BankKind::PerChannel { nets } => {
                let net = nets
                    .get(channel)
                    .ok_or_else(|| NmcaError::Shape(format!("channel {channel} out of range for dim {}", self.dim)))?;
                Ok(super::mlp_forward(net, &[x])?.0[0])
            }
            BankKind::Mimo { .. } => Err(NmcaError::InvalidConfig(
                "fully connected banks have no independent channel maps".into(),
            )),
        }
    }

    /// Forward pass over a sample-major `batch x dim` buffer; the result is
    /// left in `tape.out`.
    pub fn forward_batch(&self, input: &[f64], batch: usize, tape: &mut BankTape) -> Result<()> {
        let m = self.dim;
        if input.len() != batch * m {
            return Err(NmcaError::Shape(format!(
                "bank of dim {m} given {} values for {batch} samples",
                input.len()
            )));
        }
        tape.batch = batch;
        tape.out.resize(batch * m, 0.0);
        match &self.kind {
            BankKind::PerChannel { nets } => {
                tape.tapes.resize_with(m, Tape::default);
                for (i, net) in nets.iter().enumerate() {
                    tape.column.clear();
                    tape.column.extend((0..batch).map(|b| input[b * m + i]));
                    net.forward_batch(&tape.column, batch, &mut tape.tapes[i])?;
                    for (b, &v) in tape.tapes[i].output().iter().enumerate() {
                        tape.out[b * m + i] = v;
                    }
                }
            }
            BankKind::Mimo { net } => {
                tape.tapes.resize_with(1, Tape::default);
                net.forward_batch(input, batch, &mut tape.tapes[0])?;
                tape.out.copy_from_slice(tape.tapes[0].output());
            }
        }
        Ok(())
    }

    /// Backward pass matching the last [`forward_batch`](Self::forward_batch)
    /// recorded in `tape`. Gradients accumulate into `grads`.
    pub fn backward_batch(
        &self,
        tape: &mut BankTape,
        upstream: &[f64],
        grads: &mut ChannelMapBank,
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let m = self.dim;
        let batch = tape.batch;
        if upstream.len() != batch * m {
            return Err(NmcaError::Shape(format!("upstream has {} values, expected {}", upstream.len(), batch * m)));
        }
        match (&self.kind, &mut grads.kind) {
            (BankKind::PerChannel { nets }, BankKind::PerChannel { nets: grad_nets }) => {
                let BankTape { tapes, column, column_grad, .. } = tape;
                for (i, net) in nets.iter().enumerate() {
                    column.clear();
                    column.extend((0..batch).map(|b| upstream[b * m + i]));
                    let want_input = input_grad.is_some();
                    if want_input {
                        column_grad.clear();
                        column_grad.resize(batch, 0.0);
                    }
                    net.backward_batch(
                        &mut tapes[i],
                        column,
                        &mut grad_nets[i],
                        want_input.then_some(column_grad.as_mut_slice()),
                    )?;
                    if let Some(ig) = input_grad.as_deref_mut() {
                        for (b, &g) in column_grad.iter().enumerate() {
                            ig[b * m + i] = g;
                        }
                    }
                }
            }
            (BankKind::Mimo { net }, BankKind::Mimo { net: grad_net }) => {
                net.backward_batch(&mut tape.tapes[0], upstream, grad_net, input_grad)?;
            }
            _ => return Err(NmcaError::Shape("gradient bank kind differs from bank kind".into())),
        }
        Ok(())
    }
}
