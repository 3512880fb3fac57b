use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ActivationKind;
use crate::error::{NmcaError, Result};

/// One affine layer. `weight` is stored row-major with shape `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    #[serde(rename = "out")]
    pub out_dim: usize,
    #[serde(rename = "in")]
    pub in_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(NmcaError::Shape(format!("empty layer {out_dim}x{in_dim}")));
        }
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(NmcaError::Shape(format!(
                "layer {out_dim}x{in_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Layer { out_dim, in_dim, weight, bias })
    }

    fn zeros_like(&self) -> Self {
        Layer {
            out_dim: self.out_dim,
            in_dim: self.in_dim,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Fully connected network. Hidden layers use `hidden_activation`; the
/// output layer is always linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub hidden_activation: ActivationKind,
}

/// Cached forward state for a batch. `acts[0]` is the input, `acts[l + 1]`
/// the output of layer `l`; `derivs[l]` holds the activation derivative of
/// hidden layer `l`. All buffers are sample-major.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub batch: usize,
    pub acts: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>, hidden_activation: ActivationKind) -> Result<Self> {
        let params = MlpParams { layers, hidden_activation };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(NmcaError::InvalidConfig("network has no layers".into()));
        }
        if self.layers.len() > 1 && self.hidden_activation == ActivationKind::Linear {
            return Err(NmcaError::InvalidConfig(
                "linear activation is only allowed on the output layer".into(),
            ));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[1].in_dim != pair[0].out_dim {
                return Err(NmcaError::Shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    l,
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        for layer in &self.layers {
            if layer.weight.len() != layer.out_dim * layer.in_dim || layer.bias.len() != layer.out_dim {
                return Err(NmcaError::Shape("layer buffer sizes disagree with dims".into()));
            }
            if layer.weight.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(NmcaError::Domain("non-finite network parameter".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            hidden_activation: self.hidden_activation,
        }
    }

    pub fn fill_zero(&mut self) {
        for slice in self.param_slices_mut() {
            slice.fill(0.0);
        }
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Forward pass over a sample-major batch (`batch x input_dim`).
    pub fn forward_batch(&self, input: &[f64], batch: usize, tape: &mut Tape) -> Result<()> {
        let in_dim = self.input_dim();
        if input.len() != batch * in_dim {
            return Err(NmcaError::Shape(format!(
                "network expects {in_dim} inputs per sample, batch buffer has {} for {batch} samples",
                input.len()
            )));
        }
        let depth = self.layers.len();
        tape.batch = batch;
        tape.acts.resize_with(depth + 1, Vec::new);
        tape.derivs.resize_with(depth, Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(input);

        for (l, layer) in self.layers.iter().enumerate() {
            let hidden = l + 1 < depth;
            let (before, after) = tape.acts.split_at_mut(l + 1);
            let prev = &before[l];
            let out = &mut after[0];
            out.resize(batch * layer.out_dim, 0.0);
            let deriv = &mut tape.derivs[l];
            if hidden {
                deriv.resize(batch * layer.out_dim, 0.0);
            }
            for b in 0..batch {
                let a = &prev[b * layer.in_dim..(b + 1) * layer.in_dim];
                let z_row = &mut out[b * layer.out_dim..(b + 1) * layer.out_dim];
                if layer.in_dim == 1 {
                    let x = a[0];
                    for ((z, w), c) in z_row.iter_mut().zip(&layer.weight).zip(&layer.bias) {
                        *z = c + w * x;
                    }
                } else {
                    for (j, z) in z_row.iter_mut().enumerate() {
                        let w = &layer.weight[j * layer.in_dim..(j + 1) * layer.in_dim];
                        *z = layer.bias[j] + dot(w, a);
                    }
                }
                if hidden {
                    let d_row = &mut deriv[b * layer.out_dim..(b + 1) * layer.out_dim];
                    self.hidden_activation.apply_slice(z_row, d_row);
                }
            }
        }
        Ok(())
    }

    /// Backpropagates `upstream` (`batch x output_dim`) through the cached
    /// forward pass. Parameter gradients are accumulated into `grads`; the
    /// gradient with respect to the input is written to `input_grad` when
    /// given.
    pub fn backward_batch(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        grads: &mut MlpParams,
        mut input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        let batch = tape.batch;
        if upstream.len() != batch * self.output_dim() {
            return Err(NmcaError::Shape(format!(
                "upstream has {} entries, expected {}",
                upstream.len(),
                batch * self.output_dim()
            )));
        }
        if let Some(ig) = input_grad.as_deref() {
            if ig.len() != batch * self.input_dim() {
                return Err(NmcaError::Shape("input gradient buffer has wrong size".into()));
            }
        }
        let Tape { acts, derivs, delta, delta_prev, .. } = tape;
        delta.clear();
        delta.extend_from_slice(upstream);

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let grad = &mut grads.layers[l];
            let prev = &acts[l];
            let need_prev = l > 0 || input_grad.is_some();
            if need_prev {
                delta_prev.clear();
                delta_prev.resize(batch * layer.in_dim, 0.0);
            }
            for b in 0..batch {
                let a = &prev[b * layer.in_dim..(b + 1) * layer.in_dim];
                let d_row = &delta[b * layer.out_dim..(b + 1) * layer.out_dim];
                if layer.in_dim == 1 {
                    axpy(1.0, d_row, &mut grad.bias);
                    axpy(a[0], d_row, &mut grad.weight);
                    if need_prev {
                        delta_prev[b] = dot(d_row, &layer.weight);
                    }
                    continue;
                }
                for (j, &dj) in d_row.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    grad.bias[j] += dj;
                    let gw = &mut grad.weight[j * layer.in_dim..(j + 1) * layer.in_dim];
                    axpy(dj, a, gw);
                    if need_prev {
                        let w = &layer.weight[j * layer.in_dim..(j + 1) * layer.in_dim];
                        axpy(dj, w, &mut delta_prev[b * layer.in_dim..(b + 1) * layer.in_dim]);
                    }
                }
            }
            if l > 0 {
                for (dp, d) in delta_prev.iter_mut().zip(&derivs[l - 1]) {
                    *dp *= d;
                }
                std::mem::swap(delta, delta_prev);
            } else if let Some(ig) = input_grad.as_deref_mut() {
                ig.copy_from_slice(delta_prev);
            }
        }
        Ok(())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Random network with weights and biases uniform on `±1/sqrt(fan_in)`.
pub fn init_params_with_rng<R: Rng + ?Sized>(
    layer_sizes: &[usize],
    hidden_activation: ActivationKind,
    rng: &mut R,
) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(NmcaError::InvalidConfig(format!(
            "need at least input and output sizes, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(NmcaError::InvalidConfig(format!("zero-width layer in {layer_sizes:?}")));
    }
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = (0..fan_in * out).map(|_| rng.random_range(-bound..=bound)).collect();
            let bias = (0..out).map(|_| rng.random_range(-bound..=bound)).collect();
            Layer { out_dim: out, in_dim: fan_in, weight, bias }
        })
        .collect();
    MlpParams::from_layers(layers, hidden_activation)
}

pub fn init_params(layer_sizes: &[usize], hidden_activation: ActivationKind, seed: u64) -> Result<MlpParams> {
    init_params_with_rng(layer_sizes, hidden_activation, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Single-sample forward pass.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
    let mut tape = Tape::default();
    params.forward_batch(input, 1, &mut tape)?;
    Ok((tape.output().to_vec(), tape))
}

/// Gradient of `<upstream, net(input)>` with respect to every parameter and
/// the input.
pub fn mlp_gradient(params: &MlpParams, input: &[f64], upstream: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
    let (_, mut tape) = mlp_forward(params, input)?;
    let mut grads = params.zeros_like();
    let mut input_grad = vec![0.0; input.len()];
    params.backward_batch(&mut tape, upstream, &mut grads, Some(&mut input_grad))?;
    Ok((grads, input_grad))
}

/// Compares the analytic gradient of the summed outputs against central
/// differences. Returns the largest `|analytic - numeric| / max(1, |numeric|)`
/// over all parameters and inputs.
pub fn grad_check(params: &MlpParams, input: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(NmcaError::InvalidConfig(format!("eps {eps} outside (0, 1e-3]")));
    }
    let upstream = vec![1.0; params.output_dim()];
    let (grads, input_grad) = mlp_gradient(params, input, &upstream)?;
    let objective = |p: &MlpParams, x: &[f64]| -> Result<f64> { Ok(mlp_forward(p, x)?.0.iter().sum()) };
    let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / numeric.abs().max(1.0);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let analytic: Vec<f64> = grads.param_slices().flatten().copied().collect();
    let mut idx = 0;
    for l in 0..probe.layers.len() {
        for bias in [false, true] {
            let len = if bias { probe.layers[l].bias.len() } else { probe.layers[l].weight.len() };
            for i in 0..len {
                fn slot(p: &mut MlpParams, l: usize, bias: bool, i: usize) -> &mut f64 {
                    if bias {
                        &mut p.layers[l].bias[i]
                    } else {
                        &mut p.layers[l].weight[i]
                    }
                }
                let original = *slot(&mut probe, l, bias, i);
                *slot(&mut probe, l, bias, i) = original + eps;
                let plus = objective(&probe, input)?;
                *slot(&mut probe, l, bias, i) = original - eps;
                let minus = objective(&probe, input)?;
                *slot(&mut probe, l, bias, i) = original;
                worst = worst.max(rel(analytic[idx], (plus - minus) / (2.0 * eps)));
                idx += 1;
            }
        }
    }
    let mut x = input.to_vec();
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + eps;
        let plus = objective(params, &x)?;
        x[i] = original - eps;
        let minus = objective(params, &x)?;
        x[i] = original;
        worst = worst.max(rel(input_grad[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActivationKind::*;

    fn single(weight: Vec<f64>, bias: Vec<f64>, out: usize, inp: usize) -> MlpParams {
        MlpParams::from_layers(vec![Layer::new(out, inp, weight, bias).unwrap()], Relu).unwrap()
    }

    #[test]
    fn init_shapes() {
        let p = init_params(&[1, 256, 1], Relu, 7).unwrap();
        assert_eq!(p.layers.len(), 2);
        assert_eq!((p.layers[0].out_dim, p.layers[0].in_dim), (256, 1));
        assert_eq!((p.layers[1].out_dim, p.layers[1].in_dim), (1, 256));
        assert!(p.layers[0].weight.iter().chain(&p.layers[0].bias).all(|w| w.abs() <= 1.0));
        assert!(p.layers[1].weight.iter().chain(&p.layers[1].bias).all(|w| w.abs() <= 1.0 / 16.0));

        let mimo = init_params(&[3, 256, 256, 256, 3], Relu, 1).unwrap();
        assert_eq!(mimo.layers.len(), 4);
        assert_eq!((mimo.input_dim(), mimo.output_dim()), (3, 3));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&[2, 8, 2], Tanh, 42).unwrap();
        let b = init_params(&[2, 8, 2], Tanh, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(&[2, 8, 2], Tanh, 43).unwrap());
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(init_params(&[], Relu, 0), Err(NmcaError::InvalidConfig(_))));
        assert!(matches!(init_params(&[3], Relu, 0), Err(NmcaError::InvalidConfig(_))));
        assert!(matches!(init_params(&[3, 0, 1], Relu, 0), Err(NmcaError::InvalidConfig(_))));
        assert!(matches!(init_params(&[1, 4, 1], Linear, 0), Err(NmcaError::InvalidConfig(_))));
    }

    #[test]
    fn forward_hand_cases() {
        let identity = single(vec![1.0], vec![0.0], 1, 1);
        assert_eq!(mlp_forward(&identity, &[1.5]).unwrap().0, vec![1.5]);

        let affine = single(vec![2.0], vec![1.0], 1, 1);
        assert_eq!(mlp_forward(&affine, &[3.0]).unwrap().0, vec![7.0]);

        let hidden = MlpParams::from_layers(
            vec![
                Layer::new(1, 1, vec![1.0], vec![0.0]).unwrap(),
                Layer::new(1, 1, vec![2.0], vec![0.0]).unwrap(),
            ],
            Sigmoid,
        )
        .unwrap();
        assert_eq!(mlp_forward(&hidden, &[0.0]).unwrap().0, vec![1.0]);
    }

    #[test]
    fn forward_shape_error() {
        let p = init_params(&[2, 3, 1], Relu, 0).unwrap();
        assert!(matches!(mlp_forward(&p, &[1.0]), Err(NmcaError::Shape(_))));
        assert!(matches!(mlp_gradient(&p, &[1.0, 2.0], &[1.0, 1.0]), Err(NmcaError::Shape(_))));
    }

    #[test]
    fn linear_gradient_closed_form() {
        let p = single(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0], vec![0.1, 0.2], 2, 3);
        let x = [0.3, -1.2, 2.0];
        let u = [0.7, -0.4];
        let (g, ig) = mlp_gradient(&p, &x, &u).unwrap();
        for j in 0..2 {
            assert_eq!(g.layers[0].bias[j], u[j]);
            for i in 0..3 {
                assert_eq!(g.layers[0].weight[j * 3 + i], u[j] * x[i]);
            }
        }
        for i in 0..3 {
            let expected = u[0] * p.layers[0].weight[i] + u[1] * p.layers[0].weight[3 + i];
            assert!((ig[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = init_params(&[2, 5, 5, 2], Tanh, 3).unwrap();
        let (g, ig) = mlp_gradient(&p, &[0.4, -0.9], &[0.0, 0.0]).unwrap();
        assert!(g.param_slices().flatten().all(|&v| v == 0.0));
        assert!(ig.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_check_cases() {
        let identity = single(vec![1.0], vec![0.0], 1, 1);
        assert!(grad_check(&identity, &[0.8], 1e-6).unwrap() < 1e-10);

        let mut p = init_params(&[1, 16, 1], Sigmoid, 5).unwrap();
        for b in p.layers[0].bias.iter_mut().enumerate() {
            *b.1 = 0.1 * b.0 as f64 - 0.7;
        }
        assert!(grad_check(&p, &[0.37], 1e-6).unwrap() < 1e-4);

        let p = init_params(&[3, 32, 3], Tanh, 9).unwrap();
        assert!(grad_check(&p, &[0.2, -0.5, 1.1], 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn grad_check_rejects_bad_eps() {
        let p = init_params(&[1, 2, 1], Tanh, 0).unwrap();
        assert!(grad_check(&p, &[0.0], 0.0).is_err());
        assert!(grad_check(&p, &[0.0], 1e-2).is_err());
    }

    #[test]
    fn batch_matches_single_sample_passes() {
        let p = init_params(&[2, 6, 6, 2], Sigmoid, 12).unwrap();
        let xs = [0.1, 0.2, -0.7, 1.5, 2.2, -0.3];
        let ups = [1.0, -0.5, 0.3, 0.2, -1.0, 0.9];
        let mut tape = Tape::default();
        p.forward_batch(&xs, 3, &mut tape).unwrap();
        let out = tape.output().to_vec();
        let mut batch_grads = p.zeros_like();
        let mut batch_ig = vec![0.0; 6];
        p.backward_batch(&mut tape, &ups, &mut batch_grads, Some(&mut batch_ig)).unwrap();

        let mut summed = p.zeros_like();
        for b in 0..3 {
            let x = &xs[2 * b..2 * b + 2];
            let (o, _) = mlp_forward(&p, x).unwrap();
            assert_eq!(o.as_slice(), &out[2 * b..2 * b + 2]);
            let (g, ig) = mlp_gradient(&p, x, &ups[2 * b..2 * b + 2]).unwrap();
            for (s, v) in summed.param_slices_mut().zip(g.param_slices()) {
                s.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            for i in 0..2 {
                assert!((ig[i] - batch_ig[2 * b + i]).abs() < 1e-14);
            }
        }
        for (a, b) in summed.param_slices().flatten().zip(batch_grads.param_slices().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
