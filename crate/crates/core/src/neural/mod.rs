//! Small multilayer perceptrons with hand-written backpropagation, the
//! per-view channel map banks built from them, and an Adam optimizer.

mod adam;
mod bank;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bank::{BankKind, BankTape, ChannelMapBank};
pub use mlp::{grad_check, init_params, init_params_with_rng, mlp_forward, mlp_gradient, Layer, MlpParams, Tape};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
    Linear,
}

impl ActivationKind {
    /// Value and first derivative at `x`. The ReLU derivative at 0 is 0.
    #[inline]
    pub fn eval(self, x: f64) -> (f64, f64) {
        match self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            ActivationKind::Linear => (x, 1.0),
        }
    }
}

impl ActivationKind {
    /// Applies the activation in place to `zs` and writes the derivatives
    /// into `ds`.
    pub fn apply_slice(self, zs: &mut [f64], ds: &mut [f64]) {
        match self {
            ActivationKind::Relu => {
                for (z, d) in zs.iter_mut().zip(ds.iter_mut()) {
                    let on = *z > 0.0;
                    *d = if on { 1.0 } else { 0.0 };
                    *z = if on { *z } else { 0.0 };
                }
            }
            _ => {
                for (z, d) in zs.iter_mut().zip(ds.iter_mut()) {
                    (*z, *d) = self.eval(*z);
                }
            }
        }
    }
}

pub fn activation_eval(kind: ActivationKind, x: f64) -> (f64, f64) {
    kind.eval(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(activation_eval(ActivationKind::Sigmoid, 0.0), (0.5, 0.25));
        assert_eq!(activation_eval(ActivationKind::Tanh, 0.0), (0.0, 1.0));
        assert_eq!(activation_eval(ActivationKind::Relu, -1.0), (0.0, 0.0));
        assert_eq!(activation_eval(ActivationKind::Relu, 0.0), (0.0, 0.0));
        assert_eq!(activation_eval(ActivationKind::Relu, 2.0), (2.0, 1.0));
        assert_eq!(activation_eval(ActivationKind::Linear, -3.0), (-3.0, 1.0));
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for kind in [ActivationKind::Sigmoid, ActivationKind::Tanh, ActivationKind::Relu] {
            for &x in &[-2.3, -0.4, 0.7, 3.1] {
                let numeric = (kind.eval(x + h).0 - kind.eval(x - h).0) / (2.0 * h);
                assert!((numeric - kind.eval(x).1).abs() < 1e-8, "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
