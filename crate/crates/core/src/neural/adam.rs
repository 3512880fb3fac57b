use serde::{Deserialize, Serialize};

use crate::error::{NmcaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for a flat parameter vector. Parameters may be supplied
/// as several slices; they are consumed in order against one flat state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { first_moment: vec![0.0; len], second_moment: vec![0.0; len], step_count: 0 }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam update over paired parameter/gradient slices.
    pub fn step<'p, 'g>(
        &mut self,
        params: impl IntoIterator<Item = &'p mut [f64]>,
        grads: impl IntoIterator<Item = &'g [f64]>,
        cfg: &AdamConfig,
    ) -> Result<()> {
        if !(cfg.lr > 0.0) {
            return Err(NmcaError::InvalidConfig(format!("learning rate {} must be positive", cfg.lr)));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);

        let mut offset = 0;
        let mut grads = grads.into_iter();
        for p in params {
            let g = grads
                .next()
                .ok_or_else(|| NmcaError::Shape("fewer gradient slices than parameter slices".into()))?;
            if g.len() != p.len() || offset + p.len() > self.len() {
                return Err(NmcaError::Shape(format!(
                    "gradient slice of {} for parameter slice of {} at offset {offset} (state {})",
                    g.len(),
                    p.len(),
                    self.len()
                )));
            }
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            offset += p.len();
        }
        if grads.next().is_some() || offset != self.len() {
            return Err(NmcaError::Shape(format!(
                "parameter slices cover {offset} values, optimizer state has {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Single-slice convenience wrapper around [`AdamState::step`].
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    state.step([params], [grads], cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.3, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.3, -1.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_two_steps_match_hand_recurrence() {
        // t=1: m=0.1, v=0.001, m_hat=1, v_hat=1, step = lr / (1 + 1e-8).
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-8);
        // t=2 with the same gradient: m_hat = v_hat = 1 again.
        adam_step(&mut p, &[1.0], &mut s, &cfg).unwrap();
        assert!((p[0] + 2e-3).abs() < 1e-8);
        assert!(s.second_moment.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn multi_slice_equals_flat() {
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let grads = [0.5, -2.0, 3.0];
        let mut flat = vec![1.0, 2.0, 3.0];
        let mut sf = AdamState::new(3);
        let mut a = vec![1.0];
        let mut b = vec![2.0, 3.0];
        let mut ss = AdamState::new(3);
        for _ in 0..3 {
            adam_step(&mut flat, &grads, &mut sf, &cfg).unwrap();
            ss.step([a.as_mut_slice(), b.as_mut_slice()], [&grads[..1], &grads[1..]], &cfg).unwrap();
        }
        assert_eq!(flat, vec![a[0], b[0], b[1]]);
        assert_eq!(sf, ss);
    }

    #[test]
    fn shape_and_lr_errors() {
        let mut s = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(matches!(adam_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::default()), Err(NmcaError::Shape(_))));
        let mut p = vec![0.0; 2];
        assert!(adam_step(&mut p, &[0.0; 1], &mut AdamState::new(2), &AdamConfig::default()).is_err());
        let bad = AdamConfig { lr: 0.0, ..Default::default() };
        assert!(matches!(adam_step(&mut p, &[0.0; 2], &mut AdamState::new(2), &bad), Err(NmcaError::InvalidConfig(_))));
    }
}
