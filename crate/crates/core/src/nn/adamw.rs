//! AdamW with decoupled weight decay and bias-corrected moments.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("invalid AdamW constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.second
    }
}

/// One AdamW update of every tensor in `params`, then clears the gradients.
pub fn adamw_step(params: &mut ParameterStore, state: &mut AdamWState) -> Result<()> {
    if params.is_empty() {
        return Ok(());
    }
    if state.first.is_empty() {
        state.first = params.tensors().iter().map(|t| Array2::zeros(t.value.raw_dim())).collect();
        state.second = state.first.clone();
    }
    if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(params.tensors())
            .any(|(m, t)| m.dim() != t.value.dim())
    {
        return Err(Error::Shape("optimizer moments do not match parameter shapes".into()));
    }

    let AdamWConfig {
        lr,
        weight_decay,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    let decay = 1.0 - lr * weight_decay;

    for ((tensor, m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        ndarray::Zip::from(&mut tensor.value)
            .and(&mut tensor.grad)
            .and(m)
            .and(v)
            .for_each(|p, g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * *g;
                *v = beta2 * *v + (1.0 - beta2) * *g * *g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;
    use ndarray::array;

    fn store(values: Array2<f64>) -> ParameterStore {
        ParameterStore::new(vec![Tensor::new("w", values)])
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let init = array![[1.0, -2.0, 0.5]];
        let mut p = store(init.clone());
        let mut s = AdamWState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..10 {
            adamw_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.get(0).value, init);
        assert_eq!(s.step_count(), 10);
        assert_eq!(s.first_moments().len(), 1);
    }

    #[test]
    fn constant_gradient_moves_by_lr_against_sign() {
        let lr = 1e-2;
        let mut p = store(array![[0.0, 0.0]]);
        let mut s = AdamWState::new(AdamWConfig {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut prev = p.get(0).value.clone();
        for step in 0..200 {
            p.get_mut(0).grad.assign(&array![[0.3, -5.0]]);
            adamw_step(&mut p, &mut s).unwrap();
            let cur = p.get(0).value.clone();
            let delta = &cur - &prev;
            assert!(delta[[0, 0]] < 0.0 && delta[[0, 1]] > 0.0);
            if step > 100 {
                assert!((delta[[0, 0]].abs() - lr).abs() < 1e-6 * lr * 100.0);
                assert!((delta[[0, 1]].abs() - lr).abs() < 1e-6 * lr * 100.0);
            }
            prev = cur;
        }
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let (lr, wd) = (1e-2, 0.5);
        let mut p = store(array![[2.0, -4.0]]);
        let mut s = AdamWState::new(AdamWConfig {
            lr,
            weight_decay: wd,
            ..Default::default()
        });
        for k in 1..=5 {
            adamw_step(&mut p, &mut s).unwrap();
            let f = (1.0 - lr * wd).powi(k);
            assert!((p.get(0).value[[0, 0]] - 2.0 * f).abs() < 1e-12);
            assert!((p.get(0).value[[0, 1]] + 4.0 * f).abs() < 1e-12);
        }
    }

    #[test]
    fn clears_gradients_and_handles_empty_store() {
        let mut p = store(array![[1.0]]);
        p.get_mut(0).grad.fill(3.0);
        let mut s = AdamWState::new(AdamWConfig::default());
        adamw_step(&mut p, &mut s).unwrap();
        assert_eq!(p.get(0).grad[[0, 0]], 0.0);

        let mut empty = ParameterStore::default();
        adamw_step(&mut empty, &mut AdamWState::new(AdamWConfig::default())).unwrap();
    }

    #[test]
    fn moment_shape_mismatch() {
        let mut s = AdamWState::new(AdamWConfig::default());
        adamw_step(&mut store(array![[1.0]]), &mut s).unwrap();
        assert!(adamw_step(&mut store(array![[1.0, 2.0]]), &mut s).is_err());
    }
}
