use serde::{Deserialize, Serialize};

use super::error::{NumericsError, Result};
use super::tensor::ParamStore;

/// Adam hyperparameters.
///
/// The defaults are the usual Adam constants at a learning rate tuned for the
/// desk-scale model; they are a stand-in, not a reproduction of any published
/// recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one per parameter slot, plus the timestep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every parameter that carries a gradient.
///
/// Gradients are validated before anything is written, so a non-finite
/// gradient leaves parameters and state untouched.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    for p in store.iter() {
        if let Some(g) = p.tensor.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFiniteGrad {
                    param: p.name.clone(),
                });
            }
        }
    }
    if state.first.len() != store.len() {
        state.first = store.iter().map(|p| vec![0.0; p.tensor.numel()]).collect();
        state.second = state.first.clone();
    }
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    // Stage every update first so an overflow leaves params and moments as
    // they were.
    let mut staged: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>)>> = Vec::with_capacity(store.len());
    for (i, p) in store.iter().enumerate() {
        let Some(grad) = p.tensor.grad() else {
            staged.push(None);
            continue;
        };
        let (mut m, mut v, mut data) = (state.first[i].clone(), state.second[i].clone(), p.tensor.data().to_vec());
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            data[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { op: "adam_step" });
        }
        staged.push(Some((m, v, data)));
    }
    for (i, (p, s)) in store.iter_mut().zip(staged).enumerate() {
        if let Some((m, v, data)) = s {
            p.tensor.data_mut().copy_from_slice(&data);
            state.first[i] = m;
            state.second[i] = v;
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = scalar_store(1.25);
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut store, &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(store.get("w").unwrap().data(), &[1.25]);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        store.get_mut("w").unwrap().grad_mut().unwrap()[0] = 1.0;
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &mut AdamState::new(), &cfg).unwrap();
        let w = store.get("w").unwrap().data()[0];
        assert!((w + 0.1).abs() < 1e-8, "{w}");
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut store = scalar_store(0.0);
        let mut state = AdamState::new();
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..100 {
            store.zero_grads();
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let three = g.constant(Tensor::scalar(-3.0));
            let d = g.add(w, three).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap();
            g.accumulate_param_grads(&mut store);
            adam_step(&mut store, &mut state, &cfg).unwrap();
        }
        let w = store.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 0.1, "{w}");
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut store = scalar_store(2.0);
        store.insert("encoder.bad", Tensor::scalar(1.0)).unwrap();
        store.get_mut("encoder.bad").unwrap().grad_mut().unwrap()[0] = f64::NAN;
        store.get_mut("w").unwrap().grad_mut().unwrap()[0] = 1.0;
        let mut state = AdamState::new();
        let err = adam_step(&mut store, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("encoder.bad"));
        assert_eq!(store.get("w").unwrap().data(), &[2.0]);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn overflowing_update_leaves_state_untouched() {
        let mut store = scalar_store(2.0);
        store.insert("v", Tensor::scalar(-1.0)).unwrap();
        store.get_mut("w").unwrap().grad_mut().unwrap()[0] = 1.0;
        store.get_mut("v").unwrap().grad_mut().unwrap()[0] = 1.0;
        let mut state = AdamState::new();
        let cfg = AdamConfig {
            lr: f64::MAX,
            ..AdamConfig::default()
        };
        // 2 - MAX·1 is finite; -1 - MAX is finite too, so push it over.
        store.get_mut("v").unwrap().data_mut()[0] = -f64::MAX;
        assert!(adam_step(&mut store, &mut state, &cfg).is_err());
        assert_eq!(store.get("w").unwrap().data(), &[2.0]);
        assert_eq!(store.get("v").unwrap().data(), &[-f64::MAX]);
        assert_eq!(state.step, 0);
    }
}
