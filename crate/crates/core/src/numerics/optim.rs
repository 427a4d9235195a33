//! Parameter storage and the two optimizers used by every trainable model.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::NumericsError;

/// Named parameter tensors with a deterministic iteration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            self.params.insert(name.to_string(), value).is_none(),
            "parameter {name:?} inserted twice"
        );
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

/// Adam optimizer state; one slot per parameter, same shapes.
#[derive(Clone, Debug)]
pub struct AdamState {
    first_moment: BTreeMap<String, Tensor>,
    second_moment: BTreeMap<String, Tensor>,
    /// step counter; strictly increases by 1 per `adam_step`
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        AdamState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
            beta1,
            beta2,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        Some((self.first_moment.get(name)?, self.second_moment.get(name)?))
    }
}

/// One Adam update with bias correction; advances the state.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<(), NumericsError> {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for (name, grad) in grads {
        let param = params.params.get_mut(name).ok_or_else(|| {
            NumericsError::DimMismatch(format!("gradient for unknown parameter {name:?}"))
        })?;
        if grad.shape() != param.shape() {
            return Err(NumericsError::DimMismatch(format!(
                "adam: parameter {name:?} is {:?} but gradient is {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for ((p, (m_i, v_i)), &g) in param
            .data_mut()
            .iter_mut()
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            .zip(grad.data())
        {
            *m_i = state.beta1 * *m_i + (1.0 - state.beta1) * g;
            *v_i = state.beta2 * *v_i + (1.0 - state.beta2) * g * g;
            let m_hat = *m_i / bias1;
            let v_hat = *v_i / bias2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Step-decayed learning-rate schedule: `base · factor^⌊step/interval⌋`.
#[derive(Clone, Copy, Debug)]
pub struct SgdSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_interval: u64,
}

impl SgdSchedule {
    pub fn new(base_lr: f64, decay_factor: f64, decay_interval: u64) -> Self {
        assert!(base_lr > 0.0 && decay_factor > 0.0 && decay_interval > 0);
        SgdSchedule {
            base_lr,
            decay_factor,
            decay_interval,
        }
    }

    /// Default schedule for the end-to-end classifier: 0.001 decayed by 0.98
    /// every 50k mini-batches.
    pub fn classifier_default() -> Self {
        SgdSchedule::new(0.001, 0.98, 50_000)
    }

    pub fn lr(&self, step: u64) -> f64 {
        self.base_lr * self.decay_factor.powi((step / self.decay_interval) as i32)
    }
}

/// Plain SGD update at the schedule's rate for `step`.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    schedule: &SgdSchedule,
    step: u64,
) -> Result<(), NumericsError> {
    let lr = schedule.lr(step);
    for (name, grad) in grads {
        let param = params.params.get_mut(name).ok_or_else(|| {
            NumericsError::DimMismatch(format!("gradient for unknown parameter {name:?}"))
        })?;
        if grad.shape() != param.shape() {
            return Err(NumericsError::DimMismatch(format!(
                "sgd: parameter {name:?} is {:?} but gradient is {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
    }
    Ok(())
}
