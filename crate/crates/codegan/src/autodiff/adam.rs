use super::store::ParameterStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub alpha: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamConfig {
    pub fn with_lr(alpha: f32) -> AdamConfig {
        AdamConfig {
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step count.
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
    cfg: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParameterStore, cfg: AdamConfig) -> AdamState {
        AdamState {
            m: params.values().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.values().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
            cfg,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update applied in place; gradients are zeroed
    /// afterwards.
    pub fn step(&mut self, params: &ParameterStore) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Internal(format!(
                "AdamState tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let corr1 = 1.0 - (b1 as f64).powi(self.t as i32);
        let corr2 = 1.0 - (b2 as f64).powi(self.t as i32);
        for (i, param) in params.values().enumerate() {
            let grad = param.grad().clone();
            let mut data = param.data_mut();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = (m[j] as f64 / corr1) as f32;
                let v_hat = (v[j] as f64 / corr2) as f32;
                data[j] -= self.cfg.alpha * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        drop_grads(params);
        Ok(())
    }
}

fn drop_grads(params: &ParameterStore) {
    params.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tensor, Value};

    fn single_param_store(x: f32) -> (ParameterStore, Value) {
        let mut store = ParameterStore::new(0);
        let w = store
            .add("w", Value::parameter(Tensor::scalar(x)))
            .unwrap();
        (store, w)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (store, w) = single_param_store(1.5);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        adam.step(&store).unwrap();
        assert_eq!(w.item(), 1.5);
    }

    #[test]
    fn one_step_on_square_descends() {
        // f(w) = w^2 from w = 1: the update must reduce w.
        let (store, w) = single_param_store(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        let loss = w.mul(&w).unwrap();
        loss.backward().unwrap();
        adam.step(&store).unwrap();
        assert!(w.item() < 1.0);
    }

    /// Independent scalar recurrence for Adam on f(w) = (w-2)^2.
    fn adam_oracle(mut w: f64, steps: usize, alpha: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * (w - 2.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            w -= alpha * m_hat / (v_hat.sqrt() + eps);
        }
        w
    }

    #[test]
    fn two_hundred_steps_track_the_scalar_recurrence() {
        let (store, w) = single_param_store(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.05));
        let minus_two = Value::scalar(-2.0);
        for _ in 0..200 {
            let diff = w.add(&minus_two).unwrap();
            let loss = diff.mul(&diff).unwrap();
            loss.backward().unwrap();
            adam.step(&store).unwrap();
        }
        let expected = adam_oracle(0.0, 200, 0.05);
        assert!(
            (w.item() as f64 - expected).abs() < 1e-3,
            "engine {} vs oracle {}",
            w.item(),
            expected
        );
        assert!((w.item() - 2.0).abs() < 0.05);
    }

    #[test]
    fn gradients_are_zeroed_after_step() {
        let (store, w) = single_param_store(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        let loss = w.mul(&w).unwrap();
        loss.backward().unwrap();
        adam.step(&store).unwrap();
        assert_eq!(w.grad()[0], 0.0);
    }

    #[test]
    fn missing_state_entry_is_internal_error() {
        let (mut store, _) = single_param_store(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        store
            .add("late", Value::parameter(Tensor::scalar(0.0)))
            .unwrap();
        assert!(matches!(adam.step(&store), Err(Error::Internal(_))));
    }
}
