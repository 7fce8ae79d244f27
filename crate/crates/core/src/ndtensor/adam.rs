use super::{ParamStore, Tensor, TensorError};

/// Adam with bias correction. Moments are kept in parameter-store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        Self::with_betas(store, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value().shape()))
                .collect::<Vec<_>>()
        };
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub(crate) fn from_parts(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step: u64,
        first: Vec<Tensor>,
        second: Vec<Tensor>,
    ) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update from the gradients accumulated in `store`, then zeroes them.
    /// A non-finite gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), TensorError> {
        if store.len() != self.first.len() {
            return Err(TensorError::InvalidArgument {
                op: "adam",
                detail: format!("state tracks {} parameters, store has {}", self.first.len(), store.len()),
            });
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.grad().is_finite()) {
            return Err(TensorError::NonFiniteGradient(p.name().to_string()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, param) in store.params_mut().iter_mut().enumerate() {
            let (value, grad) = param.parts_mut();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(x)).unwrap();
        store
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        let id = store.require("x").unwrap();
        let (_, grad) = store.get_mut(id).parts_mut();
        grad.data_mut()[0] = g;
    }

    fn value(store: &ParamStore) -> f64 {
        store.value(store.require("x").unwrap()).data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = one_param(1.5);
        let mut adam = AdamState::new(&store, 0.001);
        adam.step(&mut store).unwrap();
        assert_eq!(value(&store), 1.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut store = one_param(0.0);
        let mut adam = AdamState::new(&store, 0.01);
        let mut last = value(&store);
        let mut delta = 0.0;
        for _ in 0..200 {
            set_grad(&mut store, 3.0);
            adam.step(&mut store).unwrap();
            delta = value(&store) - last;
            last = value(&store);
        }
        assert!((delta + 0.01).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn minimizes_quadratic() {
        // loss = (x - 0)^2 starting at 1.0, textbook recursion at lr 0.01.
        let mut store = one_param(1.0);
        let mut adam = AdamState::new(&store, 0.01);
        for _ in 0..500 {
            let x = value(&store);
            set_grad(&mut store, 2.0 * x);
            adam.step(&mut store).unwrap();
        }
        assert!(value(&store).abs() < 1e-3, "x = {}", value(&store));
    }

    #[test]
    fn nan_gradient_fails_fast() {
        let mut store = one_param(1.0);
        let mut adam = AdamState::new(&store, 0.01);
        set_grad(&mut store, f64::NAN);
        assert!(matches!(adam.step(&mut store), Err(TensorError::NonFiniteGradient(_))));
        assert_eq!(value(&store), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
