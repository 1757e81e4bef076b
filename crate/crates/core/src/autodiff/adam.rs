use super::{ParamId, ParameterStore};

/// Adam with per-parameter step counters.
///
/// Each parameter keeps its own bias-correction step, so stepping a subset of
/// the store (independent sub-networks) behaves exactly like running a
/// separate optimizer for that subset.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            steps: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, store: &ParameterStore) {
        for (id, p) in store.iter().skip(self.first.len()) {
            debug_assert_eq!(id.index(), self.first.len());
            self.first.push(vec![0.0; p.value().len()]);
            self.second.push(vec![0.0; p.value().len()]);
            self.steps.push(0);
        }
    }

    /// Updates every parameter from its accumulated gradient, then zeroes all
    /// gradients.
    pub fn step(&mut self, store: &mut ParameterStore, learning_rate: f64) {
        let ids: Vec<ParamId> = store.ids().collect();
        self.step_subset(store, learning_rate, &ids);
    }

    /// Updates only `ids`; every gradient in the store is zeroed afterwards.
    pub fn step_subset(&mut self, store: &mut ParameterStore, learning_rate: f64, ids: &[ParamId]) {
        self.ensure(store);
        for &id in ids {
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as f64;
            let c1 = 1.0 - self.beta1.powf(t);
            let c2 = 1.0 - self.beta2.powf(t);
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((w, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        store.zero_grad();
    }
}
