use super::params::ParamStore;
use super::tape::Tensor;

pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Adam with bias correction. Moment buffers follow the store's parameter order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients are read, not modified.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| Tensor::zeros(p.value.dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }

    /// First and second moment buffers flattened in store order.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let flat = |xs: &[Tensor]| xs.iter().flat_map(|t| t.iter().copied()).collect();
        (flat(&self.m), flat(&self.v))
    }

    /// Restores optimizer state saved by [`Adam::moments`].
    pub fn restore(&mut self, store: &ParamStore, step: u64, m: &[f64], v: &[f64]) -> bool {
        if m.len() != store.num_scalars() || v.len() != store.num_scalars() {
            return false;
        }
        let unflatten = |flat: &[f64]| {
            let mut offset = 0;
            store
                .iter()
                .map(|p| {
                    let n = p.value.len();
                    let t = Tensor::from_shape_vec(p.value.dim(), flat[offset..offset + n].to_vec())
                        .expect("shape matches length");
                    offset += n;
                    t
                })
                .collect()
        };
        self.m = unflatten(m);
        self.v = unflatten(v);
        self.step = step;
        true
    }
}

/// Global L2 norm of all gradients.
pub fn global_grad_norm(store: &ParamStore) -> f64 {
    store.iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = global_grad_norm(store);
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in store.params_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, -2.0]]).unwrap();
        *store.grad_mut(id) = array![[3.0, -0.5]];
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store);
        let w = store.value(id);
        assert!((w[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[[0, 1]] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(*store.grad(id), array![[3.0, -0.5]]);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.7]]).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.value(id)[[0, 0]], 0.7);
    }

    #[test]
    fn minimizes_square() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0]]).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..100 {
            let w = store.value(id)[[0, 0]];
            store.grad_mut(id)[[0, 0]] = 2.0 * w;
            adam.step(&mut store);
        }
        assert!(store.value(id)[[0, 0]].abs() < 0.1);
    }

    #[test]
    fn clipping() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[0.0, 0.0]]).unwrap();
        *store.grad_mut(a) = array![[6.0, 8.0]];
        assert_eq!(clip_gradients(&mut store, 5.0), 10.0);
        assert_eq!(*store.grad(a), array![[3.0, 4.0]]);
        // Already within bounds: untouched, and the 3-4-5 norm comes back.
        assert_eq!(clip_gradients(&mut store, 5.0), 5.0);
        assert_eq!(*store.grad(a), array![[3.0, 4.0]]);
        *store.grad_mut(a) = array![[0.6, 0.8]];
        assert_eq!(clip_gradients(&mut store, 5.0), 1.0);
        assert_eq!(*store.grad(a), array![[0.6, 0.8]]);
    }
}
