use crate::tensor::ParamStore;

/// Shared interface of the two training optimizers.
pub trait Optimizer {
    /// Apply one update from the gradients currently held by the store.
    fn step(&mut self, store: &mut ParamStore);

    /// Restrict updates to parameters for which the filter returns true.
    /// Used to freeze the backbone during transfer training.
    fn set_filter(&mut self, filter: Option<fn(&str) -> bool>);
}

/// Adam with decoupled weight decay.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    filter: Option<fn(&str) -> bool>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, store: &ParamStore) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            filter: None,
        }
    }
}

impl Optimizer for AdamW {
    fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, p) in store.iter_mut().enumerate() {
            if let Some(f) = self.filter {
                if !f(&p.name) {
                    continue;
                }
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let grad = p.grad.clone();
            let values = std::rc::Rc::make_mut(&mut p.value);
            for i in 0..values.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                values[i] -=
                    self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * values[i]);
            }
        }
    }

    fn set_filter(&mut self, filter: Option<fn(&str) -> bool>) {
        self.filter = filter;
    }
}

/// Plain stochastic gradient descent with optional momentum.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
    filter: Option<fn(&str) -> bool>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, store: &ParamStore) -> Sgd {
        Sgd {
            lr,
            momentum,
            velocity: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            filter: None,
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        for (idx, p) in store.iter_mut().enumerate() {
            if let Some(f) = self.filter {
                if !f(&p.name) {
                    continue;
                }
            }
            let vel = &mut self.velocity[idx];
            let grad = p.grad.clone();
            let values = std::rc::Rc::make_mut(&mut p.value);
            for i in 0..values.len() {
                vel[i] = self.momentum * vel[i] + grad[i];
                values[i] -= self.lr * vel[i];
            }
        }
    }

    fn set_filter(&mut self, filter: Option<fn(&str) -> bool>) {
        self.filter = filter;
    }
}
