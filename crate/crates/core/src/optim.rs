//! AdamW with decoupled weight decay.

/// Per-parameter first/second moment state keyed by registration order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First/second moment vectors in registration order (for checkpoints).
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Reinstate a checkpointed optimizer: moment vectors must pair up.
    pub fn restore_moments(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert_eq!(m.len(), v.len(), "moment vector count mismatch");
        self.step = step;
        self.m = m;
        self.v = v;
    }

    /// One update over all parameters. `params[i]` pairs with `grads[i]`;
    /// parameter order must stay stable across calls. Decay is decoupled:
    /// it scales the parameter directly, not the gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        while self.m.len() < params.len() {
            let i = self.m.len();
            self.m.push(vec![0.0; params[i].len()]);
            self.v.push(vec![0.0; params[i].len()]);
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(param.len(), grad.len(), "param {} grad size mismatch", i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..param.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                param[j] -=
                    self.lr * mhat / (vhat.sqrt() + self.eps) + self.lr * self.weight_decay * param[j];
            }
        }
    }
}
