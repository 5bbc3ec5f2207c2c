//! Adaptive-moment (Adam) updates over flat parameter groups.

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// One moment buffer per group; `sizes[i]` is the length of group `i`.
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advances the shared step counter; call once before updating the groups.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, group: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert!(self.step > 0, "begin_step not called");
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (m, v) = (&mut self.m[group], &mut self.v[group]);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
