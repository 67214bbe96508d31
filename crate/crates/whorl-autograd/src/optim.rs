//! Adam optimizer.

use crate::param::Param;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// When false (the default here), weight decay is added to the gradient
    /// before the moment updates, i.e. classic Adam with L2 regularization.
    /// When true the decay is applied directly to the weights after the Adam
    /// step instead.
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled_weight_decay: false,
        }
    }
}

pub struct Adam {
    params: Vec<Param>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub cfg: AdamConfig,
}

impl Adam {
    pub fn new(params: Vec<Param>, cfg: AdamConfig) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            t: 0,
            cfg,
        }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update from the gradients currently accumulated on the parameters.
    /// Gradients are not cleared; call [`Adam::zero_grad`] before the next
    /// accumulation.
    pub fn step(&mut self) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let grad = p.grad();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_value(|val| {
                for j in 0..val.len() {
                    let mut g = grad[j];
                    if !c.decoupled_weight_decay {
                        g += c.weight_decay * val[j];
                    }
                    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    val[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                    if c.decoupled_weight_decay {
                        val[j] -= c.lr * c.weight_decay * val[j];
                    }
                }
            });
        }
    }

    /// Step counter (number of updates applied).
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub(crate) fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub(crate) fn restore_state(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert_eq!(m.len(), self.params.len(), "optimizer state size mismatch");
        assert_eq!(v.len(), self.params.len(), "optimizer state size mismatch");
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
