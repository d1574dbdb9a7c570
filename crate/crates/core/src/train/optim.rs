//! First-order optimisers over the flat parameter layout of a
//! [`Parameterized`] value.

use riskid_tape::Mat;

use crate::params::Parameterized;

fn shapes<P: Parameterized>(params: &P) -> Vec<Mat> {
    let mut out = Vec::new();
    params.visit(&mut |_, m| out.push(Mat::zeros(m.dim())));
    out
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamW {
    pub fn new<P: Parameterized>(params: &P, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros = shapes(params);
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update<P: Parameterized>(&mut self, params: &mut P, grads: &[Mat]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match the parameter layout");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr, wd) = (self.beta1, self.beta2, self.eps, self.learning_rate, self.weight_decay);
        let mut k = 0;
        params.visit_mut(&mut |_, p| {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let step = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr * (step + wd * *p);
            });
            k += 1;
        });
    }
}

/// Stochastic gradient descent with heavy-ball momentum and L2 decay.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Mat>,
}

impl SgdMomentum {
    pub fn new<P: Parameterized>(params: &P, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { learning_rate, momentum, weight_decay, velocity: shapes(params) }
    }

    pub fn update<P: Parameterized>(&mut self, params: &mut P, grads: &[Mat]) {
        assert_eq!(grads.len(), self.velocity.len(), "gradient count does not match the parameter layout");
        let (lr, mu, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        let mut k = 0;
        params.visit_mut(&mut |_, p| {
            ndarray::Zip::from(p).and(&mut self.velocity[k]).and(&grads[k]).for_each(|p, v, &g| {
                *v = mu * *v + g + wd * *p;
                *p -= lr * *v;
            });
            k += 1;
        });
    }
}
