use serde::{Deserialize, Serialize};

use super::{DenseNet, Grads, NnError};

/// Descent on the loss whose gradient is `grads`.
pub trait Optimizer {
    fn step(&mut self, net: &mut DenseNet, grads: &Grads) -> Result<(), NnError>;
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
}

/// `θ ← θ − lr · g`.
pub fn optimizer_step(net: &mut DenseNet, grads: &Grads, lr: f64) -> Result<(), NnError> {
    Sgd { lr }.step(net, grads)
}

fn check(net: &DenseNet, grads: &Grads) -> Result<(), NnError> {
    if grads.weights.len() != net.layers().len() {
        return Err(NnError::Shape {
            expected: net.layers().len(),
            found: grads.weights.len(),
        });
    }
    for (l, (w, b)) in net.layers().iter().zip(grads.weights.iter().zip(&grads.bias)) {
        if w.len() != l.weights.len() || b.len() != l.bias.len() {
            return Err(NnError::Shape {
                expected: l.weights.len() + l.bias.len(),
                found: w.len() + b.len(),
            });
        }
    }
    if !grads.is_finite() {
        return Err(NnError::NonFinite("gradient"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, net: &mut DenseNet, grads: &Grads) -> Result<(), NnError> {
        check(net, grads)?;
        for (l, (gw, gb)) in net.layers_mut().iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            l.weights.iter_mut().zip(gw).for_each(|(p, g)| *p -= self.lr * g);
            l.bias.iter_mut().zip(gb).for_each(|(p, g)| *p -= self.lr * g);
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Grads,
    v: Grads,
    t: u64,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, net: &mut DenseNet, grads: &Grads) -> Result<(), NnError> {
        check(net, grads)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr * c2.sqrt() / c1;
        let eps = self.eps * c2.sqrt();
        for (i, l) in net.layers_mut().iter_mut().enumerate() {
            let params = l
                .weights
                .iter_mut()
                .zip(&grads.weights[i])
                .zip(self.m.weights[i].iter_mut().zip(self.v.weights[i].iter_mut()));
            let biases = l
                .bias
                .iter_mut()
                .zip(&grads.bias[i])
                .zip(self.m.bias[i].iter_mut().zip(self.v.bias[i].iter_mut()));
            for ((p, &g), (m, v)) in params.chain(biases) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}
