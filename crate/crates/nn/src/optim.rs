//! Parameter update rules. State is kept per parameter, in the order the
//! parameters are passed to `step`.

use crate::layers::Param;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.t = 0;
        }
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for (p, vel) in params.iter_mut().zip(&mut self.m) {
                    for ((w, g), u) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                        *u = momentum * *u + g.to_f64_lossy();
                        *w = T::from_f64_lossy(w.to_f64_lossy() - lr * *u);
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powf(self.t as f64);
                let bc2 = 1.0 - beta2.powf(self.t as f64);
                for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    for (((w, g), mk), vk) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g.to_f64_lossy();
                        *mk = beta1 * *mk + (1.0 - beta1) * g;
                        *vk = beta2 * *vk + (1.0 - beta2) * g * g;
                        let update = lr * (*mk / bc1) / ((*vk / bc2).sqrt() + eps);
                        *w = T::from_f64_lossy(w.to_f64_lossy() - update);
                    }
                }
            }
        }
    }
}
