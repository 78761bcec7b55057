use crate::model::Model;

/// SGD with heavy-ball momentum and coupled weight decay:
/// `g += wd * p; v = momentum * v + g; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Model,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: model.zeros_like() }
    }

    pub fn step(&mut self, model: &mut Model, grad: &Model, lr: f64) {
        let (m, wd) = (self.momentum, self.weight_decay);
        for ((p, g), v) in model.tensors_mut().into_iter().zip(grad.tensors()).zip(self.velocity.tensors_mut()) {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                let d = gi + wd * *pi;
                *vi = m * *vi + d;
                *pi -= lr * *vi;
            }
        }
    }
}
