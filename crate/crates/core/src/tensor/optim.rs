use crate::error::{Error, Result};

use super::Tensor;

/// Plain SGD with heavy-ball momentum. Holds one velocity buffer per
/// parameter, created lazily on the first step.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be non-negative, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must be in [0,1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    /// `v ← μ·v + g; p ← p − lr·v`, then zeroes every gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::usage(format!("parameter {i} has no gradient")));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len()
            || self
                .velocity
                .iter()
                .zip(params.iter())
                .any(|(v, p)| v.len() != p.numel())
        {
            return Err(Error::usage("parameter list changed between optimizer steps"));
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let (grad, data) = p.grad_and_data_mut();
            let grad = grad.expect("checked above");
            for ((w, g), vel) in data.iter_mut().zip(grad.iter_mut()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + *g;
                *w -= self.lr * *vel;
                *g = 0.0;
            }
        }
        Ok(())
    }
}

/// One stateless SGD step (fresh zero velocity).
pub fn sgd_step(params: &mut [&mut Tensor], lr: f32, momentum: f32) -> Result<()> {
    Sgd::new(lr, momentum)?.step(params)
}
