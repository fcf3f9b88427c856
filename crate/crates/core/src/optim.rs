//! Momentum SGD with step-wise learning rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    /// Multiplier applied once per `decay_interval` epochs.
    pub decay_factor: f32,
    pub decay_interval: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            decay_factor: 0.5,
            decay_interval: 20,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config(format!("decay factor must lie in (0, 1], got {}", self.decay_factor)));
        }
        if self.decay_interval == 0 {
            return Err(Error::config("decay interval must be at least one epoch"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SgdState {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
    epoch: usize,
}

impl SgdState {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
            epoch: 0,
        })
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// `learning_rate * decay_factor^k` after `k` completed decay intervals.
    pub fn effective_learning_rate(&self) -> f32 {
        let k = (self.epoch / self.config.decay_interval) as i32;
        self.config.learning_rate * self.config.decay_factor.powi(k)
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// `v <- momentum * v - lr * g`, then `p <- p + v`, for each parameter.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::dim("parameter count changed between steps"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if !p.same_shape(g) || !p.same_shape(v) {
                return Err(Error::dim(format!(
                    "parameter {:?}, gradient {:?}, velocity {:?}",
                    p.shape(),
                    g.shape(),
                    v.shape()
                )));
            }
        }
        let lr = self.effective_learning_rate();
        let mu = self.config.momentum;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = mu * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

/// One update of a single parameter tensor; see [`SgdState::step`].
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, state: &mut SgdState) -> Result<()> {
    state.step(&mut [param], std::slice::from_ref(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f32, momentum: f32) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            decay_factor: 1.0,
            decay_interval: 1,
        }
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = Tensor::scalar(1.0);
        let mut s = SgdState::new(cfg(0.1, 0.0)).unwrap();
        sgd_step(&mut p, &Tensor::scalar(2.0), &mut s).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut s = SgdState::new(cfg(0.3, 0.0)).unwrap();
        for _ in 0..5 {
            sgd_step(&mut p, &Tensor::zeros(&[3]), &mut s).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn two_momentum_steps() {
        let mut p = Tensor::scalar(0.0);
        let mut s = SgdState::new(cfg(0.1, 0.9)).unwrap();
        sgd_step(&mut p, &Tensor::scalar(1.0), &mut s).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-7);
        sgd_step(&mut p, &Tensor::scalar(1.0), &mut s).unwrap();
        assert!((s.velocity()[0].data()[0] + 0.19).abs() < 1e-7);
        assert!((p.data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn learning_rate_decays_per_interval() {
        let mut s = SgdState::new(SgdConfig {
            learning_rate: 0.08,
            momentum: 0.9,
            decay_factor: 0.5,
            decay_interval: 20,
        })
        .unwrap();
        s.set_epoch(19);
        assert_eq!(s.effective_learning_rate(), 0.08);
        s.set_epoch(40);
        assert_eq!(s.effective_learning_rate(), 0.02);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut s = SgdState::new(cfg(0.1, 0.0)).unwrap();
        assert!(matches!(
            sgd_step(&mut p, &Tensor::zeros(&[3]), &mut s),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_momentum() {
        assert!(SgdState::new(cfg(0.1, 1.0)).is_err());
    }
}
