//! Plain SGD with classical momentum: v = mu * v + g, p -= lr * v.
//!
//! Velocities are kept per parameter slot so one optimizer instance
//! serves a whole network; matrix and vector parameters use separate
//! slot spaces.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SgdMomentum {
    lr: f64,
    momentum: f64,
    vel2: Vec<Option<Array2<f64>>>,
    vel1: Vec<Option<Array1<f64>>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidParam(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParam(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            vel2: Vec::new(),
            vel1: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Schedules adjust the rate between epochs; velocities persist.
    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step2(&mut self, slot: usize, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let (lr, mu) = (self.lr, self.momentum);
        if self.vel2.len() <= slot {
            self.vel2.resize(slot + 1, None);
        }
        let v = self.vel2[slot].get_or_insert_with(|| Array2::zeros(param.dim()));
        v.zip_mut_with(grad, |vv, &g| *vv = mu * *vv + g);
        param.zip_mut_with(v, |p, &vv| *p -= lr * vv);
    }

    pub fn step1(&mut self, slot: usize, param: &mut Array1<f64>, grad: &Array1<f64>) {
        let (lr, mu) = (self.lr, self.momentum);
        if self.vel1.len() <= slot {
            self.vel1.resize(slot + 1, None);
        }
        let v = self.vel1[slot].get_or_insert_with(|| Array1::zeros(param.len()));
        v.zip_mut_with(grad, |vv, &g| *vv = mu * *vv + g);
        param.zip_mut_with(v, |p, &vv| *p -= lr * vv);
    }
}
