//! Bias-corrected ADAM over a [`ParamSet`].

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

pub const DEFAULT_ALPHA: f64 = 0.01;

/// Named learning-rate presets accepted in config files.
pub fn alpha_preset(name: &str) -> Option<f64> {
    match name {
        "default" => Some(DEFAULT_ALPHA),
        "low" => Some(0.25),
        "high" => Some(0.99),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, alpha: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, dir: Direction) -> Result<()> {
        if !params.same_layout(grads) || params.len() != self.m.len() {
            return Err(Error::Shape(
                "ADAM state, parameters and gradients differ in layout".into(),
            ));
        }
        if let Some(g) = grads.values().find(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {g}")));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let sign = match dir {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        };
        for (i, (p, g)) in params.values_mut().zip(grads.values()).enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            *p += sign * self.alpha * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
