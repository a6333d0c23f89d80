//! Feed-forward value network: tanh hidden layers, linear scalar output.

use rand::Rng;

use super::{init_uniform, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CriticConfig {
    pub input_dim: usize,
    /// Hidden widths; empty gives a linear model.
    pub hidden: Vec<usize>,
}

impl CriticConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![16],
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub cfg: CriticConfig,
    pub params: ParamSet,
}

#[derive(Debug, Clone)]
pub struct CriticCache {
    /// Layer inputs; the last entry feeds the output layer.
    acts: Vec<Vec<f64>>,
    pub value: f64,
}

impl CriticParams {
    pub fn init<R: Rng + ?Sized>(cfg: CriticConfig, rng: &mut R) -> Result<Self> {
        Self::build(cfg, |shape, fan_in| init_uniform(shape, fan_in, rng))
    }

    pub fn zeros(cfg: CriticConfig) -> Result<Self> {
        Self::build(cfg, |shape, _| Tensor::zeros(shape))
    }

    fn build(cfg: CriticConfig, mut weight: impl FnMut(Vec<usize>, usize) -> Tensor) -> Result<Self> {
        if cfg.input_dim == 0 || cfg.hidden.contains(&0) {
            return Err(Error::Config("critic layer widths must be positive".into()));
        }
        let w = cfg.widths();
        let mut p = ParamSet::new();
        for l in 0..w.len() - 1 {
            p.push(format!("critic.l{l}.w"), weight(vec![w[l + 1], w[l]], w[l]));
            p.push(format!("critic.l{l}.b"), Tensor::zeros(vec![w[l + 1]]));
        }
        Ok(Self { cfg, params: p })
    }

    pub fn from_params(cfg: CriticConfig, params: ParamSet) -> Result<Self> {
        if !Self::zeros(cfg.clone())?.params.same_layout(&params) {
            return Err(Error::Shape(
                "parameter layout does not match the critic configuration".into(),
            ));
        }
        Ok(Self { cfg, params })
    }

    pub fn forward(&self, x: &[f64]) -> Result<CriticCache> {
        if x.len() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "critic input has {} features, expected {}",
                x.len(),
                self.cfg.input_dim
            )));
        }
        let layers = self.params.tensors().len() / 2;
        let mut acts = vec![x.to_vec()];
        let mut value = 0.0;
        for l in 0..layers {
            let out = affine(self.params.get(2 * l), self.params.get(2 * l + 1), acts.last().unwrap());
            if l + 1 == layers {
                value = out[0];
            } else {
                acts.push(out.into_iter().map(f64::tanh).collect());
            }
        }
        Ok(CriticCache { acts, value })
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.value)
    }

    /// Gradient of `dv · V(x)` with respect to the parameters.
    pub fn backward(&self, cache: &CriticCache, dv: f64) -> ParamSet {
        let mut grads = self.params.zeros_like();
        let layers = self.params.tensors().len() / 2;
        let mut delta = vec![dv];
        for l in (0..layers).rev() {
            let input = &cache.acts[l];
            let w = self.params.get(2 * l);
            let (rows, cols) = (w.shape()[0], w.shape()[1]);
            {
                let gw = grads.get_mut(2 * l).data_mut();
                for r in 0..rows {
                    for c in 0..cols {
                        gw[r * cols + c] = delta[r] * input[c];
                    }
                }
            }
            grads.get_mut(2 * l + 1).data_mut().copy_from_slice(&delta);
            if l > 0 {
                let wd = w.data();
                delta = (0..cols)
                    .map(|c| {
                        let g: f64 = (0..rows).map(|r| wd[r * cols + c] * delta[r]).sum();
                        // input is tanh output of the previous layer
                        g * (1.0 - input[c] * input[c])
                    })
                    .collect();
            }
        }
        grads
    }
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data()
        .chunks(cols)
        .zip(b.data())
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}
