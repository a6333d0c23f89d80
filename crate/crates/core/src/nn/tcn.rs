//! Temporal convolution network: residual blocks of two dilated causal
//! convolutions, then a per-step linear head whose sigmoid gives one match
//! probability per customer slot.

use rand::{Rng, RngExt};

use super::{init_uniform, sigmoid, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TcnConfig {
    pub input_dim: usize,
    /// Output width (slot count).
    pub outputs: usize,
    pub filters: usize,
    pub kernel: usize,
    pub blocks: usize,
    /// Block k uses dilation `dilation_base^k`.
    pub dilation_base: usize,
    pub dropout: f64,
}

impl TcnConfig {
    pub fn new(input_dim: usize, outputs: usize) -> Self {
        Self {
            input_dim,
            outputs,
            filters: 4,
            kernel: 3,
            blocks: 3,
            dilation_base: 4,
            dropout: 0.1,
        }
    }

    pub fn dilation(&self, block: usize) -> usize {
        self.dilation_base.pow(block as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.outputs == 0 || self.filters == 0 || self.blocks == 0 {
            return Err(Error::Config("TCN dimensions must be positive".into()));
        }
        if self.kernel == 0 || self.dilation_base == 0 {
            return Err(Error::Config("TCN kernel and dilation must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    fn in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.input_dim
        } else {
            self.filters
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    down: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnParams {
    pub cfg: TcnConfig,
    pub params: ParamSet,
}

impl TcnParams {
    pub fn init<R: Rng + ?Sized>(cfg: TcnConfig, rng: &mut R) -> Result<Self> {
        Self::build(cfg, |shape, fan_in| init_uniform(shape, fan_in, rng))
    }

    pub fn zeros(cfg: TcnConfig) -> Result<Self> {
        Self::build(cfg, |shape, _| Tensor::zeros(shape))
    }

    fn build(cfg: TcnConfig, mut weight: impl FnMut(Vec<usize>, usize) -> Tensor) -> Result<Self> {
        cfg.validate()?;
        let (f, k) = (cfg.filters, cfg.kernel);
        let mut p = ParamSet::new();
        for b in 0..cfg.blocks {
            let cin = cfg.in_channels(b);
            p.push(format!("block{b}.conv1.w"), weight(vec![f, cin, k], cin * k));
            p.push(format!("block{b}.conv1.b"), Tensor::zeros(vec![f]));
            p.push(format!("block{b}.conv2.w"), weight(vec![f, f, k], f * k));
            p.push(format!("block{b}.conv2.b"), Tensor::zeros(vec![f]));
            if cin != f {
                p.push(format!("block{b}.down.w"), weight(vec![f, cin], cin));
                p.push(format!("block{b}.down.b"), Tensor::zeros(vec![f]));
            }
        }
        p.push("head.w", weight(vec![cfg.outputs, f], f));
        p.push("head.b", Tensor::zeros(vec![cfg.outputs]));
        Ok(Self { cfg, params: p })
    }

    /// Rebuilds from a parameter set, checking names and shapes.
    pub fn from_params(cfg: TcnConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::zeros(cfg.clone())?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Shape(
                "parameter layout does not match the TCN configuration".into(),
            ));
        }
        Ok(Self { cfg, params })
    }

    fn block_idx(&self) -> Vec<BlockIdx> {
        let mut i = 0;
        let mut out = Vec::new();
        for b in 0..self.cfg.blocks {
            let has_down = self.cfg.in_channels(b) != self.cfg.filters;
            let idx = BlockIdx {
                w1: i,
                b1: i + 1,
                w2: i + 2,
                b2: i + 3,
                down: has_down.then_some((i + 4, i + 5)),
            };
            i += if has_down { 6 } else { 4 };
            out.push(idx);
        }
        out
    }

    fn head_idx(&self) -> (usize, usize) {
        let n = self.params.tensors().len();
        (n - 2, n - 1)
    }

    /// Forward pass over frames `[t, input_dim]`. With `masks`, dropout is
    /// applied (training mode).
    pub fn forward(&self, x: &Tensor, masks: Option<&DropoutMasks>) -> Result<TcnCache> {
        let cfg = &self.cfg;
        if x.shape().len() != 2 || x.shape()[1] != cfg.input_dim {
            return Err(Error::Shape(format!(
                "TCN input must be [t, {}], got {:?}",
                cfg.input_dim,
                x.shape()
            )));
        }
        let t = x.rows();
        if let Some(m) = masks {
            if m.horizon < t || m.masks.len() != cfg.blocks || m.filters != cfg.filters {
                return Err(Error::Shape("dropout masks do not cover the input".into()));
            }
        }
        let f = cfg.filters;
        let mut h = x.data().to_vec();
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for (b, idx) in self.block_idx().into_iter().enumerate() {
            let cin = cfg.in_channels(b);
            let d = cfg.dilation(b);
            let p = &self.params;
            let a1 = conv_forward(&h, t, cin, p.get(idx.w1).data(), p.get(idx.b1).data(), f, cfg.kernel, d);
            let mut o1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
            if let Some(m) = masks {
                apply_mask(&mut o1, &m.masks[b].0);
            }
            let a2 = conv_forward(&o1, t, f, p.get(idx.w2).data(), p.get(idx.b2).data(), f, cfg.kernel, d);
            let mut o2: Vec<f64> = a2.iter().map(|v| v.max(0.0)).collect();
            if let Some(m) = masks {
                apply_mask(&mut o2, &m.masks[b].1);
            }
            let res = match idx.down {
                Some((wd, bd)) => conv_forward(&h, t, cin, p.get(wd).data(), p.get(bd).data(), f, 1, 1),
                None => h.clone(),
            };
            let s: Vec<f64> = o2.iter().zip(&res).map(|(a, b)| a + b).collect();
            let out: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
            blocks.push(BlockCache {
                input: std::mem::replace(&mut h, out),
                a1,
                o1,
                a2,
                s,
            });
        }
        let (hw, hb) = self.head_idx();
        let logits = conv_forward(
            &h,
            t,
            f,
            self.params.get(hw).data(),
            self.params.get(hb).data(),
            cfg.outputs,
            1,
            1,
        );
        Ok(TcnCache {
            t,
            blocks,
            hidden: h,
            logits,
            masks: masks.cloned(),
        })
    }

    /// Gradient of Σ dlogits·logits with respect to every parameter.
    pub fn backward(&self, cache: &TcnCache, dlogits: &[f64]) -> Result<ParamSet> {
        let cfg = &self.cfg;
        let t = cache.t;
        if dlogits.len() != t * cfg.outputs || cache.blocks.len() != cfg.blocks {
            return Err(Error::Shape(
                "upstream gradient or cache does not match the forward pass".into(),
            ));
        }
        let f = cfg.filters;
        let mut grads = self.params.zeros_like();
        let (hw, hb) = self.head_idx();
        let (dw, db, mut dh) = conv_backward(
            &cache.hidden,
            t,
            f,
            self.params.get(hw).data(),
            cfg.outputs,
            1,
            1,
            dlogits,
        );
        grads.get_mut(hw).data_mut().copy_from_slice(&dw);
        grads.get_mut(hb).data_mut().copy_from_slice(&db);
        let idxs = self.block_idx();
        for b in (0..cfg.blocks).rev() {
            let idx = idxs[b];
            let bc = &cache.blocks[b];
            let cin = cfg.in_channels(b);
            let d = cfg.dilation(b);
            let ds: Vec<f64> = dh
                .iter()
                .zip(&bc.s)
                .map(|(g, s)| if *s > 0.0 { *g } else { 0.0 })
                .collect();
            // residual branch
            let mut dinput = match idx.down {
                Some((wd, bd)) => {
                    let (gw, gb, dx) = conv_backward(&bc.input, t, cin, self.params.get(wd).data(), f, 1, 1, &ds);
                    grads.get_mut(wd).data_mut().copy_from_slice(&gw);
                    grads.get_mut(bd).data_mut().copy_from_slice(&gb);
                    dx
                }
                None => ds.clone(),
            };
            // conv2
            let mut da2 = ds;
            if let Some(m) = &cache.masks {
                apply_mask(&mut da2, &m.masks[b].1);
            }
            relu_grad(&mut da2, &bc.a2);
            let (gw, gb, mut do1) = conv_backward(&bc.o1, t, f, self.params.get(idx.w2).data(), f, cfg.kernel, d, &da2);
            grads.get_mut(idx.w2).data_mut().copy_from_slice(&gw);
            grads.get_mut(idx.b2).data_mut().copy_from_slice(&gb);
            // conv1
            if let Some(m) = &cache.masks {
                apply_mask(&mut do1, &m.masks[b].0);
            }
            relu_grad(&mut do1, &bc.a1);
            let (gw, gb, dx) = conv_backward(
                &bc.input,
                t,
                cin,
                self.params.get(idx.w1).data(),
                f,
                cfg.kernel,
                d,
                &do1,
            );
            grads.get_mut(idx.w1).data_mut().copy_from_slice(&gw);
            grads.get_mut(idx.b1).data_mut().copy_from_slice(&gb);
            for (a, b) in dinput.iter_mut().zip(&dx) {
                *a += b;
            }
            dh = dinput;
        }
        Ok(grads)
    }

    /// Forward in training mode (fresh dropout masks from `rng`) or eval mode.
    pub fn forward_sampled<R: Rng + ?Sized>(&self, x: &Tensor, train_mode: bool, rng: &mut R) -> Result<TcnCache> {
        if train_mode {
            let masks = DropoutMasks::sample(&self.cfg, x.rows(), rng);
            self.forward(x, Some(&masks))
        } else {
            self.forward(x, None)
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    o1: Vec<f64>,
    a2: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TcnCache {
    t: usize,
    blocks: Vec<BlockCache>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    masks: Option<DropoutMasks>,
}

impl TcnCache {
    pub fn steps(&self) -> usize {
        self.t
    }

    /// Pre-sigmoid outputs, row-major `[t, outputs]`.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_at(&self, step: usize) -> &[f64] {
        let w = self.logits.len() / self.t.max(1);
        &self.logits[step * w..(step + 1) * w]
    }

    pub fn probs_at(&self, step: usize) -> Vec<f64> {
        self.logits_at(step).iter().map(|z| sigmoid(*z)).collect()
    }
}

/// Inverted-dropout masks for every block, fixed for a whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    horizon: usize,
    filters: usize,
    masks: Vec<(Vec<f64>, Vec<f64>)>,
}

impl DropoutMasks {
    pub fn sample<R: Rng + ?Sized>(cfg: &TcnConfig, horizon: usize, rng: &mut R) -> Self {
        let keep = 1.0 - cfg.dropout;
        let n = horizon * cfg.filters;
        let mut draw = || -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if cfg.dropout == 0.0 || rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let masks = (0..cfg.blocks).map(|_| (draw(), draw())).collect();
        Self {
            horizon,
            filters: cfg.filters,
            masks,
        }
    }
}

fn apply_mask(x: &mut [f64], mask: &[f64]) {
    for (v, m) in x.iter_mut().zip(mask) {
        *v *= m;
    }
}

fn relu_grad(g: &mut [f64], pre: &[f64]) {
    for (v, a) in g.iter_mut().zip(pre) {
        if *a <= 0.0 {
            *v = 0.0;
        }
    }
}

/// y[s][o] = b[o] + Σ_i Σ_j w[o][i][j]·x[s − (k−1−j)·d][i]
#[allow(clippy::too_many_arguments)]
fn conv_forward(x: &[f64], t: usize, cin: usize, w: &[f64], b: &[f64], cout: usize, k: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; t * cout];
    for s in 0..t {
        let row = &mut y[s * cout..(s + 1) * cout];
        row.copy_from_slice(b);
        for j in 0..k {
            let lag = (k - 1 - j) * d;
            if lag > s {
                continue;
            }
            let xr = &x[(s - lag) * cin..(s - lag + 1) * cin];
            for (o, yo) in row.iter_mut().enumerate() {
                let base = o * cin * k;
                let mut acc = 0.0;
                for (i, xi) in xr.iter().enumerate() {
                    acc += w[base + i * k + j] * xi;
                }
                *yo += acc;
            }
        }
    }
    y
}

/// Returns (dw, db, dx) for [`conv_forward`].
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    t: usize,
    cin: usize,
    w: &[f64],
    cout: usize,
    k: usize,
    d: usize,
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dw = vec![0.0; cout * cin * k];
    let mut db = vec![0.0; cout];
    let mut dx = vec![0.0; t * cin];
    for s in 0..t {
        let g = &dy[s * cout..(s + 1) * cout];
        for (o, go) in g.iter().enumerate() {
            db[o] += go;
        }
        for j in 0..k {
            let lag = (k - 1 - j) * d;
            if lag > s {
                continue;
            }
            let src = s - lag;
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                let base = o * cin * k;
                for i in 0..cin {
                    dw[base + i * k + j] += go * x[src * cin + i];
                    dx[src * cin + i] += go * w[base + i * k + j];
                }
            }
        }
    }
    (dw, db, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, rel_err};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(t: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![t, c], (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn weighted_sum(net: &TcnParams, x: &Tensor, masks: Option<&DropoutMasks>, wts: &[f64]) -> f64 {
        let c = net.forward(x, masks).unwrap();
        c.logits().iter().zip(wts).map(|(a, b)| a * b).sum()
    }

    fn check_grad(cfg: TcnConfig, t: usize, seed: u64, dropout: bool) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = TcnParams::init(cfg.clone(), &mut rng).unwrap();
        // nudge biases off zero so ReLU kinks are unlikely at the test point
        let mut net = net;
        for (name, tens) in net.params.names().to_vec().iter().zip(0..) {
            if name.ends_with(".b") {
                for v in net.params.get_mut(tens).data_mut() {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
        }
        let x = random_input(t, cfg.input_dim, seed + 1);
        let masks = dropout.then(|| DropoutMasks::sample(&cfg, t, &mut rng));
        let wts: Vec<f64> = (0..t * cfg.outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = net.forward(&x, masks.as_ref()).unwrap();
        let g = net.backward(&cache, &wts).unwrap().flat();
        let theta = net.params.flat();
        let fd = central_difference(
            |th| {
                let mut n = net.clone();
                n.params.set_flat(th).unwrap();
                weighted_sum(&n, &x, masks.as_ref(), &wts)
            },
            &theta,
            1e-5,
        );
        rel_err(&g, &fd)
    }

    #[test]
    fn zero_weights_give_half() {
        let net = TcnParams::zeros(TcnConfig::new(5, 3)).unwrap();
        let c = net.forward(&random_input(4, 5, 1), None).unwrap();
        for s in 0..4 {
            assert!(c.probs_at(s).iter().all(|p| *p == 0.5));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = TcnParams::init(TcnConfig::new(5, 3), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let c = net.forward(&random_input(6, 5, 1), None).unwrap();
        let g = net.backward(&c, &[0.0; 18]).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn single_parameter_net_gradient() {
        let cfg = TcnConfig {
            input_dim: 1,
            outputs: 1,
            filters: 1,
            kernel: 1,
            blocks: 1,
            dilation_base: 1,
            dropout: 0.0,
        };
        assert!(check_grad(cfg, 3, 5, false) <= 1e-6);
    }

    #[test]
    fn default_net_gradient() {
        let cfg = TcnConfig::new(13, 2);
        assert!(check_grad(cfg.clone(), 24, 7, false) <= 1e-6);
        assert!(check_grad(cfg, 24, 8, true) <= 1e-6);
    }

    #[test]
    fn dropout_masks_reproducible() {
        let cfg = TcnConfig::new(5, 2);
        let net = TcnParams::init(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = random_input(10, 5, 3);
        let a = net
            .forward_sampled(&x, true, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap();
        let b = net
            .forward_sampled(&x, true, &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap();
        assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn prefix_forward_matches_full_forward() {
        let cfg = TcnConfig::new(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = TcnParams::init(cfg.clone(), &mut rng).unwrap();
        let x = random_input(12, 5, 9);
        let masks = DropoutMasks::sample(&cfg, 12, &mut rng);
        let full = net.forward(&x, Some(&masks)).unwrap();
        for t in 1..=12 {
            let part = net.forward(&x.prefix(t), Some(&masks)).unwrap();
            assert_eq!(part.logits_at(t - 1), full.logits_at(t - 1));
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let net = TcnParams::zeros(TcnConfig::new(5, 2)).unwrap();
        assert!(net.forward(&random_input(3, 4, 0), None).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn causal_outputs(seed in 0u64..1000, t in 2usize..20, cut in 0usize..19, bump in -2.0f64..2.0) {
            let cut = cut % (t - 1);
            let cfg = TcnConfig::new(4, 2);
            let net = TcnParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let x = random_input(t, 4, seed + 7);
            let mut y = x.clone();
            for v in &mut y.data_mut()[(cut + 1) * 4..] {
                *v += bump;
            }
            let a = net.forward(&x, None).unwrap();
            let b = net.forward(&y, None).unwrap();
            for s in 0..=cut {
                prop_assert_eq!(a.logits_at(s), b.logits_at(s));
            }
            for s in 0..t {
                prop_assert!(a.probs_at(s).iter().all(|p| *p > 0.0 && *p < 1.0));
            }
        }
    }
}
