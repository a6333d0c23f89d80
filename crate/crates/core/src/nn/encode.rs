//! Fixed-width state frames for the policy and critic.
//!
//! One frame per interval: for each slot `(age, p, b, slack, p_u, b_u)` and a
//! final RES entry. Times are relative to the frame's interval and scaled by
//! the horizon; amounts are scaled by config maxima.

use crate::error::{Error, Result};
use crate::market::{IhrMarketState, Snapshot};

use super::Tensor;

pub const SLOT_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeConfig {
    pub slots: usize,
    pub horizon: usize,
    /// Demand normalizer, kWh.
    pub p_max: f64,
    /// Decay-rate normalizer, $/kWh per interval.
    pub b_max: f64,
    /// RES normalizer, kW.
    pub r_max: f64,
}

impl EncodeConfig {
    pub fn width(&self) -> usize {
        self.slots * SLOT_FEATURES + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.horizon == 0 {
            return Err(Error::Config("encoder needs at least one slot and one interval".into()));
        }
        if !(self.p_max > 0.0 && self.b_max > 0.0 && self.r_max > 0.0) {
            return Err(Error::Config("encoder normalizers must be positive".into()));
        }
        Ok(())
    }
}

pub fn encode_frame(snap: &Snapshot, cfg: &EncodeConfig) -> Result<Vec<f64>> {
    let mut f = vec![0.0; cfg.width()];
    let horizon = cfg.horizon as f64;
    for (k, slot) in snap.slots.iter().enumerate() {
        let Some(c) = slot else { continue };
        if k >= cfg.slots {
            return Err(Error::Shape(format!(
                "customer {} sits in slot {k} but the encoder has {} slots",
                c.id, cfg.slots
            )));
        }
        let base = k * SLOT_FEATURES;
        f[base] = (snap.t - c.arrival) as f64 / horizon;
        f[base + 1] = c.demand / cfg.p_max;
        f[base + 2] = c.crit_rate / cfg.b_max;
        f[base + 3] = c.deadline.saturating_sub(snap.t) as f64 / horizon;
        f[base + 4] = c.unserved / cfg.p_max;
        f[base + 5] = if c.unserved > 0.0 { c.crit_rate / cfg.b_max } else { 0.0 };
    }
    f[cfg.slots * SLOT_FEATURES] = snap.res.r_p / cfg.r_max;
    Ok(f)
}

/// Frames for intervals 1..=t, shape `[t, width]`.
pub fn encode_state(state: &IhrMarketState, cfg: &EncodeConfig) -> Result<Tensor> {
    let mut data = Vec::with_capacity(state.t * cfg.width());
    let mut rows = 0;
    for snap in state.frames() {
        data.extend(encode_frame(snap, cfg)?);
        rows += 1;
    }
    Tensor::new(vec![rows, cfg.width()], data)
}

/// Critic input: frame plus the normalized interval index.
pub fn critic_features(frame: &[f64], t: usize, horizon: usize) -> Vec<f64> {
    let mut v = frame.to_vec();
    v.push(t as f64 / horizon as f64);
    v
}
