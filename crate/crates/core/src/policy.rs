//! Discrete matching policy pieces: Bernoulli sampling of match bits, RES-first
//! allocation, the deadline override, the matching-on-arrival baseline and the
//! hindsight LP oracle.

use std::collections::BTreeMap;

use rand::{Rng, RngExt};

use crate::conic::{ConeSettings, ConeStatus, ProblemBuilder};
use crate::error::{Error, Result};
use crate::market::{CustomerId, IhrEpisode, IhrMarketState, MatchAmounts, Supply, SERVED_EPS};

/// Match bit per active customer.
pub type DiscreteMatch = BTreeMap<CustomerId, bool>;

/// Match probability per active customer, each in (0, 1).
pub type MatchProbabilities = BTreeMap<CustomerId, f64>;

/// Draws every bit independently; returns the bits and their joint log-probability.
pub fn sample_discrete<R: Rng + ?Sized>(probs: &MatchProbabilities, rng: &mut R) -> (DiscreteMatch, f64) {
    let mut bits = DiscreteMatch::new();
    let mut logp = 0.0;
    for (&id, &p) in probs {
        let u: f64 = rng.random();
        let bit = u < p;
        logp += if bit { p.ln() } else { (1.0 - p).ln() };
        bits.insert(id, bit);
    }
    (bits, logp)
}

/// Active customers ordered by descending willingness, then earlier
/// deadline, then lower id.
pub fn priority_order(state: &IhrMarketState) -> Result<Vec<CustomerId>> {
    let mut keyed = Vec::with_capacity(state.active.len());
    for c in &state.active {
        keyed.push((state.willingness_of(c)?, c.deadline, c.id));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(keyed.into_iter().map(|k| k.2).collect())
}

/// Bit-1 customers get their full remainder, RES first and grid once RES runs
/// out; leftover RES then goes to bit-0 customers. Both passes follow
/// [`priority_order`].
pub fn allocate_res_first(bits: &DiscreteMatch, state: &IhrMarketState, dt: f64) -> Result<MatchAmounts> {
    let order = priority_order(state)?;
    let mut res = state.res.r_p * dt;
    let mut m = MatchAmounts::new();
    let bit = |id: &CustomerId| bits.get(id).copied().unwrap_or(false);
    for id in order.iter().filter(|id| bit(id)) {
        let need = state.customer(*id).map_or(0.0, |c| c.unserved);
        let r = need.min(res);
        res -= r;
        m.add(Supply::Res, *id, r);
        m.add(Supply::Grid, *id, need - r);
    }
    for id in order.iter().filter(|id| !bit(id)) {
        if res <= 0.0 {
            break;
        }
        let need = state.customer(*id).map_or(0.0, |c| c.unserved);
        let r = need.min(res);
        res -= r;
        m.add(Supply::Res, *id, r);
    }
    Ok(m)
}

/// Tops up every customer at its deadline to its full remainder from grid.
pub fn deadline_override(m: &MatchAmounts, state: &IhrMarketState) -> MatchAmounts {
    let mut out = m.clone();
    for c in state.active.iter().filter(|c| c.deadline == state.t) {
        let short = c.unserved - m.customer_total(c.id);
        if short > SERVED_EPS {
            out.add(Supply::Grid, c.id, short);
        }
    }
    out
}

/// ν∘φ for a given bit vector.
pub fn compose(bits: &DiscreteMatch, state: &IhrMarketState, dt: f64) -> Result<MatchAmounts> {
    Ok(deadline_override(&allocate_res_first(bits, state, dt)?, state))
}

/// Baseline: serve everyone now, RES first in priority order.
pub fn match_on_arrival(state: &IhrMarketState, dt: f64) -> Result<MatchAmounts> {
    let bits: DiscreteMatch = state.active.iter().map(|c| (c.id, true)).collect();
    allocate_res_first(&bits, state, dt)
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub welfare: f64,
    /// Matches for intervals 1..=T.
    pub schedule: Vec<MatchAmounts>,
}

/// Welfare-maximizing schedule with full knowledge of the day.
pub fn offline_oracle(ep: &IhrEpisode, settings: &ConeSettings) -> Result<OracleResult> {
    let horizon = ep.horizon();
    let mut pb = ProblemBuilder::new();
    // (t, supply, customer, var)
    let mut vars: Vec<(usize, Supply, CustomerId, usize)> = Vec::new();
    let mut res_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); horizon + 1];
    for c in ep.customers() {
        if c.demand <= 0.0 {
            continue;
        }
        let last = c.deadline.min(horizon);
        let mut row = Vec::new();
        for t in c.arrival..=last {
            let pi = c.willingness(ep.price, t)?;
            let g = pb.var(-(pi - ep.price));
            vars.push((t, Supply::Grid, c.id, g));
            row.push((g, 1.0));
            pb.le(vec![(g, -1.0)], 0.0);
            if ep.res[t - 1].r_p > 0.0 {
                let r = pb.var(-pi);
                vars.push((t, Supply::Res, c.id, r));
                row.push((r, 1.0));
                pb.le(vec![(r, -1.0)], 0.0);
                res_rows[t].push((r, 1.0));
            }
        }
        if c.deadline > horizon {
            return Err(Error::Market(format!(
                "customer {} has deadline {} past the horizon {horizon}",
                c.id, c.deadline
            )));
        }
        pb.eq(row, c.demand);
    }
    for (t, row) in res_rows.into_iter().enumerate().skip(1) {
        if !row.is_empty() {
            pb.le(row, ep.res[t - 1].r_p * ep.dt);
        }
    }
    let mut schedule = vec![MatchAmounts::new(); horizon];
    if pb.num_vars() == 0 {
        return Ok(OracleResult { welfare: 0.0, schedule });
    }
    let sol = pb.build()?.solve(settings)?;
    if sol.status != ConeStatus::Optimal {
        return Err(Error::Solver(format!("hindsight LP ended with {:?}", sol.status)));
    }
    for (t, s, id, v) in vars {
        let x = sol.x[v];
        if x > 1e-10 {
            schedule[t - 1].add(s, id, x);
        }
    }
    Ok(OracleResult {
        welfare: -sol.primal_obj,
        schedule,
    })
}
