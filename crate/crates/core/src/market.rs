//! Per-IHR online matching market.
//!
//! Time is a 1-based interval index. A fresh [`IhrMarketState`] sits at
//! `t = 0`; [`step_arrivals`] opens interval `t + 1`, after which exactly one
//! [`apply_match`] settles that interval. Energy is in kWh per interval,
//! prices in $/kWh.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::netmodel::IhrId;

pub type CustomerId = u64;

/// Remaining demand below this is treated as served.
pub const SERVED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Supply {
    Grid,
    Res,
}

impl Supply {
    pub fn as_str(self) -> &'static str {
        match self {
            Supply::Grid => "grid",
            Supply::Res => "res",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Customer {
    pub id: CustomerId,
    /// IHR the customer is physically attached to.
    pub home: IhrId,
    pub arrival: usize,
    /// Requested energy, kWh.
    pub demand: f64,
    pub deadline: usize,
    pub crit_control: f64,
    /// Willingness decay, $/kWh per interval.
    pub crit_rate: f64,
    pub unserved: f64,
    pub flexible: bool,
}

impl Customer {
    /// Flexible load whose willingness decays from `price` at arrival to
    /// `(1 - crit_control) * price` at the deadline.
    pub fn flexible(
        id: CustomerId,
        home: IhrId,
        arrival: usize,
        demand: f64,
        deadline: usize,
        crit_control: f64,
        price: f64,
    ) -> Result<Self> {
        if deadline <= arrival {
            return Err(Error::Market(format!(
                "customer {id}: flexible load needs deadline > arrival ({deadline} <= {arrival})"
            )));
        }
        if !(0.0..=1.0).contains(&crit_control) {
            return Err(Error::Market(format!(
                "customer {id}: crit_control {crit_control} outside [0,1]"
            )));
        }
        check_demand(id, demand)?;
        Ok(Self {
            id,
            home,
            arrival,
            demand,
            deadline,
            crit_control,
            crit_rate: crit_control * price / (deadline - arrival) as f64,
            unserved: demand,
            flexible: true,
        })
    }

    /// Inflexible load that must be served in its arrival interval.
    pub fn inflexible(id: CustomerId, home: IhrId, t: usize, demand: f64) -> Result<Self> {
        check_demand(id, demand)?;
        Ok(Self {
            id,
            home,
            arrival: t,
            demand,
            deadline: t,
            crit_control: 0.0,
            crit_rate: 0.0,
            unserved: demand,
            flexible: false,
        })
    }

    pub fn willingness(&self, price: f64, t: usize) -> Result<f64> {
        willingness(price, self, t)
    }
}

fn check_demand(id: CustomerId, demand: f64) -> Result<()> {
    if !(demand.is_finite() && demand >= 0.0) {
        return Err(Error::Market(format!("customer {id}: invalid demand {demand}")));
    }
    Ok(())
}

/// π = c − b·(t − a) for a ≤ t ≤ d.
pub fn willingness(price: f64, cust: &Customer, t: usize) -> Result<f64> {
    if t < cust.arrival || t > cust.deadline {
        return Err(Error::Market(format!(
            "customer {} not active at t={t} (window [{}, {}])",
            cust.id, cust.arrival, cust.deadline
        )));
    }
    Ok(price - cust.crit_rate * (t - cust.arrival) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResState {
    /// Available active output, kW.
    pub r_p: f64,
    /// Inverter apparent capacity, kVA.
    pub r_s: f64,
}

impl ResState {
    pub fn new(r_p: f64, r_s: f64) -> Result<Self> {
        if !(r_p >= 0.0 && r_p <= r_s && r_s.is_finite()) {
            return Err(Error::Market(format!(
                "RES state needs 0 <= r_p <= r_s, got r_p={r_p}, r_s={r_s}"
            )));
        }
        Ok(Self { r_p, r_s })
    }
}

/// Market view at the start of one interval, after arrivals and before matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    /// Customer occupying each slot.
    pub slots: Vec<Option<Customer>>,
    pub res: ResState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhrMarketState {
    pub ihr: IhrId,
    pub t: usize,
    pub active: Vec<Customer>,
    pub res: ResState,
    pub price: f64,
    /// Inflexible reactive load, kVAr.
    pub base_q: f64,
    /// Slot cap n̄.
    pub max_slots: usize,
    slot_of: BTreeMap<CustomerId, usize>,
    /// Snapshots of intervals 1..t-1.
    pub history: Vec<Snapshot>,
    /// Snapshot of interval t (None before the first interval).
    pub current: Option<Snapshot>,
}

impl IhrMarketState {
    pub fn new(ihr: IhrId, price: f64, max_slots: usize) -> Self {
        Self {
            ihr,
            t: 0,
            active: Vec::new(),
            res: ResState::default(),
            price,
            base_q: 0.0,
            max_slots,
            slot_of: BTreeMap::new(),
            history: Vec::new(),
            current: None,
        }
    }

    pub fn customer(&self, id: CustomerId) -> Option<&Customer> {
        self.active.iter().find(|c| c.id == id)
    }

    pub fn slot(&self, id: CustomerId) -> Option<usize> {
        self.slot_of.get(&id).copied()
    }

    pub fn willingness_of(&self, cust: &Customer) -> Result<f64> {
        willingness(self.price, cust, self.t)
    }

    /// Snapshots for intervals 1..=t.
    pub fn frames(&self) -> impl Iterator<Item = &Snapshot> {
        self.history.iter().chain(self.current.iter())
    }

    fn snapshot(&self) -> Snapshot {
        let mut slots = vec![None; self.max_slots];
        for c in &self.active {
            if let Some(&k) = self.slot_of.get(&c.id) {
                slots[k] = Some(c.clone());
            }
        }
        Snapshot {
            t: self.t,
            slots,
            res: self.res,
        }
    }
}

/// Opens interval t+1 with the given arrivals and RES state.
pub fn step_arrivals(
    state: &IhrMarketState,
    arrivals: Vec<Customer>,
    res: ResState,
    base_q: f64,
) -> Result<IhrMarketState> {
    let t = state.t + 1;
    if arrivals.len() > state.max_slots {
        return Err(Error::Market(format!(
            "{} arrivals at t={t} exceed the cap of {}",
            arrivals.len(),
            state.max_slots
        )));
    }
    let mut next = state.clone();
    if let Some(cur) = next.current.take() {
        next.history.push(cur);
    }
    next.t = t;
    next.res = ResState::new(res.r_p, res.r_s)?;
    next.base_q = base_q;
    for mut c in arrivals {
        if c.arrival != t {
            return Err(Error::Market(format!(
                "customer {} arrives at {} but the market is opening t={t}",
                c.id, c.arrival
            )));
        }
        if next.slot_of.contains_key(&c.id) {
            return Err(Error::Market(format!("customer {} is already active", c.id)));
        }
        let used: BTreeSet<usize> = next.slot_of.values().copied().collect();
        let slot = (0..next.max_slots).find(|k| !used.contains(k)).ok_or_else(|| {
            Error::Market(format!(
                "no free slot for customer {} at t={t} ({} active)",
                c.id,
                next.active.len()
            ))
        })?;
        c.unserved = c.demand;
        next.slot_of.insert(c.id, slot);
        next.active.push(c);
    }
    next.current = Some(next.snapshot());
    Ok(next)
}

/// Continuous matching decision for one interval, kWh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchAmounts {
    entries: BTreeMap<(Supply, CustomerId), f64>,
}

impl MatchAmounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `kwh` to the (supply, customer) entry; non-positive amounts are ignored.
    pub fn add(&mut self, supply: Supply, id: CustomerId, kwh: f64) {
        if kwh > 0.0 {
            *self.entries.entry((supply, id)).or_insert(0.0) += kwh;
        }
    }

    pub fn set(&mut self, supply: Supply, id: CustomerId, kwh: f64) {
        if kwh > 0.0 {
            self.entries.insert((supply, id), kwh);
        } else {
            self.entries.remove(&(supply, id));
        }
    }

    pub fn get(&self, supply: Supply, id: CustomerId) -> f64 {
        self.entries.get(&(supply, id)).copied().unwrap_or(0.0)
    }

    pub fn customer_total(&self, id: CustomerId) -> f64 {
        self.get(Supply::Grid, id) + self.get(Supply::Res, id)
    }

    pub fn supply_total(&self, supply: Supply) -> f64 {
        self.entries
            .iter()
            .filter(|((s, _), _)| *s == supply)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Supply, CustomerId, f64)> + '_ {
        self.entries.iter().map(|(&(s, id), &v)| (s, id, v))
    }
}

fn supply_cost(price: f64, supply: Supply) -> f64 {
    match supply {
        Supply::Grid => price,
        Supply::Res => 0.0,
    }
}

/// Σ (π − c_j)·M for the matches in `m` at the state's interval.
pub fn welfare_of(state: &IhrMarketState, m: &MatchAmounts) -> Result<f64> {
    let mut w = 0.0;
    for (s, id, kwh) in m.iter() {
        let c = state
            .customer(id)
            .ok_or_else(|| Error::Market(format!("match refers to inactive customer {id}")))?;
        w += (state.willingness_of(c)? - supply_cost(state.price, s)) * kwh;
    }
    Ok(w)
}

/// One settled match, for episode dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub t: usize,
    pub customer: CustomerId,
    pub supply: Supply,
    pub kwh: f64,
    pub willingness: f64,
    pub welfare: f64,
}

pub fn match_records(state: &IhrMarketState, m: &MatchAmounts) -> Result<Vec<MatchRecord>> {
    m.iter()
        .map(|(s, id, kwh)| {
            let c = state
                .customer(id)
                .ok_or_else(|| Error::Market(format!("match refers to inactive customer {id}")))?;
            let pi = state.willingness_of(c)?;
            Ok(MatchRecord {
                t: state.t,
                customer: id,
                supply: s,
                kwh,
                willingness: pi,
                welfare: (pi - supply_cost(state.price, s)) * kwh,
            })
        })
        .collect()
}

pub fn records_to_csv(records: &[MatchRecord]) -> String {
    let mut out = String::from("t,customer,supply,kwh,willingness,welfare\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            r.customer,
            r.supply.as_str(),
            r.kwh,
            r.willingness,
            r.welfare
        );
    }
    out
}

/// Settles interval t. Fails if a customer is over-served, RES is
/// oversubscribed, or a customer at its deadline is left unserved.
pub fn apply_match(state: &IhrMarketState, m: &MatchAmounts, dt: f64) -> Result<(IhrMarketState, f64)> {
    let (next, w, dropped) = settle(state, m, dt, &BTreeSet::new())?;
    debug_assert!(dropped.is_empty());
    Ok((next, w))
}

/// Like [`apply_match`], but customers in `exempt` that reach their deadline
/// unserved are removed instead of raising an error. Returns the removed
/// customers with their remaining demand.
pub fn apply_match_exempt(
    state: &IhrMarketState,
    m: &MatchAmounts,
    dt: f64,
    exempt: &BTreeSet<CustomerId>,
) -> Result<(IhrMarketState, f64, Vec<Customer>)> {
    settle(state, m, dt, exempt)
}

fn settle(
    state: &IhrMarketState,
    m: &MatchAmounts,
    dt: f64,
    exempt: &BTreeSet<CustomerId>,
) -> Result<(IhrMarketState, f64, Vec<Customer>)> {
    let t = state.t;
    let tol = |x: f64| SERVED_EPS.max(1e-12 * x.abs());
    for (_, id, kwh) in m.iter() {
        if !(kwh.is_finite() && kwh >= 0.0) {
            return Err(Error::Market(format!("invalid match amount {kwh} for customer {id}")));
        }
        if state.customer(id).is_none() {
            return Err(Error::Market(format!("match refers to inactive customer {id}")));
        }
    }
    let res_used = m.supply_total(Supply::Res);
    let res_avail = state.res.r_p * dt;
    if res_used > res_avail + tol(res_avail) {
        return Err(Error::ResOversubscribed {
            t,
            matched: res_used,
            available: res_avail,
        });
    }
    let welfare = welfare_of(state, m)?;
    let mut next = state.clone();
    let mut dropped = Vec::new();
    let mut keep = Vec::with_capacity(next.active.len());
    for mut c in std::mem::take(&mut next.active) {
        let got = m.customer_total(c.id);
        if got > c.unserved + tol(c.unserved) {
            return Err(Error::OverServed {
                customer: c.id,
                matched: got,
                remaining: c.unserved,
            });
        }
        c.unserved = (c.unserved - got).max(0.0);
        if c.unserved < SERVED_EPS {
            c.unserved = 0.0;
            next.slot_of.remove(&c.id);
            continue;
        }
        if c.deadline <= t {
            if exempt.contains(&c.id) {
                next.slot_of.remove(&c.id);
                dropped.push(c);
                continue;
            }
            return Err(Error::DeadlineViolated {
                customer: c.id,
                t,
                unserved: c.unserved,
            });
        }
        keep.push(c);
    }
    next.active = keep;
    Ok((next, welfare, dropped))
}

/// Net grid draw of an IHR, kW.
pub fn net_active_flow(m: &MatchAmounts, dt: f64) -> f64 {
    m.supply_total(Supply::Grid) / dt
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactiveCaps {
    pub q_min: f64,
    pub q_max: f64,
}

/// Reactive window of an IHR from its inverter headroom and base reactive load.
pub fn reactive_caps(r_s: f64, r_p: f64, base_q: f64) -> Result<ReactiveCaps> {
    if r_p > r_s || r_p < 0.0 {
        return Err(Error::Market(format!("RES output {r_p} kW outside [0, {r_s}] kVA")));
    }
    let head = (r_s * r_s - r_p * r_p).sqrt();
    Ok(ReactiveCaps {
        q_min: base_q - head,
        q_max: base_q + head,
    })
}

pub fn reactive_capacities(state: &IhrMarketState) -> Result<ReactiveCaps> {
    reactive_caps(state.res.r_s, state.res.r_p, state.base_q)
}

/// Exogenous inputs of one IHR over a day: arrivals, RES and base reactive
/// load for intervals 1..=T (index 0 is interval 1).
#[derive(Debug, Clone, PartialEq)]
pub struct IhrEpisode {
    pub ihr: IhrId,
    pub price: f64,
    pub dt: f64,
    pub arrivals: Vec<Vec<Customer>>,
    pub res: Vec<ResState>,
    pub base_q: Vec<f64>,
}

impl IhrEpisode {
    pub fn horizon(&self) -> usize {
        self.arrivals.len()
    }

    pub fn customers(&self) -> impl Iterator<Item = &Customer> {
        self.arrivals.iter().flatten()
    }

    pub fn max_arrivals(&self) -> usize {
        self.arrivals.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Opens interval `t` (1-based) on `state`.
    pub fn open(&self, state: &IhrMarketState, t: usize) -> Result<IhrMarketState> {
        step_arrivals(state, self.arrivals[t - 1].clone(), self.res[t - 1], self.base_q[t - 1])
    }
}
