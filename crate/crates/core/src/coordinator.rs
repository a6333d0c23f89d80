//! Hierarchical loop: IHR matching, reports, central OPF, curtailment
//! re-dispatch and day-level records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conic::ConeSettings;
use crate::error::{Error, Result};
use crate::learn::{decide, episode_seed, Agent, BitRule};
use crate::market::{
    apply_match_exempt, match_records, net_active_flow, reactive_capacities, Customer, CustomerId, IhrEpisode,
    IhrMarketState, MatchAmounts, ResState, Supply, SERVED_EPS,
};
use crate::netmodel::IhrId;
use crate::opf::{build_instance, solve, IhrReport, OpfInstance, OpfSolution, OpfStatus, Prices, ReducedNetwork};
use crate::policy::{compose, match_on_arrival};
use crate::scenario::EpisodeData;

/// Market id of the pooled market in centralized mode.
pub const CENTRAL: IhrId = 0;

/// Curtailment below this many per-unit is treated as none.
pub const CURTAIL_TOL_PU: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum IhrPolicy {
    MatchOnArrival,
    Learned(Agent),
}

impl IhrPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            IhrPolicy::MatchOnArrival => "MA",
            IhrPolicy::Learned(_) => "LA",
        }
    }

    fn slots(&self, ep: &IhrEpisode) -> usize {
        match self {
            IhrPolicy::MatchOnArrival => ep.customers().count().max(1),
            IhrPolicy::Learned(a) => a.enc.slots,
        }
    }

    fn decide(&self, state: &IhrMarketState, dt: f64, rule: BitRule, seed: u64) -> Result<MatchAmounts> {
        match self {
            IhrPolicy::MatchOnArrival => match_on_arrival(state, dt),
            IhrPolicy::Learned(agent) => {
                let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(seed, state.t as u64, state.ihr));
                let (bits, _, _) = decide(agent, state, None, rule, &mut rng)?;
                compose(&bits, state, dt)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One market per IHR.
    Decentralized,
    /// One market over all customers with pooled RES.
    Centralized,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Decentralized => "decentralized",
            Mode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DayConfig {
    pub prices: Prices,
    pub settings: ConeSettings,
    pub rule: BitRule,
    pub seed: u64,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: usize,
    pub ihr: IhrId,
    pub customer: CustomerId,
    /// Energy left unserved at the deadline, kWh.
    pub unserved: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Redispatch {
    pub matches: MatchAmounts,
    /// Grid energy removed per customer, kWh; added back to their remaining demand.
    pub cut: Vec<(CustomerId, f64)>,
    /// Customers at their deadline who lost energy.
    pub violations: Vec<CustomerId>,
}

/// Removes `energy` kWh of grid matches in ascending willingness, later
/// deadlines first among equals. Customers selected by `first` are cut
/// before all others.
fn cut_grid(
    state: &IhrMarketState,
    m: &MatchAmounts,
    energy: f64,
    first: &dyn Fn(&Customer) -> bool,
) -> Result<Redispatch> {
    let available = m.supply_total(Supply::Grid);
    if !(energy.is_finite() && energy >= 0.0) {
        return Err(Error::Market(format!("invalid curtailment {energy} kWh")));
    }
    if energy > available + SERVED_EPS {
        return Err(Error::Market(format!(
            "curtailment {energy} kWh exceeds the {available} kWh matched from grid"
        )));
    }
    let mut order = Vec::new();
    for (s, id, kwh) in m.iter() {
        if s != Supply::Grid || kwh <= 0.0 {
            continue;
        }
        let c = state
            .customer(id)
            .ok_or_else(|| Error::Market(format!("match refers to inactive customer {id}")))?;
        order.push((
            !first(c),
            state.willingness_of(c)?,
            std::cmp::Reverse(c.deadline),
            id,
            kwh,
        ));
    }
    order.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut left = energy.min(available);
    let mut out = m.clone();
    let mut cut = Vec::new();
    let mut violations = Vec::new();
    for (_, _, _, id, kwh) in order {
        if left <= 0.0 {
            break;
        }
        let take = kwh.min(left);
        left -= take;
        out.set(Supply::Grid, id, kwh - take);
        cut.push((id, take));
        if state.customer(id).is_some_and(|c| c.deadline == state.t) {
            violations.push(id);
        }
    }
    Ok(Redispatch {
        matches: out,
        cut,
        violations,
    })
}

/// Applies a curtailment of `p_c_kw` to one IHR's matches.
pub fn redispatch(state: &IhrMarketState, m: &MatchAmounts, p_c_kw: f64, dt: f64) -> Result<Redispatch> {
    cut_grid(state, m, p_c_kw * dt, &|_| false)
}

/// Per-home welfare of a match set.
fn welfare_by_home(state: &IhrMarketState, m: &MatchAmounts) -> Result<BTreeMap<IhrId, f64>> {
    let mut out = BTreeMap::new();
    for r in match_records(state, m)? {
        let home = state.customer(r.customer).map_or(state.ihr, |c| c.home);
        *out.entry(home).or_insert(0.0) += r.welfare;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IntervalResult {
    pub t: usize,
    pub pre_welfare: BTreeMap<IhrId, f64>,
    pub curtailment_kw: BTreeMap<IhrId, f64>,
    pub reports: Vec<IhrReport>,
    pub instance: OpfInstance,
    pub opf: OpfSolution,
    pub post_welfare: BTreeMap<IhrId, f64>,
    pub violations: Vec<Violation>,
    /// OPF failed and every grid match was dropped.
    pub fallback: bool,
}

/// Per-IHR RES output used for attributing pooled RES in centralized mode.
pub type ResByIhr = BTreeMap<IhrId, ResState>;

/// One interval of the hierarchy. Each market must already be opened at `t`.
/// In centralized mode `markets` holds the single pooled market and
/// `res_by_ihr` the physical RES of each IHR.
pub fn run_interval(
    markets: &BTreeMap<IhrId, IhrMarketState>,
    policies: &BTreeMap<IhrId, IhrPolicy>,
    reduced: &ReducedNetwork,
    res_by_ihr: &ResByIhr,
    dt: f64,
    cfg: &DayConfig,
) -> Result<(BTreeMap<IhrId, IhrMarketState>, IntervalResult)> {
    let t = markets
        .values()
        .next()
        .map(|s| s.t)
        .ok_or_else(|| Error::Config("no markets".into()))?;
    if markets.values().any(|s| s.t != t) {
        return Err(Error::Config("markets are at different intervals".into()));
    }
    let decided: Vec<Result<(IhrId, MatchAmounts)>> = markets
        .par_iter()
        .map(|(id, state)| {
            let pol = policies
                .get(id)
                .ok_or_else(|| Error::Config(format!("no policy for market {id}")))?;
            Ok((*id, pol.decide(state, dt, cfg.rule, cfg.seed)?))
        })
        .collect();
    let matches: BTreeMap<IhrId, MatchAmounts> = decided.into_iter().collect::<Result<_>>()?;

    let mut pre_welfare = BTreeMap::new();
    for (id, m) in &matches {
        for (h, w) in welfare_by_home(&markets[id], m)? {
            *pre_welfare.entry(h).or_insert(0.0) += w;
        }
    }
    let reports = build_reports(markets, &matches, reduced, res_by_ihr, dt, cfg.mode)?;
    for r in &reports {
        pre_welfare.entry(r.ihr).or_insert(0.0);
    }
    let instance = build_instance(&reports, reduced, cfg.prices)?;
    let opf = solve(&instance, &cfg.settings)?;

    let base = reduced.net.base();
    let mut curtail = BTreeMap::new();
    let fallback = opf.status != OpfStatus::Optimal;
    for r in &reports {
        let k = reduced.net.bus_index(reduced.ihr_node[&r.ihr]).unwrap();
        let p_net = r.p_net_kw.max(0.0);
        let p_c = if fallback {
            p_net
        } else if opf.p_c[k] <= CURTAIL_TOL_PU {
            0.0
        } else {
            base.pu_to_kw(opf.p_c[k]).min(p_net)
        };
        curtail.insert(r.ihr, p_c);
    }

    let mut next = BTreeMap::new();
    let mut post_welfare: BTreeMap<IhrId, f64> = pre_welfare.keys().map(|h| (*h, 0.0)).collect();
    let mut violations = Vec::new();
    for (id, state) in markets {
        let m = &matches[id];
        let rd = match cfg.mode {
            Mode::Decentralized => {
                let p_c = curtail.get(id).copied().unwrap_or(0.0);
                // fallback drops the whole grid draw, not just the positive net part
                let energy = if fallback {
                    m.supply_total(Supply::Grid)
                } else {
                    p_c * dt
                };
                cut_grid(state, m, energy, &|_| false)?
            }
            Mode::Centralized => {
                let hit: BTreeSet<IhrId> = curtail.iter().filter(|(_, p)| **p > 0.0).map(|(h, _)| *h).collect();
                let grid = m.supply_total(Supply::Grid);
                let energy = if fallback {
                    grid
                } else {
                    (curtail.values().sum::<f64>() * dt).min(grid)
                };
                cut_grid(state, m, energy, &|c| hit.contains(&c.home))?
            }
        };
        let exempt: BTreeSet<CustomerId> = rd.violations.iter().copied().collect();
        let after = welfare_by_home(state, &rd.matches)?;
        let (settled, _, dropped) = apply_match_exempt(state, &rd.matches, dt, &exempt)?;
        for (h, w) in after {
            *post_welfare.entry(h).or_insert(0.0) += w;
        }
        for c in dropped {
            violations.push(Violation {
                t,
                ihr: c.home,
                customer: c.id,
                unserved: c.unserved,
            });
        }
        next.insert(*id, settled);
    }
    Ok((
        next,
        IntervalResult {
            t,
            pre_welfare,
            curtailment_kw: curtail,
            reports,
            instance,
            opf,
            post_welfare,
            violations,
            fallback,
        },
    ))
}

fn build_reports(
    markets: &BTreeMap<IhrId, IhrMarketState>,
    matches: &BTreeMap<IhrId, MatchAmounts>,
    reduced: &ReducedNetwork,
    res_by_ihr: &ResByIhr,
    dt: f64,
    mode: Mode,
) -> Result<Vec<IhrReport>> {
    let mut out = Vec::new();
    match mode {
        Mode::Decentralized => {
            for &ihr in reduced.ihr_node.keys() {
                let Some(state) = markets.get(&ihr) else {
                    out.push(IhrReport {
                        ihr,
                        p_net_kw: 0.0,
                        q_min_kvar: 0.0,
                        q_max_kvar: 0.0,
                    });
                    continue;
                };
                let caps = reactive_capacities(state)?;
                out.push(IhrReport {
                    ihr,
                    p_net_kw: net_active_flow(&matches[&ihr], dt),
                    q_min_kvar: caps.q_min,
                    q_max_kvar: caps.q_max,
                });
            }
        }
        Mode::Centralized => {
            let state = markets
                .get(&CENTRAL)
                .ok_or_else(|| Error::Config("centralized mode needs the pooled market".into()))?;
            let m = &matches[&CENTRAL];
            let total_rp: f64 = res_by_ihr.values().map(|r| r.r_p).sum();
            let res_used = m.supply_total(Supply::Res) / dt;
            let mut load: BTreeMap<IhrId, f64> = BTreeMap::new();
            let mut base_q: BTreeMap<IhrId, f64> = BTreeMap::new();
            for c in &state.active {
                *load.entry(c.home).or_insert(0.0) += m.customer_total(c.id) / dt;
            }
            // pooled base_q is the sum; split it evenly over IHRs with an inverter entry
            let n = res_by_ihr.len().max(1) as f64;
            for h in res_by_ihr.keys() {
                base_q.insert(*h, state.base_q / n);
            }
            for &ihr in reduced.ihr_node.keys() {
                let res = res_by_ihr.get(&ihr).copied().unwrap_or_default();
                let share = if total_rp > 0.0 { res.r_p / total_rp } else { 0.0 };
                let caps = crate::market::reactive_caps(res.r_s, res.r_p, base_q.get(&ihr).copied().unwrap_or(0.0))?;
                out.push(IhrReport {
                    ihr,
                    p_net_kw: load.get(&ihr).copied().unwrap_or(0.0) - share * res_used,
                    q_min_kvar: caps.q_min,
                    q_max_kvar: caps.q_max,
                });
            }
        }
    }
    Ok(out)
}

/// Merges per-IHR episodes into the pooled market's episode.
pub fn pool_episodes(data: &EpisodeData) -> Result<IhrEpisode> {
    let horizon = data.horizon;
    let mut arrivals = vec![Vec::new(); horizon];
    let mut res = vec![ResState::default(); horizon];
    let mut base_q = vec![0.0; horizon];
    for ep in data.ihrs.values() {
        if ep.horizon() != horizon {
            return Err(Error::Shape(format!(
                "IHR {} episode has {} intervals",
                ep.ihr,
                ep.horizon()
            )));
        }
        for t in 0..horizon {
            arrivals[t].extend(ep.arrivals[t].iter().cloned());
            res[t].r_p += ep.res[t].r_p;
            res[t].r_s += ep.res[t].r_s;
            base_q[t] += ep.base_q[t];
        }
    }
    Ok(IhrEpisode {
        ihr: CENTRAL,
        price: data.price,
        dt: data.dt,
        arrivals,
        res,
        base_q,
    })
}

#[derive(Debug, Clone)]
pub struct DayReport {
    pub mode: Mode,
    pub intervals: Vec<IntervalResult>,
}

impl DayReport {
    pub fn total_pre(&self) -> f64 {
        self.intervals.iter().flat_map(|r| r.pre_welfare.values()).sum()
    }

    pub fn total_post(&self) -> f64 {
        self.intervals.iter().flat_map(|r| r.post_welfare.values()).sum()
    }

    pub fn post_by_ihr(&self) -> BTreeMap<IhrId, f64> {
        let mut out = BTreeMap::new();
        for r in &self.intervals {
            for (h, w) in &r.post_welfare {
                *out.entry(*h).or_insert(0.0) += w;
            }
        }
        out
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.intervals.iter().flat_map(|r| r.violations.iter())
    }

    /// Node voltages outside their bounds by more than `tol`, as (t, bus, v_sq).
    pub fn voltage_excursions(&self, tol: f64) -> Vec<(usize, u32, f64)> {
        let mut out = Vec::new();
        for r in self.intervals.iter().filter(|r| !r.fallback) {
            for (k, b) in r.instance.net.buses().iter().enumerate().skip(1) {
                let v = r.opf.v_sq[k];
                if !(v >= b.v_sq_min - tol && v <= b.v_sq_max + tol) {
                    out.push((r.t, b.id, v));
                }
            }
        }
        out
    }

    pub fn welfare_csv(&self) -> String {
        let mut out = String::from("t,ihr,pre,post\n");
        for r in &self.intervals {
            for (h, pre) in &r.pre_welfare {
                let _ = writeln!(
                    out,
                    "{},{h},{pre},{}",
                    r.t,
                    r.post_welfare.get(h).copied().unwrap_or(0.0)
                );
            }
        }
        out
    }

    pub fn voltage_csv(&self) -> String {
        let mut out = String::from("t,node,v_sq,v_sq_min,v_sq_max,status\n");
        for r in &self.intervals {
            for (k, b) in r.instance.net.buses().iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.t,
                    b.id,
                    r.opf.v_sq[k],
                    b.v_sq_min,
                    b.v_sq_max,
                    r.opf.status.as_str()
                );
            }
        }
        out
    }

    pub fn curtailment_csv(&self) -> String {
        let mut out = String::from("t,ihr,kw\n");
        for r in &self.intervals {
            for (h, p) in &r.curtailment_kw {
                let _ = writeln!(out, "{},{h},{p}", r.t);
            }
        }
        out
    }

    pub fn violations_csv(&self) -> String {
        let mut out = String::from("t,ihr,customer,unserved_kwh\n");
        for v in self.violations() {
            let _ = writeln!(out, "{},{},{},{}", v.t, v.ihr, v.customer, v.unserved);
        }
        out
    }
}

/// Runs every interval of one day through the hierarchy.
pub fn run_day(
    data: &EpisodeData,
    policies: &BTreeMap<IhrId, IhrPolicy>,
    reduced: &ReducedNetwork,
    cfg: &DayConfig,
) -> Result<DayReport> {
    if (data.dt - cfg.prices.dt).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "episode interval {} h differs from the price interval {} h",
            data.dt, cfg.prices.dt
        )));
    }
    for h in data.ihrs.keys() {
        if !reduced.ihr_node.contains_key(h) {
            return Err(Error::Config(format!("scenario IHR {h} is not in the partition")));
        }
    }
    let episodes: BTreeMap<IhrId, IhrEpisode> = match cfg.mode {
        Mode::Decentralized => data.ihrs.clone(),
        Mode::Centralized => [(CENTRAL, pool_episodes(data)?)].into_iter().collect(),
    };
    let mut markets = BTreeMap::new();
    for (id, ep) in &episodes {
        let pol = policies
            .get(id)
            .ok_or_else(|| Error::Config(format!("no policy for market {id}")))?;
        markets.insert(*id, IhrMarketState::new(*id, ep.price, pol.slots(ep)));
    }
    let mut intervals = Vec::with_capacity(data.horizon);
    for t in 1..=data.horizon {
        let mut opened = BTreeMap::new();
        for (id, state) in &markets {
            opened.insert(*id, episodes[id].open(state, t)?);
        }
        let res_by_ihr: ResByIhr = data.ihrs.iter().map(|(h, ep)| (*h, ep.res[t - 1])).collect();
        let (next, result) = run_interval(&opened, policies, reduced, &res_by_ihr, data.dt, cfg)?;
        markets = next;
        intervals.push(result);
    }
    Ok(DayReport {
        mode: cfg.mode,
        intervals,
    })
}
