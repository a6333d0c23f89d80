//! Radial distribution network model, per-unit conversion, DistFlow power
//! flow and IHR partition checks.
//!
//! Network files are line-oriented CSV:
//!
//! ```text
//! #base_mva=1,base_kv=12.66,slack=1
//! B,<id>,<g>,<b>,<vsqmin>,<vsqmax>
//! L,<from>,<to>,<r>,<x>,<isqmax>
//! D,<id>,<p_kw>,<q_kvar>
//! ```
//!
//! `r`, `x` are in ohm, shunts `g`, `b` in siemens and `isqmax` in A². Squared
//! voltage bounds are already per-unit. `D` rows (optional) carry a bus's
//! nominal inflexible load. Any other line starting with `#` is a comment.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub type BusId = u32;
pub type IhrId = u32;

pub const DEFAULT_BASE_MVA: f64 = 1.0;
pub const DEFAULT_BASE_KV: f64 = 12.66;

const IEEE33_TEXT: &str = include_str!("../data/ieee33.csv");
const IEEE33_PARTITION_TEXT: &str = include_str!("../data/ieee33_partition.csv");

/// Power and voltage bases for per-unit conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    pub base_mva: f64,
    pub base_kv: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            base_mva: DEFAULT_BASE_MVA,
            base_kv: DEFAULT_BASE_KV,
        }
    }
}

impl PerUnitBase {
    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Line current base in ampere.
    pub fn i_base_amp(&self) -> f64 {
        self.base_mva * 1000.0 / (3f64.sqrt() * self.base_kv)
    }

    pub fn base_kw(&self) -> f64 {
        self.base_mva * 1000.0
    }

    pub fn ohm_to_pu(&self, z: f64) -> f64 {
        z / self.z_base_ohm()
    }

    pub fn pu_to_ohm(&self, z: f64) -> f64 {
        z * self.z_base_ohm()
    }

    pub fn siemens_to_pu(&self, y: f64) -> f64 {
        y * self.z_base_ohm()
    }

    pub fn pu_to_siemens(&self, y: f64) -> f64 {
        y / self.z_base_ohm()
    }

    pub fn amp_sq_to_pu(&self, i_sq: f64) -> f64 {
        i_sq / (self.i_base_amp() * self.i_base_amp())
    }

    pub fn pu_to_amp_sq(&self, i_sq: f64) -> f64 {
        i_sq * self.i_base_amp() * self.i_base_amp()
    }

    pub fn kw_to_pu(&self, p: f64) -> f64 {
        p / self.base_kw()
    }

    pub fn pu_to_kw(&self, p: f64) -> f64 {
        p * self.base_kw()
    }
}

/// A bus with per-unit shunt and squared-voltage bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: BusId,
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub v_sq_min: f64,
    pub v_sq_max: f64,
    /// Nominal inflexible load (kW, kVAr). Interval profiles are this value
    /// scaled by a load shape.
    pub nominal_p_kw: f64,
    pub nominal_q_kvar: f64,
}

impl Bus {
    pub fn new(id: BusId, v_sq_min: f64, v_sq_max: f64) -> Self {
        Self {
            id,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v_sq_min,
            v_sq_max,
            nominal_p_kw: 0.0,
            nominal_q_kvar: 0.0,
        }
    }

    /// Inflexible load profile obtained by scaling the nominal load by `shape`.
    pub fn load_profile(&self, shape: &[f64]) -> Vec<(f64, f64)> {
        shape
            .iter()
            .map(|s| (self.nominal_p_kw * s, self.nominal_q_kvar * s))
            .collect()
    }
}

/// A line oriented parent -> child, per-unit impedance and squared current limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    pub i_sq_max: f64,
}

/// Net consumption at a bus (positive = load).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BusLoad {
    pub p_kw: f64,
    pub q_kvar: f64,
}

impl BusLoad {
    pub fn new(p_kw: f64, q_kvar: f64) -> Self {
        Self { p_kw, q_kvar }
    }
}

/// Radial network. Buses are stored in breadth-first order from the slack
/// (index 0), and `lines[k - 1]` is the parent line of bus index `k`.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    index: BTreeMap<BusId, usize>,
    base: PerUnitBase,
}

impl NetworkModel {
    /// Builds a radial model from per-unit data. Lines may be given in any
    /// orientation; they are re-oriented away from the slack.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, slack_id: BusId, base: PerUnitBase) -> Result<Self> {
        if !(base.base_mva > 0.0 && base.base_kv > 0.0) {
            return Err(Error::Network("per-unit bases must be positive".into()));
        }
        let mut raw_index = BTreeMap::new();
        for (k, b) in buses.iter().enumerate() {
            if raw_index.insert(b.id, k).is_some() {
                return Err(Error::Network(format!("duplicate bus {}", b.id)));
            }
            if !(b.g_shunt.is_finite() && b.b_shunt.is_finite()) {
                return Err(Error::Network(format!("bus {}: non-finite shunt", b.id)));
            }
            if !(b.v_sq_min > 0.0 && b.v_sq_min < b.v_sq_max && b.v_sq_max.is_finite()) {
                return Err(Error::Network(format!("bus {}: need 0 < v_sq_min < v_sq_max", b.id)));
            }
        }
        if !raw_index.contains_key(&slack_id) {
            return Err(Error::Network(format!("slack bus {slack_id} not defined")));
        }
        let mut seen = BTreeSet::new();
        for l in &lines {
            if l.from == l.to {
                return Err(Error::Network(format!("line {}-{} is a self loop", l.from, l.to)));
            }
            if !raw_index.contains_key(&l.from) || !raw_index.contains_key(&l.to) {
                return Err(Error::Network(format!(
                    "line {}-{} references an unknown bus",
                    l.from, l.to
                )));
            }
            let key = (l.from.min(l.to), l.from.max(l.to));
            if !seen.insert(key) {
                return Err(Error::Network(format!("duplicate line {}-{}", l.from, l.to)));
            }
            if !(l.r > 0.0 && l.x >= 0.0 && l.i_sq_max > 0.0) || !l.r.is_finite() || !l.x.is_finite() {
                return Err(Error::Network(format!(
                    "line {}-{}: need r > 0, x >= 0, i_sq_max > 0",
                    l.from, l.to
                )));
            }
        }
        if lines.len() + 1 != buses.len() {
            return Err(Error::Network(format!(
                "not radial: {} lines for {} buses",
                lines.len(),
                buses.len()
            )));
        }

        let mut adj: BTreeMap<BusId, Vec<usize>> = BTreeMap::new();
        for (k, l) in lines.iter().enumerate() {
            adj.entry(l.from).or_default().push(k);
            adj.entry(l.to).or_default().push(k);
        }
        // breadth-first from the slack
        let mut order = vec![slack_id];
        let mut parent_line_raw: BTreeMap<BusId, usize> = BTreeMap::new();
        let mut visited = BTreeSet::from([slack_id]);
        let mut queue = VecDeque::from([slack_id]);
        while let Some(u) = queue.pop_front() {
            for &k in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                let l = &lines[k];
                let v = if l.from == u { l.to } else { l.from };
                if visited.insert(v) {
                    parent_line_raw.insert(v, k);
                    order.push(v);
                    queue.push_back(v);
                }
            }
        }
        if order.len() != buses.len() {
            return Err(Error::Network(format!(
                "disconnected: {} of {} buses reachable from slack",
                order.len(),
                buses.len()
            )));
        }

        let index: BTreeMap<BusId, usize> = order.iter().enumerate().map(|(k, &id)| (id, k)).collect();
        let new_buses: Vec<Bus> = order.iter().map(|id| buses[raw_index[id]].clone()).collect();
        let mut new_lines = Vec::with_capacity(lines.len());
        let mut parent = vec![None; order.len()];
        let mut children = vec![Vec::new(); order.len()];
        for (k, id) in order.iter().enumerate().skip(1) {
            let raw = &lines[parent_line_raw[id]];
            let from = if raw.to == *id { raw.from } else { raw.to };
            new_lines.push(Line {
                from,
                to: *id,
                ..raw.clone()
            });
            parent[k] = Some(k - 1);
            children[index[&from]].push(k - 1);
        }
        Ok(Self {
            buses: new_buses,
            lines: new_lines,
            parent,
            children,
            index,
            base,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack_id(&self) -> BusId {
        self.buses[0].id
    }

    pub fn base(&self) -> PerUnitBase {
        self.base
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.bus_index(id).map(|k| &self.buses[k])
    }

    /// Index of the parent line of bus index `k` (None for the slack).
    pub fn parent_line(&self, k: usize) -> Option<usize> {
        self.parent[k]
    }

    /// Bus index of the parent of bus index `k`.
    pub fn parent_bus(&self, k: usize) -> Option<usize> {
        self.parent[k].map(|l| self.index[&self.lines[l].from])
    }

    /// Child line indices of bus index `k`.
    pub fn child_lines(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn nominal_loads(&self) -> Vec<BusLoad> {
        self.buses
            .iter()
            .map(|b| BusLoad::new(b.nominal_p_kw, b.nominal_q_kvar))
            .collect()
    }

    /// Bundled IEEE 33-bus feeder.
    pub fn ieee33() -> Self {
        parse_network(IEEE33_TEXT).expect("bundled feeder is valid")
    }

    /// Serializes back to the physical-unit CSV format.
    pub fn to_csv(&self) -> String {
        let b = self.base;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#base_mva={},base_kv={},slack={}",
            b.base_mva,
            b.base_kv,
            self.slack_id()
        );
        for bus in &self.buses {
            let _ = writeln!(
                out,
                "B,{},{},{},{},{}",
                bus.id,
                b.pu_to_siemens(bus.g_shunt),
                b.pu_to_siemens(bus.b_shunt),
                bus.v_sq_min,
                bus.v_sq_max
            );
        }
        for l in &self.lines {
            let _ = writeln!(
                out,
                "L,{},{},{},{},{}",
                l.from,
                l.to,
                b.pu_to_ohm(l.r),
                b.pu_to_ohm(l.x),
                b.pu_to_amp_sq(l.i_sq_max)
            );
        }
        for bus in &self.buses {
            if bus.nominal_p_kw != 0.0 || bus.nominal_q_kvar != 0.0 {
                let _ = writeln!(out, "D,{},{},{}", bus.id, bus.nominal_p_kw, bus.nominal_q_kvar);
            }
        }
        out
    }
}

/// Parses `#key=value,key=value` header lines. Returns None for plain comments.
pub(crate) fn parse_header(line: &str) -> Option<Vec<(String, String)>> {
    let body = line.strip_prefix('#')?.trim();
    let first = body.split(',').next()?;
    if !first.contains('=') {
        return None;
    }
    Some(
        body.split(',')
            .filter_map(|kv| {
                let (k, v) = kv.split_once('=')?;
                Some((k.trim().to_string(), v.trim().to_string()))
            })
            .collect(),
    )
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, line: usize, what: &str) -> Result<T> {
    let raw = fields
        .get(i)
        .ok_or_else(|| Error::parse(line, format!("missing field {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {what}: {raw:?}")))
}

/// Parses the network CSV format and converts to per-unit.
pub fn parse_network(text: &str) -> Result<NetworkModel> {
    let mut base = PerUnitBase::default();
    let mut slack: Option<BusId> = None;
    let mut buses: Vec<Bus> = Vec::new();
    let mut raw_lines: Vec<Line> = Vec::new();
    let mut loads: Vec<(usize, BusId, f64, f64)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(kvs) = parse_header(line) {
                for (k, v) in kvs {
                    let num = || -> Result<f64> {
                        v.parse()
                            .map_err(|_| Error::parse(lineno, format!("bad header value {k}={v}")))
                    };
                    match k.as_str() {
                        "base_mva" => base.base_mva = num()?,
                        "base_kv" => base.base_kv = num()?,
                        "slack" => slack = Some(v.parse().map_err(|_| Error::parse(lineno, "bad slack id"))?),
                        other => return Err(Error::parse(lineno, format!("unknown header key {other}"))),
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match fields[0].trim() {
            "B" => {
                if fields.len() != 6 {
                    return Err(Error::parse(lineno, "bus row needs 6 fields"));
                }
                let mut bus = Bus::new(
                    field(&fields, 1, lineno, "bus id")?,
                    field(&fields, 4, lineno, "vsqmin")?,
                    field(&fields, 5, lineno, "vsqmax")?,
                );
                bus.g_shunt = base.siemens_to_pu(field(&fields, 2, lineno, "g")?);
                bus.b_shunt = base.siemens_to_pu(field(&fields, 3, lineno, "b")?);
                buses.push(bus);
            }
            "L" => {
                if fields.len() != 6 {
                    return Err(Error::parse(lineno, "line row needs 6 fields"));
                }
                raw_lines.push(Line {
                    from: field(&fields, 1, lineno, "from")?,
                    to: field(&fields, 2, lineno, "to")?,
                    r: base.ohm_to_pu(field(&fields, 3, lineno, "r")?),
                    x: base.ohm_to_pu(field(&fields, 4, lineno, "x")?),
                    i_sq_max: base.amp_sq_to_pu(field(&fields, 5, lineno, "isqmax")?),
                });
            }
            "D" => {
                if fields.len() != 4 {
                    return Err(Error::parse(lineno, "load row needs 4 fields"));
                }
                loads.push((
                    lineno,
                    field(&fields, 1, lineno, "bus id")?,
                    field(&fields, 2, lineno, "p_kw")?,
                    field(&fields, 3, lineno, "q_kvar")?,
                ));
            }
            other => return Err(Error::parse(lineno, format!("unknown row type {other:?}"))),
        }
    }
    let slack = slack.ok_or_else(|| Error::Network("missing slack in header".into()))?;
    for (lineno, id, p, q) in loads {
        let bus = buses
            .iter_mut()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::parse(lineno, format!("load for unknown bus {id}")))?;
        bus.nominal_p_kw = p;
        bus.nominal_q_kvar = q;
    }
    NetworkModel::new(buses, raw_lines, slack, base)
}

/// Steady-state branch-flow solution. Line quantities are at the sending end.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    pub v_sq: Vec<f64>,
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub i_sq: Vec<f64>,
    pub p_slack: f64,
    pub q_slack: f64,
    pub iterations: usize,
}

impl PowerFlowSolution {
    /// Largest active/reactive balance mismatch at any bus, per-unit.
    pub fn kcl_residual(&self, net: &NetworkModel, loads: &[BusLoad]) -> f64 {
        let base = net.base();
        let mut worst: f64 = 0.0;
        for (k, bus) in net.buses().iter().enumerate() {
            let (out_p, out_q) = net
                .child_lines(k)
                .iter()
                .fold((0.0, 0.0), |(p, q), &c| (p + self.p_line[c], q + self.q_line[c]));
            let (in_p, in_q) = match net.parent_line(k) {
                Some(l) => {
                    let line = &net.lines()[l];
                    (
                        self.p_line[l] - line.r * self.i_sq[l],
                        self.q_line[l] - line.x * self.i_sq[l],
                    )
                }
                None => (self.p_slack, self.q_slack),
            };
            let dp = in_p - out_p - base.kw_to_pu(loads[k].p_kw) - bus.g_shunt * self.v_sq[k];
            let dq = in_q - out_q - base.kw_to_pu(loads[k].q_kvar) - bus.b_shunt * self.v_sq[k];
            worst = worst.max(dp.abs()).max(dq.abs());
        }
        worst
    }

    /// Largest violation of the squared-voltage drop equation on any line.
    pub fn drop_residual(&self, net: &NetworkModel) -> f64 {
        net.lines()
            .iter()
            .enumerate()
            .map(|(l, line)| {
                let to = l + 1;
                let from = net.parent_bus(to).unwrap();
                let rhs = self.v_sq[from] - 2.0 * (line.r * self.p_line[l] + line.x * self.q_line[l])
                    + (line.r * line.r + line.x * line.x) * self.i_sq[l];
                (self.v_sq[to] - rhs).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest violation of `V_from * I = P^2 + Q^2` on any line.
    pub fn current_residual(&self, net: &NetworkModel) -> f64 {
        (0..net.lines().len())
            .map(|l| {
                let from = net.parent_bus(l + 1).unwrap();
                (self.v_sq[from] * self.i_sq[l] - self.p_line[l].powi(2) - self.q_line[l].powi(2)).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub const POWERFLOW_MAX_ITER: usize = 500;

/// Backward/forward DistFlow sweep with the slack held at 1.0 pu.
pub fn fixed_point_powerflow(net: &NetworkModel, loads: &[BusLoad]) -> Result<PowerFlowSolution> {
    let n = net.buses().len();
    if loads.len() != n {
        return Err(Error::Shape(format!("{} loads for {} buses", loads.len(), n)));
    }
    let base = net.base();
    let p_load: Vec<f64> = loads.iter().map(|l| base.kw_to_pu(l.p_kw)).collect();
    let q_load: Vec<f64> = loads.iter().map(|l| base.kw_to_pu(l.q_kvar)).collect();
    let nl = net.lines().len();
    let mut v = vec![1.0; n];
    let mut p = vec![0.0; nl];
    let mut q = vec![0.0; nl];
    let mut i_sq = vec![0.0; nl];
    let mut change = f64::INFINITY;

    for iter in 1..=POWERFLOW_MAX_ITER {
        let mut delta: f64 = 0.0;
        // backward: children have larger indices than their parents
        for k in (1..n).rev() {
            let l = k - 1;
            let line = &net.lines()[l];
            let bus = &net.buses()[k];
            let (cp, cq) = net
                .child_lines(k)
                .iter()
                .fold((0.0, 0.0), |(a, b), &c| (a + p[c], b + q[c]));
            let np = p_load[k] + bus.g_shunt * v[k] + cp + line.r * i_sq[l];
            let nq = q_load[k] + bus.b_shunt * v[k] + cq + line.x * i_sq[l];
            delta = delta.max((np - p[l]).abs()).max((nq - q[l]).abs());
            p[l] = np;
            q[l] = nq;
        }
        for k in 1..n {
            let l = k - 1;
            let from = net.parent_bus(k).unwrap();
            i_sq[l] = (p[l] * p[l] + q[l] * q[l]) / v[from];
        }
        for k in 1..n {
            let l = k - 1;
            let line = &net.lines()[l];
            let from = net.parent_bus(k).unwrap();
            let nv = v[from] - 2.0 * (line.r * p[l] + line.x * q[l]) + (line.r * line.r + line.x * line.x) * i_sq[l];
            delta = delta.max((nv - v[k]).abs());
            v[k] = nv;
        }
        if !delta.is_finite() || v.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::PowerFlowDiverged {
                iterations: iter,
                mismatch: delta,
            });
        }
        change = delta;
        if delta < 1e-14 {
            let (ps, qs) = net
                .child_lines(0)
                .iter()
                .fold((0.0, 0.0), |(a, b), &c| (a + p[c], b + q[c]));
            let slack = &net.buses()[0];
            // one last current/drop refresh so all three equations close together
            for k in 1..n {
                let from = net.parent_bus(k).unwrap();
                i_sq[k - 1] = (p[k - 1].powi(2) + q[k - 1].powi(2)) / v[from];
            }
            return Ok(PowerFlowSolution {
                v_sq: v,
                p_line: p,
                q_line: q,
                i_sq,
                p_slack: ps + slack.g_shunt,
                q_slack: qs + slack.b_shunt,
                iterations: iter,
            });
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: POWERFLOW_MAX_ITER,
        mismatch: change,
    })
}

/// Assignment of non-slack buses to IHR zones.
#[derive(Debug, Clone, PartialEq)]
pub struct IhrPartition {
    zones: BTreeMap<BusId, IhrId>,
    interconnect: BTreeMap<IhrId, BusId>,
    pub delta: f64,
}

impl IhrPartition {
    /// Validates the zone map against `net` and derives each zone's
    /// interconnection bus.
    pub fn new(net: &NetworkModel, zones: BTreeMap<BusId, IhrId>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Partition("delta must be positive".into()));
        }
        if zones.contains_key(&net.slack_id()) {
            return Err(Error::Partition("slack bus cannot belong to a zone".into()));
        }
        for id in zones.keys() {
            if net.bus(*id).is_none() {
                return Err(Error::Partition(format!("unknown bus {id}")));
            }
        }
        for bus in net.buses().iter().skip(1) {
            if !zones.contains_key(&bus.id) {
                return Err(Error::Partition(format!("bus {} not assigned to a zone", bus.id)));
            }
        }
        let mut heads: BTreeMap<IhrId, Vec<BusId>> = BTreeMap::new();
        for (k, bus) in net.buses().iter().enumerate().skip(1) {
            let zone = zones[&bus.id];
            let parent = net.parent_bus(k).unwrap();
            let parent_zone = zones.get(&net.buses()[parent].id);
            if parent_zone != Some(&zone) {
                heads.entry(zone).or_default().push(bus.id);
            }
        }
        let mut interconnect = BTreeMap::new();
        for (zone, hs) in heads {
            if hs.len() != 1 {
                return Err(Error::Partition(format!(
                    "zone {zone} is not a connected subtree ({} entry buses)",
                    hs.len()
                )));
            }
            interconnect.insert(zone, hs[0]);
        }
        Ok(Self {
            zones,
            interconnect,
            delta,
        })
    }

    /// Every non-slack bus in its own zone (zone id = bus id).
    pub fn singleton(net: &NetworkModel, delta: f64) -> Result<Self> {
        let zones = net.buses().iter().skip(1).map(|b| (b.id, b.id)).collect();
        Self::new(net, zones, delta)
    }

    pub fn zone_of(&self, bus: BusId) -> Option<IhrId> {
        self.zones.get(&bus).copied()
    }

    pub fn zones(&self) -> &BTreeMap<BusId, IhrId> {
        &self.zones
    }

    pub fn interconnect(&self) -> &BTreeMap<IhrId, BusId> {
        &self.interconnect
    }

    pub fn ihr_ids(&self) -> Vec<IhrId> {
        self.interconnect.keys().copied().collect()
    }

    pub fn buses_of(&self, ihr: IhrId) -> Vec<BusId> {
        self.zones.iter().filter(|(_, z)| **z == ihr).map(|(b, _)| *b).collect()
    }

    /// Bundled five-zone partition of the IEEE 33-bus feeder.
    pub fn ieee33(net: &NetworkModel) -> Self {
        parse_partition(IEEE33_PARTITION_TEXT, net).expect("bundled partition is valid")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("#delta={}\n", self.delta);
        for (b, z) in &self.zones {
            let _ = writeln!(out, "{b},{z}");
        }
        out
    }
}

/// Parses `<bus_id>,<ihr_id>` rows plus a `#delta=<pu>` header.
pub fn parse_partition(text: &str, net: &NetworkModel) -> Result<IhrPartition> {
    let mut delta = None;
    let mut zones = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(kvs) = parse_header(line) {
                for (k, v) in kvs {
                    match k.as_str() {
                        "delta" => delta = Some(v.parse().map_err(|_| Error::parse(lineno, "bad delta"))?),
                        other => return Err(Error::parse(lineno, format!("unknown header key {other}"))),
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::parse(lineno, "partition row needs <bus_id>,<ihr_id>"));
        }
        let bus: BusId = field(&fields, 0, lineno, "bus id")?;
        let ihr: IhrId = field(&fields, 1, lineno, "ihr id")?;
        if zones.insert(bus, ihr).is_some() {
            return Err(Error::parse(lineno, format!("bus {bus} assigned twice")));
        }
    }
    let delta = delta.ok_or_else(|| Error::Partition("missing #delta header".into()))?;
    IhrPartition::new(net, zones, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSpread {
    pub ihr: IhrId,
    /// max |V_b - V_b'| over the zone, per-unit voltage magnitude.
    pub spread: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionReport {
    pub zones: Vec<ZoneSpread>,
    pub delta: f64,
    pub pass: bool,
}

impl PartitionReport {
    pub fn failing(&self) -> impl Iterator<Item = &ZoneSpread> {
        self.zones.iter().filter(|z| z.spread >= self.delta)
    }
}

/// Checks the intra-zone voltage spread at the given loading against `delta`.
pub fn validate_partition(net: &NetworkModel, part: &IhrPartition, peak_loads: &[BusLoad]) -> Result<PartitionReport> {
    let pf = fixed_point_powerflow(net, peak_loads)?;
    let mut zones = Vec::new();
    for ihr in part.ihr_ids() {
        let mags: Vec<f64> = part
            .buses_of(ihr)
            .iter()
            .map(|b| pf.v_sq[net.bus_index(*b).unwrap()].sqrt())
            .collect();
        let v_min = mags.iter().copied().fold(f64::INFINITY, f64::min);
        let v_max = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        zones.push(ZoneSpread {
            ihr,
            spread: v_max - v_min,
            v_min,
            v_max,
        });
    }
    let pass = zones.iter().all(|z| z.spread < part.delta);
    Ok(PartitionReport {
        zones,
        delta: part.delta,
        pass,
    })
}
