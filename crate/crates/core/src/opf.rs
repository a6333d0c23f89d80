//! Central agent OPF on the reduced IHR network.
//!
//! Branch-flow model with the current definition relaxed to a second-order
//! cone. Every quantity inside the solver is per-unit; report fields in kW
//! and kVAr are converted at the boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::conic::{ConeSettings, ConeStatus, ProblemBuilder};
use crate::error::{Error, Result};
use crate::netmodel::{parse_header, Bus, BusId, IhrId, IhrPartition, Line, NetworkModel, PerUnitBase};

/// Reduced network: slack plus one node per IHR at its interconnect bus.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    pub net: NetworkModel,
    pub ihr_node: BTreeMap<IhrId, BusId>,
}

impl ReducedNetwork {
    pub fn ihr_at(&self, bus: BusId) -> Option<IhrId> {
        self.ihr_node.iter().find(|(_, b)| **b == bus).map(|(h, _)| *h)
    }
}

/// Collapses every zone onto its interconnect bus. Inter-zone lines become
/// the reduced edges, zone shunts are summed, and the voltage window of a
/// multi-bus zone is narrowed by `delta` so every bus of the zone stays
/// within its own limits.
pub fn reduce_network(net: &NetworkModel, part: &IhrPartition) -> Result<ReducedNetwork> {
    let slack = net.slack_id();
    let zone_of = |b: BusId| part.zone_of(b);
    let mut buses = vec![net.buses()[0].clone()];
    let mut lines = Vec::new();
    let mut ihr_node = BTreeMap::new();
    for (&ihr, &ic) in part.interconnect() {
        let members = part.buses_of(ihr);
        let mut bus = Bus::new(ic, 0.0, 0.0);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for b in &members {
            let src = net
                .bus(*b)
                .ok_or_else(|| Error::Partition(format!("bus {b} not in network")))?;
            bus.g_shunt += src.g_shunt;
            bus.b_shunt += src.b_shunt;
            bus.nominal_p_kw += src.nominal_p_kw;
            bus.nominal_q_kvar += src.nominal_q_kvar;
            lo = lo.max(src.v_sq_min.sqrt());
            hi = hi.min(src.v_sq_max.sqrt());
        }
        if members.len() > 1 {
            lo += part.delta;
            hi -= part.delta;
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::Partition(format!(
                    "zone {ihr}: voltage window is empty after the delta margin"
                )));
            }
            bus.v_sq_min = lo * lo;
            bus.v_sq_max = hi * hi;
        } else {
            let src = net.bus(members[0]).unwrap();
            bus.v_sq_min = src.v_sq_min;
            bus.v_sq_max = src.v_sq_max;
        }
        buses.push(bus);
        ihr_node.insert(ihr, ic);
    }
    // every line whose endpoints lie in different zones (slack counts as its own)
    let mut entering = BTreeSet::new();
    for l in net.lines() {
        let zf = if l.from == slack { None } else { zone_of(l.from) };
        let zt = zone_of(l.to);
        if zf == zt {
            continue;
        }
        let zt = zt.ok_or_else(|| Error::Partition(format!("bus {} has no zone", l.to)))?;
        if !entering.insert(zt) {
            return Err(Error::Partition(format!("zone {zt} is entered by more than one line")));
        }
        let parent = match zf {
            None => slack,
            Some(z) => part.interconnect()[&z],
        };
        if l.to != part.interconnect()[&zt] {
            return Err(Error::Partition(format!(
                "zone {zt} is entered at bus {} instead of its interconnect",
                l.to
            )));
        }
        lines.push(Line {
            from: parent,
            to: l.to,
            ..l.clone()
        });
    }
    let net = NetworkModel::new(buses, lines, slack, net.base())
        .map_err(|e| Error::Partition(format!("inter-zone graph is not a tree: {e}")))?;
    Ok(ReducedNetwork { net, ihr_node })
}

/// What an IHR sends to the central agent each interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IhrReport {
    pub ihr: IhrId,
    pub p_net_kw: f64,
    pub q_min_kvar: f64,
    pub q_max_kvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prices {
    /// Real-time energy price, $/kWh.
    pub lambda_rt: f64,
    /// Curtailment penalty, $/kWh.
    pub lambda_c: f64,
    /// Interval length, hours.
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct OpfInstance {
    pub net: NetworkModel,
    /// Per bus index; zero at the slack.
    pub p_net_kw: Vec<f64>,
    pub q_min_kvar: Vec<f64>,
    pub q_max_kvar: Vec<f64>,
    pub prices: Prices,
}

impl OpfInstance {
    pub fn new(
        net: NetworkModel,
        p_net_kw: Vec<f64>,
        q_min_kvar: Vec<f64>,
        q_max_kvar: Vec<f64>,
        prices: Prices,
    ) -> Result<Self> {
        let n = net.buses().len();
        if p_net_kw.len() != n || q_min_kvar.len() != n || q_max_kvar.len() != n {
            return Err(Error::Shape(format!(
                "instance vectors must have one entry per bus ({n})"
            )));
        }
        for k in 0..n {
            if !(p_net_kw[k].is_finite() && q_min_kvar[k].is_finite() && q_max_kvar[k].is_finite()) {
                return Err(Error::NonFinite(format!("bus {} report", net.buses()[k].id)));
            }
            if q_min_kvar[k] > q_max_kvar[k] {
                return Err(Error::Config(format!(
                    "bus {}: q_min {} > q_max {}",
                    net.buses()[k].id,
                    q_min_kvar[k],
                    q_max_kvar[k]
                )));
            }
        }
        if !(prices.lambda_c > prices.lambda_rt) {
            return Err(Error::Config(format!(
                "curtailment price {} must exceed the energy price {}",
                prices.lambda_c, prices.lambda_rt
            )));
        }
        if !(prices.dt > 0.0) {
            return Err(Error::Config("interval length must be positive".into()));
        }
        Ok(Self {
            net,
            p_net_kw,
            q_min_kvar,
            q_max_kvar,
            prices,
        })
    }

    fn pu(&self, kw: f64) -> f64 {
        self.net.base().kw_to_pu(kw)
    }

    pub fn to_csv(&self) -> String {
        let b = self.net.base();
        let p = self.prices;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#base_mva={},base_kv={},slack={},lambda_rt={},lambda_c={},dt={}",
            b.base_mva,
            b.base_kv,
            self.net.slack_id(),
            p.lambda_rt,
            p.lambda_c,
            p.dt
        );
        for (k, bus) in self.net.buses().iter().enumerate() {
            let _ = writeln!(
                out,
                "N,{},{},{},{},{},{},{},{}",
                bus.id,
                bus.g_shunt,
                bus.b_shunt,
                bus.v_sq_min,
                bus.v_sq_max,
                self.p_net_kw[k],
                self.q_min_kvar[k],
                self.q_max_kvar[k]
            );
        }
        for l in self.net.lines() {
            let _ = writeln!(out, "L,{},{},{},{},{}", l.from, l.to, l.r, l.x, l.i_sq_max);
        }
        out
    }
}

/// Assembles the instance from one report per IHR node.
pub fn build_instance(reports: &[IhrReport], reduced: &ReducedNetwork, prices: Prices) -> Result<OpfInstance> {
    let n = reduced.net.buses().len();
    let mut p = vec![0.0; n];
    let mut qmin = vec![0.0; n];
    let mut qmax = vec![0.0; n];
    let mut seen = BTreeSet::new();
    for r in reports {
        let bus = reduced
            .ihr_node
            .get(&r.ihr)
            .ok_or_else(|| Error::Config(format!("report for unknown IHR {}", r.ihr)))?;
        if !seen.insert(r.ihr) {
            return Err(Error::Config(format!("duplicate report for IHR {}", r.ihr)));
        }
        let k = reduced.net.bus_index(*bus).unwrap();
        p[k] = r.p_net_kw;
        qmin[k] = r.q_min_kvar;
        qmax[k] = r.q_max_kvar;
    }
    if let Some(missing) = reduced.ihr_node.keys().find(|h| !seen.contains(h)) {
        return Err(Error::Config(format!("missing report for IHR {missing}")));
    }
    OpfInstance::new(reduced.net.clone(), p, qmin, qmax, prices)
}

pub fn parse_instance(text: &str) -> Result<OpfInstance> {
    let mut header = None;
    let mut buses = Vec::new();
    let mut p = Vec::new();
    let mut qmin = Vec::new();
    let mut qmax = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(kv) = parse_header(line) {
                header = Some((ln, kv));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |j: usize| -> Result<f64> {
            f.get(j)
                .ok_or_else(|| Error::parse(ln, format!("missing field {j}")))?
                .parse::<f64>()
                .map_err(|e| Error::parse(ln, format!("field {j}: {e}")))
        };
        let id = |j: usize| -> Result<BusId> {
            f.get(j)
                .ok_or_else(|| Error::parse(ln, format!("missing field {j}")))?
                .parse::<BusId>()
                .map_err(|e| Error::parse(ln, format!("field {j}: {e}")))
        };
        match f[0] {
            "N" if f.len() == 9 => {
                let mut b = Bus::new(id(1)?, num(4)?, num(5)?);
                b.g_shunt = num(2)?;
                b.b_shunt = num(3)?;
                buses.push(b);
                p.push(num(6)?);
                qmin.push(num(7)?);
                qmax.push(num(8)?);
            }
            "L" if f.len() == 6 => lines.push(Line {
                from: id(1)?,
                to: id(2)?,
                r: num(3)?,
                x: num(4)?,
                i_sq_max: num(5)?,
            }),
            _ => return Err(Error::parse(ln, format!("unrecognized row {line:?}"))),
        }
    }
    let (hl, kv) = header.ok_or_else(|| Error::parse(1, "missing #base_mva=... header"))?;
    let get = |k: &str| -> Result<f64> {
        kv.iter()
            .find(|(a, _)| a == k)
            .ok_or_else(|| Error::parse(hl, format!("header lacks {k}")))?
            .1
            .parse::<f64>()
            .map_err(|e| Error::parse(hl, format!("{k}: {e}")))
    };
    let base = PerUnitBase {
        base_mva: get("base_mva")?,
        base_kv: get("base_kv")?,
    };
    let slack = get("slack")? as BusId;
    let prices = Prices {
        lambda_rt: get("lambda_rt")?,
        lambda_c: get("lambda_c")?,
        dt: get("dt")?,
    };
    // NetworkModel reorders buses; carry reports by id
    let by_id: BTreeMap<BusId, (f64, f64, f64)> = buses
        .iter()
        .enumerate()
        .map(|(k, b)| (b.id, (p[k], qmin[k], qmax[k])))
        .collect();
    let net = NetworkModel::new(buses, lines, slack, base)?;
    let mut pv = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for b in net.buses() {
        let (a, c, d) = by_id[&b.id];
        pv.push(a);
        lo.push(c);
        hi.push(d);
    }
    OpfInstance::new(net, pv, lo, hi, prices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpfStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

impl OpfStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OpfStatus::Optimal => "optimal",
            OpfStatus::Infeasible => "infeasible",
            OpfStatus::IterationLimit => "iteration-limit",
        }
    }
}

/// Solver output. Electrical quantities are per-unit; line arrays follow
/// the network's line order and node arrays its bus order.
#[derive(Debug, Clone)]
pub struct OpfSolution {
    pub status: OpfStatus,
    pub p_g: f64,
    pub q_g: f64,
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub i_sq: Vec<f64>,
    pub v_sq: Vec<f64>,
    pub q_net: Vec<f64>,
    pub p_c: Vec<f64>,
    /// Dollars over the interval.
    pub objective: f64,
    pub iterations: usize,
    /// Diagnosis when not optimal.
    pub message: String,
}

impl OpfSolution {
    /// All-zero point (useful as a residual probe).
    pub fn zeros(inst: &OpfInstance) -> Self {
        let n = inst.net.buses().len();
        let nl = inst.net.lines().len();
        Self {
            status: OpfStatus::Optimal,
            p_g: 0.0,
            q_g: 0.0,
            p_line: vec![0.0; nl],
            q_line: vec![0.0; nl],
            i_sq: vec![0.0; nl],
            v_sq: vec![0.0; n],
            q_net: vec![0.0; n],
            p_c: vec![0.0; n],
            objective: 0.0,
            iterations: 0,
            message: String::new(),
        }
    }

    pub fn ensure_optimal(&self) -> Result<()> {
        match self.status {
            OpfStatus::Optimal => Ok(()),
            OpfStatus::Infeasible => Err(Error::Infeasible(self.message.clone())),
            OpfStatus::IterationLimit => Err(Error::Solver(self.message.clone())),
        }
    }

    pub fn p_c_kw(&self, inst: &OpfInstance) -> Vec<f64> {
        let b = inst.net.base();
        self.p_c.iter().map(|v| b.pu_to_kw(*v)).collect()
    }

    pub fn to_csv(&self, inst: &OpfInstance) -> String {
        let b = inst.net.base();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#status={},objective={},p_g_pu={},q_g_pu={},iterations={}",
            self.status.as_str(),
            self.objective,
            self.p_g,
            self.q_g,
            self.iterations
        );
        for (k, bus) in inst.net.buses().iter().enumerate() {
            let _ = writeln!(
                out,
                "N,{},{},{},{}",
                bus.id,
                self.v_sq[k],
                b.pu_to_kw(self.q_net[k]),
                b.pu_to_kw(self.p_c[k])
            );
        }
        for (l, line) in inst.net.lines().iter().enumerate() {
            let _ = writeln!(
                out,
                "L,{},{},{},{},{}",
                line.from,
                line.to,
                b.pu_to_kw(self.p_line[l]),
                b.pu_to_kw(self.q_line[l]),
                self.i_sq[l]
            );
        }
        out
    }
}

struct Layout {
    nl: usize,
}

impl Layout {
    const PG: usize = 0;
    const QG: usize = 1;
    fn p(&self, l: usize) -> usize {
        2 + 3 * l
    }
    fn q(&self, l: usize) -> usize {
        3 + 3 * l
    }
    fn i(&self, l: usize) -> usize {
        4 + 3 * l
    }
    fn v(&self, k: usize) -> usize {
        2 + 3 * self.nl + 3 * (k - 1)
    }
    fn qn(&self, k: usize) -> usize {
        self.v(k) + 1
    }
    fn pc(&self, k: usize) -> usize {
        self.v(k) + 2
    }
}

/// Constraint families for residual reports and infeasibility diagnosis.
const FAMILIES: [&str; 9] = [
    "slack_balance",
    "node_p_balance",
    "node_q_balance",
    "voltage_drop",
    "voltage_bounds",
    "current_limit",
    "reactive_caps",
    "curtailment_bounds",
    "cone",
];

/// Interior-point settings for OPF. Tighter than the generic defaults: the
/// relaxation gap shrinks with the complementarity tolerance.
pub fn solver_settings() -> ConeSettings {
    ConeSettings {
        feas_tol: 1e-10,
        gap_tol: 1e-10,
        ..ConeSettings::default()
    }
}

/// Minimizes λ_RT·P_G + λ_C·Σ p_C subject to the relaxed branch-flow model.
pub fn solve(inst: &OpfInstance, settings: &ConeSettings) -> Result<OpfSolution> {
    let net = &inst.net;
    let n = net.buses().len();
    let nl = net.lines().len();
    let lay = Layout { nl };
    let mut pb = ProblemBuilder::new();
    let lam = inst.prices;
    pb.var(lam.lambda_rt);
    pb.var(0.0);
    for _ in 0..nl {
        pb.var(0.0);
        pb.var(0.0);
        pb.var(0.0);
    }
    for _ in 1..n {
        pb.var(0.0);
        pb.var(0.0);
        pb.var(lam.lambda_c);
    }
    let mut eq_family = Vec::new();
    let mut ineq_family = Vec::new();
    let mut eq = |pb: &mut ProblemBuilder, fam: usize, terms: Vec<(usize, f64)>, rhs: f64| {
        pb.eq(terms, rhs);
        eq_family.push(fam);
    };

    // slack balance
    let slack = &net.buses()[0];
    let mut tp = vec![(Layout::PG, 1.0)];
    let mut tq = vec![(Layout::QG, 1.0)];
    for &c in net.child_lines(0) {
        tp.push((lay.p(c), -1.0));
        tq.push((lay.q(c), -1.0));
    }
    eq(&mut pb, 0, tp, slack.g_shunt);
    eq(&mut pb, 0, tq, slack.b_shunt);

    for k in 1..n {
        let l = k - 1;
        let line = &net.lines()[l];
        let bus = &net.buses()[k];
        // P_l − r I_l − Σ P_children − g V + p_C = p_net
        let mut tp = vec![
            (lay.p(l), 1.0),
            (lay.i(l), -line.r),
            (lay.v(k), -bus.g_shunt),
            (lay.pc(k), 1.0),
        ];
        let mut tq = vec![
            (lay.q(l), 1.0),
            (lay.i(l), -line.x),
            (lay.v(k), -bus.b_shunt),
            (lay.qn(k), -1.0),
        ];
        for &c in net.child_lines(k) {
            tp.push((lay.p(c), -1.0));
            tq.push((lay.q(c), -1.0));
        }
        eq(&mut pb, 1, tp, inst.pu(inst.p_net_kw[k]));
        eq(&mut pb, 2, tq, 0.0);
        // V_k − V_par + 2(rP + xQ) − (r² + x²) I = 0
        let par = net.parent_bus(k).unwrap();
        let z2 = line.r * line.r + line.x * line.x;
        let mut td = vec![
            (lay.v(k), 1.0),
            (lay.p(l), 2.0 * line.r),
            (lay.q(l), 2.0 * line.x),
            (lay.i(l), -z2),
        ];
        let rhs = if par == 0 {
            1.0
        } else {
            td.push((lay.v(par), -1.0));
            0.0
        };
        eq(&mut pb, 3, td, rhs);
    }

    let mut le = |pb: &mut ProblemBuilder, fam: usize, terms: Vec<(usize, f64)>, rhs: f64| {
        pb.le(terms, rhs);
        ineq_family.push(fam);
    };
    for k in 1..n {
        let bus = &net.buses()[k];
        le(&mut pb, 4, vec![(lay.v(k), 1.0)], bus.v_sq_max);
        le(&mut pb, 4, vec![(lay.v(k), -1.0)], -bus.v_sq_min);
        le(&mut pb, 5, vec![(lay.i(k - 1), 1.0)], net.lines()[k - 1].i_sq_max);
        let (qlo, qhi) = (inst.pu(inst.q_min_kvar[k]), inst.pu(inst.q_max_kvar[k]));
        if qlo == qhi {
            pb.eq(vec![(lay.qn(k), 1.0)], qlo);
            eq_family.push(6);
        } else {
            le(&mut pb, 6, vec![(lay.qn(k), 1.0)], qhi);
            le(&mut pb, 6, vec![(lay.qn(k), -1.0)], -qlo);
        }
        let cap = inst.pu(inst.p_net_kw[k].max(0.0));
        if cap > 0.0 {
            le(&mut pb, 7, vec![(lay.pc(k), 1.0)], cap);
            le(&mut pb, 7, vec![(lay.pc(k), -1.0)], 0.0);
        } else {
            pb.eq(vec![(lay.pc(k), 1.0)], 0.0);
            eq_family.push(7);
        }
    }
    // ‖(2P, 2Q, V_par − I)‖ ≤ V_par + I
    for k in 1..n {
        let l = k - 1;
        let par = net.parent_bus(k).unwrap();
        let (v_terms, v_const) = if par == 0 {
            (vec![], 1.0)
        } else {
            (vec![(lay.v(par), 1.0)], 0.0)
        };
        let mut head = v_terms.clone();
        head.push((lay.i(l), 1.0));
        let mut tail = v_terms;
        tail.push((lay.i(l), -1.0));
        pb.soc(vec![
            (head, v_const),
            (vec![(lay.p(l), 2.0)], 0.0),
            (vec![(lay.q(l), 2.0)], 0.0),
            (tail, v_const),
        ]);
    }

    let prob = pb.build()?;
    let sol = prob.solve(settings)?;
    let mut out = OpfSolution::zeros(inst);
    out.iterations = sol.iterations;
    match sol.status {
        ConeStatus::Optimal => {}
        ConeStatus::PrimalInfeasible => {
            // weight each family by its share of the certificate
            let mut w = [0.0f64; 9];
            for (i, f) in eq_family.iter().enumerate() {
                w[*f] += sol.y[i].abs();
            }
            for (i, f) in ineq_family.iter().enumerate() {
                w[*f] += sol.z[i].abs();
            }
            w[8] += sol.z.iter().skip(ineq_family.len()).map(|v| v.abs()).sum::<f64>();
            // structural rows appear in every certificate; rank the operating limits
            let worst = (4..8).max_by(|a, b| w[*a].total_cmp(&w[*b])).unwrap();
            out.status = OpfStatus::Infeasible;
            out.message = format!("infeasible; binding constraint set: {}", FAMILIES[worst]);
            out.v_sq.fill(f64::NAN);
            return Ok(out);
        }
        ConeStatus::DualInfeasible | ConeStatus::IterationLimit => {
            out.status = OpfStatus::IterationLimit;
            out.message = format!(
                "interior point stopped with {:?} after {} iterations",
                sol.status, sol.iterations
            );
            return Ok(out);
        }
    }
    let x = &sol.x;
    out.p_g = x[Layout::PG];
    out.q_g = x[Layout::QG];
    for l in 0..nl {
        out.p_line[l] = x[lay.p(l)];
        out.q_line[l] = x[lay.q(l)];
        out.i_sq[l] = x[lay.i(l)];
    }
    out.v_sq[0] = 1.0;
    for k in 1..n {
        out.v_sq[k] = x[lay.v(k)];
        out.q_net[k] = x[lay.qn(k)];
        out.p_c[k] = x[lay.pc(k)];
    }
    out.objective = sol.primal_obj * net.base().base_kw() * lam.dt;
    Ok(out)
}

/// Largest V_par·I − (P² + Q²) over all lines.
pub fn soc_gap(inst: &OpfInstance, sol: &OpfSolution) -> f64 {
    let net = &inst.net;
    (1..net.buses().len())
        .map(|k| {
            let l = k - 1;
            let par = net.parent_bus(k).unwrap();
            sol.v_sq[par] * sol.i_sq[l] - sol.p_line[l].powi(2) - sol.q_line[l].powi(2)
        })
        .fold(0.0, f64::max)
}

/// Maximum absolute violation per constraint family, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub entries: Vec<(&'static str, f64)>,
}

impl ResidualReport {
    pub fn get(&self, family: &str) -> f64 {
        self.entries.iter().find(|(f, _)| *f == family).map_or(0.0, |e| e.1)
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,max_violation\n");
        for (f, v) in &self.entries {
            let _ = writeln!(out, "{f},{v}");
        }
        out
    }
}

pub fn residuals(inst: &OpfInstance, sol: &OpfSolution) -> ResidualReport {
    let net = &inst.net;
    let n = net.buses().len();
    let mut r = [0.0f64; 9];
    let upd = |slot: &mut f64, v: f64| {
        *slot = slot.max(if v.is_nan() { f64::INFINITY } else { v.abs() });
    };
    let slack = &net.buses()[0];
    let (cp, cq) = net
        .child_lines(0)
        .iter()
        .fold((0.0, 0.0), |(a, b), &c| (a + sol.p_line[c], b + sol.q_line[c]));
    upd(&mut r[0], sol.p_g - cp - slack.g_shunt * sol.v_sq[0]);
    upd(&mut r[0], sol.q_g - cq - slack.b_shunt * sol.v_sq[0]);
    upd(&mut r[4], sol.v_sq[0] - 1.0);
    for k in 1..n {
        let l = k - 1;
        let line = &net.lines()[l];
        let bus = &net.buses()[k];
        let (cp, cq) = net
            .child_lines(k)
            .iter()
            .fold((0.0, 0.0), |(a, b), &c| (a + sol.p_line[c], b + sol.q_line[c]));
        let dp = sol.p_line[l] - line.r * sol.i_sq[l] - cp - bus.g_shunt * sol.v_sq[k] + sol.p_c[k]
            - inst.pu(inst.p_net_kw[k]);
        let dq = sol.q_line[l] - line.x * sol.i_sq[l] - cq - bus.b_shunt * sol.v_sq[k] - sol.q_net[k];
        upd(&mut r[1], dp);
        upd(&mut r[2], dq);
        let par = net.parent_bus(k).unwrap();
        let z2 = line.r * line.r + line.x * line.x;
        let drop =
            sol.v_sq[k] - sol.v_sq[par] + 2.0 * (line.r * sol.p_line[l] + line.x * sol.q_line[l]) - z2 * sol.i_sq[l];
        upd(&mut r[3], drop);
        upd(
            &mut r[4],
            (bus.v_sq_min - sol.v_sq[k]).max(sol.v_sq[k] - bus.v_sq_max).max(0.0),
        );
        upd(&mut r[5], (sol.i_sq[l] - line.i_sq_max).max(-sol.i_sq[l]).max(0.0));
        let (qlo, qhi) = (inst.pu(inst.q_min_kvar[k]), inst.pu(inst.q_max_kvar[k]));
        upd(&mut r[6], (qlo - sol.q_net[k]).max(sol.q_net[k] - qhi).max(0.0));
        let cap = inst.pu(inst.p_net_kw[k].max(0.0));
        upd(&mut r[7], (-sol.p_c[k]).max(sol.p_c[k] - cap).max(0.0));
        let cone = sol.p_line[l].powi(2) + sol.q_line[l].powi(2) - sol.v_sq[par] * sol.i_sq[l];
        upd(&mut r[8], cone.max(0.0));
    }
    ResidualReport {
        entries: FAMILIES.iter().copied().zip(r).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{fixed_point_powerflow, BusLoad};
    use proptest::prelude::*;

    fn prices() -> Prices {
        Prices {
            lambda_rt: 0.05,
            lambda_c: 1.0,
            dt: 1.0,
        }
    }

    /// base_kv = 1 with base_mva = 1 makes 1 pu = 1000 kW.
    fn two_node(p_kw: f64, i_sq_max: f64) -> OpfInstance {
        let text = format!(
            "#base_mva=1,base_kv=1,slack=0,lambda_rt=0.05,lambda_c=1,dt=1\n\
             N,0,0,0,0.81,1.21,0,0,0\n\
             N,1,0,0,0.81,1.21,{p_kw},0,0\n\
             L,0,1,0.01,0.01,{i_sq_max}\n"
        );
        parse_instance(&text).unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let inst = two_node(0.0, 10.0);
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(sol.p_g.abs() < 1e-7);
        assert!((sol.v_sq[1] - 1.0).abs() < 1e-7);
        assert!(sol.objective.abs() < 1e-4);
        let g = soc_gap(&inst, &sol);
        assert!(g < 1e-7, "{g}");
    }

    #[test]
    fn two_node_matches_power_flow() {
        let inst = two_node(100.0, 10.0);
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        let pf = fixed_point_powerflow(&inst.net, &[BusLoad::default(), BusLoad::new(100.0, 0.0)]).unwrap();
        assert!((sol.p_g - pf.p_slack).abs() < 1e-6, "{} vs {}", sol.p_g, pf.p_slack);
        assert!((sol.p_g - 0.1001).abs() < 1e-4);
        assert!(sol.p_c[1].abs() < 1e-7);
        assert!(soc_gap(&inst, &sol) <= 1e-6);
        assert!(residuals(&inst, &sol).max() <= 1e-6);
    }

    #[test]
    fn binding_current_limit_curtails_just_enough() {
        let inst = two_node(100.0, 0.005);
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(sol.p_c[1] > 1e-3);
        // bisection on the deliverable load against the power-flow oracle
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let pf = fixed_point_powerflow(&inst.net, &[BusLoad::default(), BusLoad::new(mid, 0.0)]).unwrap();
            if pf.i_sq[0] <= 0.005 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let delivered = 100.0 - sol.p_c_kw(&inst)[1];
        assert!((delivered - lo).abs() < 1e-3, "{delivered} vs {lo}");
        assert!(sol.objective > 0.05 * delivered);
    }

    #[test]
    fn forged_current_flags_gap() {
        let inst = two_node(100.0, 10.0);
        let mut sol = solve(&inst, &solver_settings()).unwrap();
        assert!(soc_gap(&inst, &sol) <= 1e-6);
        sol.i_sq[0] += 0.01;
        assert!(soc_gap(&inst, &sol) > 0.009);
    }

    #[test]
    fn residual_probes() {
        let inst = two_node(100.0, 10.0);
        let mut sol = solve(&inst, &solver_settings()).unwrap();
        sol.v_sq[1] += 1e-3;
        assert!((residuals(&inst, &sol).get("voltage_drop") - 1e-3).abs() < 1e-6);
        let z = OpfSolution::zeros(&inst);
        assert!((residuals(&inst, &z).get("node_p_balance") - 0.1).abs() < 1e-12);
    }

    #[test]
    fn infeasible_voltage_reported() {
        // a fixed reactive draw this large cannot keep the voltage above its floor
        let mut inst = two_node(0.0, 1e6);
        inst.q_min_kvar[1] = 30000.0;
        inst.q_max_kvar[1] = 30000.0;
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Infeasible);
        assert!(sol.ensure_optimal().is_err());
        assert!(sol.message.contains("voltage"), "{}", sol.message);
    }

    #[test]
    fn near_degenerate_limit_still_solves() {
        // a line limit of 3e-11 pu² pins that branch to almost no flow
        let text = "#base_mva=1,base_kv=1,slack=1,lambda_rt=0.05,lambda_c=1,dt=1\n\
                    N,1,0,0,0.81,1.21,0,0,0\n\
                    N,2,0,0,0.81,1.21,14.18,-9.76,10.24\n\
                    N,3,0,0,0.81,1.21,14.18,-9.76,10.24\n\
                    N,4,0,0,0.81,1.21,14.18,-9.76,10.24\n\
                    L,1,2,0.01,0.01,0.0003\nL,2,3,0.01,0.01,3e-11\nL,2,4,0.01,0.01,0.0003\n";
        let inst = parse_instance(text).unwrap();
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(residuals(&inst, &sol).max() <= 1e-6);
        let k = inst.net.bus_index(3).unwrap();
        assert!((sol.p_c_kw(&inst)[k] - 14.18).abs() < 0.05);
    }

    #[test]
    fn instance_csv_round_trip() {
        let inst = two_node(123.5, 0.5);
        let back = parse_instance(&inst.to_csv()).unwrap();
        assert_eq!(back.to_csv(), inst.to_csv());
        assert!(parse_instance("N,0").is_err());
    }

    #[test]
    fn rejects_bad_reports() {
        let inst = two_node(1.0, 1.0);
        assert!(OpfInstance::new(inst.net.clone(), vec![0.0; 2], vec![0.0, 1.0], vec![0.0, 0.0], prices()).is_err());
        let cheap = Prices {
            lambda_c: 0.01,
            ..prices()
        };
        assert!(OpfInstance::new(inst.net.clone(), vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], cheap).is_err());
    }

    #[test]
    fn singleton_reduction_is_identity() {
        let net = NetworkModel::ieee33();
        let part = IhrPartition::singleton(&net, 0.01).unwrap();
        let red = reduce_network(&net, &part).unwrap();
        assert_eq!(red.net.buses(), net.buses());
        assert_eq!(red.net.lines(), net.lines());
    }

    #[test]
    fn bundled_partition_reduces_to_six_nodes() {
        let net = NetworkModel::ieee33();
        let part = IhrPartition::ieee33(&net);
        let red = reduce_network(&net, &part).unwrap();
        assert_eq!(red.net.buses().len(), 6);
        assert_eq!(red.net.lines().len(), 5);
        for b in &red.net.buses()[1..] {
            assert!(b.v_sq_min > 0.81 && b.v_sq_max < 1.21);
        }
    }

    #[test]
    fn chained_zones_reduce_to_path() {
        let text = "#base_mva=1,base_kv=1,slack=1\nB,1,0,0,0.81,1.21\nB,2,0,0,0.81,1.21\nB,3,0,0,0.81,1.21\nB,4,0,0,0.81,1.21\n\
                    L,1,2,0.01,0.01,100\nL,2,3,0.01,0.01,100\nL,3,4,0.01,0.01,100\n";
        let net = crate::netmodel::parse_network(text).unwrap();
        let zones: BTreeMap<BusId, IhrId> = [(2, 1), (3, 1), (4, 2)].into_iter().collect();
        let part = IhrPartition::new(&net, zones, 0.01).unwrap();
        let red = reduce_network(&net, &part).unwrap();
        assert_eq!(red.net.buses().len(), 3);
        let ids: Vec<_> = red.net.lines().iter().map(|l| (l.from, l.to)).collect();
        assert_eq!(ids, vec![(1, 2), (2, 4)]);
        assert!((red.net.lines()[1].r - 0.01).abs() < 1e-15);
    }

    #[test]
    fn build_instance_checks_reports() {
        let net = NetworkModel::ieee33();
        let red = reduce_network(&net, &IhrPartition::ieee33(&net)).unwrap();
        let reports: Vec<IhrReport> = red
            .ihr_node
            .keys()
            .map(|&ihr| IhrReport {
                ihr,
                p_net_kw: 0.0,
                q_min_kvar: 0.0,
                q_max_kvar: 0.0,
            })
            .collect();
        let inst = build_instance(&reports, &red, prices()).unwrap();
        let sol = solve(&inst, &solver_settings()).unwrap();
        assert_eq!(sol.status, OpfStatus::Optimal);
        assert!(build_instance(&reports[1..], &red, prices()).is_err());
        let mut caps = reports.clone();
        caps[0].q_min_kvar = -3.0;
        caps[0].q_max_kvar = 5.0;
        let inst = build_instance(&caps, &red, prices()).unwrap();
        let k = red.net.bus_index(red.ihr_node[&caps[0].ihr]).unwrap();
        assert_eq!((inst.q_min_kvar[k], inst.q_max_kvar[k]), (-3.0, 5.0));
    }

    fn random_radial(loads: &[f64], imax: f64) -> OpfInstance {
        // 5-node tree: 0-1, 1-2, 1-3, 0-4
        let mut text =
            String::from("#base_mva=1,base_kv=12.66,slack=0,lambda_rt=0.05,lambda_c=1,dt=1\nN,0,0,0,0.81,1.21,0,0,0\n");
        for (k, p) in loads.iter().enumerate() {
            let _ = writeln!(
                text,
                "N,{},0,0,0.81,1.21,{p},{},{}",
                k + 1,
                -0.2 * p.abs(),
                0.3 * p.abs()
            );
        }
        for (a, b) in [(0, 1), (1, 2), (1, 3), (0, 4)] {
            let _ = writeln!(text, "L,{a},{b},0.02,0.015,{imax}");
        }
        parse_instance(&text).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn optimal_solutions_are_feasible_and_tight(loads in prop::collection::vec(10.0f64..600.0, 4), imax in 0.05f64..2.0) {
            let inst = random_radial(&loads, imax);
            let sol = solve(&inst, &solver_settings()).unwrap();
            prop_assert_eq!(sol.status, OpfStatus::Optimal);
            let res = residuals(&inst, &sol);
            prop_assert!(res.max() <= 1e-6, "{:?}", res);
            prop_assert!(soc_gap(&inst, &sol) <= 1e-6);
        }

        #[test]
        fn higher_penalty_never_raises_curtailment(loads in prop::collection::vec(100.0f64..900.0, 4), imax in 0.02f64..0.3, bump in 1.0f64..10.0) {
            let inst = random_radial(&loads, imax);
            let mut hi = inst.clone();
            hi.prices.lambda_c *= bump;
            let a = solve(&inst, &solver_settings()).unwrap();
            let b = solve(&hi, &solver_settings()).unwrap();
            let sa: f64 = a.p_c.iter().sum();
            let sb: f64 = b.p_c.iter().sum();
            prop_assert!(sb <= sa + 1e-6, "{} > {}", sb, sa);
        }
    }
}
