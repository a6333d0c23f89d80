//! Day-long episodes: EV arrivals, solar output and inflexible load per IHR.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learn::splitmix;
use crate::market::{Customer, CustomerId, IhrEpisode, ResState, SERVED_EPS};
use crate::netmodel::{IhrId, IhrPartition, NetworkModel};

/// Customer ids are `ihr * ID_STRIDE + k`; inflexible loads use the upper half.
const ID_STRIDE: u64 = 1_000_000;
const INFLEX_OFFSET: u64 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Early arrivals, late deadlines.
    Scenario1,
    /// Moderate arrivals, late deadlines.
    Scenario2,
    /// Explicit inclusive windows.
    Custom {
        arrivals: (usize, usize),
        deadlines: (usize, usize),
    },
}

impl ScenarioKind {
    /// Inclusive arrival and deadline windows for a horizon of `t` intervals.
    pub fn windows(self, t: usize) -> ((usize, usize), (usize, usize)) {
        let q = t.div_ceil(4);
        let h = t.div_ceil(2);
        let late = (3 * t).div_ceil(4);
        match self {
            ScenarioKind::Scenario1 => ((1, q), (late, t)),
            ScenarioKind::Scenario2 => ((q, h), (late, t)),
            ScenarioKind::Custom { arrivals, deadlines } => (arrivals, deadlines),
        }
    }
}

/// Source of a daily shape. Shapes are normalized to a peak of 1.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// Half-sine between 06:00 and 18:00.
    Bell,
    /// Morning and evening peaks over a base level.
    TwoPeak,
    /// One value per interval, e.g. from [`load_profiles_csv`].
    Series(Vec<f64>),
}

impl Profile {
    pub fn shape(&self, horizon: usize) -> Result<Vec<f64>> {
        let hour = |t: usize| 24.0 * (t - 1) as f64 / horizon as f64;
        let raw: Vec<f64> = match self {
            Profile::Bell => (1..=horizon)
                .map(|t| (std::f64::consts::PI * (hour(t) - 6.0) / 12.0).sin().max(0.0))
                .map(|v| if v < 1e-12 { 0.0 } else { v })
                .collect(),
            Profile::TwoPeak => (1..=horizon)
                .map(|t| {
                    let h = hour(t);
                    0.45 + 0.3 * (-((h - 8.0) / 2.0).powi(2)).exp() + 0.55 * (-((h - 19.0) / 2.5).powi(2)).exp()
                })
                .collect(),
            Profile::Series(v) => {
                if v.len() != horizon {
                    return Err(Error::Config(format!(
                        "profile has {} values but the horizon is {horizon}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::Config("profile values must be finite and non-negative".into()));
                }
                v.clone()
            }
        };
        let peak = raw.iter().copied().fold(0.0, f64::max);
        Ok(if peak > 0.0 {
            raw.iter().map(|v| v / peak).collect()
        } else {
            raw
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhrSpec {
    pub id: IhrId,
    pub evs: usize,
    /// Inverter apparent capacity, kVA.
    pub inverter_kva: f64,
    /// Solar output at the profile peak, kW.
    pub solar_kw: f64,
    /// Nominal inflexible load before `load_scale`.
    pub load_kw: f64,
    pub load_kvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub horizon: usize,
    /// Interval length, hours.
    pub dt: f64,
    pub charge_kwh: f64,
    /// Criticality control drawn uniformly from this range.
    pub crit: (f64, f64),
    /// Grid tariff, $/kWh.
    pub price: f64,
    pub solar: Profile,
    pub load: Profile,
    pub load_scale: f64,
    /// Multiplicative solar noise, uniform in `1 ± solar_noise`.
    pub solar_noise: f64,
    pub ihrs: Vec<IhrSpec>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least one interval".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("interval length {} must be positive", self.dt));
        }
        if !(self.charge_kwh > 0.0 && self.charge_kwh.is_finite()) {
            return bad(format!("charge_kwh {} must be positive", self.charge_kwh));
        }
        let (lo, hi) = self.crit;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad(format!("criticality range [{lo}, {hi}] must lie in [0, 1]"));
        }
        if !(self.price > 0.0 && self.price.is_finite()) {
            return bad(format!("price {} must be positive", self.price));
        }
        if !(self.load_scale > 0.0 && self.load_scale.is_finite()) {
            return bad(format!("load_scale {} must be positive", self.load_scale));
        }
        if !(0.0..1.0).contains(&self.solar_noise) {
            return bad(format!("solar_noise {} must lie in [0, 1)", self.solar_noise));
        }
        let mut ids = BTreeSet::new();
        for s in &self.ihrs {
            if !ids.insert(s.id) {
                return bad(format!("IHR {} listed twice", s.id));
            }
            if !(s.inverter_kva >= 0.0 && s.solar_kw >= 0.0 && s.solar_kw <= s.inverter_kva) {
                return bad(format!(
                    "IHR {}: solar peak {} kW must lie in [0, inverter {} kVA]",
                    s.id, s.solar_kw, s.inverter_kva
                ));
            }
            if !(s.load_kw >= 0.0 && s.load_kvar.is_finite() && s.load_kw.is_finite()) {
                return bad(format!("IHR {}: invalid inflexible load", s.id));
            }
            if s.evs as u64 >= INFLEX_OFFSET {
                return bad(format!("IHR {}: too many EVs", s.id));
            }
        }
        if self.ihrs.iter().any(|s| s.evs > 0) {
            let ((alo, ahi), (dlo, dhi)) = self.kind.windows(self.horizon);
            if !(1 <= alo && alo <= ahi && dlo <= dhi && dhi <= self.horizon && ahi < dlo) {
                return bad(format!(
                    "arrival window [{alo}, {ahi}] and deadline window [{dlo}, {dhi}] must be ordered within 1..={}",
                    self.horizon
                ));
            }
        }
        self.solar.shape(self.horizon)?;
        self.load.shape(self.horizon)?;
        Ok(())
    }

    /// Most customers an IHR can hold at once: every EV plus one inflexible load.
    pub fn max_active(&self) -> usize {
        self.ihrs.iter().map(|s| s.evs + 1).max().unwrap_or(1)
    }

    pub fn spec(&self, ihr: IhrId) -> Result<&IhrSpec> {
        self.ihrs
            .iter()
            .find(|s| s.id == ihr)
            .ok_or_else(|| Error::Config(format!("scenario has no IHR {ihr}")))
    }
}

/// Nominal inflexible load summed per zone, (kW, kVAr).
pub fn zone_nominal_loads(net: &NetworkModel, part: &IhrPartition) -> BTreeMap<IhrId, (f64, f64)> {
    let mut out = BTreeMap::new();
    for ihr in part.ihr_ids() {
        let mut p = 0.0;
        let mut q = 0.0;
        for b in part.buses_of(ihr) {
            if let Some(bus) = net.bus(b) {
                p += bus.nominal_p_kw;
                q += bus.nominal_q_kvar;
            }
        }
        out.insert(ihr, (p, q));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    pub horizon: usize,
    pub dt: f64,
    pub price: f64,
    pub ihrs: BTreeMap<IhrId, IhrEpisode>,
    /// Inflexible (kW, kVAr) per interval.
    pub load: BTreeMap<IhrId, Vec<(f64, f64)>>,
}

impl EpisodeData {
    pub fn episode(&self, ihr: IhrId) -> Result<&IhrEpisode> {
        self.ihrs
            .get(&ihr)
            .ok_or_else(|| Error::Config(format!("episode has no IHR {ihr}")))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,t,ihr,id,v1,v2,v3,v4\n");
        for (ihr, ep) in &self.ihrs {
            for t in 1..=self.horizon {
                let r = ep.res[t - 1];
                let (lp, lq) = self.load[ihr][t - 1];
                let _ = writeln!(out, "res,{t},{ihr},,{},{},{lp},{lq}", r.r_p, r.r_s);
                for c in &ep.arrivals[t - 1] {
                    if c.flexible {
                        let _ = writeln!(
                            out,
                            "ev,{t},{ihr},{},{},{},{},{}",
                            c.id, c.demand, c.deadline, c.crit_control, c.crit_rate
                        );
                    } else {
                        let _ = writeln!(out, "inflex,{t},{ihr},{},{},,,", c.id, c.demand);
                    }
                }
            }
        }
        out
    }
}

fn ihr_seed(seed: u64, ihr: IhrId) -> u64 {
    splitmix(seed ^ splitmix(ihr as u64 + 1))
}

/// One IHR's episode and inflexible series. Each IHR draws from its own
/// stream, so the result does not depend on which other IHRs are generated.
pub fn gen_ihr(cfg: &ScenarioConfig, ihr: IhrId, seed: u64) -> Result<(IhrEpisode, Vec<(f64, f64)>)> {
    cfg.validate()?;
    let spec = cfg.spec(ihr)?;
    let horizon = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(ihr_seed(seed, ihr));
    let ((alo, ahi), (dlo, dhi)) = cfg.kind.windows(horizon);
    let mut arrivals: Vec<Vec<Customer>> = vec![Vec::new(); horizon];
    for k in 0..spec.evs {
        let a = rng.random_range(alo..=ahi);
        let d = rng.random_range(dlo..=dhi);
        let (lo, hi) = cfg.crit;
        let phi = lo + (hi - lo) * rng.random::<f64>();
        let id = ihr as CustomerId * ID_STRIDE + k as CustomerId;
        arrivals[a - 1].push(Customer::flexible(id, ihr, a, cfg.charge_kwh, d, phi, cfg.price)?);
    }
    let solar = cfg.solar.shape(horizon)?;
    let load = cfg.load.shape(horizon)?;
    let mut res = Vec::with_capacity(horizon);
    let mut base_q = Vec::with_capacity(horizon);
    let mut series = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let noise = 1.0 + cfg.solar_noise * (2.0 * rng.random::<f64>() - 1.0);
        let r_p = (spec.solar_kw * solar[t - 1] * noise).clamp(0.0, spec.inverter_kva);
        res.push(ResState::new(r_p, spec.inverter_kva)?);
        let p = spec.load_kw * cfg.load_scale * load[t - 1];
        let q = spec.load_kvar * cfg.load_scale * load[t - 1];
        series.push((p, q));
        base_q.push(q);
        if p * cfg.dt > SERVED_EPS {
            let id = ihr as CustomerId * ID_STRIDE + INFLEX_OFFSET + t as CustomerId;
            arrivals[t - 1].push(Customer::inflexible(id, ihr, t, p * cfg.dt)?);
        }
    }
    let ep = IhrEpisode {
        ihr,
        price: cfg.price,
        dt: cfg.dt,
        arrivals,
        res,
        base_q,
    };
    Ok((ep, series))
}

pub fn gen_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<EpisodeData> {
    cfg.validate()?;
    let mut ihrs = BTreeMap::new();
    let mut load = BTreeMap::new();
    for s in &cfg.ihrs {
        let (ep, series) = gen_ihr(cfg, s.id, seed)?;
        ihrs.insert(s.id, ep);
        load.insert(s.id, series);
    }
    Ok(EpisodeData {
        horizon: cfg.horizon,
        dt: cfg.dt,
        price: cfg.price,
        ihrs,
        load,
    })
}

/// Hours since midnight from `12.5`, `12:30`, `12:30:00` or a date-time
/// whose last token is one of those.
fn parse_time(s: &str) -> Option<f64> {
    if let Ok(h) = s.parse::<f64>() {
        return h.is_finite().then_some(h);
    }
    let clock = s.rsplit([' ', 'T']).next()?;
    let mut parts = clock.split(':').map(|p| p.parse::<f64>().ok());
    let h = parts.next()??;
    let m = parts.next().flatten().unwrap_or(0.0);
    let sec = parts.next().flatten().unwrap_or(0.0);
    Some(h + m / 60.0 + sec / 3600.0)
}

/// Reads `timestamp,value` rows and resamples them onto `horizon` intervals
/// of `dt` hours starting at the first timestamp. Each interval averages
/// the rows inside it, or holds the previous value when it has none.
/// Values are multiplied by `scale`.
pub fn load_profiles_csv(text: &str, horizon: usize, dt: f64, scale: f64) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("profile scale {scale} must be positive")));
    }
    let mut rows: Vec<(f64, f64)> = Vec::new();
    let mut offset = 0.0;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ts, val) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(ln, "expected timestamp,value"))?;
        let Some(mut h) = parse_time(ts.trim()) else {
            if rows.is_empty() && ln == 1 {
                continue; // header
            }
            return Err(Error::parse(ln, format!("bad timestamp {ts:?}")));
        };
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|e| Error::parse(ln, format!("bad value {val:?}: {e}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::parse(ln, format!("value {v} must be finite and non-negative")));
        }
        h += offset;
        if let Some(&(prev, _)) = rows.last() {
            if h <= prev {
                // clock wrapped past midnight
                offset += 24.0;
                h += 24.0;
                if h <= prev {
                    return Err(Error::parse(ln, "timestamps must increase"));
                }
            }
        }
        rows.push((h, v));
    }
    let Some(&(t0, _)) = rows.first() else {
        return Err(Error::Config("profile has no rows".into()));
    };
    let need = t0 + (horizon as f64 - 1.0) * dt;
    let last = rows.last().unwrap().0;
    if last < need - 1e-9 {
        return Err(Error::Config(format!(
            "too few rows: profile covers {:.3} h but {horizon} intervals of {dt} h need {:.3} h",
            last - t0,
            need - t0
        )));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut held = rows[0].1;
    let mut j = 0;
    for t in 0..horizon {
        let end = t0 + (t + 1) as f64 * dt - 1e-9;
        let (mut sum, mut n) = (0.0, 0);
        while j < rows.len() && rows[j].0 < end {
            sum += rows[j].1;
            n += 1;
            held = rows[j].1;
            j += 1;
        }
        out.push(scale * if n > 0 { sum / n as f64 } else { held });
    }
    Ok(out)
}

pub fn read_profile_csv(path: &Path, horizon: usize, dt: f64, scale: f64) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_profiles_csv(&text, horizon, dt, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(kind: ScenarioKind, horizon: usize, evs: &[usize]) -> ScenarioConfig {
        ScenarioConfig {
            kind,
            horizon,
            dt: 24.0 / horizon as f64,
            charge_kwh: 6.6,
            crit: (0.2, 0.8),
            price: 0.12,
            solar: Profile::Bell,
            load: Profile::TwoPeak,
            load_scale: 0.5,
            solar_noise: 0.1,
            ihrs: evs
                .iter()
                .enumerate()
                .map(|(i, &n)| IhrSpec {
                    id: i as IhrId + 1,
                    evs: n,
                    inverter_kva: 105.0,
                    solar_kw: 100.0,
                    load_kw: 20.0,
                    load_kvar: 8.0,
                })
                .collect(),
            seed: 1,
        }
    }

    proptest! {
        #[test]
        fn scenario1_windows_hold(seed in any::<u64>()) {
            let d = gen_scenario(&cfg(ScenarioKind::Scenario1, 48, &[10, 10]), seed).unwrap();
            for ep in d.ihrs.values() {
                for c in ep.customers().filter(|c| c.flexible) {
                    prop_assert!(c.arrival <= 12 && c.deadline >= 36 && c.deadline <= 48);
                    prop_assert!(c.arrival < c.deadline);
                }
                for r in &ep.res {
                    prop_assert!(r.r_p <= r.r_s);
                }
            }
        }

        #[test]
        fn scenario2_windows_hold(seed in any::<u64>(), horizon in 2usize..60) {
            let d = gen_scenario(&cfg(ScenarioKind::Scenario2, horizon, &[5]), seed).unwrap();
            let ((alo, ahi), _) = ScenarioKind::Scenario2.windows(horizon);
            for c in d.ihrs[&1].customers().filter(|c| c.flexible) {
                prop_assert!(alo <= c.arrival && c.arrival <= ahi);
                prop_assert!(c.arrival < c.deadline && c.deadline <= horizon);
            }
        }
    }

    #[test]
    fn ev_counts_match() {
        let counts = [24, 30, 8, 30, 30];
        let d = gen_scenario(&cfg(ScenarioKind::Scenario1, 48, &counts), 3).unwrap();
        for (i, n) in counts.iter().enumerate() {
            let got = d.ihrs[&(i as IhrId + 1)].customers().filter(|c| c.flexible).count();
            assert_eq!(got, *n);
        }
        let ids: BTreeSet<_> = d.ihrs.values().flat_map(|e| e.customers().map(|c| c.id)).collect();
        assert_eq!(ids.len(), d.ihrs.values().map(|e| e.customers().count()).sum::<usize>());
    }

    #[test]
    fn zero_evs_leaves_inflexible_only() {
        let d = gen_scenario(&cfg(ScenarioKind::Scenario1, 24, &[0]), 3).unwrap();
        let ep = &d.ihrs[&1];
        assert!(ep.customers().all(|c| !c.flexible));
        assert_eq!(ep.customers().count(), 24);
    }

    #[test]
    fn same_seed_same_episode() {
        let c = cfg(ScenarioKind::Scenario2, 24, &[6, 4]);
        assert_eq!(gen_scenario(&c, 9).unwrap(), gen_scenario(&c, 9).unwrap());
        assert_ne!(gen_scenario(&c, 9).unwrap(), gen_scenario(&c, 10).unwrap());
        assert_eq!(
            gen_scenario(&c, 9).unwrap().to_csv(),
            gen_scenario(&c, 9).unwrap().to_csv()
        );
        // per-IHR streams are independent of the other IHRs
        let solo = gen_ihr(&c, 2, 9).unwrap().0;
        assert_eq!(&solo, gen_scenario(&c, 9).unwrap().episode(2).unwrap());
    }

    #[test]
    fn bell_peaks_midday() {
        let s = Profile::Bell.shape(48).unwrap();
        let peak = (0..48).max_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap() + 1;
        assert_eq!(peak, 25);
        assert_eq!(s[24], 1.0);
        assert!(s[..12].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_profile_scaled() {
        let text = "timestamp,value\n".to_string()
            + &(0..48)
                .map(|i| format!("{:02}:{:02},100\n", i / 2, 30 * (i % 2)))
                .collect::<String>();
        let v = load_profiles_csv(&text, 24, 1.0, 0.5).unwrap();
        assert_eq!(v, vec![50.0; 24]);
        let half = load_profiles_csv(&text, 48, 0.5, 1.0).unwrap();
        assert_eq!(half.len(), 48);
        assert!(load_profiles_csv(&text, 48, 1.0, 1.0).is_err());
        assert!(load_profiles_csv("0,1\n1,x\n", 1, 1.0, 1.0).is_err());
        assert!(load_profiles_csv("0,1\n1,-2\n", 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn profile_averages_and_wraps() {
        let text = "2020-07-01 23:00,4\n2020-07-01 23:30,6\n2020-07-02 00:00,10\n";
        assert_eq!(load_profiles_csv(text, 2, 1.0, 1.0).unwrap(), vec![5.0, 10.0]);
    }

    #[test]
    fn bundled_feeder_half_load() {
        let net = NetworkModel::ieee33();
        let part = IhrPartition::ieee33(&net);
        let zones = zone_nominal_loads(&net, &part);
        let mut c = cfg(ScenarioKind::Scenario1, 48, &[]);
        c.ihrs = zones
            .iter()
            .map(|(&id, &(p, q))| IhrSpec {
                id,
                evs: 0,
                inverter_kva: 105.0,
                solar_kw: 105.0,
                load_kw: p,
                load_kvar: q,
            })
            .collect();
        let total_p: f64 = zones.values().map(|z| z.0).sum();
        let total_q: f64 = zones.values().map(|z| z.1).sum();
        assert!((total_p - 3715.0).abs() < 1e-9 && (total_q - 2300.0).abs() < 1e-9);
        let d = gen_scenario(&c, 1).unwrap();
        let peak = (0..48)
            .map(|t| d.load.values().map(|s| s[t].0).sum::<f64>())
            .fold(0.0, f64::max);
        assert!((peak - 1857.5).abs() < 1e-9, "{peak}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = cfg(ScenarioKind::Scenario1, 24, &[2]);
        c.ihrs[0].solar_kw = 200.0;
        assert!(c.validate().is_err());
        let mut c = cfg(ScenarioKind::Scenario1, 1, &[2]);
        assert!(c.validate().is_err());
        c.ihrs[0].evs = 0;
        assert!(c.validate().is_ok());
        let c = cfg(
            ScenarioKind::Custom {
                arrivals: (1, 10),
                deadlines: (10, 24),
            },
            24,
            &[1],
        );
        assert!(c.validate().is_err());
        let mut c = cfg(ScenarioKind::Scenario1, 24, &[1]);
        c.load = Profile::Series(vec![1.0; 23]);
        assert!(c.validate().is_err());
    }
}
