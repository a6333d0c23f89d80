//! Run configuration: one TOML document binding network, partition,
//! scenario, training, evaluation, solver and output settings.
//!
//! Relative paths are resolved against the directory of the config file.
//! `network = "ieee33"` and `partition = "ieee33"` select the bundled
//! feeder; `partition = "singleton"` makes every bus its own IHR.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::conic::ConeSettings;
use crate::coordinator::{pool_episodes, Mode, CENTRAL};
use crate::error::{Error, Result};
use crate::learn::{Agent, BitRule, Estimator, TrainConfig};
use crate::market::IhrEpisode;
use crate::netmodel::{parse_network, parse_partition, IhrId, IhrPartition, NetworkModel};
use crate::nn::adam::alpha_preset;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::encode::EncodeConfig;
use crate::nn::tcn::TcnConfig;
use crate::opf::Prices;
use crate::scenario::{
    gen_ihr, gen_scenario, read_profile_csv, zone_nominal_loads, IhrSpec, Profile, ScenarioConfig, ScenarioKind,
};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "GRIDMATCH_CONFIG";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    network: RawNetwork,
    scenario: RawScenario,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    file: String,
    partition: String,
    /// Required for `singleton`; overrides the file's value otherwise.
    delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawProfile {
    Named(String),
    Csv { csv: PathBuf, scale: Option<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIhr {
    id: u32,
    evs: usize,
    inverter_kva: f64,
    solar_kw: f64,
    load_kw: Option<f64>,
    load_kvar: Option<f64>,
}

fn default_dt() -> f64 {
    1.0
}
fn default_charge() -> f64 {
    6.6
}
fn default_crit() -> (f64, f64) {
    (0.2, 0.8)
}
fn default_price() -> f64 {
    0.12
}
fn default_solar() -> RawProfile {
    RawProfile::Named("bell".into())
}
fn default_load() -> RawProfile {
    RawProfile::Named("two-peak".into())
}
fn default_load_scale() -> f64 {
    0.5
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: String,
    arrivals: Option<(usize, usize)>,
    deadlines: Option<(usize, usize)>,
    horizon: usize,
    #[serde(default = "default_dt")]
    dt: f64,
    #[serde(default = "default_charge")]
    charge_kwh: f64,
    #[serde(default = "default_crit")]
    crit: (f64, f64),
    #[serde(default = "default_price")]
    price: f64,
    #[serde(default = "default_solar")]
    solar: RawProfile,
    #[serde(default = "default_load")]
    load: RawProfile,
    #[serde(default = "default_load_scale")]
    load_scale: f64,
    #[serde(default = "default_noise")]
    solar_noise: f64,
    #[serde(default)]
    seed: u64,
    ihr: Vec<RawIhr>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRate {
    Value(f64),
    Preset(String),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<u64>,
    batch: Option<usize>,
    estimator: Option<String>,
    k: Option<usize>,
    lr_policy: Option<RawRate>,
    lr_critic: Option<RawRate>,
    seed: Option<u64>,
    dropout: Option<bool>,
    slots: Option<usize>,
    central_slots: Option<usize>,
    critic_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawEval {
    episodes: Option<usize>,
    seed: Option<u64>,
    rule: Option<String>,
    lambda_rt: Option<f64>,
    lambda_c: Option<f64>,
    modes: Option<Vec<String>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iter: Option<usize>,
    feas_tol: Option<f64>,
    gap_tol: Option<f64>,
    infeas_tol: Option<f64>,
    fallback_tol: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub train: TrainConfig,
    pub slots: usize,
    pub central_slots: usize,
    pub critic_hidden: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub episodes: usize,
    pub seed: u64,
    pub rule: BitRule,
    pub prices: Prices,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub net: NetworkModel,
    pub partition: IhrPartition,
    pub scenario: ScenarioConfig,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub solver: ConeSettings,
    pub out_dir: PathBuf,
}

fn resolve(base: &Path, p: impl AsRef<Path>) -> PathBuf {
    let p = p.as_ref();
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn rate(r: Option<RawRate>, default: f64) -> Result<f64> {
    match r {
        None => Ok(default),
        Some(RawRate::Value(v)) => Ok(v),
        Some(RawRate::Preset(name)) => {
            alpha_preset(&name).ok_or_else(|| Error::Config(format!("unknown learning-rate preset {name:?}")))
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;

        let net = match raw.network.file.as_str() {
            "ieee33" => NetworkModel::ieee33(),
            f => parse_network(&read(&resolve(base, f))?)?,
        };
        let mut partition = match raw.network.partition.as_str() {
            "ieee33" => {
                if raw.network.file != "ieee33" {
                    return Err(Error::Config(
                        "the bundled partition only fits the bundled network".into(),
                    ));
                }
                IhrPartition::ieee33(&net)
            }
            "singleton" => {
                let delta = raw
                    .network
                    .delta
                    .ok_or_else(|| Error::Config("singleton partition needs network.delta".into()))?;
                IhrPartition::singleton(&net, delta)?
            }
            f => parse_partition(&read(&resolve(base, f))?, &net)?,
        };
        if let Some(d) = raw.network.delta {
            partition = IhrPartition::new(&net, partition.zones().clone(), d)?;
        }

        let s = raw.scenario;
        let kind = match s.kind.as_str() {
            "scenario1" => ScenarioKind::Scenario1,
            "scenario2" => ScenarioKind::Scenario2,
            "custom" => ScenarioKind::Custom {
                arrivals: s
                    .arrivals
                    .ok_or_else(|| Error::Config("custom scenario needs arrivals = [lo, hi]".into()))?,
                deadlines: s
                    .deadlines
                    .ok_or_else(|| Error::Config("custom scenario needs deadlines = [lo, hi]".into()))?,
            },
            k => return Err(Error::Config(format!("unknown scenario kind {k:?}"))),
        };
        let profile = |p: RawProfile, what: &str| -> Result<Profile> {
            match p {
                RawProfile::Named(n) if n == "bell" => Ok(Profile::Bell),
                RawProfile::Named(n) if n == "two-peak" => Ok(Profile::TwoPeak),
                RawProfile::Named(n) => Err(Error::Config(format!("unknown {what} profile {n:?}"))),
                RawProfile::Csv { csv, scale } => Ok(Profile::Series(read_profile_csv(
                    &resolve(base, csv),
                    s.horizon,
                    s.dt,
                    scale.unwrap_or(1.0),
                )?)),
            }
        };
        let solar = profile(s.solar, "solar")?;
        let load = profile(s.load, "load")?;
        let nominal = zone_nominal_loads(&net, &partition);
        let part_ids: BTreeSet<u32> = partition.ihr_ids().into_iter().collect();
        let mut ihrs = Vec::new();
        for r in s.ihr {
            if r.id == CENTRAL {
                return Err(Error::Config(format!(
                    "IHR id {CENTRAL} is reserved for the pooled market"
                )));
            }
            if !part_ids.contains(&r.id) {
                return Err(Error::Config(format!(
                    "scenario IHR {} is not a zone of the partition",
                    r.id
                )));
            }
            let (p0, q0) = nominal.get(&r.id).copied().unwrap_or((0.0, 0.0));
            ihrs.push(IhrSpec {
                id: r.id,
                evs: r.evs,
                inverter_kva: r.inverter_kva,
                solar_kw: r.solar_kw,
                load_kw: r.load_kw.unwrap_or(p0),
                load_kvar: r.load_kvar.unwrap_or(q0),
            });
        }
        let scenario = ScenarioConfig {
            kind,
            horizon: s.horizon,
            dt: s.dt,
            charge_kwh: s.charge_kwh,
            crit: s.crit,
            price: s.price,
            solar,
            load,
            load_scale: s.load_scale,
            solar_noise: s.solar_noise,
            ihrs,
            seed: s.seed,
        };
        scenario.validate()?;

        let t = raw.train;
        let defaults = TrainConfig::default();
        let estimator = match t.estimator {
            Some(e) => e.parse::<Estimator>()?,
            None => defaults.estimator,
        };
        let train = TrainConfig {
            epochs: t.epochs.unwrap_or(defaults.epochs),
            batch: t.batch.unwrap_or(defaults.batch),
            estimator,
            k: t.k.unwrap_or(defaults.k),
            lr_policy: rate(t.lr_policy, defaults.lr_policy)?,
            lr_critic: rate(t.lr_critic, defaults.lr_critic)?,
            seed: t.seed.unwrap_or(defaults.seed),
            train_dropout: t.dropout.unwrap_or(defaults.train_dropout),
        };
        train.validate(scenario.horizon)?;
        let slots = t.slots.unwrap_or_else(|| scenario.max_active());
        if slots < scenario.max_active() {
            return Err(Error::Config(format!(
                "train.slots = {slots} but an IHR can hold {} customers at once",
                scenario.max_active()
            )));
        }
        let pooled: usize = scenario.ihrs.iter().map(|s| s.evs + 1).sum();
        let central_slots = t.central_slots.unwrap_or(pooled.max(1));
        if central_slots < pooled {
            return Err(Error::Config(format!(
                "train.central_slots = {central_slots} but the pooled market can hold {pooled} customers"
            )));
        }

        let e = raw.eval;
        let rule = match e.rule.as_deref().unwrap_or("greedy") {
            "greedy" => BitRule::Greedy,
            "sample" => BitRule::Sample,
            r => return Err(Error::Config(format!("unknown eval rule {r:?}"))),
        };
        let modes = e
            .modes
            .unwrap_or_else(|| vec!["decentralized".into(), "centralized".into()])
            .iter()
            .map(|m| match m.as_str() {
                "decentralized" => Ok(Mode::Decentralized),
                "centralized" => Ok(Mode::Centralized),
                other => Err(Error::Config(format!("unknown mode {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let eval_seed = e.seed.unwrap_or(1_000_000);
        let train_seeds = scenario.seed..scenario.seed.saturating_add(train.epochs);
        let eval_episodes = e.episodes.unwrap_or(5);
        let eval_seeds = eval_seed..eval_seed.saturating_add(eval_episodes as u64);
        if train_seeds.start < eval_seeds.end && eval_seeds.start < train_seeds.end {
            return Err(Error::Config(format!(
                "evaluation seeds {eval_seeds:?} overlap the training seeds {train_seeds:?}"
            )));
        }
        let eval = EvalSettings {
            episodes: eval_episodes,
            seed: eval_seed,
            rule,
            prices: Prices {
                lambda_rt: e.lambda_rt.unwrap_or(0.05),
                lambda_c: e.lambda_c.unwrap_or(1.0),
                dt: scenario.dt,
            },
            modes,
        };

        let d = ConeSettings {
            feas_tol: 1e-10,
            gap_tol: 1e-10,
            ..ConeSettings::default()
        };
        let sv = raw.solver;
        let solver = ConeSettings {
            max_iter: sv.max_iter.unwrap_or(d.max_iter),
            feas_tol: sv.feas_tol.unwrap_or(d.feas_tol),
            gap_tol: sv.gap_tol.unwrap_or(d.gap_tol),
            infeas_tol: sv.infeas_tol.unwrap_or(d.infeas_tol),
            fallback_tol: sv.fallback_tol.unwrap_or(d.fallback_tol),
        };
        let out_dir = resolve(base, raw.output.dir.unwrap_or_else(|| PathBuf::from("out")));

        Ok(Self {
            net,
            partition,
            scenario,
            train: TrainSettings {
                train,
                slots,
                central_slots,
                critic_hidden: t.critic_hidden.unwrap_or_else(|| vec![16]),
            },
            eval,
            solver,
            out_dir,
        })
    }

    /// Encoder for one IHR's market, or for the pooled market when `ihr` is
    /// the central id.
    pub fn encoder(&self, ihr: u32) -> Result<EncodeConfig> {
        let sc = &self.scenario;
        let max_load = |s: &IhrSpec| s.load_kw.max(0.0) * sc.load_scale * sc.dt;
        let (slots, r_max, load) = if ihr == CENTRAL {
            let r: f64 = sc.ihrs.iter().map(|s| s.inverter_kva).sum();
            let l = sc.ihrs.iter().map(max_load).fold(0.0, f64::max);
            (self.train.central_slots, r, l)
        } else {
            let s = sc.spec(ihr)?;
            (self.train.slots, s.inverter_kva, max_load(s))
        };
        let enc = EncodeConfig {
            slots,
            horizon: sc.horizon,
            p_max: sc.charge_kwh.max(load),
            b_max: sc.price,
            r_max: if r_max > 0.0 { r_max } else { 1.0 },
        };
        enc.validate()?;
        Ok(enc)
    }

    /// Seed of the training episode for `epoch`; evaluation episodes use
    /// `eval.seed + i`, kept disjoint by validation.
    pub fn train_episode_seed(&self, epoch: u64) -> u64 {
        self.scenario.seed.wrapping_add(epoch)
    }

    /// Markets that need an agent: every scenario IHR, plus the pooled
    /// market when centralized evaluation is configured.
    pub fn markets(&self) -> Vec<IhrId> {
        let mut ids: Vec<IhrId> = self.scenario.ihrs.iter().map(|s| s.id).collect();
        if self.eval.modes.contains(&Mode::Centralized) {
            ids.push(CENTRAL);
        }
        ids
    }

    /// Untrained agent for market `ihr`.
    pub fn fresh_agent(&self, ihr: IhrId) -> Result<Agent> {
        let enc = self.encoder(ihr)?;
        let seed = self.train.train.seed.wrapping_mul(1_000_003).wrapping_add(ihr as u64);
        Agent::init(
            enc,
            TcnConfig::new(enc.width(), enc.slots),
            self.train.critic_hidden.clone(),
            seed,
        )
    }

    /// Market `ihr`'s episode for scenario seed `seed`; the pooled market
    /// sees every IHR's customers.
    pub fn episode(&self, ihr: IhrId, seed: u64) -> Result<IhrEpisode> {
        if ihr == CENTRAL {
            pool_episodes(&gen_scenario(&self.scenario, seed)?)
        } else {
            Ok(gen_ihr(&self.scenario, ihr, seed)?.0)
        }
    }

    /// Agent for market `ihr` restored from a checkpoint, checked against the
    /// configured encoding.
    pub fn restore_agent(&self, ihr: IhrId, ck: &Checkpoint) -> Result<Agent> {
        let enc = self.encoder(ihr)?;
        let tcn = &ck.policy.cfg;
        if tcn.input_dim != enc.width() || tcn.outputs != enc.slots {
            return Err(Error::Config(format!(
                "checkpoint for market {ihr} is {}→{} but the config encodes {}→{}",
                tcn.input_dim,
                tcn.outputs,
                enc.width(),
                enc.slots
            )));
        }
        Ok(Agent {
            enc,
            policy: ck.policy.clone(),
            critic: ck.critic.clone(),
        })
    }
}
