//! Text checkpoint of policy, critic and optimizer state.
//!
//! ```text
//! gridmatch-checkpoint 1
//! epoch 40
//! tcn input_dim=49,outputs=8,filters=4,kernel=3,blocks=3,dilation_base=4,dropout=0.1
//! critic input_dim=50,hidden=16
//! adam policy alpha=0.01,beta1=0.9,beta2=0.999,eps=1e-8,step=2
//! adam critic alpha=0.01,beta1=0.9,beta2=0.999,eps=1e-8,step=2
//! tensor policy/block0.conv1.w;4x49x3;<values>
//! ...
//! ```
//!
//! Values use the shortest representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::adam::AdamState;
use super::critic::{CriticConfig, CriticParams};
use super::tcn::{TcnConfig, TcnParams};
use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "gridmatch-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub policy: TcnParams,
    pub critic: CriticParams,
    pub policy_opt: AdamState,
    pub critic_opt: AdamState,
}

fn join(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 24);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:e}");
    }
    s
}

fn write_tensor(out: &mut String, name: &str, shape: &[usize], data: &[f64]) {
    let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "tensor {name};{};{}", shape.join("x"), join(data));
}

fn write_adam(out: &mut String, tag: &str, a: &AdamState) {
    let _ = writeln!(
        out,
        "adam {tag} alpha={:e},beta1={:e},beta2={:e},eps={:e},step={}",
        a.alpha, a.beta1, a.beta2, a.eps, a.step
    );
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "epoch {}", self.epoch);
        let c = &self.policy.cfg;
        let _ = writeln!(
            out,
            "tcn input_dim={},outputs={},filters={},kernel={},blocks={},dilation_base={},dropout={:e}",
            c.input_dim, c.outputs, c.filters, c.kernel, c.blocks, c.dilation_base, c.dropout
        );
        let hidden: Vec<String> = self.critic.cfg.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "critic input_dim={},hidden={}",
            self.critic.cfg.input_dim,
            hidden.join(":")
        );
        write_adam(&mut out, "policy", &self.policy_opt);
        write_adam(&mut out, "critic", &self.critic_opt);
        for (prefix, set) in [("policy", &self.policy.params), ("critic", &self.critic.params)] {
            for (n, t) in set.names().iter().zip(set.tensors()) {
                write_tensor(&mut out, &format!("{prefix}/{n}"), t.shape(), t.data());
            }
        }
        for (tag, a) in [("policy", &self.policy_opt), ("critic", &self.critic_opt)] {
            write_tensor(&mut out, &format!("adam.{tag}.m"), &[a.m.len()], &a.m);
            write_tensor(&mut out, &format!("adam.{tag}.v"), &[a.v.len()], &a.v);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(Error::parse(1, "missing checkpoint header")),
        }
        let mut epoch = None;
        let mut tcn_kv = None;
        let mut critic_kv = None;
        let mut adam_kv: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut tensors: Vec<(usize, String, Tensor)> = Vec::new();
        for (i, line) in lines {
            let ln = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line.split_once(' ').ok_or_else(|| Error::parse(ln, "malformed line"))?;
            match kind {
                "epoch" => epoch = Some(rest.parse::<u64>().map_err(|e| Error::parse(ln, e.to_string()))?),
                "tcn" => tcn_kv = Some(kv(rest, ln)?),
                "critic" => critic_kv = Some(kv(rest, ln)?),
                "adam" => {
                    let (tag, body) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::parse(ln, "malformed adam line"))?;
                    adam_kv.insert(tag.to_string(), kv(body, ln)?);
                }
                "tensor" => {
                    let mut parts = rest.splitn(3, ';');
                    let name = parts.next().unwrap_or_default().to_string();
                    let shape_s = parts.next().ok_or_else(|| Error::parse(ln, "tensor without shape"))?;
                    let vals_s = parts.next().ok_or_else(|| Error::parse(ln, "tensor without values"))?;
                    let shape = shape_s
                        .split('x')
                        .map(|s| s.parse::<usize>().map_err(|e| Error::parse(ln, e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    let vals = vals_s
                        .split_whitespace()
                        .map(|s| s.parse::<f64>().map_err(|e| Error::parse(ln, e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    let t = Tensor::new(shape, vals).map_err(|e| Error::parse(ln, e.to_string()))?;
                    tensors.push((ln, name, t));
                }
                other => return Err(Error::parse(ln, format!("unknown record {other:?}"))),
            }
        }
        let epoch = epoch.ok_or_else(|| Error::parse(0, "missing epoch"))?;
        let tk = tcn_kv.ok_or_else(|| Error::parse(0, "missing tcn line"))?;
        let tcn_cfg = TcnConfig {
            input_dim: get(&tk, "input_dim")?,
            outputs: get(&tk, "outputs")?,
            filters: get(&tk, "filters")?,
            kernel: get(&tk, "kernel")?,
            blocks: get(&tk, "blocks")?,
            dilation_base: get(&tk, "dilation_base")?,
            dropout: get(&tk, "dropout")?,
        };
        let ck = critic_kv.ok_or_else(|| Error::parse(0, "missing critic line"))?;
        let hidden_s = ck.get("hidden").cloned().unwrap_or_default();
        let hidden = if hidden_s.is_empty() {
            Vec::new()
        } else {
            hidden_s
                .split(':')
                .map(|s| s.parse::<usize>().map_err(|e| Error::parse(0, e.to_string())))
                .collect::<Result<Vec<_>>>()?
        };
        let critic_cfg = CriticConfig {
            input_dim: get(&ck, "input_dim")?,
            hidden,
        };
        let mut policy_set = ParamSet::new();
        let mut critic_set = ParamSet::new();
        let mut moments: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (ln, name, t) in tensors {
            if let Some(n) = name.strip_prefix("policy/") {
                policy_set.push(n, t);
            } else if let Some(n) = name.strip_prefix("critic/") {
                critic_set.push(n, t);
            } else if name.starts_with("adam.") {
                moments.insert(name, t.data().to_vec());
            } else {
                return Err(Error::parse(ln, format!("unknown tensor {name:?}")));
            }
        }
        let policy = TcnParams::from_params(tcn_cfg, policy_set)?;
        let critic = CriticParams::from_params(critic_cfg, critic_set)?;
        let adam = |tag: &str, n: usize| -> Result<AdamState> {
            let a = adam_kv
                .get(tag)
                .ok_or_else(|| Error::parse(0, format!("missing adam {tag} line")))?;
            let m = moments.get(&format!("adam.{tag}.m")).cloned().unwrap_or_default();
            let v = moments.get(&format!("adam.{tag}.v")).cloned().unwrap_or_default();
            if m.len() != n || v.len() != n {
                return Err(Error::Shape(format!(
                    "adam {tag} moments do not match parameter count {n}"
                )));
            }
            Ok(AdamState {
                m,
                v,
                step: get(a, "step")?,
                alpha: get(a, "alpha")?,
                beta1: get(a, "beta1")?,
                beta2: get(a, "beta2")?,
                eps: get(a, "eps")?,
            })
        };
        let policy_opt = adam("policy", policy.params.len())?;
        let critic_opt = adam("critic", critic.params.len())?;
        Ok(Self {
            epoch,
            policy,
            critic,
            policy_opt,
            critic_opt,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn kv(s: &str, ln: usize) -> Result<BTreeMap<String, String>> {
    s.split(',')
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::parse(ln, format!("expected key=value, got {p:?}")))
        })
        .collect()
}

fn get<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T> {
    m.get(key)
        .ok_or_else(|| Error::parse(0, format!("missing key {key}")))?
        .parse::<T>()
        .map_err(|_| Error::parse(0, format!("bad value for {key}")))
}
