//! Declarative scenario description, its TOML form, validation, and the
//! built-in lunar and Earth-observation configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::num::NonZeroU64;
use std::path::Path;

use bprel_core::custody::{ProbabilisticPolicy, ScriptedPolicy};
use bprel_core::node::{CrebPolicy, ScopePolicy};
use bprel_core::signal::FlushLimits;
use bprel_core::{
    BundleTag, CustodyDecision, CustodyPolicy, EndpointId, Mib, NodeConfig, ReportTypes,
    SimDuration, SimTime,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Seconds of simulated time to run.
    pub duration: f64,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub number: u64,
    #[serde(default)]
    pub routes: Vec<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_route: Option<u64>,
    #[serde(default)]
    pub mib: MibSpec,
    #[serde(default)]
    pub policy: PolicySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub dest: u64,
    pub via: u64,
}

/// Node management parameters. Times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MibSpec {
    pub crs_max_bundles: usize,
    pub crs_max_pending: f64,
    pub ccs_max_bundles: usize,
    pub ccs_max_pending: f64,
    pub retransmission_timer: f64,
    pub sequence_max: u64,
    pub store_capacity: usize,
    pub duplicate_capacity: usize,
    pub lifetime: f64,
    /// Draw sequence numbers from this explicit scope instead of per destination.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scope_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub creb_policy: Option<CrebPolicySpec>,
    pub timer_backoff: bool,
    pub gap_retransmit: bool,
    pub retransmit_on_contact: bool,
}

impl Default for MibSpec {
    fn default() -> Self {
        let m = Mib::default();
        MibSpec {
            crs_max_bundles: m.crs_limits.max_bundles,
            crs_max_pending: m.crs_limits.max_pending.as_secs_f64(),
            ccs_max_bundles: m.ccs_limits.max_bundles,
            ccs_max_pending: m.ccs_limits.max_pending.as_secs_f64(),
            retransmission_timer: m.retransmission_timer.as_secs_f64(),
            sequence_max: m.sequence_max,
            store_capacity: m.store_capacity,
            duplicate_capacity: m.duplicate_capacity,
            lifetime: m.default_lifetime.as_secs_f64(),
            scope_id: None,
            creb_policy: None,
            timer_backoff: false,
            gap_retransmit: false,
            retransmit_on_contact: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrebPolicySpec {
    pub report: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_to: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Drop,
    Forward,
}

impl From<Decision> for CustodyDecision {
    fn from(d: Decision) -> Self {
        match d {
            Decision::Accept => CustodyDecision::Accept,
            Decision::Drop => CustodyDecision::RefuseDrop,
            Decision::Forward => CustodyDecision::RefuseForward,
        }
    }
}

/// Decisions for successive arrivals of one incoming sequence number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub number: u64,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    #[default]
    AlwaysAccept,
    Scripted {
        #[serde(default)]
        script: Vec<ScriptEntry>,
        #[serde(default = "accept")]
        default: Decision,
    },
    Probabilistic {
        accept: f64,
        drop: f64,
        forward: f64,
        /// Derived from the run seed and node number when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn accept() -> Decision {
    Decision::Accept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    /// One-way delay in seconds.
    pub delay: f64,
    #[serde(default)]
    pub loss: LossSpec,
    /// `[start, end]` windows in seconds. Empty means always up.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contacts: Vec<[f64; 2]>,
    /// Hold transmissions made outside a window until the next one opens;
    /// otherwise they are dropped.
    #[serde(default = "yes")]
    pub queue_outside_contact: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    #[default]
    None,
    Probabilistic {
        rate: f64,
    },
    Scripted {
        drops: Vec<DropSpec>,
    },
}

/// Drops the `index`-th transmission (0-based) sent by node `from` on the
/// link, or every transmission from `from` carrying `tag`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropSpec {
    pub from: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    /// First send time in seconds.
    pub at: f64,
    #[serde(default)]
    pub interval: f64,
    #[serde(default = "one")]
    pub count: u64,
    pub source: String,
    pub destination: String,
    #[serde(default = "payload_size")]
    pub payload_size: usize,
    /// Report types for a CREB, e.g. `delivery` or `reception|deletion`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_to: Option<String>,
    #[serde(default)]
    pub custody: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime: Option<f64>,
}

fn one() -> u64 {
    1
}

fn payload_size() -> usize {
    64
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Validates the scenario and resolves it into node configurations,
    /// links and traffic for a run with `seed`.
    pub fn compile(&self, seed: u64) -> Result<Compiled> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad("duration must be a non-negative number of seconds".into());
        }
        let mut names = BTreeMap::new();
        let mut numbers = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if names.insert(n.name.clone(), i).is_some() {
                return bad(format!("duplicate node name {}", n.name));
            }
            if n.number == 0 || !numbers.insert(n.number) {
                return bad(format!("node {} needs a unique nonzero number", n.name));
            }
        }
        let index = |name: &str| {
            names
                .get(name)
                .copied()
                .ok_or_else(|| SimError::Config(format!("unknown node {name}")))
        };

        let mut links = Vec::new();
        let mut neighbors = BTreeSet::new();
        for l in &self.links {
            let (a, b) = (index(&l.a)?, index(&l.b)?);
            if a == b {
                return bad(format!("link {} connects a node to itself", l.a));
            }
            if !(l.delay.is_finite() && l.delay >= 0.0) {
                return bad(format!("link {}-{} has an invalid delay", l.a, l.b));
            }
            let loss = match &l.loss {
                LossSpec::None => Loss::None,
                LossSpec::Probabilistic { rate } if (0.0..=1.0).contains(rate) => {
                    Loss::Probabilistic(*rate)
                }
                LossSpec::Probabilistic { .. } => {
                    return bad("loss rate must be within [0, 1]".into())
                }
                LossSpec::Scripted { drops } => {
                    let mut out = Vec::new();
                    for d in drops {
                        let from = index(&d.from)?;
                        if from != a && from != b {
                            return bad(format!(
                                "drop names {} which is not on link {}-{}",
                                d.from, l.a, l.b
                            ));
                        }
                        let tag = d.tag.as_deref().map(str::parse::<BundleTag>).transpose()?;
                        if d.index.is_none() && tag.is_none() {
                            return bad("a scripted drop needs an index or a tag".into());
                        }
                        out.push(ScriptedDrop {
                            from,
                            index: d.index,
                            tag,
                        });
                    }
                    Loss::Scripted(out)
                }
            };
            let mut contacts = Vec::new();
            for [s, e] in &l.contacts {
                if !(s.is_finite() && e.is_finite() && *s >= 0.0 && s < e) {
                    return bad(format!(
                        "link {}-{} has an invalid contact window",
                        l.a, l.b
                    ));
                }
                contacts.push((SimTime::from_secs_f64(*s), SimTime::from_secs_f64(*e)));
            }
            contacts.sort();
            let key = (a.min(b), a.max(b));
            if !neighbors.insert(key) {
                return bad(format!("duplicate link {}-{}", l.a, l.b));
            }
            links.push(Link {
                ends: [a, b],
                delay: SimDuration::from_secs_f64(l.delay),
                loss,
                contacts,
                queue_outside_contact: l.queue_outside_contact,
            });
        }

        let by_number: BTreeMap<u64, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.number, i))
            .collect();
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let mut cfg = NodeConfig::new(n.number);
            for r in n
                .routes
                .iter()
                .map(|r| (r.dest, r.via))
                .chain(n.default_route.map(|v| (0, v)))
            {
                let via = by_number.get(&r.1).copied();
                if !via.is_some_and(|v| neighbors.contains(&(i.min(v), i.max(v)))) {
                    return bad(format!(
                        "node {} routes via {} which is not a linked neighbor",
                        n.name, r.1
                    ));
                }
            }
            cfg.routes = n.routes.iter().map(|r| (r.dest, r.via)).collect();
            cfg.default_route = n.default_route;
            cfg.mib = n.mib.to_mib()?;
            cfg.policy = n.policy.to_policy(seed, n.number)?;
            nodes.push(CompiledNode {
                name: n.name.clone(),
                config: cfg,
            });
        }

        let mut traffic = Vec::new();
        for t in &self.traffic {
            let source: EndpointId = t.source.parse()?;
            let destination: EndpointId = t.destination.parse()?;
            let Some(&node) = by_number.get(&source.node) else {
                return bad(format!("traffic source {source} is not on any node"));
            };
            if !(t.at.is_finite() && t.at >= 0.0 && t.interval.is_finite() && t.interval >= 0.0) {
                return bad("traffic times must be non-negative".into());
            }
            traffic.push(Traffic {
                node,
                at: SimTime::from_secs_f64(t.at),
                interval: SimDuration::from_secs_f64(t.interval),
                count: t.count,
                source,
                destination,
                payload_size: t.payload_size,
                report: t
                    .report
                    .as_deref()
                    .map(str::parse::<ReportTypes>)
                    .transpose()?,
                report_to: t
                    .report_to
                    .as_deref()
                    .map(str::parse::<EndpointId>)
                    .transpose()?,
                custody: t.custody,
                lifetime: t.lifetime.map(SimDuration::from_secs_f64),
            });
        }
        Ok(Compiled {
            name: self.name.clone(),
            duration: SimTime::from_secs_f64(self.duration),
            seed,
            nodes,
            links,
            traffic,
        })
    }
}

impl MibSpec {
    fn to_mib(&self) -> Result<Mib> {
        let secs = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(SimDuration::from_secs_f64(v))
            } else {
                Err(SimError::Config(format!(
                    "{what} must be a non-negative number of seconds"
                )))
            }
        };
        let scope_policy = match self.scope_id {
            None | Some(0) => ScopePolicy::PerDestination,
            Some(id) => ScopePolicy::Explicit(NonZeroU64::new(id).expect("nonzero")),
        };
        let creb_policy = match &self.creb_policy {
            None => None,
            Some(p) => Some(CrebPolicy {
                report_types: p.report.parse()?,
                report_to: p.report_to.as_deref().map(str::parse).transpose()?,
            }),
        };
        Ok(Mib {
            crs_limits: FlushLimits {
                max_bundles: self.crs_max_bundles,
                max_pending: secs(self.crs_max_pending, "crs_max_pending")?,
            },
            ccs_limits: FlushLimits {
                max_bundles: self.ccs_max_bundles,
                max_pending: secs(self.ccs_max_pending, "ccs_max_pending")?,
            },
            retransmission_timer: secs(self.retransmission_timer, "retransmission_timer")?,
            sequence_max: self.sequence_max,
            store_capacity: self.store_capacity,
            duplicate_capacity: self.duplicate_capacity,
            default_lifetime: secs(self.lifetime, "lifetime")?,
            scope_policy,
            creb_policy,
            timer_backoff: self.timer_backoff,
            gap_retransmit: self.gap_retransmit,
            retransmit_on_contact: self.retransmit_on_contact,
        })
    }
}

/// Mixes the run seed with a per-component salt so components draw from
/// independent streams.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PolicySpec {
    fn to_policy(&self, seed: u64, node: u64) -> Result<CustodyPolicy> {
        Ok(match self {
            PolicySpec::AlwaysAccept => CustodyPolicy::AlwaysAccept,
            PolicySpec::Scripted { script, default } => {
                let mut decisions: BTreeMap<u64, Vec<CustodyDecision>> = BTreeMap::new();
                for e in script {
                    decisions
                        .entry(e.number)
                        .or_default()
                        .extend(e.decisions.iter().map(|d| CustodyDecision::from(*d)));
                }
                CustodyPolicy::Scripted(ScriptedPolicy::new(decisions, (*default).into()))
            }
            PolicySpec::Probabilistic {
                accept,
                drop,
                forward,
                seed: own,
            } => CustodyPolicy::Probabilistic(Box::new(ProbabilisticPolicy::new(
                *accept,
                *drop,
                *forward,
                own.unwrap_or_else(|| derive_seed(seed, node)),
            )?)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct CompiledNode {
    pub name: String,
    pub config: NodeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Loss {
    None,
    Probabilistic(f64),
    Scripted(Vec<ScriptedDrop>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedDrop {
    pub from: usize,
    pub index: Option<u64>,
    pub tag: Option<BundleTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// Node indices.
    pub ends: [usize; 2],
    pub delay: SimDuration,
    pub loss: Loss,
    /// Sorted, non-empty windows; empty means always up.
    pub contacts: Vec<(SimTime, SimTime)>,
    pub queue_outside_contact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traffic {
    pub node: usize,
    pub at: SimTime,
    pub interval: SimDuration,
    pub count: u64,
    pub source: EndpointId,
    pub destination: EndpointId,
    pub payload_size: usize,
    pub report: Option<ReportTypes>,
    pub report_to: Option<EndpointId>,
    pub custody: bool,
    pub lifetime: Option<SimDuration>,
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub name: String,
    pub duration: SimTime,
    pub seed: u64,
    pub nodes: Vec<CompiledNode>,
    pub links: Vec<Link>,
    pub traffic: Vec<Traffic>,
}

fn node(name: &str, number: u64, routes: &[(u64, u64)], mib: MibSpec) -> NodeSpec {
    NodeSpec {
        name: name.into(),
        number,
        routes: routes
            .iter()
            .map(|&(dest, via)| Route { dest, via })
            .collect(),
        default_route: None,
        mib,
        policy: PolicySpec::AlwaysAccept,
    }
}

fn link(a: &str, b: &str, delay: f64, loss: LossSpec) -> LinkSpec {
    LinkSpec {
        a: a.into(),
        b: b.into(),
        delay,
        loss,
        contacts: Vec::new(),
        queue_outside_contact: true,
    }
}

/// Fifty delivery-reported bundles from ipn:31.1 (user1, on the lunar
/// gateway) to ipn:21.1 on rover1. The gateway-to-rover link loses exactly
/// the bundle numbered 17.
pub fn lunar_scenario() -> Scenario {
    let mib = MibSpec {
        crs_max_bundles: 100,
        crs_max_pending: 10.0,
        retransmission_timer: 30.0,
        ..MibSpec::default()
    };
    let drop17 = DropSpec {
        from: "lgw".into(),
        index: None,
        tag: Some("dst(ipn:21.1)/17@ipn:31.0".into()),
    };
    Scenario {
        name: "lunar".into(),
        duration: 60.0,
        nodes: vec![
            node("user1", 31, &[(21, 220)], mib.clone()),
            node("lgw", 220, &[(21, 21), (31, 31)], mib.clone()),
            node("rover1", 21, &[(31, 220)], mib),
        ],
        links: vec![
            link("user1", "lgw", 0.01, LossSpec::None),
            link(
                "lgw",
                "rover1",
                0.01,
                LossSpec::Scripted {
                    drops: vec![drop17],
                },
            ),
        ],
        traffic: vec![TrafficSpec {
            at: 0.0,
            interval: 0.1,
            count: 50,
            source: "ipn:31.1".into(),
            destination: "ipn:21.1".into(),
            payload_size: 64,
            report: Some("delivery".into()),
            report_to: None,
            custody: false,
            lifetime: None,
        }],
    }
}

/// The lunar topology with 1% random loss on the gateway-to-rover link.
pub fn lunar_random_scenario() -> Scenario {
    let mut s = lunar_scenario();
    s.name = "lunar-random".into();
    s.links[1].loss = LossSpec::Probabilistic { rate: 0.01 };
    s
}

fn eo_mib() -> MibSpec {
    MibSpec {
        ccs_max_bundles: 5,
        ccs_max_pending: 15.0,
        retransmission_timer: 20.0,
        ..MibSpec::default()
    }
}

/// Five custody bundles from ipn:10.1 (PCC) to ipn:50.1 (EOSAT) through GS2,
/// whose custody decisions replay the recorded run: accept 0 and 1, drop 2
/// and 4, forward 3, then forward the retransmitted 2 and 4.
pub fn eo_scenario() -> Scenario {
    let mut gs2 = node("gs2", 20, &[(50, 50), (10, 10)], eo_mib());
    let script = |number, decisions: &[Decision]| ScriptEntry {
        number,
        decisions: decisions.to_vec(),
    };
    gs2.policy = PolicySpec::Scripted {
        script: vec![
            script(0, &[Decision::Accept]),
            script(1, &[Decision::Accept]),
            script(2, &[Decision::Drop, Decision::Forward]),
            script(3, &[Decision::Forward]),
            script(4, &[Decision::Drop, Decision::Forward]),
        ],
        default: Decision::Accept,
    };
    Scenario {
        name: "eo".into(),
        duration: 60.0,
        nodes: vec![
            node("pcc", 10, &[(50, 20), (20, 20)], eo_mib()),
            gs2,
            node("eosat", 50, &[(10, 20), (20, 20)], eo_mib()),
        ],
        links: vec![
            link("pcc", "gs2", 0.05, LossSpec::None),
            link("gs2", "eosat", 0.95, LossSpec::None),
        ],
        traffic: vec![TrafficSpec {
            at: 0.0,
            interval: 0.01,
            count: 5,
            source: "ipn:10.1".into(),
            destination: "ipn:50.1".into(),
            payload_size: 64,
            report: None,
            report_to: None,
            custody: true,
            lifetime: None,
        }],
    }
}

/// The EO topology with 10% loss on both links, a random 50/25/25 custody
/// policy on GS2, and 200 bundles over ten minutes.
pub fn eo_random_scenario() -> Scenario {
    let mut s = eo_scenario();
    s.name = "eo-random".into();
    s.duration = 600.0;
    s.nodes[1].policy = PolicySpec::Probabilistic {
        accept: 0.5,
        drop: 0.25,
        forward: 0.25,
        seed: None,
    };
    for l in &mut s.links {
        l.loss = LossSpec::Probabilistic { rate: 0.1 };
    }
    s.traffic[0].count = 200;
    s.traffic[0].interval = 0.1;
    s
}

pub const BUILTIN_NAMES: [&str; 4] = ["lunar", "eo", "lunar-random", "eo-random"];

pub fn builtin(name: &str) -> Option<Scenario> {
    match name {
        "lunar" => Some(lunar_scenario()),
        "eo" => Some(eo_scenario()),
        "lunar-random" => Some(lunar_random_scenario()),
        "eo-random" => Some(eo_random_scenario()),
        _ => None,
    }
}
