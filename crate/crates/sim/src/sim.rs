//! Discrete-event simulator: a global queue ordered by (time, insertion
//! sequence) drives node agents over delayed, lossy, contact-windowed links.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use bprel_core::custody::cteb;
use bprel_core::node::{Output, RetransmissionTrigger, SendOptions, Transmission};
use bprel_core::reporting::crebs;
use bprel_core::{Bundle, BundleTag, Node, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::log::{record, LogRecord};
use crate::scenario::{derive_seed, Compiled, Link, Loss, Scenario};

enum Action {
    Traffic { traffic: usize, k: u64 },
    Arrive { to: usize, bytes: Vec<u8> },
    Timer { node: usize },
    ContactStart { link: usize },
    ContactEnd { link: usize },
}

struct Entry {
    time: SimTime,
    seq: u64,
    action: Action,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; invert so the earliest entry pops first.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct LinkState {
    link: Link,
    /// Transmissions attempted per direction, indexed by sender position in `ends`.
    sent: [u64; 2],
    rng: ChaCha8Rng,
}

/// A finished run: the event log and every node's final state.
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub log: Vec<LogRecord>,
    pub nodes: Vec<(String, Node)>,
}

pub struct Simulator {
    compiled: Compiled,
    nodes: Vec<Node>,
    links: Vec<LinkState>,
    by_pair: BTreeMap<(usize, usize), usize>,
    by_number: BTreeMap<u64, usize>,
    queue: BinaryHeap<Entry>,
    seq: u64,
    armed: Vec<Option<SimTime>>,
    now: SimTime,
    log: Vec<LogRecord>,
}

/// Tags carried by a bundle's CREBs and CTEB.
fn carried_tags(bundle: &Bundle) -> Vec<BundleTag> {
    let mut tags: Vec<BundleTag> = crebs(bundle).map(|c| c.tag).collect();
    if let Ok(Some(c)) = cteb(bundle) {
        tags.push(c.tag(&bundle.primary));
    }
    tags
}

impl Simulator {
    pub fn new(compiled: Compiled) -> Self {
        let nodes: Vec<Node> = compiled
            .nodes
            .iter()
            .map(|n| Node::new(n.config.clone()))
            .collect();
        let links = compiled
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| LinkState {
                link: l.clone(),
                sent: [0, 0],
                rng: ChaCha8Rng::seed_from_u64(derive_seed(compiled.seed, 1 << 32 | i as u64)),
            })
            .collect();
        let by_pair = compiled
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| ((l.ends[0].min(l.ends[1]), l.ends[0].max(l.ends[1])), i))
            .collect();
        let by_number = compiled
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.config.node, i))
            .collect();
        let armed = vec![None; nodes.len()];
        Simulator {
            compiled,
            nodes,
            links,
            by_pair,
            by_number,
            queue: BinaryHeap::new(),
            seq: 0,
            armed,
            now: SimTime::ZERO,
            log: Vec::new(),
        }
    }

    fn schedule(&mut self, time: SimTime, action: Action) {
        self.seq += 1;
        self.queue.push(Entry {
            time,
            seq: self.seq,
            action,
        });
    }

    fn name(&self, node: usize) -> &str {
        &self.compiled.nodes[node].name
    }

    fn push(&mut self, r: LogRecord) {
        log::debug!("{r}");
        self.log.push(r);
    }

    pub fn run(mut self) -> RunResult {
        for i in 0..self.links.len() {
            let windows = self.links[i].link.contacts.clone();
            for (s, e) in windows {
                self.schedule(s, Action::ContactStart { link: i });
                self.schedule(e, Action::ContactEnd { link: i });
            }
        }
        for (i, t) in self.compiled.traffic.iter().enumerate() {
            if t.count > 0 {
                let at = t.at;
                self.seq += 1;
                self.queue.push(Entry {
                    time: at,
                    seq: self.seq,
                    action: Action::Traffic { traffic: i, k: 0 },
                });
            }
        }
        while let Some(entry) = self.queue.pop() {
            if entry.time > self.compiled.duration {
                break;
            }
            self.now = entry.time;
            match entry.action {
                Action::Traffic { traffic, k } => self.send_traffic(traffic, k),
                Action::Arrive { to, bytes } => {
                    let out = self.nodes[to].on_receive(&bytes, self.now);
                    self.apply(to, out);
                }
                Action::Timer { node } => {
                    if self.armed[node] != Some(self.now) {
                        continue;
                    }
                    self.armed[node] = None;
                    let out = self.nodes[node].on_timer(self.now);
                    self.apply(node, out);
                }
                Action::ContactStart { link } => self.contact(link, true),
                Action::ContactEnd { link } => self.contact(link, false),
            }
        }
        log::info!(
            "{}: {} events until {}",
            self.compiled.name,
            self.log.len(),
            self.now
        );
        let names = self.compiled.nodes.iter().map(|n| n.name.clone());
        RunResult {
            scenario: self.compiled.name.clone(),
            seed: self.compiled.seed,
            log: self.log,
            nodes: names.zip(self.nodes).collect(),
        }
    }

    fn send_traffic(&mut self, index: usize, k: u64) {
        let t = self.compiled.traffic[index].clone();
        let opts = SendOptions {
            report_types: t.report,
            report_to: t.report_to,
            custody: t.custody,
            lifetime: t.lifetime,
        };
        let payload: Vec<u8> = (0..t.payload_size)
            .map(|i| (k as usize + i) as u8)
            .collect();
        match self.nodes[t.node].send_adu(t.source, t.destination, payload, &opts, self.now) {
            Ok(out) => self.apply(t.node, out),
            Err(e) => {
                let r = LogRecord::new(
                    self.now,
                    self.name(t.node),
                    "send_failed",
                    "-",
                    format!("error={}", e.to_string().replace(' ', "_")),
                );
                self.push(r);
            }
        }
        if k + 1 < t.count {
            let next = t.at + t.interval.saturating_mul(k + 1);
            self.schedule(
                next,
                Action::Traffic {
                    traffic: index,
                    k: k + 1,
                },
            );
        }
    }

    fn contact(&mut self, link: usize, up: bool) {
        let [a, b] = self.links[link].link.ends;
        let detail = format!("peer={}", self.name(b));
        let r = LogRecord::new(
            self.now,
            self.name(a),
            if up { "contact_start" } else { "contact_end" },
            "-",
            detail,
        );
        self.push(r);
        if up {
            for (me, peer) in [(a, b), (b, a)] {
                let next_hop = self.compiled.nodes[peer].config.node;
                let out = self.nodes[me].on_retransmission_trigger(
                    RetransmissionTrigger::ContactStart { next_hop },
                    self.now,
                );
                self.apply(me, out);
            }
        }
    }

    fn apply(&mut self, node: usize, out: Output) {
        for ev in &out.events {
            let r = record(self.now, self.name(node), ev);
            self.push(r);
        }
        for tx in out.transmissions {
            self.transmit(node, tx);
        }
        self.rearm(node);
    }

    fn rearm(&mut self, node: usize) {
        let next = self.nodes[node].next_deadline().map(|t| t.max(self.now));
        if next != self.armed[node] {
            self.armed[node] = next;
            if let Some(t) = next {
                self.schedule(t, Action::Timer { node });
            }
        }
    }

    fn transmit(&mut self, from: usize, tx: Transmission) {
        let now = self.now;
        let decoded = Bundle::decode(&tx.bytes).ok();
        let tags = decoded.as_ref().map(carried_tags).unwrap_or_default();
        let tag = tags
            .first()
            .map(|t| t.to_string())
            .unwrap_or_else(|| tx.bundle.to_string());
        let base = format!("bundle={} admin={}", tx.bundle, tx.admin);

        let Some(to) = self.by_number.get(&tx.next_hop).copied() else {
            let r = LogRecord::new(
                now,
                self.name(from),
                "no_link",
                tag,
                format!("{base} next_hop={}", tx.next_hop),
            );
            return self.push(r);
        };
        let Some(&li) = self.by_pair.get(&(from.min(to), from.max(to))) else {
            let r = LogRecord::new(
                now,
                self.name(from),
                "no_link",
                tag,
                format!("{base} next_hop={}", tx.next_hop),
            );
            return self.push(r);
        };
        let state = &mut self.links[li];
        let dir = usize::from(state.link.ends[0] != from);
        let index = state.sent[dir];
        state.sent[dir] += 1;

        let lost = match &state.link.loss {
            Loss::None => false,
            Loss::Probabilistic(rate) => state.rng.random_bool(*rate),
            Loss::Scripted(drops) => drops.iter().any(|d| {
                d.from == from
                    && (d.index == Some(index) || d.tag.is_some_and(|t| tags.contains(&t)))
            }),
        };
        let to_name = self.name(to).to_string();
        if lost {
            let r = LogRecord::new(
                now,
                self.name(from),
                "lost",
                tag,
                format!("{base} to={to_name} index={index}"),
            );
            return self.push(r);
        }

        let link = &self.links[li].link;
        let departure = if link.contacts.is_empty()
            || link.contacts.iter().any(|(s, e)| *s <= now && now < *e)
        {
            Some(now)
        } else if link.queue_outside_contact {
            link.contacts.iter().map(|(s, _)| *s).find(|s| *s > now)
        } else {
            None
        };
        let delay = link.delay;
        match departure {
            None => {
                let r = LogRecord::new(
                    now,
                    self.name(from),
                    "no_contact",
                    tag,
                    format!("{base} to={to_name}"),
                );
                self.push(r);
            }
            Some(t) => {
                if t > now {
                    let r = LogRecord::new(
                        now,
                        self.name(from),
                        "held",
                        tag,
                        format!("{base} to={to_name} until={t}"),
                    );
                    self.push(r);
                }
                self.schedule(
                    t + delay,
                    Action::Arrive {
                        to,
                        bytes: tx.bytes,
                    },
                );
            }
        }
    }
}

/// Validates `scenario` and runs it with `seed`.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunResult> {
    Ok(Simulator::new(scenario.compile(seed)?).run())
}
