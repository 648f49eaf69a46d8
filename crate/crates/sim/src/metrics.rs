//! Run metrics computed purely from an event log.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use bprel_core::node::SignalKind;
use bprel_core::SimTime;

use crate::log::{signal_kind, LogRecord};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub sent: u64,
    /// Distinct bundles delivered at their destination.
    pub delivered: u64,
    /// Application bundles lost on a link.
    pub lost: u64,
    /// Application bundles deleted by a node that refused custody.
    pub dropped: u64,
    pub crs_count: u64,
    pub ccs_count: u64,
    /// Administrative records per-bundle status reporting would have sent:
    /// one per queued report or custody disposition.
    pub per_bundle_baseline: u64,
    pub retransmissions: u64,
    pub last_delivery_time: Option<SimTime>,
    pub final_custody_release_time: Option<SimTime>,
}

impl Metrics {
    pub fn admin_records(&self) -> u64 {
        self.crs_count + self.ccs_count
    }

    pub fn lost_or_dropped(&self) -> u64 {
        self.lost + self.dropped
    }

    fn rows(&self) -> Vec<(&'static str, &'static str, String)> {
        let time = |t: Option<SimTime>| t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        vec![
            ("Bundles Sent", "sent", self.sent.to_string()),
            ("Bundles Delivered", "delivered", self.delivered.to_string()),
            ("Bundles Lost on Link", "lost", self.lost.to_string()),
            (
                "Bundles Dropped by Custodian",
                "dropped",
                self.dropped.to_string(),
            ),
            (
                "Bundles Lost/Dropped",
                "lost_or_dropped",
                self.lost_or_dropped().to_string(),
            ),
            ("CRS Generated", "crs_count", self.crs_count.to_string()),
            ("CCS Generated", "ccs_count", self.ccs_count.to_string()),
            (
                "Per-Bundle Baseline Records",
                "per_bundle_baseline",
                self.per_bundle_baseline.to_string(),
            ),
            (
                "Custody Retransmissions",
                "retransmissions",
                self.retransmissions.to_string(),
            ),
            (
                "Last Bundle Delivery Time",
                "last_delivery_time",
                time(self.last_delivery_time),
            ),
            (
                "Final Custody Release Time",
                "final_custody_release_time",
                time(self.final_custody_release_time),
            ),
        ]
    }

    /// Right-aligned label table, e.g. `   Bundles Delivered 49`.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (label, _, value) in rows {
            let _ = writeln!(s, "{label:>width$} {value}");
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (_, key, value) in self.rows() {
            let _ = writeln!(s, "{key}={value}");
        }
        s
    }

    /// Table followed by a blank line and the key=value block.
    pub fn to_text(&self) -> String {
        format!("{}\n{}", self.to_table(), self.to_kv())
    }
}

pub fn summarize(log: &[LogRecord]) -> Metrics {
    let mut m = Metrics::default();
    let mut delivered = BTreeSet::new();
    for r in log {
        let admin = r.get("admin") == Some("true");
        match r.event.as_str() {
            "adu_sent" => m.sent += 1,
            "delivered" => {
                if delivered.insert(r.get("bundle").unwrap_or(&r.tag).to_string()) {
                    m.delivered += 1;
                }
                m.last_delivery_time = Some(r.time);
            }
            "lost" if !admin => m.lost += 1,
            "custody_refused" if r.get("decision") == Some("drop") => m.dropped += 1,
            "signal_sent" => match signal_kind(r) {
                Some(SignalKind::Crs) => m.crs_count += 1,
                Some(SignalKind::Ccs) => m.ccs_count += 1,
                None => {}
            },
            "report_queued" | "disposition_queued" => m.per_bundle_baseline += 1,
            "retransmitted" => m.retransmissions += 1,
            "custody_released" => m.final_custody_release_time = Some(r.time),
            _ => {}
        }
    }
    m
}
