//! Structured-text dump of node state: counters, stored bundles, custody
//! records and pending signal drafts.

use std::fmt::Write as _;

use bprel_core::custody::ccs_signal;
use bprel_core::reporting::crs_signal;
use bprel_core::signal::{Signal, SignalKey};
use bprel_core::Node;

use crate::log::format_content;

fn content<K: SignalKey>(s: &Signal<K>) -> String {
    let entries: Vec<_> = s
        .wire_order()
        .into_iter()
        .map(|(k, c)| (k.to_wire(), c.clone()))
        .collect();
    format_content(&entries)
}

pub fn dump_node(name: &str, node: &Node) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "node {name} ({})", node.admin());
    let _ = writeln!(s, "  counters:");
    for (scope, next) in node.counters().iter() {
        let _ = writeln!(s, "    {scope} next={next}");
    }
    let _ = writeln!(s, "  store: {} bundles", node.store().len());
    for (id, e) in node.store().iter() {
        let constraints: Vec<String> = e.constraints.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(
            s,
            "    {id} expires={} constraints={}",
            e.expires_at,
            constraints.join(",")
        );
    }
    let _ = writeln!(s, "  custody records: {}", node.custody_records().count());
    for r in node.custody_records() {
        let _ = writeln!(
            s,
            "    {} bundle={} deadline={} retransmits={} last_sent={}",
            r.tag, r.bundle, r.retransmission_deadline, r.retransmit_count, r.last_sent
        );
    }
    let _ = writeln!(s, "  crs drafts:");
    for d in node.crs_drafts() {
        let _ = writeln!(
            s,
            "    to={} created={} tags={} content={}",
            d.destination,
            d.created_at,
            d.tag_count(),
            content(&crs_signal(d))
        );
    }
    let _ = writeln!(s, "  ccs drafts:");
    for d in node.ccs_drafts() {
        let _ = writeln!(
            s,
            "    to={} created={} tags={} content={}",
            d.destination,
            d.created_at,
            d.tag_count(),
            content(&ccs_signal(d))
        );
    }
    s
}

pub fn dump_nodes<'a>(nodes: impl IntoIterator<Item = (&'a str, &'a Node)>) -> String {
    nodes
        .into_iter()
        .map(|(n, node)| dump_node(n, node))
        .collect::<Vec<_>>()
        .join("\n")
}
