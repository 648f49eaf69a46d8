//! Line-oriented event log: `time<TAB>node<TAB>event<TAB>tag<TAB>detail`.
//!
//! Times are seconds with six decimals. The tag column holds a bundle tag,
//! a bundle id, or `-`. The detail column is space-separated `key=value`
//! pairs whose values never contain whitespace.

use std::fmt::{self, Write as _};

use bprel_core::node::{NodeEvent, SignalKind};
use bprel_core::{BundleSequenceCollection, SimTime};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time: SimTime,
    pub node: String,
    pub event: String,
    pub tag: String,
    pub detail: String,
}

impl LogRecord {
    pub fn new(time: SimTime, node: &str, event: &str, tag: impl ToString, detail: String) -> Self {
        LogRecord {
            time,
            node: node.to_string(),
            event: event.to_string(),
            tag: tag.to_string(),
            detail,
        }
    }

    /// Value of `key` in the detail column.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail
            .split(' ')
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || SimError::Input(format!("malformed log line: {line}"));
        let mut cols = line.splitn(5, '\t');
        let time: f64 = cols.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let node = cols.next().ok_or_else(bad)?;
        let event = cols.next().ok_or_else(bad)?;
        let tag = cols.next().ok_or_else(bad)?;
        let detail = cols.next().unwrap_or("");
        Ok(LogRecord::new(
            SimTime::from_secs_f64(time),
            node,
            event,
            tag,
            detail.to_string(),
        ))
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.time, self.node, self.event, self.tag, self.detail
        )
    }
}

pub fn render(records: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{r}");
    }
    s
}

pub fn parse(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LogRecord::parse)
        .collect()
}

/// `{2:dst(ipn:21.1):0+17;-1:...}` with one `key:collection` per map entry.
pub fn format_content(content: &[(i64, BundleSequenceCollection)]) -> String {
    let body: Vec<String> = content.iter().map(|(k, c)| format!("{k}:{c}")).collect();
    format!("{{{}}}", body.join(";"))
}

pub fn parse_content(text: &str) -> Result<Vec<(i64, BundleSequenceCollection)>> {
    let bad = || SimError::Input(format!("malformed signal content: {text}"));
    let inner = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(bad)?;
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(';')
        .map(|entry| {
            let (k, c) = entry.split_once(':').ok_or_else(bad)?;
            Ok((k.parse().map_err(|_| bad())?, c.parse()?))
        })
        .collect()
}

/// Converts a node event into its log record.
pub fn record(time: SimTime, node: &str, event: &NodeEvent) -> LogRecord {
    use NodeEvent as E;
    let r = |kind: &str, tag: String, detail: String| LogRecord::new(time, node, kind, tag, detail);
    match event {
        E::AduSent {
            bundle,
            destination,
            tag,
            custody,
        } => r(
            "adu_sent",
            tag.map(|t| t.to_string())
                .unwrap_or_else(|| bundle.to_string()),
            format!("bundle={bundle} dst={destination} custody={custody}"),
        ),
        E::Received { bundle, admin } => r(
            "received",
            bundle.to_string(),
            format!("bundle={bundle} admin={admin}"),
        ),
        E::Delivered { bundle, tag } => r(
            "delivered",
            tag.map(|t| t.to_string())
                .unwrap_or_else(|| bundle.to_string()),
            format!("bundle={bundle}"),
        ),
        E::Forwarded {
            bundle,
            next_hop,
            admin,
        } => r(
            "forwarded",
            bundle.to_string(),
            format!("bundle={bundle} next_hop={next_hop} admin={admin}"),
        ),
        E::Deleted { bundle, reason } => r(
            "deleted",
            bundle.to_string(),
            format!("bundle={bundle} reason={}", reason.as_str()),
        ),
        E::ReportQueued {
            destination,
            reason,
            tag,
        } => r(
            "report_queued",
            tag.to_string(),
            format!("reason={} to={destination}", reason),
        ),
        E::DispositionQueued {
            destination,
            code,
            tag,
        } => r(
            "disposition_queued",
            tag.to_string(),
            format!("code={} to={destination}", code.0),
        ),
        E::SignalSent {
            kind,
            destination,
            created_at,
            tags,
            content,
        } => r(
            "signal_sent",
            "-".into(),
            format!(
                "kind={} to={destination} created={created_at} tags={tags} content={}",
                kind.as_str(),
                format_content(content)
            ),
        ),
        E::SignalReceived {
            kind,
            source,
            content,
        } => r(
            "signal_received",
            "-".into(),
            format!(
                "kind={} from={source} content={}",
                kind.as_str(),
                format_content(content)
            ),
        ),
        E::CustodyRequested { bundle, tag } => r(
            "custody_requested",
            tag.to_string(),
            format!("bundle={bundle}"),
        ),
        E::CustodyAccepted {
            bundle,
            previous,
            tag,
            retained,
        } => {
            let new = tag.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
            r(
                "custody_accepted",
                previous.to_string(),
                format!("bundle={bundle} new_tag={new} retained={retained}"),
            )
        }
        E::CustodyRefused {
            bundle,
            tag,
            decision,
        } => r(
            "custody_refused",
            tag.to_string(),
            format!("bundle={bundle} decision={decision}"),
        ),
        E::CustodyReleased { bundle, tag, code } => r(
            "custody_released",
            tag.to_string(),
            format!("bundle={bundle} code={}", code.0),
        ),
        E::Retransmitted {
            bundle,
            tag,
            trigger,
            count,
        } => r(
            "retransmitted",
            tag.to_string(),
            format!("bundle={bundle} trigger={} count={count}", trigger.as_str()),
        ),
        E::DuplicateReceived { bundle, tag } => r(
            "duplicate_received",
            tag.to_string(),
            format!("bundle={bundle}"),
        ),
        E::DuplicateAdvisory { tag, timer } => r(
            "duplicate_advisory",
            tag.to_string(),
            format!("timer={timer}"),
        ),
        E::UnknownTag { tag, code } => {
            r("unknown_tag", tag.to_string(), format!("code={}", code.0))
        }
        E::GapDetected {
            reason,
            scope,
            missing,
        } => {
            let m: Vec<String> = missing.iter().map(u64::to_string).collect();
            r(
                "gap_detected",
                "-".into(),
                format!("reason={} scope={scope} missing={}", reason, m.join(",")),
            )
        }
        E::CustodyExpired { bundle, tag } => r(
            "custody_expired",
            tag.to_string(),
            format!("bundle={bundle}"),
        ),
        E::Malformed { error } => r(
            "malformed",
            "-".into(),
            format!("error={}", error.to_string().replace(' ', "_")),
        ),
    }
}

pub fn signal_kind(r: &LogRecord) -> Option<SignalKind> {
    match r.get("kind")? {
        "CRS" => Some(SignalKind::Crs),
        "CCS" => Some(SignalKind::Ccs),
        _ => None,
    }
}
