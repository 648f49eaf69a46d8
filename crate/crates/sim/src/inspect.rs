//! Human-readable decoding and text-driven encoding of protocol artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use bprel_core::bundle::{CREB_BLOCK_TYPE, CTEB_BLOCK_TYPE, FLAG_ADMIN_RECORD, PAYLOAD_BLOCK_TYPE};
use bprel_core::eid::{decode_eid, encode_eid};
use bprel_core::signal::{
    decode_signal, AdminRecord, Signal, SignalKey, CCS_RECORD_TYPE, CRS_RECORD_TYPE,
};
use bprel_core::{
    Bundle, BundleSequenceCollection, CrcType, CrebData, CtebData, DispositionCode, EndpointId,
    PrimaryBlock, ReportReason, ReportTypes,
};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Eid,
    Bundle,
    Creb,
    Cteb,
    Crs,
    Ccs,
}

impl FromStr for Kind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eid" => Kind::Eid,
            "bundle" => Kind::Bundle,
            "creb" => Kind::Creb,
            "cteb" => Kind::Cteb,
            "crs" => Kind::Crs,
            "ccs" => Kind::Ccs,
            _ => return Err(SimError::Input(format!("unknown kind {s}"))),
        })
    }
}

fn code_name(code: i64) -> &'static str {
    match code {
        1 => "accepted",
        2 => "accepted_duplicate",
        -1 => "refused_dropped",
        -2 => "refused_forwarded",
        c if c > 0 => "reserved_acceptance",
        _ => "reserved_refusal",
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string())
        .unwrap_or_else(|| "(absent)".into())
}

fn creb_table(out: &mut String, d: &CrebData, indent: &str) {
    let _ = writeln!(out, "{indent}sequence_number  {}", d.sequence_number);
    let _ = writeln!(out, "{indent}sequence_id      {}", opt(d.sequence_id));
    let _ = writeln!(out, "{indent}report_types     {}", opt(d.report_types));
    let _ = writeln!(out, "{indent}block_source     {}", opt(d.block_source));
    let _ = writeln!(out, "{indent}report_endpoint  {}", opt(d.report_endpoint));
}

fn cteb_table(out: &mut String, d: &CtebData, indent: &str) {
    let _ = writeln!(out, "{indent}sequence_number  {}", d.sequence_number);
    let _ = writeln!(out, "{indent}sequence_id      {}", d.sequence_id);
    let _ = writeln!(out, "{indent}block_source     {}", d.block_source);
}

fn signal_table<K: SignalKey>(
    out: &mut String,
    signal: &Signal<K>,
    name: impl Fn(i64) -> String,
    receiver: Option<EndpointId>,
    indent: &str,
) -> Result<()> {
    let _ = writeln!(out, "{indent}{:>5}  {:<20} sequences", "key", "meaning");
    for (k, c) in signal.wire_order() {
        let wire = k.to_wire();
        for (i, s) in c.iter().enumerate() {
            let (key, meaning) = if i == 0 {
                (wire.to_string(), name(wire))
            } else {
                (String::new(), String::new())
            };
            let _ = writeln!(out, "{indent}{key:>5}  {meaning:<20} {s}");
        }
    }
    if let Some(receiver) = receiver {
        let _ = writeln!(out, "{indent}expanded for {receiver}:");
        let expanded = signal.expand(receiver, u64::MAX)?;
        for (k, _) in signal.wire_order() {
            let list: Vec<String> = expanded[&k].iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "{indent}{:>5}  {}", k.to_wire(), list.join(" "));
        }
    }
    Ok(())
}

fn reason_name(v: i64) -> String {
    u64::try_from(v)
        .map(|r| ReportReason(r).to_string())
        .unwrap_or_default()
}

fn record_table(
    out: &mut String,
    bytes: &[u8],
    receiver: Option<EndpointId>,
    indent: &str,
) -> Result<()> {
    let rec = AdminRecord::decode(bytes)?;
    let _ = writeln!(out, "{indent}record_type      {}", rec.record_type);
    match rec.record_type {
        CRS_RECORD_TYPE => signal_table(
            out,
            &Signal::<ReportReason>::decode(rec.content)?,
            reason_name,
            receiver,
            indent,
        ),
        CCS_RECORD_TYPE => signal_table(
            out,
            &Signal::<DispositionCode>::decode(rec.content)?,
            |c| code_name(c).into(),
            receiver,
            indent,
        ),
        _ => Ok(()),
    }
}

/// Field table for `bytes` interpreted as `kind`. `receiver` fills in
/// omitted block sources when expanding signals.
pub fn decode(kind: Kind, bytes: &[u8], receiver: Option<EndpointId>) -> Result<String> {
    let mut out = String::new();
    match kind {
        Kind::Eid => {
            let _ = writeln!(out, "eid  {}", decode_eid(bytes)?);
        }
        Kind::Creb => creb_table(&mut out, &CrebData::decode(bytes)?, ""),
        Kind::Cteb => cteb_table(&mut out, &CtebData::decode(bytes)?, ""),
        Kind::Crs => {
            let s = decode_signal::<ReportReason>(bytes, CRS_RECORD_TYPE)?;
            signal_table(&mut out, &s, reason_name, receiver, "")?;
        }
        Kind::Ccs => {
            let s = decode_signal::<DispositionCode>(bytes, CCS_RECORD_TYPE)?;
            signal_table(&mut out, &s, |c| code_name(c).into(), receiver, "")?;
        }
        Kind::Bundle => {
            let b = Bundle::decode(bytes)?;
            let p = &b.primary;
            let _ = writeln!(out, "primary");
            let _ = writeln!(out, "  flags            {:#x}", p.flags);
            let _ = writeln!(out, "  crc              {:?}", p.crc_type);
            let _ = writeln!(out, "  destination      {}", p.destination);
            let _ = writeln!(out, "  source           {}", p.source);
            let _ = writeln!(out, "  report_to        {}", p.report_to);
            let _ = writeln!(out, "  creation_time    {}", p.creation_time);
            let _ = writeln!(out, "  creation_seq     {}", p.creation_sequence);
            let _ = writeln!(out, "  lifetime         {}", p.lifetime);
            for blk in &b.blocks {
                let name = match blk.block_type {
                    PAYLOAD_BLOCK_TYPE => "payload",
                    CREB_BLOCK_TYPE => "creb",
                    CTEB_BLOCK_TYPE => "cteb",
                    _ => "unknown",
                };
                let _ = writeln!(
                    out,
                    "block {} type={} ({name}) flags={:#x} crc={:?} len={}",
                    blk.block_number,
                    blk.block_type,
                    blk.flags,
                    blk.crc_type,
                    blk.data.len()
                );
                match blk.block_type {
                    CREB_BLOCK_TYPE => {
                        let d = CrebData::decode(&blk.data)?;
                        creb_table(&mut out, &d, "  ");
                        let r = d.resolve(p);
                        let _ = writeln!(out, "  tag              {}", r.tag);
                        let _ = writeln!(out, "  report_to        {}", r.report_to);
                    }
                    CTEB_BLOCK_TYPE => {
                        let d = CtebData::decode(&blk.data)?;
                        cteb_table(&mut out, &d, "  ");
                        let _ = writeln!(out, "  tag              {}", d.tag(p));
                    }
                    PAYLOAD_BLOCK_TYPE if p.is_admin_record() => {
                        record_table(
                            &mut out,
                            &blk.data,
                            receiver.or(Some(p.destination.admin())),
                            "  ",
                        )?;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(out)
}

fn input(m: impl Into<String>) -> SimError {
    SimError::Input(m.into())
}

fn pairs(text: &str) -> Result<Vec<(&str, &str)>> {
    text.split_whitespace()
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| input(format!("expected key=value, got {t}")))
        })
        .collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| input(format!("{key} must be a number")))
}

fn parse_creb(text: &str) -> Result<CrebData> {
    let mut d = CrebData::new(0);
    let mut have_seq = false;
    for (k, v) in pairs(text)? {
        match k {
            "seq" => {
                d.sequence_number = num(k, v)?;
                have_seq = true;
            }
            "id" => d.sequence_id = Some(num(k, v)?),
            "types" => d.report_types = Some(v.parse::<ReportTypes>()?),
            "source" => d.block_source = Some(v.parse()?),
            "report" => d.report_endpoint = Some(v.parse()?),
            _ => return Err(input(format!("unknown creb field {k}"))),
        }
    }
    if !have_seq {
        return Err(input("creb needs seq="));
    }
    Ok(d)
}

fn parse_cteb(text: &str) -> Result<CtebData> {
    let (mut seq, mut id, mut source) = (None, None, None);
    for (k, v) in pairs(text)? {
        match k {
            "seq" => seq = Some(num(k, v)?),
            "id" => id = Some(num(k, v)?),
            "source" => source = Some(v.parse::<EndpointId>()?),
            _ => return Err(input(format!("unknown cteb field {k}"))),
        }
    }
    match (seq, id, source) {
        (Some(sequence_number), Some(sequence_id), Some(block_source)) => Ok(CtebData {
            sequence_number,
            sequence_id,
            block_source,
        }),
        _ => Err(input("cteb needs seq=, id= and source=")),
    }
}

fn parse_signal<K: SignalKey>(text: &str, key: impl Fn(&str) -> Result<K>) -> Result<Signal<K>> {
    let mut entries = BTreeMap::new();
    for entry in text.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let (k, c) = entry
            .split_once('=')
            .ok_or_else(|| input(format!("expected key=sequences, got {entry}")))?;
        let k = key(k.trim())?;
        if entries
            .insert(k, c.parse::<BundleSequenceCollection>()?)
            .is_some()
        {
            return Err(input("duplicate signal key"));
        }
    }
    Ok(Signal { entries })
}

fn crc(v: &str) -> Result<CrcType> {
    Ok(match v {
        "none" => CrcType::None,
        "crc16" => CrcType::Crc16,
        "crc32c" => CrcType::Crc32c,
        _ => return Err(input("crc must be none, crc16 or crc32c")),
    })
}

fn parse_bundle(text: &str) -> Result<Bundle> {
    let mut primary = PrimaryBlock {
        flags: 0,
        crc_type: CrcType::Crc32c,
        destination: EndpointId::ipn(1, 1),
        source: EndpointId::ipn(1, 1),
        report_to: EndpointId::ipn(1, 1),
        creation_time: 0,
        creation_sequence: 0,
        lifetime: 3_600_000,
    };
    let (mut dst, mut src, mut report_to) = (None, None, None);
    let mut payload = Vec::new();
    let mut extensions = Vec::new();
    for (k, v) in pairs(text)? {
        match k {
            "dst" => dst = Some(v.parse()?),
            "src" => src = Some(v.parse()?),
            "report_to" => report_to = Some(v.parse()?),
            "time" => primary.creation_time = num(k, v)?,
            "seq" => primary.creation_sequence = num(k, v)?,
            "lifetime" => primary.lifetime = num(k, v)?,
            "crc" => primary.crc_type = crc(v)?,
            "admin" if v == "true" => primary.flags |= FLAG_ADMIN_RECORD,
            "admin" => {}
            "payload" => payload = hex::decode(v).map_err(|e| input(format!("payload: {e}")))?,
            "creb" => {
                extensions.push((CREB_BLOCK_TYPE, parse_creb(&v.replace(',', " "))?.encode()?))
            }
            "cteb" => {
                extensions.push((CTEB_BLOCK_TYPE, parse_cteb(&v.replace(',', " "))?.encode()))
            }
            _ => return Err(input(format!("unknown bundle field {k}"))),
        }
    }
    primary.destination = dst.ok_or_else(|| input("bundle needs dst="))?;
    primary.source = src.ok_or_else(|| input("bundle needs src="))?;
    primary.report_to = report_to.unwrap_or(primary.source);
    if primary.lifetime == 0 {
        return Err(input("lifetime must be positive"));
    }
    let crc_type = primary.crc_type;
    let mut b = Bundle::new(primary, payload);
    for (t, data) in extensions {
        b.insert_extension(t, data);
    }
    for blk in &mut b.blocks {
        blk.crc_type = crc_type;
    }
    b.validate()?;
    Ok(b)
}

/// Encodes a structured-text description of `kind`.
///
/// * eid: `ipn:21.1`
/// * creb: `seq=9 id=0 types=delivery [source=ipn:31.0] [report=ipn:31.1]`
/// * cteb: `seq=0 id=0 source=ipn:10.0`
/// * crs: `delivery=dst(ipn:21.1):0+17,dst(ipn:21.1):18+32` with `;` between keys
/// * ccs: `1=dst(ipn:50.1):0+2;-1=dst(ipn:50.1):2+1,dst(ipn:50.1):4+1`
/// * bundle: `dst=ipn:50.1 src=ipn:10.1 [time=ms] [seq=n] [lifetime=ms]
///   [crc=crc32c] [admin=true] [payload=hex] [creb=seq=0,id=0,types=delivery]
///   [cteb=seq=0,id=0,source=ipn:10.0]`
///
/// CRS and CCS are emitted as complete administrative records.
pub fn encode(kind: Kind, text: &str) -> Result<Vec<u8>> {
    let text = text.trim();
    Ok(match kind {
        Kind::Eid => encode_eid(text.parse()?),
        Kind::Creb => parse_creb(text)?.encode()?,
        Kind::Cteb => parse_cteb(text)?.encode(),
        Kind::Crs => {
            let s = parse_signal(text, |k| match k.parse::<u64>() {
                Ok(n) => Ok(ReportReason(n)),
                Err(_) => Ok(k.parse::<ReportReason>()?),
            })?;
            AdminRecord::encode(CRS_RECORD_TYPE, &s.to_bytes())
        }
        Kind::Ccs => {
            let s = parse_signal(text, |k| {
                let v: i64 = num("disposition code", k)?;
                Ok(DispositionCode::from_wire(v)?)
            })?;
            AdminRecord::encode(CCS_RECORD_TYPE, &s.to_bytes())
        }
        Kind::Bundle => parse_bundle(text)?.encode(),
    })
}
