//! Unified findings across the bytecode, source and transaction layers,
//! plus report merging.
//!
//! Every finding is one JSON object per line carrying
//! `"schema": "phantomscan/1"`. The `id` is the SHA-256 of the canonical
//! JSON of `[kind, subject, evidence]`; it does not depend on order,
//! time or tool version.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::hash::event_topic;
use crate::symexec::SourceFinding;
use crate::taint::{BytecodeFinding, Confidence};
use crate::txscan::TxFinding;

pub const SCHEMA: &str = "phantomscan/1";
pub const TOOL_VERSION: &str = concat!("phantomscan ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Layer {
    Bytecode,
    Source,
    Transaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Finding {
    pub schema: String,
    pub id: String,
    pub layer: Layer,
    pub kind: String,
    /// Contract id or transaction hash.
    pub subject: String,
    /// Event signature when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    /// 0x-prefixed topic0 when known; the cross-layer join key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic0: Option<String>,
    pub confidence: Confidence,
    pub evidence: Value,
    /// Set by `merge` on a bytecode finding backed by a confirmed source
    /// finding for the same contract and event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirmed_by: Option<String>,
    pub tool_version: String,
}

pub fn finding_id(kind: &str, subject: &str, evidence: &Value) -> String {
    // serde_json maps are ordered, so this text is canonical.
    let canon = json!([kind, subject, evidence]).to_string();
    hex::encode(Sha256::digest(canon.as_bytes()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("findings serialize")
}

fn kind_name<T: Serialize>(k: &T) -> String {
    to_value(k).as_str().expect("unit enum").to_string()
}

impl Finding {
    fn new(
        layer: Layer,
        kind: String,
        subject: String,
        event: Option<String>,
        topic0: Option<String>,
        confidence: Confidence,
        evidence: Value,
    ) -> Finding {
        Finding {
            schema: SCHEMA.to_string(),
            id: finding_id(&kind, &subject, &evidence),
            layer,
            kind,
            subject,
            event,
            topic0,
            confidence,
            evidence,
            confirmed_by: None,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn from_bytecode(f: &BytecodeFinding) -> Finding {
        let mut evidence = to_value(f);
        let obj = evidence.as_object_mut().expect("struct");
        for k in ["kind", "contract", "confidence", "event", "topic0"] {
            obj.remove(k);
        }
        Finding::new(
            Layer::Bytecode,
            kind_name(&f.kind),
            f.contract.clone(),
            f.event.clone(),
            f.topic0.map(|t| format!("0x{}", hex::encode(t))),
            f.confidence,
            evidence,
        )
    }

    pub fn from_source(f: &SourceFinding) -> Finding {
        let mut evidence = to_value(f);
        let obj = evidence.as_object_mut().expect("struct");
        for k in ["kind", "contract", "confidence", "event"] {
            obj.remove(k);
        }
        Finding::new(
            Layer::Source,
            kind_name(&f.kind),
            f.contract.clone(),
            Some(f.event.clone()),
            Some(format!("0x{}", hex::encode(event_topic(&f.event)))),
            f.confidence,
            evidence,
        )
    }

    pub fn from_tx(f: &TxFinding) -> Finding {
        let mut evidence = to_value(&f.evidence);
        let obj = evidence.as_object_mut().expect("struct");
        obj.insert("block_number".into(), json!(f.block_number));
        obj.insert("log_indices".into(), json!(f.log_indices));
        obj.insert("rule".into(), json!(f.rule));
        let event = obj.get("event").and_then(Value::as_str).map(str::to_string);
        let topic0 = obj.get("topic0").and_then(Value::as_str).map(str::to_string);
        Finding::new(
            Layer::Transaction,
            f.kind.to_string(),
            f.tx_hash.to_string(),
            event,
            topic0,
            Confidence::Confirmed,
            evidence,
        )
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("findings serialize")
    }

    /// Parses one JSONL line, checking the schema tag and the id.
    pub fn parse_line(line: &str) -> Result<Finding, String> {
        let f: Finding = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if f.schema != SCHEMA {
            return Err(format!("schema {:?}, expected {SCHEMA:?}", f.schema));
        }
        if f.id != finding_id(&f.kind, &f.subject, &f.evidence) {
            return Err(format!("id {} does not match content", f.id));
        }
        Ok(f)
    }

    fn sort_key(&self) -> (&str, Layer, &str, Option<&str>, &str) {
        (&self.subject, self.layer, &self.kind, self.topic0.as_deref(), &self.id)
    }
}

pub fn to_jsonl(findings: &[Finding]) -> String {
    findings.iter().map(|f| f.to_line() + "\n").collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Merged {
    pub findings: Vec<Finding>,
    pub errors: Vec<LineError>,
}

/// Reads findings JSONL; bad lines are skipped and reported.
pub fn read_findings(file: &str, text: &str, errors: &mut Vec<LineError>) -> Vec<Finding> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match Finding::parse_line(line) {
            Ok(f) => out.push(f),
            Err(message) => errors.push(LineError { file: file.to_string(), line: i + 1, message }),
        }
    }
    out
}

/// Dedupes by id, sorts canonically and links bytecode findings to
/// confirmed source findings on the same (contract, kind, event).
pub fn merge(findings: impl IntoIterator<Item = Finding>) -> Vec<Finding> {
    let mut by_id: BTreeMap<String, Finding> = BTreeMap::new();
    for mut f in findings {
        f.confirmed_by = None;
        by_id.entry(f.id.clone()).or_insert(f);
    }
    let confirmed: BTreeMap<(String, String, String), String> = by_id
        .values()
        .filter(|f| f.layer == Layer::Source && f.confidence == Confidence::Confirmed)
        .filter_map(|f| Some(((f.subject.clone(), f.kind.clone(), f.topic0.clone()?), f.id.clone())))
        .collect();
    let mut out: Vec<Finding> = by_id.into_values().collect();
    for f in &mut out {
        if f.layer == Layer::Bytecode && f.confidence == Confidence::Potential {
            if let Some(t) = &f.topic0 {
                f.confirmed_by = confirmed.get(&(f.subject.clone(), f.kind.clone(), t.clone())).cloned();
            }
        }
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

/// Confidence after merging: a confirmed source finding lifts the
/// matching bytecode finding.
pub fn effective_confidence(f: &Finding) -> Confidence {
    if f.confirmed_by.is_some() {
        Confidence::Confirmed
    } else {
        f.confidence
    }
}

/// Human-readable summary: counts per kind and layer.
pub fn summary(findings: &[Finding]) -> String {
    let mut counts: BTreeMap<(String, Layer), (usize, usize)> = BTreeMap::new();
    for f in findings {
        let c = counts.entry((f.kind.clone(), f.layer)).or_default();
        match effective_confidence(f) {
            Confidence::Confirmed => c.0 += 1,
            Confidence::Potential => c.1 += 1,
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:<22} {:<12} {:>9} {:>9}", "KIND", "LAYER", "CONFIRMED", "POTENTIAL");
    for ((kind, layer), (c, p)) in &counts {
        let layer = kind_name(layer);
        let _ = writeln!(out, "{kind:<22} {layer:<12} {c:>9} {p:>9}");
    }
    let subjects: BTreeSet<&str> = findings.iter().map(|f| f.subject.as_str()).collect();
    let _ = writeln!(out, "{} finding(s) across {} subject(s)", findings.len(), subjects.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(layer: Layer, kind: &str, subject: &str, topic: &str, conf: Confidence, ev: Value) -> Finding {
        Finding::new(layer, kind.into(), subject.into(), None, Some(topic.into()), conf, ev)
    }

    #[test]
    fn id_ignores_key_order_and_tool_version() {
        let a: Value = serde_json::from_str(r#"{"b":1,"a":[1,2]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a":[1,2],"b":1}"#).unwrap();
        assert_eq!(finding_id("K", "s", &a), finding_id("K", "s", &b));
        assert_ne!(finding_id("K", "s", &a), finding_id("K", "t", &a));
        let mut f = sample(Layer::Source, "K", "s", "0x01", Confidence::Confirmed, a);
        let id = f.id.clone();
        f.tool_version = "other".into();
        assert_eq!(Finding::parse_line(&f.to_line()).unwrap().id, id);
    }

    #[test]
    fn round_trip_and_bad_lines() {
        let f = sample(Layer::Bytecode, "K", "s", "0x01", Confidence::Potential, json!({"x": 1}));
        assert_eq!(Finding::parse_line(&f.to_line()).unwrap(), f);
        let mut tampered = f.clone();
        tampered.subject = "other".into();
        assert!(Finding::parse_line(&tampered.to_line()).is_err());
        let wrong_schema = f.to_line().replace("phantomscan/1", "phantomscan/0");
        assert!(Finding::parse_line(&wrong_schema).is_err());
        let mut errors = Vec::new();
        let text = format!("{}\nnot json\n\n{}\n", f.to_line(), f.to_line());
        assert_eq!(read_findings("f", &text, &mut errors).len(), 2);
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].line, 2);
    }

    #[test]
    fn merge_dedupes_links_and_is_idempotent() {
        let byte = sample(Layer::Bytecode, "EVENT_COUNTERFEITING", "Bridge", "0xaa", Confidence::Potential, json!({"p": 1}));
        let src = sample(Layer::Source, "EVENT_COUNTERFEITING", "Bridge", "0xaa", Confidence::Confirmed, json!({"q": 1}));
        let other = sample(Layer::Bytecode, "EVENT_COUNTERFEITING", "Other", "0xaa", Confidence::Potential, json!({"p": 1}));
        let once = merge([byte.clone(), src.clone(), byte.clone(), other.clone()]);
        assert_eq!(once.len(), 3);
        let linked = once.iter().find(|f| f.id == byte.id).unwrap();
        assert_eq!(linked.confirmed_by.as_deref(), Some(src.id.as_str()));
        assert_eq!(effective_confidence(linked), Confidence::Confirmed);
        assert!(once.iter().find(|f| f.id == other.id).unwrap().confirmed_by.is_none());
        assert_eq!(merge(once.clone()), once);
        // Stale links are recomputed.
        assert!(merge([linked.clone()])[0].confirmed_by.is_none());
        let s = summary(&once);
        assert!(s.contains("EVENT_COUNTERFEITING"));
        assert!(s.contains("3 finding(s) across 2 subject(s)"));
    }
}
