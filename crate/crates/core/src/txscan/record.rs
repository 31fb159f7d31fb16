//! Receipt log records and streaming JSONL ingest.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct H256(pub [u8; 32]);

impl Address {
    pub const ZERO: Address = Address([0; 20]);

    /// The low 20 bytes of a topic word, if the high 12 are zero.
    pub fn from_word(w: &[u8; 32]) -> Option<Address> {
        if w[..12].iter().any(|b| *b != 0) {
            return None;
        }
        let mut a = [0u8; 20];
        a.copy_from_slice(&w[12..]);
        Some(Address(a))
    }

    pub fn parse(s: &str) -> Result<Address, String> {
        fixed_hex::<20>(s).map(Address)
    }
}

impl H256 {
    pub fn parse(s: &str) -> Result<H256, String> {
        fixed_hex::<32>(s).map(H256)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Display for H256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Serialize for H256 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn fixed_hex<const N: usize>(s: &str) -> Result<[u8; N], String> {
    let bytes = var_hex(s)?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| format!("expected {N} bytes, got {}", b.len()))
}

pub fn var_hex(s: &str) -> Result<Vec<u8>, String> {
    let h = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    hex::decode(h).map_err(|e| format!("bad hex {s:?}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub tx_hash: H256,
    pub log_index: u64,
    pub block_number: u64,
    pub emitter: Address,
    pub topics: Vec<H256>,
    #[serde(serialize_with = "ser_bytes")]
    pub data: Vec<u8>,
    pub tx_sender: Address,
    pub tx_to: Option<Address>,
    #[serde(serialize_with = "ser_selector")]
    pub tx_input_selector: Option<[u8; 4]>,
}

fn ser_bytes<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(&format_args!("0x{}", hex::encode(b)))
}

fn ser_selector<S: Serializer>(b: &Option<[u8; 4]>, s: S) -> Result<S::Ok, S::Error> {
    match b {
        Some(b) => ser_bytes(b, s),
        None => s.serialize_none(),
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawLog {
    tx_hash: String,
    log_index: u64,
    block_number: u64,
    address: String,
    topics: Vec<String>,
    data: String,
    tx_from: String,
    tx_to: Option<String>,
    tx_selector: Option<String>,
}

impl LogRecord {
    pub fn topic0(&self) -> Option<&H256> {
        self.topics.first()
    }

    /// The corpus line for this record.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "txHash": self.tx_hash.to_string(),
            "logIndex": self.log_index,
            "blockNumber": self.block_number,
            "address": self.emitter.to_string(),
            "topics": self.topics.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            "data": format!("0x{}", hex::encode(&self.data)),
            "txFrom": self.tx_sender.to_string(),
            "txTo": self.tx_to.map(|a| a.to_string()),
            "txSelector": self.tx_input_selector.map(|s| format!("0x{}", hex::encode(s))),
        })
        .to_string()
    }

    pub fn from_json(text: &str) -> Result<LogRecord, String> {
        let raw: RawLog = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if raw.topics.len() > 4 {
            return Err(format!("{} topics, at most 4 allowed", raw.topics.len()));
        }
        Ok(LogRecord {
            tx_hash: H256::parse(&raw.tx_hash).map_err(|e| format!("txHash: {e}"))?,
            log_index: raw.log_index,
            block_number: raw.block_number,
            emitter: Address::parse(&raw.address).map_err(|e| format!("address: {e}"))?,
            topics: raw
                .topics
                .iter()
                .map(|t| H256::parse(t))
                .collect::<Result<_, _>>()
                .map_err(|e| format!("topics: {e}"))?,
            data: var_hex(&raw.data).map_err(|e| format!("data: {e}"))?,
            tx_sender: Address::parse(&raw.tx_from).map_err(|e| format!("txFrom: {e}"))?,
            tx_to: raw.tx_to.as_deref().map(Address::parse).transpose().map_err(|e| format!("txTo: {e}"))?,
            tx_input_selector: raw
                .tx_selector
                .as_deref()
                .map(fixed_hex::<4>)
                .transpose()
                .map_err(|e| format!("txSelector: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("line {line}: {message}")]
pub struct SchemaError {
    pub line: usize,
    pub message: String,
}

/// The logs of one transaction, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxGroup {
    pub logs: Vec<LogRecord>,
}

impl TxGroup {
    pub fn tx_hash(&self) -> H256 {
        self.logs[0].tx_hash
    }

    pub fn block_number(&self) -> u64 {
        self.logs[0].block_number
    }

    pub fn tx_sender(&self) -> Address {
        self.logs[0].tx_sender
    }
}

/// Incremental grouping of records into transactions. Feed lines (or
/// arbitrary text chunks); closed groups come out as soon as the next
/// transaction starts.
#[derive(Debug, Default)]
pub struct Grouper {
    line: usize,
    partial: String,
    current: Option<TxGroup>,
    seen: HashSet<(H256, u64)>,
    closed: HashSet<H256>,
    pub errors: Vec<SchemaError>,
    pub records: usize,
}

impl Grouper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts text that may end mid-line.
    pub fn feed_text(&mut self, chunk: &str, out: &mut Vec<TxGroup>) {
        self.partial.push_str(chunk);
        while let Some(nl) = self.partial.find('\n') {
            let line: String = self.partial.drain(..=nl).collect();
            self.feed_line(line.trim_end_matches(['\n', '\r']), out);
        }
    }

    pub fn feed_line(&mut self, text: &str, out: &mut Vec<TxGroup>) {
        self.line += 1;
        if text.trim().is_empty() {
            return;
        }
        match LogRecord::from_json(text) {
            Ok(r) => {
                if let Err(message) = self.push(r, out) {
                    self.errors.push(SchemaError { line: self.line, message });
                }
            }
            Err(message) => self.errors.push(SchemaError { line: self.line, message }),
        }
    }

    pub fn push(&mut self, r: LogRecord, out: &mut Vec<TxGroup>) -> Result<(), String> {
        if self.seen.contains(&(r.tx_hash, r.log_index)) {
            return Err(format!("duplicate log {}#{}", r.tx_hash, r.log_index));
        }
        match &mut self.current {
            Some(g) if g.tx_hash() == r.tx_hash => {
                let last = g.logs.last().expect("non-empty group");
                if r.log_index <= last.log_index {
                    return Err(format!("logIndex {} not increasing (after {})", r.log_index, last.log_index));
                }
                if r.block_number != last.block_number || r.tx_sender != last.tx_sender {
                    return Err("block or sender differs within one transaction".into());
                }
                self.seen.insert((r.tx_hash, r.log_index));
                g.logs.push(r);
            }
            _ => {
                if self.closed.contains(&r.tx_hash) {
                    return Err(format!("transaction {} is not contiguous", r.tx_hash));
                }
                if let Some(g) = self.current.take() {
                    self.closed.insert(g.tx_hash());
                    out.push(g);
                }
                self.seen.insert((r.tx_hash, r.log_index));
                self.current = Some(TxGroup { logs: vec![r] });
            }
        }
        self.records += 1;
        Ok(())
    }

    pub fn finish(&mut self, out: &mut Vec<TxGroup>) {
        if !self.partial.is_empty() {
            let rest = std::mem::take(&mut self.partial);
            self.feed_line(rest.trim_end_matches('\r'), out);
        }
        if let Some(g) = self.current.take() {
            self.closed.insert(g.tx_hash());
            out.push(g);
        }
    }
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub groups: Vec<TxGroup>,
    pub errors: Vec<SchemaError>,
}

impl Corpus {
    pub fn records(&self) -> impl Iterator<Item = &LogRecord> {
        self.groups.iter().flat_map(|g| &g.logs)
    }
}

/// Reads a whole JSONL corpus. Bad lines are skipped and reported.
pub fn ingest<R: BufRead>(reader: R) -> std::io::Result<Corpus> {
    let mut g = Grouper::new();
    let mut groups = Vec::new();
    for line in reader.lines() {
        g.feed_line(&line?, &mut groups);
    }
    g.finish(&mut groups);
    Ok(Corpus { groups, errors: g.errors })
}

pub fn ingest_str(text: &str) -> Corpus {
    ingest(text.as_bytes()).expect("reading from memory")
}
