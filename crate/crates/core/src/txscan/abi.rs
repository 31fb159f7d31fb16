//! Event ABI entries and log decoding.

use std::fmt;

use ruint::aliases::U256;
use serde::Serialize;
use thiserror::Error;

use super::record::{Address, LogRecord, H256};
use crate::hash::event_topic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbiType {
    Address,
    Uint(u16),
    Bool,
    FixedBytes(u8),
    Bytes,
    String,
}

impl AbiType {
    pub fn parse(s: &str) -> Option<AbiType> {
        Some(match s {
            "address" => AbiType::Address,
            "bool" => AbiType::Bool,
            "bytes" => AbiType::Bytes,
            "string" => AbiType::String,
            "uint" => AbiType::Uint(256),
            _ => {
                if let Some(bits) = s.strip_prefix("uint") {
                    let bits: u16 = bits.parse().ok()?;
                    if bits == 0 || bits > 256 || !bits.is_multiple_of(8) {
                        return None;
                    }
                    AbiType::Uint(bits)
                } else {
                    let n = s.strip_prefix("bytes")?;
                    let n: u8 = n.parse().ok()?;
                    if n == 0 || n > 32 {
                        return None;
                    }
                    AbiType::FixedBytes(n)
                }
            }
        })
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, AbiType::Bytes | AbiType::String)
    }
}

impl fmt::Display for AbiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbiType::Address => f.write_str("address"),
            AbiType::Uint(b) => write!(f, "uint{b}"),
            AbiType::Bool => f.write_str("bool"),
            AbiType::FixedBytes(n) => write!(f, "bytes{n}"),
            AbiType::Bytes => f.write_str("bytes"),
            AbiType::String => f.write_str("string"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbiParam {
    pub name: String,
    pub ty: AbiType,
    pub indexed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventAbi {
    pub name: String,
    pub params: Vec<AbiParam>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AbiError {
    #[error("malformed event declaration {0:?}")]
    Declaration(String),
    #[error("expected {expected} topics, found {found}")]
    TopicCount { expected: usize, found: usize },
    #[error("topic0 does not match the event signature")]
    WrongSignature,
    #[error("data length {found} does not fit the ABI entry ({detail})")]
    DataLength { found: usize, detail: String },
    #[error("value of {param} is not a valid {ty}")]
    BadValue { param: String, ty: String },
}

impl EventAbi {
    /// Parses `Name(type [indexed] name, ...)`. Parameter names are
    /// optional and default to `arg<i>`.
    pub fn parse(decl: &str) -> Result<EventAbi, AbiError> {
        let bad = || AbiError::Declaration(decl.to_string());
        let decl = decl.trim();
        let decl = decl.strip_prefix("event ").unwrap_or(decl).trim();
        let open = decl.find('(').ok_or_else(bad)?;
        let inner = decl[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let name = decl[..open].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad());
        }
        let mut params = Vec::new();
        if !inner.trim().is_empty() {
            for (i, part) in inner.split(',').enumerate() {
                let words: Vec<&str> = part.split_whitespace().collect();
                let (ty, rest) = words.split_first().ok_or_else(bad)?;
                let ty = AbiType::parse(ty).ok_or_else(bad)?;
                let (indexed, rest) = match rest {
                    ["indexed", rest @ ..] => (true, rest),
                    _ => (false, rest),
                };
                let name = match rest {
                    [] => format!("arg{i}"),
                    [n] => n.to_string(),
                    _ => return Err(bad()),
                };
                params.push(AbiParam { name, ty, indexed });
            }
        }
        let abi = EventAbi { name: name.to_string(), params };
        if abi.params.iter().filter(|p| p.indexed).count() > 3 {
            return Err(bad());
        }
        for (i, p) in abi.params.iter().enumerate() {
            if abi.params[..i].iter().any(|q| q.name == p.name) {
                return Err(bad());
            }
        }
        Ok(abi)
    }

    pub fn signature(&self) -> String {
        let tys: Vec<String> = self.params.iter().map(|p| p.ty.to_string()).collect();
        format!("{}({})", self.name, tys.join(","))
    }

    pub fn topic0(&self) -> H256 {
        H256(event_topic(&self.signature()))
    }

    pub fn topic_count(&self) -> usize {
        1 + self.params.iter().filter(|p| p.indexed).count()
    }

    pub fn param(&self, name: &str) -> Option<&AbiParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn decode(&self, log: &LogRecord) -> Result<Vec<(String, AbiValue)>, AbiError> {
        if log.topics.len() != self.topic_count() {
            return Err(AbiError::TopicCount { expected: self.topic_count(), found: log.topics.len() });
        }
        if log.topics[0] != self.topic0() {
            return Err(AbiError::WrongSignature);
        }
        let data = &log.data;
        let body: Vec<&AbiParam> = self.params.iter().filter(|p| !p.indexed).collect();
        let head = 32 * body.len();
        let length_err = |detail: &str| AbiError::DataLength { found: data.len(), detail: detail.to_string() };
        if data.len() < head || !data.len().is_multiple_of(32) {
            return Err(length_err("head"));
        }
        let mut end = head;
        let mut topics = log.topics[1..].iter();
        let mut slot = 0;
        let mut out = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let v = if p.indexed {
                let w = topics.next().expect("topic count checked");
                if p.ty.is_dynamic() {
                    AbiValue::Hash(*w)
                } else {
                    static_value(p, &w.0)?
                }
            } else {
                let word: [u8; 32] = data[32 * slot..32 * slot + 32].try_into().expect("32 bytes");
                slot += 1;
                if p.ty.is_dynamic() {
                    let off = small(&word).filter(|o| o % 32 == 0 && *o >= head).ok_or_else(|| length_err("offset"))?;
                    let len_word: [u8; 32] = data
                        .get(off..off + 32)
                        .ok_or_else(|| length_err("offset"))?
                        .try_into()
                        .expect("32 bytes");
                    let len = small(&len_word).ok_or_else(|| length_err("length"))?;
                    let bytes = data.get(off + 32..off + 32 + len).ok_or_else(|| length_err("length"))?;
                    end = end.max(off + 32 + len.div_ceil(32) * 32);
                    if p.ty == AbiType::String {
                        AbiValue::String(String::from_utf8(bytes.to_vec()).map_err(|_| AbiError::BadValue {
                            param: p.name.clone(),
                            ty: "string".into(),
                        })?)
                    } else {
                        AbiValue::Bytes(bytes.to_vec())
                    }
                } else {
                    static_value(p, &word)?
                }
            };
            out.push((p.name.clone(), v));
        }
        if end != data.len() {
            return Err(length_err("trailing bytes"));
        }
        Ok(out)
    }
}

fn small(w: &[u8; 32]) -> Option<usize> {
    if w[..24].iter().any(|b| *b != 0) {
        return None;
    }
    usize::try_from(u64::from_be_bytes(w[24..].try_into().expect("8 bytes"))).ok()
}

fn static_value(p: &AbiParam, w: &[u8; 32]) -> Result<AbiValue, AbiError> {
    let bad = || AbiError::BadValue { param: p.name.clone(), ty: p.ty.to_string() };
    Ok(match p.ty {
        AbiType::Address => AbiValue::Address(Address::from_word(w).ok_or_else(bad)?),
        AbiType::Uint(bits) => {
            let v = U256::from_be_bytes(*w);
            if (v.bit_len() as u16) > bits {
                return Err(bad());
            }
            AbiValue::Uint(v)
        }
        AbiType::Bool => match U256::from_be_bytes(*w) {
            v if v.is_zero() => AbiValue::Bool(false),
            v if v == U256::from(1) => AbiValue::Bool(true),
            _ => return Err(bad()),
        },
        AbiType::FixedBytes(n) => {
            if w[n as usize..].iter().any(|b| *b != 0) {
                return Err(bad());
            }
            AbiValue::FixedBytes(w[..n as usize].to_vec())
        }
        AbiType::Bytes | AbiType::String => unreachable!("dynamic types handled by caller"),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbiValue {
    Address(Address),
    Uint(U256),
    Bool(bool),
    FixedBytes(Vec<u8>),
    Bytes(Vec<u8>),
    String(String),
    /// An indexed dynamic value; only its hash is in the log.
    Hash(H256),
}

impl fmt::Display for AbiValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbiValue::Address(a) => write!(f, "{a}"),
            AbiValue::Uint(v) => write!(f, "{v}"),
            AbiValue::Bool(b) => write!(f, "{b}"),
            AbiValue::FixedBytes(b) | AbiValue::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
            AbiValue::String(s) => write!(f, "{s:?}"),
            AbiValue::Hash(h) => write!(f, "hash:{h}"),
        }
    }
}

impl Serialize for AbiValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AbiValue::Bool(b) => s.serialize_bool(*b),
            AbiValue::String(v) => s.serialize_str(v),
            other => s.collect_str(other),
        }
    }
}

/// ABI encoding of event data, used to build corpora.
pub fn encode_data(values: &[AbiValue]) -> Vec<u8> {
    let mut head = Vec::new();
    let mut tail = Vec::new();
    let head_len = 32 * values.len();
    for v in values {
        match v {
            AbiValue::Bytes(b) => dynamic(&mut head, &mut tail, head_len, b),
            AbiValue::String(s) => dynamic(&mut head, &mut tail, head_len, s.as_bytes()),
            other => head.extend_from_slice(&word(other)),
        }
    }
    head.extend(tail);
    head
}

/// The 32-byte word of a static value (also the topic encoding).
pub fn word(v: &AbiValue) -> [u8; 32] {
    let mut w = [0u8; 32];
    match v {
        AbiValue::Address(a) => w[12..].copy_from_slice(&a.0),
        AbiValue::Uint(x) => w = x.to_be_bytes(),
        AbiValue::Bool(b) => w[31] = *b as u8,
        AbiValue::FixedBytes(b) => w[..b.len()].copy_from_slice(b),
        AbiValue::Hash(h) => w = h.0,
        AbiValue::Bytes(_) | AbiValue::String(_) => panic!("dynamic value has no single word"),
    }
    w
}

fn dynamic(head: &mut Vec<u8>, tail: &mut Vec<u8>, head_len: usize, b: &[u8]) {
    head.extend_from_slice(&U256::from(head_len + tail.len()).to_be_bytes::<32>());
    tail.extend_from_slice(&U256::from(b.len()).to_be_bytes::<32>());
    tail.extend_from_slice(b);
    tail.resize(tail.len().div_ceil(32) * 32, 0);
}
