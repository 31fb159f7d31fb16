//! Flat-file signature database.
//!
//! One entry per line: `<hex> <signature>`, where `<hex>` is an 8-digit
//! function selector or a 64-digit event topic. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::hash::{event_topic, selector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SigDbError {
    #[error("line {0}: expected `<hex> <signature>`")]
    Malformed(usize),
    #[error("line {0}: hash length must be 8 or 64 hex digits")]
    BadHash(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SigDb {
    pub functions: BTreeMap<[u8; 4], String>,
    pub events: BTreeMap<[u8; 32], String>,
}

impl SigDb {
    pub fn parse(text: &str) -> Result<Self, SigDbError> {
        let mut db = SigDb::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (h, sig) = line.split_once(char::is_whitespace).ok_or(SigDbError::Malformed(i + 1))?;
            let sig = sig.trim().to_string();
            let bytes = hex::decode(h.trim_start_matches("0x")).map_err(|_| SigDbError::BadHash(i + 1))?;
            match bytes.len() {
                4 => {
                    db.functions.insert(bytes.try_into().expect("len 4"), sig);
                }
                32 => {
                    db.events.insert(bytes.try_into().expect("len 32"), sig);
                }
                _ => return Err(SigDbError::BadHash(i + 1)),
            }
        }
        Ok(db)
    }

    pub fn add_function(&mut self, signature: &str) {
        self.functions.insert(selector(signature), signature.to_string());
    }

    pub fn add_event(&mut self, signature: &str) {
        self.events.insert(event_topic(signature), signature.to_string());
    }

    pub fn function(&self, sel: &[u8; 4]) -> Option<&str> {
        self.functions.get(sel).map(String::as_str)
    }

    pub fn event(&self, topic: &[u8; 32]) -> Option<&str> {
        self.events.get(topic).map(String::as_str)
    }
}
