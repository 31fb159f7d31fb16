//! A small label-aware EVM assembler.
//!
//! Used to build the bytecode fixtures from readable listings. Syntax:
//!
//! ```text
//! ; comment            (also `//`)
//! name:                defines a label and emits JUMPDEST
//! PUSH2 :name          pushes the label offset
//! PUSH :name           same, always two bytes wide
//! PUSH4 selector(transfer(address,uint256))
//! PUSH32 event(Transfer(address,address,uint256))
//! PUSH1 0x80           hex or decimal literal
//! .bytes fe00          raw bytes
//! .metadata a164...    CBOR trailer, followed by its two-byte length
//! ```
//!
//! Several instructions may share a line.

use std::collections::BTreeMap;

use ruint::aliases::U256;
use thiserror::Error;

use crate::disasm::Opcode;
use crate::hash::{event_topic, selector};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub message: String,
}

enum Item {
    Op(Opcode),
    Push { width: usize, arg: PushArg },
    Label(String),
    Raw(Vec<u8>),
}

enum PushArg {
    Value(U256),
    Label(String),
}

fn err(line: usize, message: impl Into<String>) -> AsmError {
    AsmError { line, message: message.into() }
}

fn parse_number(tok: &str, line: usize) -> Result<U256, AsmError> {
    let parsed = if let Some(h) = tok.strip_prefix("0x") {
        U256::from_str_radix(h, 16)
    } else {
        U256::from_str_radix(tok, 10)
    };
    parsed.map_err(|_| err(line, format!("bad number {tok:?}")))
}

fn byte_width(v: U256) -> usize {
    v.byte_len().max(1)
}

fn tokenize(line: &str) -> Vec<String> {
    // Keep `selector(...)` / `event(...)` arguments (which contain commas
    // and nested parens) as single tokens.
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_push_arg(tok: &str, line: usize) -> Result<PushArg, AsmError> {
    if let Some(label) = tok.strip_prefix(':') {
        return Ok(PushArg::Label(label.to_string()));
    }
    if let Some(sig) = tok.strip_prefix("selector(").and_then(|s| s.strip_suffix(')')) {
        let sel = selector(sig);
        return Ok(PushArg::Value(U256::from_be_slice(&sel)));
    }
    if let Some(sig) = tok.strip_prefix("event(").and_then(|s| s.strip_suffix(')')) {
        return Ok(PushArg::Value(U256::from_be_bytes(event_topic(sig))));
    }
    parse_number(tok, line).map(PushArg::Value)
}

fn parse(source: &str) -> Result<Vec<(usize, Item)>, AsmError> {
    let mut items = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let text = raw.split(';').next().unwrap_or("");
        let text = text.split("//").next().unwrap_or("");
        let toks = tokenize(text);
        let mut i = 0;
        while i < toks.len() {
            let tok = &toks[i];
            i += 1;
            if let Some(label) = tok.strip_suffix(':') {
                items.push((line, Item::Label(label.to_string())));
                continue;
            }
            if tok == ".bytes" || tok == ".metadata" {
                let hex_text: String = toks[i..].concat();
                i = toks.len();
                let mut bytes =
                    hex::decode(&hex_text).map_err(|e| err(line, format!("bad hex: {e}")))?;
                if tok == ".metadata" {
                    let len = u16::try_from(bytes.len())
                        .map_err(|_| err(line, "metadata too long"))?;
                    bytes.extend_from_slice(&len.to_be_bytes());
                }
                items.push((line, Item::Raw(bytes)));
                continue;
            }
            let upper = tok.to_ascii_uppercase();
            if upper == "PUSH" || (upper.starts_with("PUSH") && upper != "PUSH0") {
                let arg_tok = toks
                    .get(i)
                    .ok_or_else(|| err(line, format!("{tok} needs an argument")))?;
                i += 1;
                let arg = parse_push_arg(arg_tok, line)?;
                let width = if upper == "PUSH" {
                    match &arg {
                        PushArg::Label(_) => 2,
                        PushArg::Value(v) => byte_width(*v),
                    }
                } else {
                    let op = Opcode::from_mnemonic(&upper)
                        .ok_or_else(|| err(line, format!("unknown opcode {tok}")))?;
                    op.push_width()
                };
                if let PushArg::Value(v) = &arg {
                    if byte_width(*v) > width {
                        return Err(err(line, format!("{arg_tok} does not fit in {width} bytes")));
                    }
                }
                items.push((line, Item::Push { width, arg }));
                continue;
            }
            let op = Opcode::from_mnemonic(&upper)
                .ok_or_else(|| err(line, format!("unknown opcode {tok}")))?;
            items.push((line, Item::Op(op)));
        }
    }
    Ok(items)
}

pub fn assemble(source: &str) -> Result<Vec<u8>, AsmError> {
    let items = parse(source)?;
    let mut labels = BTreeMap::new();
    let mut pc = 0usize;
    for (line, item) in &items {
        match item {
            Item::Op(_) => pc += 1,
            Item::Push { width, .. } => pc += 1 + width,
            Item::Label(name) => {
                if labels.insert(name.clone(), pc).is_some() {
                    return Err(err(*line, format!("duplicate label {name}")));
                }
                pc += 1;
            }
            Item::Raw(bytes) => pc += bytes.len(),
        }
    }
    let mut out = Vec::with_capacity(pc);
    for (line, item) in &items {
        match item {
            Item::Op(op) => out.push(op.0),
            Item::Label(_) => out.push(Opcode::JUMPDEST.0),
            Item::Raw(bytes) => out.extend_from_slice(bytes),
            Item::Push { width, arg } => {
                let value = match arg {
                    PushArg::Value(v) => *v,
                    PushArg::Label(name) => U256::from(
                        *labels
                            .get(name)
                            .ok_or_else(|| err(*line, format!("undefined label {name}")))?,
                    ),
                };
                if byte_width(value) > *width {
                    return Err(err(*line, format!("label offset does not fit in {width} bytes")));
                }
                out.push(0x5f + *width as u8);
                let be = value.to_be_bytes::<32>();
                out.extend_from_slice(&be[32 - width..]);
            }
        }
    }
    Ok(out)
}
