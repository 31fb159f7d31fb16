//! Per-project transaction rules.
//!
//! ```toml
//! [[project]]
//! name = "pNetwork"
//! emitters = ["0x5228a22e72ccc52d415ecfd199f99d0665e7733b"]
//!
//! [[project.event]]
//! decl = "Redeem(address indexed redeemer, uint256 value, string underlyingAssetRecipient, bytes userData)"
//! selectors = ["redeem(uint256,string)"]   # or "0x1234abcd"
//! predicates = ["redeemer == tx.from", "value > 0"]
//!
//! [spoofing]
//! ignore_senders = ["0x0000000000000000000000000000000000000000"]
//! ```
//!
//! A predicate is `<param> <op> <operand>`, where the operand is a literal
//! (integer, address, `true`/`false`, quoted string), `tx.from` or `tx.to`.
//! Ordering operators apply to unsigned integers only.

use std::collections::BTreeSet;
use std::fmt;

use ruint::aliases::U256;
use serde::Deserialize;
use thiserror::Error;

use super::abi::{AbiType, AbiValue, EventAbi};
use super::record::{fixed_hex, Address, LogRecord, H256};
use crate::hash::selector;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rules file: {0}")]
    Toml(String),
    #[error("project {project}: {message}")]
    Invalid { project: String, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRules {
    #[serde(default)]
    project: Vec<RawProject>,
    #[serde(default)]
    spoofing: RawSpoofing,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProject {
    name: String,
    #[serde(default)]
    emitters: Vec<String>,
    #[serde(default)]
    event: Vec<RawEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    decl: String,
    #[serde(default)]
    selectors: Vec<String>,
    #[serde(default)]
    predicates: Vec<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSpoofing {
    #[serde(default)]
    ignore_senders: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Value(AbiValue),
    TxFrom,
    TxTo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub param: String,
    pub op: CmpOp,
    pub rhs: Operand,
    pub text: String,
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Predicate {
    fn parse(text: &str, abi: &EventAbi) -> Result<Predicate, String> {
        let ops = [("==", CmpOp::Eq), ("!=", CmpOp::Ne), ("<=", CmpOp::Le), (">=", CmpOp::Ge), ("<", CmpOp::Lt), (">", CmpOp::Gt)];
        let (pos, sym, op) = ops
            .iter()
            .filter_map(|(s, o)| text.find(s).map(|p| (p, *s, *o)))
            .min_by_key(|(p, s, _)| (*p, std::cmp::Reverse(s.len())))
            .ok_or_else(|| format!("predicate {text:?} has no comparison operator"))?;
        let param = text[..pos].trim();
        let rhs = text[pos + sym.len()..].trim();
        let p = abi
            .param(param)
            .ok_or_else(|| format!("predicate {text:?} names unknown parameter {param:?} of {}", abi.name))?;
        if p.indexed && p.ty.is_dynamic() {
            return Err(format!("predicate {text:?}: indexed {} values are hashed", p.ty));
        }
        if !matches!(op, CmpOp::Eq | CmpOp::Ne) && !matches!(p.ty, AbiType::Uint(_)) {
            return Err(format!("predicate {text:?}: {} supports equality only", p.ty));
        }
        let rhs = match rhs {
            "tx.from" | "tx.to" if p.ty == AbiType::Address => {
                if rhs == "tx.from" {
                    Operand::TxFrom
                } else {
                    Operand::TxTo
                }
            }
            _ => Operand::Value(literal(rhs, p.ty).ok_or_else(|| format!("predicate {text:?}: {rhs:?} is not a {}", p.ty))?),
        };
        Ok(Predicate { param: param.to_string(), op, rhs, text: format!("{param} {} {}", op.symbol(), text[pos + sym.len()..].trim()) })
    }

    /// `None` when the operand is unavailable (e.g. `tx.to` on a creation).
    pub fn eval(&self, values: &[(String, AbiValue)], log: &LogRecord) -> Option<bool> {
        let lhs = &values.iter().find(|(n, _)| *n == self.param)?.1;
        let rhs = match &self.rhs {
            Operand::Value(v) => v.clone(),
            Operand::TxFrom => AbiValue::Address(log.tx_sender),
            Operand::TxTo => AbiValue::Address(log.tx_to?),
        };
        Some(match (lhs, &rhs) {
            (AbiValue::Uint(a), AbiValue::Uint(b)) => match self.op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                CmpOp::Lt => a < b,
                CmpOp::Le => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Ge => a >= b,
            },
            (a, b) => match self.op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                _ => return None,
            },
        })
    }
}

fn literal(s: &str, ty: AbiType) -> Option<AbiValue> {
    match ty {
        AbiType::Uint(bits) => {
            let v = match s.strip_prefix("0x") {
                Some(h) => U256::from_str_radix(h, 16).ok()?,
                None => U256::from_str_radix(&s.replace('_', ""), 10).ok()?,
            };
            ((v.bit_len() as u16) <= bits).then_some(AbiValue::Uint(v))
        }
        AbiType::Address => Address::parse(s).ok().map(AbiValue::Address),
        AbiType::Bool => match s {
            "true" => Some(AbiValue::Bool(true)),
            "false" => Some(AbiValue::Bool(false)),
            _ => None,
        },
        AbiType::String => serde_json::from_str::<String>(s).ok().map(AbiValue::String),
        AbiType::Bytes => super::record::var_hex(s).ok().map(AbiValue::Bytes),
        AbiType::FixedBytes(n) => {
            let b = super::record::var_hex(s).ok()?;
            (b.len() == n as usize).then_some(AbiValue::FixedBytes(b))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRule {
    pub abi: EventAbi,
    pub topic0: H256,
    /// Empty means the selector check is off for this event.
    pub selectors: BTreeSet<[u8; 4]>,
    pub predicates: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Project {
    pub name: String,
    pub emitters: BTreeSet<Address>,
    pub events: Vec<EventRule>,
}

impl Project {
    pub fn event(&self, topic0: &H256) -> Option<&EventRule> {
        self.events.iter().find(|e| e.topic0 == *topic0)
    }

    pub fn is_authentic(&self, a: &Address) -> bool {
        self.emitters.contains(a)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleSet {
    pub projects: Vec<Project>,
    /// Token senders never flagged for spoofing.
    pub spoof_ignore: BTreeSet<Address>,
}

impl RuleSet {
    pub fn parse(text: &str) -> Result<RuleSet, RuleError> {
        let raw: RawRules = toml::from_str(text).map_err(|e| RuleError::Toml(e.to_string()))?;
        let mut projects = Vec::new();
        for rp in raw.project {
            let invalid = |message: String| RuleError::Invalid { project: rp.name.clone(), message };
            if projects.iter().any(|p: &Project| p.name == rp.name) {
                return Err(invalid("duplicate project name".into()));
            }
            let emitters = rp
                .emitters
                .iter()
                .map(|a| Address::parse(a).map_err(|e| invalid(format!("emitter: {e}"))))
                .collect::<Result<BTreeSet<_>, _>>()?;
            let mut events: Vec<EventRule> = Vec::new();
            for re in &rp.event {
                let abi = EventAbi::parse(&re.decl).map_err(|e| invalid(e.to_string()))?;
                let topic0 = abi.topic0();
                if events.iter().any(|e| e.topic0 == topic0) {
                    return Err(invalid(format!("event {} declared twice", abi.signature())));
                }
                let selectors = re
                    .selectors
                    .iter()
                    .map(|s| parse_selector(s).map_err(|e| invalid(format!("selector {s:?}: {e}"))))
                    .collect::<Result<_, _>>()?;
                let predicates =
                    re.predicates.iter().map(|t| Predicate::parse(t, &abi).map_err(invalid)).collect::<Result<_, _>>()?;
                events.push(EventRule { abi, topic0, selectors, predicates });
            }
            projects.push(Project { name: rp.name.clone(), emitters, events });
        }
        let spoof_ignore = raw
            .spoofing
            .ignore_senders
            .iter()
            .map(|a| Address::parse(a).map_err(|e| RuleError::Toml(format!("spoofing.ignore_senders: {e}"))))
            .collect::<Result<_, _>>()?;
        Ok(RuleSet { projects, spoof_ignore })
    }
}

fn parse_selector(s: &str) -> Result<[u8; 4], String> {
    if s.contains('(') {
        Ok(selector(&s.replace(' ', "")))
    } else {
        fixed_hex::<4>(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RULES: &str = r#"
        [[project]]
        name = "demo"
        emitters = ["0x00000000000000000000000000000000000000aa"]
        [[project.event]]
        decl = "Redeem(address indexed redeemer, uint256 value, string memo)"
        selectors = ["redeem(uint256, string)", "0x01020304"]
        predicates = ["value>0", "redeemer == tx.from", "memo != \"\""]
    "#;

    #[test]
    fn parses_projects() {
        let r = RuleSet::parse(RULES).unwrap();
        let p = &r.projects[0];
        assert_eq!(p.emitters.len(), 1);
        let e = &p.events[0];
        assert!(e.selectors.contains(&selector("redeem(uint256,string)")));
        assert!(e.selectors.contains(&[1, 2, 3, 4]));
        assert_eq!(e.predicates[0].op, CmpOp::Gt);
        assert_eq!(e.predicates[0].text, "value > 0");
        assert_eq!(e.predicates[1].rhs, Operand::TxFrom);
        assert_eq!(e.predicates[2].rhs, Operand::Value(AbiValue::String(String::new())));
    }

    #[test]
    fn rejects_bad_rules() {
        let bad = |p: &str| RULES.replace("\"value>0\"", p);
        assert!(matches!(RuleSet::parse(&bad("\"amount > 0\"")), Err(RuleError::Invalid { .. })));
        assert!(RuleSet::parse(&bad("\"redeemer < tx.from\"")).is_err());
        assert!(RuleSet::parse(&bad("\"value > -1\"")).is_err());
        assert!(RuleSet::parse(&bad("\"value\"")).is_err());
        assert!(RuleSet::parse(&RULES.replace("0x00000000000000000000000000000000000000aa", "0xaa")).is_err());
        assert!(RuleSet::parse("[[project]]\nname = 1").is_err());
        assert!(RuleSet::parse("[[project]]\nname = \"x\"\ncolour = 1").is_err());
        assert_eq!(RuleSet::parse("").unwrap(), RuleSet::default());
    }

    #[test]
    fn operator_precedence_in_text() {
        let abi = EventAbi::parse("E(uint256 v)").unwrap();
        assert_eq!(Predicate::parse("v <= 5", &abi).unwrap().op, CmpOp::Le);
        assert_eq!(Predicate::parse("v >= 5", &abi).unwrap().op, CmpOp::Ge);
        assert_eq!(Predicate::parse("v != 5", &abi).unwrap().op, CmpOp::Ne);
    }
}
