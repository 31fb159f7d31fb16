//! Symbolic values and their concrete evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::{BigInt, BigUint};
use num_traits::One;
use ruint::aliases::U256;
use serde::{Serialize, Serializer};

use crate::minisol::{BinOp, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AtomKind {
    /// Function parameter.
    FreeVar,
    CallerSym,
    ValueSym,
    /// A storage read, versioned by the writes before it.
    StorageSym,
    /// Success flag of an external call.
    CallSuccessSym,
}

impl AtomKind {
    /// Values chosen by whoever sends the transaction.
    pub fn is_source(self) -> bool {
        matches!(self, AtomKind::FreeVar | AtomKind::CallerSym | AtomKind::ValueSym)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Atom {
    pub kind: AtomKind,
    /// Unique within a query; doubles as the solver symbol.
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymValue {
    Atom(Atom),
    Lit { value: U256, ty: Type },
    Not(Box<SymValue>),
    Bin { op: BinOp, lhs: Box<SymValue>, rhs: Box<SymValue> },
}

impl SymValue {
    pub fn atom(kind: AtomKind, name: impl Into<String>, ty: Type) -> Self {
        SymValue::Atom(Atom { kind, name: name.into(), ty })
    }

    pub fn uint(v: u64) -> Self {
        SymValue::Lit { value: U256::from(v), ty: Type::Uint256 }
    }

    pub fn bool(b: bool) -> Self {
        SymValue::Lit { value: U256::from(b as u8), ty: Type::Bool }
    }

    pub fn bin(op: BinOp, lhs: SymValue, rhs: SymValue) -> Self {
        SymValue::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn not(self) -> Self {
        match self {
            SymValue::Lit { value, ty: Type::Bool } => SymValue::bool(value.is_zero()),
            SymValue::Not(inner) => *inner,
            other => SymValue::Not(Box::new(other)),
        }
    }

    pub fn ty(&self) -> Type {
        match self {
            SymValue::Atom(a) => a.ty,
            SymValue::Lit { ty, .. } => *ty,
            SymValue::Not(_) => Type::Bool,
            SymValue::Bin { op, .. } => match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul => Type::Uint256,
                _ => Type::Bool,
            },
        }
    }

    pub fn atoms(&self) -> BTreeSet<&Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut BTreeSet<&'a Atom>) {
        match self {
            SymValue::Atom(a) => {
                out.insert(a);
            }
            SymValue::Lit { .. } => {}
            SymValue::Not(x) => x.collect_atoms(out),
            SymValue::Bin { lhs, rhs, .. } => {
                lhs.collect_atoms(out);
                rhs.collect_atoms(out);
            }
        }
    }

    /// Apply `f` to every atom name.
    pub fn rename(&self, f: &impl Fn(&str) -> String) -> SymValue {
        match self {
            SymValue::Atom(a) => SymValue::Atom(Atom { kind: a.kind, name: f(&a.name), ty: a.ty }),
            SymValue::Lit { .. } => self.clone(),
            SymValue::Not(x) => SymValue::Not(Box::new(x.rename(f))),
            SymValue::Bin { op, lhs, rhs } => SymValue::bin(*op, lhs.rename(f), rhs.rename(f)),
        }
    }
}

impl fmt::Display for SymValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymValue::Atom(a) => f.write_str(&a.name),
            SymValue::Lit { value, ty: Type::Bool } => write!(f, "{}", !value.is_zero()),
            SymValue::Lit { value, ty: Type::Address } => write!(f, "address({value:#x})"),
            SymValue::Lit { value, .. } => write!(f, "{value}"),
            SymValue::Not(x) => write!(f, "!{x}"),
            SymValue::Bin { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
        }
    }
}

impl Serialize for SymValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Concrete {
    Int(BigInt),
    Bool(bool),
}

/// A satisfying assignment. Integers cover uint256, address and bytes atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Model {
    pub values: BTreeMap<String, (Type, Concrete)>,
}

impl Model {
    pub fn get(&self, name: &str) -> Option<&Concrete> {
        self.values.get(name).map(|(_, v)| v)
    }

    pub fn int(&self, name: &str) -> Option<&BigInt> {
        match self.get(name) {
            Some(Concrete::Int(v)) => Some(v),
            _ => None,
        }
    }

    pub fn bool(&self, name: &str) -> Option<bool> {
        match self.get(name) {
            Some(Concrete::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    /// Evaluate under this model. `None` if an atom is unassigned or the
    /// expression is ill-sorted. Arithmetic is over unbounded integers.
    pub fn eval(&self, v: &SymValue) -> Option<Concrete> {
        Some(match v {
            SymValue::Atom(a) => self.get(&a.name)?.clone(),
            SymValue::Lit { value, ty: Type::Bool } => Concrete::Bool(!value.is_zero()),
            SymValue::Lit { value, .. } => Concrete::Int(u256_to_bigint(*value)),
            SymValue::Not(x) => match self.eval(x)? {
                Concrete::Bool(b) => Concrete::Bool(!b),
                _ => return None,
            },
            SymValue::Bin { op, lhs, rhs } => {
                let (l, r) = (self.eval(lhs)?, self.eval(rhs)?);
                match (op, l, r) {
                    (BinOp::And, Concrete::Bool(a), Concrete::Bool(b)) => Concrete::Bool(a && b),
                    (BinOp::Or, Concrete::Bool(a), Concrete::Bool(b)) => Concrete::Bool(a || b),
                    (BinOp::Eq, a, b) => Concrete::Bool(a == b),
                    (BinOp::Ne, a, b) => Concrete::Bool(a != b),
                    (op, Concrete::Int(a), Concrete::Int(b)) => match op {
                        BinOp::Add => Concrete::Int(a + b),
                        BinOp::Sub => Concrete::Int(a - b),
                        BinOp::Mul => Concrete::Int(a * b),
                        BinOp::Lt => Concrete::Bool(a < b),
                        BinOp::Le => Concrete::Bool(a <= b),
                        BinOp::Gt => Concrete::Bool(a > b),
                        BinOp::Ge => Concrete::Bool(a >= b),
                        _ => return None,
                    },
                    _ => return None,
                }
            }
        })
    }

    /// True iff every conjunct evaluates to true.
    pub fn satisfies(&self, conjuncts: &[SymValue]) -> bool {
        conjuncts.iter().all(|c| self.eval(c) == Some(Concrete::Bool(true)))
    }
}

pub fn u256_to_bigint(v: U256) -> BigInt {
    BigInt::from(BigUint::from_bytes_be(&v.to_be_bytes::<32>()))
}

/// Largest value of a sort, as an integer.
pub fn sort_max(ty: Type) -> BigInt {
    let bits = match ty {
        Type::Address => 160,
        Type::Bool => 1,
        _ => 256,
    };
    (BigInt::one() << bits) - BigInt::one()
}

impl Serialize for Model {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.values.len()))?;
        for (name, (ty, v)) in &self.values {
            match v {
                Concrete::Bool(b) => m.serialize_entry(name, b)?,
                Concrete::Int(i) if *ty == Type::Address => {
                    m.serialize_entry(name, &format!("0x{:0>40}", i.to_str_radix(16)))?
                }
                Concrete::Int(i) => m.serialize_entry(name, &i.to_string())?,
            }
        }
        m.end()
    }
}
