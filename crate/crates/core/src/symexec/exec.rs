//! Forward symbolic evaluation of one source path.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::paths::{SourcePath, Step};
use super::sym::{AtomKind, SymValue};
use crate::minisol::{expr_to_string, BinOp, Expr, ExprKind, StateKind, StmtKind, Type};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageWrite {
    pub var: String,
    pub key: Option<SymValue>,
    pub value: SymValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintSet {
    pub path: usize,
    pub entry: String,
    pub event: String,
    /// Event-parameter values V(f, e), one per parameter.
    pub values: Vec<SymValue>,
    /// Require conditions and taken branch conditions, in path order.
    pub conjuncts: Vec<SymValue>,
    pub reads: BTreeSet<String>,
    pub writes: Vec<StorageWrite>,
    pub external_calls: Vec<String>,
    /// Set when part of the path fell outside the supported theory.
    pub unsupported: Option<String>,
    pub incomplete: bool,
}

impl ConstraintSet {
    pub fn written(&self) -> BTreeSet<&str> {
        self.writes.iter().map(|w| w.var.as_str()).collect()
    }

    /// Counterfeit checks on this set cannot be decided.
    pub fn undecidable(&self) -> bool {
        self.unsupported.is_some() || self.incomplete
    }
}

#[derive(Default)]
struct Slot {
    version: u32,
    known: BTreeMap<Option<SymValue>, SymValue>,
}

struct Exec<'p> {
    path: &'p SourcePath,
    frames: Vec<BTreeMap<String, SymValue>>,
    storage: BTreeMap<String, Slot>,
    cs: ConstraintSet,
    fresh: usize,
}

type EResult<T> = Result<T, String>;

impl Exec<'_> {
    fn kind(&self, var: &str) -> StateKind {
        self.path.state.get(var).copied().unwrap_or(StateKind::Scalar(Type::Uint256))
    }

    fn read(&mut self, var: &str, key: Option<SymValue>) -> SymValue {
        self.cs.reads.insert(var.to_string());
        let ty = self.kind(var).value_type();
        let slot = self.storage.entry(var.to_string()).or_default();
        if let Some(v) = slot.known.get(&key) {
            return v.clone();
        }
        let name = match &key {
            Some(k) => format!("{var}[{k}]#{}", slot.version),
            None => format!("{var}#{}", slot.version),
        };
        let v = SymValue::atom(AtomKind::StorageSym, name, ty);
        // Repeated reads of an unwritten location see the same symbol.
        slot.known.insert(key, v.clone());
        v
    }

    fn write(&mut self, var: &str, key: Option<SymValue>, value: SymValue) {
        let slot = self.storage.entry(var.to_string()).or_default();
        slot.version += 1;
        // Other keys may alias the written one, forget them.
        slot.known.clear();
        slot.known.insert(key.clone(), value.clone());
        self.cs.writes.push(StorageWrite { var: var.to_string(), key, value });
    }

    fn eval(&mut self, e: &Expr) -> EResult<SymValue> {
        Ok(match &e.kind {
            ExprKind::Int(v) => SymValue::Lit { value: *v, ty: Type::Uint256 },
            ExprKind::Bool(b) => SymValue::bool(*b),
            ExprKind::Address(v) => SymValue::Lit { value: *v, ty: Type::Address },
            ExprKind::MsgSender => SymValue::atom(AtomKind::CallerSym, "msg.sender", Type::Address),
            ExprKind::MsgValue => SymValue::atom(AtomKind::ValueSym, "msg.value", Type::Uint256),
            ExprKind::Var(name) => {
                if let Some(v) = self.frames.last().and_then(|f| f.get(name)) {
                    v.clone()
                } else if self.path.state.contains_key(name) {
                    self.read(name, None)
                } else {
                    return Err(format!("unbound name `{name}` at {}", e.span.start));
                }
            }
            ExprKind::Index { var, key } => {
                let k = self.eval(key)?;
                self.read(&var.name, Some(k))
            }
            ExprKind::Not(x) => self.eval(x)?.not(),
            ExprKind::Binary(op, l, r) => {
                let (a, b) = (self.eval(l)?, self.eval(r)?);
                if *op == BinOp::Mul
                    && !matches!(a, SymValue::Lit { .. })
                    && !matches!(b, SymValue::Lit { .. })
                {
                    return Err(format!("non-linear product `{}` at {}", expr_to_string(e), e.span.start));
                }
                SymValue::bin(*op, a, b)
            }
        })
    }

    /// Evaluate, recording the first unsupported construct and substituting
    /// a fresh unconstrained symbol.
    fn eval_or_fresh(&mut self, e: &Expr, ty: Type) -> SymValue {
        match self.eval(e) {
            Ok(v) => v,
            Err(msg) => {
                self.cs.unsupported.get_or_insert(msg);
                self.fresh += 1;
                SymValue::atom(AtomKind::FreeVar, format!("unsupported#{}", self.fresh), ty)
            }
        }
    }

    fn condition(&mut self, e: &Expr) -> Option<SymValue> {
        match self.eval(e) {
            Ok(v) => Some(v),
            Err(msg) => {
                // Dropping a conjunct only weakens the path; the verdict becomes unknown.
                self.cs.unsupported.get_or_insert(msg);
                None
            }
        }
    }

    fn step(&mut self, step: &Step) {
        match step {
            Step::Branch { cond, taken } => {
                if let Some(c) = self.condition(cond) {
                    self.cs.conjuncts.push(if *taken { c } else { c.not() });
                }
            }
            Step::Enter { params, args, .. } => {
                let mut frame = BTreeMap::new();
                for ((name, ty), a) in params.iter().zip(args) {
                    let v = self.eval_or_fresh(a, *ty);
                    frame.insert(name.clone(), v);
                }
                self.frames.push(frame);
            }
            Step::Leave => {
                self.frames.pop();
            }
            Step::Skipped { func, .. } => {
                self.cs.unsupported.get_or_insert(format!("call to `{func}` not inlined"));
            }
            Step::Exec(s) => match &s.kind {
                StmtKind::Require(e) => {
                    if let Some(c) = self.condition(e) {
                        self.cs.conjuncts.push(c);
                    }
                }
                StmtKind::Let { ty, name, value } => {
                    let v = self.eval_or_fresh(value, *ty);
                    self.frames.last_mut().unwrap().insert(name.name.clone(), v);
                }
                StmtKind::Assign { target, value } => {
                    let ty = self.frames.last().and_then(|f| f.get(&target.name)).map_or(Type::Uint256, SymValue::ty);
                    let v = self.eval_or_fresh(value, ty);
                    self.frames.last_mut().unwrap().insert(target.name.clone(), v);
                }
                StmtKind::StorageWrite { var, index, value } => {
                    let kind = self.kind(&var.name);
                    let key = match (index, kind) {
                        (Some(i), StateKind::Mapping(kt, _)) => Some(self.eval_or_fresh(i, kt)),
                        _ => None,
                    };
                    let v = self.eval_or_fresh(value, kind.value_type());
                    self.write(&var.name, key, v);
                }
                StmtKind::ExternalCall { target, ok } => {
                    let t = self.eval_or_fresh(target, Type::Address);
                    let site = format!("{}#call{}", ok.name, s.span.start);
                    self.cs.external_calls.push(format!("{site} -> {t}"));
                    let flag = SymValue::atom(AtomKind::CallSuccessSym, site, Type::Bool);
                    self.frames.last_mut().unwrap().insert(ok.name.clone(), flag);
                }
                // Other events do not constrain anything.
                _ => {}
            },
        }
    }
}

pub fn symbolic_exec(path: &SourcePath) -> ConstraintSet {
    let entry: BTreeMap<String, SymValue> = path
        .entry_params
        .iter()
        .map(|(n, ty)| (n.clone(), SymValue::atom(AtomKind::FreeVar, n.clone(), *ty)))
        .collect();
    let mut ex = Exec {
        path,
        frames: vec![entry],
        storage: BTreeMap::new(),
        cs: ConstraintSet {
            path: path.id,
            entry: path.entry.clone(),
            event: path.event.clone(),
            values: Vec::new(),
            conjuncts: Vec::new(),
            reads: BTreeSet::new(),
            writes: Vec::new(),
            external_calls: Vec::new(),
            unsupported: None,
            incomplete: path.incomplete,
        },
        fresh: 0,
    };
    for s in &path.steps {
        ex.step(s);
    }
    let values = path
        .emit_args
        .iter()
        .map(|a| ex.eval_or_fresh(a, Type::Uint256))
        .collect();
    ex.cs.values = values;
    ex.cs
}
