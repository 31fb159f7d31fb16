//! Path-insensitive per-function summaries.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ast::*;
use super::print::expr_to_string;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FunctionSummary {
    pub emits: BTreeSet<String>,
    pub s_read: BTreeSet<String>,
    pub s_write: BTreeSet<String>,
    /// Canonical text of every `require` condition.
    pub constraints: BTreeSet<String>,
    pub external_calls: BTreeSet<String>,
}

impl FunctionSummary {
    fn absorb(&mut self, other: &FunctionSummary) {
        self.emits.extend(other.emits.iter().cloned());
        self.s_read.extend(other.s_read.iter().cloned());
        self.s_write.extend(other.s_write.iter().cloned());
        self.constraints.extend(other.constraints.iter().cloned());
        self.external_calls.extend(other.external_calls.iter().cloned());
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ContractSummary {
    pub functions: BTreeMap<String, FunctionSummary>,
}

struct Walk<'a> {
    ast: &'a ContractAst,
    scopes: Vec<BTreeSet<String>>,
    calls: BTreeSet<String>,
    out: FunctionSummary,
}

impl Walk<'_> {
    fn is_local(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.contains(name))
    }

    fn reads(&mut self, e: &Expr) {
        let mut found = Vec::new();
        e.walk(&mut |x| match &x.kind {
            ExprKind::Var(n) => found.push(n.clone()),
            ExprKind::Index { var, .. } => found.push(var.name.clone()),
            _ => {}
        });
        for n in found {
            if !self.is_local(&n) && self.ast.state_var(&n).is_some() {
                self.out.s_read.insert(n);
            }
        }
    }

    fn block(&mut self, b: &Block) {
        self.scopes.push(BTreeSet::new());
        for s in &b.stmts {
            self.stmt(s);
        }
        self.scopes.pop();
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Require(e) => {
                self.reads(e);
                self.out.constraints.insert(expr_to_string(e));
            }
            StmtKind::Emit { event, args } => {
                args.iter().for_each(|a| self.reads(a));
                self.out.emits.insert(event.name.clone());
            }
            StmtKind::Let { name, value, .. } => {
                self.reads(value);
                self.scopes.last_mut().unwrap().insert(name.name.clone());
            }
            StmtKind::Assign { value, .. } => self.reads(value),
            StmtKind::StorageWrite { var, index, value } => {
                if let Some(i) = index {
                    self.reads(i);
                }
                self.reads(value);
                self.out.s_write.insert(var.name.clone());
            }
            StmtKind::If { cond, then_body, else_body } => {
                self.reads(cond);
                self.block(then_body);
                match else_body {
                    Some(Else::Block(b)) => self.block(b),
                    Some(Else::If(inner)) => self.stmt(inner),
                    None => {}
                }
            }
            StmtKind::ExternalCall { target, ok } => {
                self.reads(target);
                self.out.external_calls.insert(expr_to_string(target));
                self.scopes.last_mut().unwrap().insert(ok.name.clone());
            }
            StmtKind::Call { func, args } => {
                args.iter().for_each(|a| self.reads(a));
                self.calls.insert(func.name.clone());
            }
            StmtKind::Revert | StmtKind::Return => {}
        }
    }
}

fn local_summary(ast: &ContractAst, f: &FunctionDecl) -> (FunctionSummary, BTreeSet<String>) {
    let params = f.params.iter().map(|p| p.name.name.clone()).collect();
    let mut w = Walk { ast, scopes: vec![params], calls: BTreeSet::new(), out: FunctionSummary::default() };
    w.block(&f.body);
    (w.out, w.calls)
}

/// Summaries include everything reachable through internal calls.
pub fn summarize(ast: &ContractAst) -> ContractSummary {
    let local: BTreeMap<&str, (FunctionSummary, BTreeSet<String>)> =
        ast.functions.iter().map(|f| (f.name.name.as_str(), local_summary(ast, f))).collect();
    let mut functions = BTreeMap::new();
    for f in &ast.functions {
        let mut seen = BTreeSet::new();
        let mut stack = vec![f.name.name.as_str()];
        let mut sum = FunctionSummary::default();
        while let Some(name) = stack.pop() {
            if !seen.insert(name) {
                continue;
            }
            // Unknown callees only occur in unresolved trees.
            let Some((s, calls)) = local.get(name) else { continue };
            sum.absorb(s);
            stack.extend(calls.iter().map(String::as_str));
        }
        functions.insert(f.name.name.clone(), sum);
    }
    ContractSummary { functions }
}
