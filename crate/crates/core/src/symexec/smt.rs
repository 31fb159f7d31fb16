//! SMT-LIB 2 export of a conjunction.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::sym::SymValue;
use crate::minisol::{BinOp, Type};

fn sort(ty: Type) -> &'static str {
    match ty {
        Type::Uint256 => "(_ BitVec 256)",
        Type::Address => "(_ BitVec 160)",
        Type::Bool => "Bool",
        Type::Bytes => "Bytes",
    }
}

/// Quoted symbol; `|` and `\` cannot appear inside quotes.
fn symbol(name: &str) -> String {
    let clean: String = name.chars().map(|c| if c == '|' || c == '\\' { '_' } else { c }).collect();
    format!("|{clean}|")
}

fn term(v: &SymValue, out: &mut String) {
    match v {
        SymValue::Atom(a) => out.push_str(&symbol(&a.name)),
        SymValue::Lit { value, ty: Type::Bool } => out.push_str(if value.is_zero() { "false" } else { "true" }),
        SymValue::Lit { value, ty: Type::Address } => write!(out, "(_ bv{value} 160)").unwrap(),
        SymValue::Lit { value, .. } => write!(out, "(_ bv{value} 256)").unwrap(),
        SymValue::Not(x) => {
            out.push_str("(not ");
            term(x, out);
            out.push(')');
        }
        SymValue::Bin { op, lhs, rhs } => {
            let f = match op {
                BinOp::Add => "bvadd",
                BinOp::Sub => "bvsub",
                BinOp::Mul => "bvmul",
                BinOp::Eq => "=",
                BinOp::Ne => "distinct",
                BinOp::Lt => "bvult",
                BinOp::Le => "bvule",
                BinOp::Gt => "bvugt",
                BinOp::Ge => "bvuge",
                BinOp::And => "and",
                BinOp::Or => "or",
            };
            write!(out, "({f} ").unwrap();
            term(lhs, out);
            out.push(' ');
            term(rhs, out);
            out.push(')');
        }
    }
}

/// One declaration per symbol (sorted by name), one assertion per conjunct,
/// then `(check-sat)`. uint256 is a 256-bit vector, address a 160-bit one.
pub fn export_smtlib(conjuncts: &[SymValue]) -> String {
    let mut decls: BTreeMap<&str, Type> = BTreeMap::new();
    for c in conjuncts {
        for a in c.atoms() {
            decls.insert(&a.name, a.ty);
        }
    }
    let mut out = String::new();
    if decls.values().any(|t| *t == Type::Bytes) {
        out.push_str("(declare-sort Bytes 0)\n");
    }
    for (name, ty) in &decls {
        writeln!(out, "(declare-const {} {})", symbol(name), sort(*ty)).unwrap();
    }
    for c in conjuncts {
        out.push_str("(assert ");
        term(c, &mut out);
        out.push_str(")\n");
    }
    out.push_str("(check-sat)\n");
    out
}
