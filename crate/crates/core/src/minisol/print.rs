//! Canonical pretty-printer. Its output re-parses to the same structure.

use std::fmt::Write;

use super::ast::*;

pub fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e);
    s
}

fn write_expr(out: &mut String, e: &Expr) {
    match &e.kind {
        ExprKind::Int(v) => write!(out, "{v}").unwrap(),
        ExprKind::Bool(b) => write!(out, "{b}").unwrap(),
        ExprKind::Address(v) if v.is_zero() => out.push_str("address(0)"),
        ExprKind::Address(v) => write!(out, "address({v:#x})").unwrap(),
        ExprKind::MsgSender => out.push_str("msg.sender"),
        ExprKind::MsgValue => out.push_str("msg.value"),
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Index { var, key } => {
            write!(out, "{}[", var.name).unwrap();
            write_expr(out, key);
            out.push(']');
        }
        ExprKind::Not(inner) => {
            out.push('!');
            write_operand(out, inner, binary_prec(inner).is_some());
        }
        ExprKind::Binary(op, l, r) => {
            let p = op.precedence();
            write_operand(out, l, binary_prec(l).is_some_and(|c| c < p || (c == p && op.is_comparison())));
            write!(out, " {} ", op.symbol()).unwrap();
            write_operand(out, r, binary_prec(r).is_some_and(|c| c <= p));
        }
    }
}

fn binary_prec(e: &Expr) -> Option<u8> {
    match &e.kind {
        ExprKind::Binary(op, ..) => Some(op.precedence()),
        _ => None,
    }
}

fn write_operand(out: &mut String, e: &Expr, parens: bool) {
    if parens {
        out.push('(');
    }
    write_expr(out, e);
    if parens {
        out.push(')');
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a);
    }
    out.push(')');
}

fn write_block(out: &mut String, b: &Block, depth: usize) {
    out.push_str("{\n");
    for s in &b.stmts {
        indent(out, depth + 1);
        write_stmt(out, s, depth + 1);
        out.push('\n');
    }
    indent(out, depth);
    out.push('}');
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) {
    match &s.kind {
        StmtKind::Require(e) => {
            out.push_str("require(");
            write_expr(out, e);
            out.push_str(");");
        }
        StmtKind::Emit { event, args } => {
            write!(out, "emit {}", event.name).unwrap();
            write_args(out, args);
            out.push(';');
        }
        StmtKind::Let { ty, name, value } => {
            write!(out, "{ty} {} = ", name.name).unwrap();
            write_expr(out, value);
            out.push(';');
        }
        StmtKind::Assign { target, value } => {
            write!(out, "{} = ", target.name).unwrap();
            write_expr(out, value);
            out.push(';');
        }
        StmtKind::StorageWrite { var, index, value } => {
            out.push_str(&var.name);
            if let Some(i) = index {
                out.push('[');
                write_expr(out, i);
                out.push(']');
            }
            out.push_str(" = ");
            write_expr(out, value);
            out.push(';');
        }
        StmtKind::If { cond, then_body, else_body } => {
            out.push_str("if (");
            write_expr(out, cond);
            out.push_str(") ");
            write_block(out, then_body, depth);
            match else_body {
                Some(Else::Block(b)) => {
                    out.push_str(" else ");
                    write_block(out, b, depth);
                }
                Some(Else::If(s)) => {
                    out.push_str(" else ");
                    write_stmt(out, s, depth);
                }
                None => {}
            }
        }
        StmtKind::ExternalCall { target, ok } => {
            out.push_str("call(");
            write_expr(out, target);
            write!(out, ") -> {};", ok.name).unwrap();
        }
        StmtKind::Call { func, args } => {
            out.push_str(&func.name);
            write_args(out, args);
            out.push(';');
        }
        StmtKind::Revert => out.push_str("revert;"),
        StmtKind::Return => out.push_str("return;"),
    }
}

pub fn stmt_to_string(s: &Stmt) -> String {
    let mut out = String::new();
    write_stmt(&mut out, s, 0);
    out
}

pub fn pretty(c: &ContractAst) -> String {
    let mut out = String::new();
    writeln!(out, "contract {} {{", c.name.name).unwrap();
    for e in &c.events {
        let params: Vec<String> = e
            .params
            .iter()
            .map(|p| {
                let idx = if p.indexed { " indexed" } else { "" };
                format!("{}{idx} {}", p.ty, p.name.name)
            })
            .collect();
        writeln!(out, "    event {}({});", e.name.name, params.join(", ")).unwrap();
    }
    for v in &c.storage {
        match v.kind {
            StateKind::Scalar(t) => writeln!(out, "    {t} {};", v.name.name).unwrap(),
            StateKind::Mapping(k, t) => writeln!(out, "    mapping({k} => {t}) {};", v.name.name).unwrap(),
        }
    }
    for f in &c.functions {
        let params: Vec<String> = f.params.iter().map(|p| format!("{} {}", p.ty, p.name.name)).collect();
        let pay = if f.payable { " payable" } else { "" };
        write!(out, "    function {}({}) {}{pay} ", f.name.name, params.join(", "), f.visibility).unwrap();
        write_block(&mut out, &f.body, 1);
        out.push('\n');
    }
    out.push_str("}\n");
    out
}
