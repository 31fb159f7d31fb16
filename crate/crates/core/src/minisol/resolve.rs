//! Name resolution and type checking.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::ParseError;

struct Resolver<'a> {
    src: &'a str,
    events: BTreeMap<&'a str, &'a EventDecl>,
    state: BTreeMap<&'a str, StateKind>,
    functions: BTreeMap<&'a str, Vec<Type>>,
    scopes: Vec<BTreeMap<String, Type>>,
}

type RResult<T> = Result<T, ParseError>;

impl<'a> Resolver<'a> {
    fn unresolved<T>(&self, name: &str, span: Span) -> RResult<T> {
        Err(ParseError::resolution(self.src, name, span))
    }

    fn semantic<T>(&self, message: impl Into<String>, span: Span) -> RResult<T> {
        Err(ParseError::semantic(self.src, message, span))
    }

    fn local(&self, name: &str) -> Option<Type> {
        self.scopes.iter().rev().find_map(|s| s.get(name).copied())
    }

    fn declare(&mut self, name: &Ident, ty: Type) -> RResult<()> {
        if self.local(&name.name).is_some() {
            return self.semantic(format!("`{}` is already declared", name.name), name.span);
        }
        self.scopes.last_mut().unwrap().insert(name.name.clone(), ty);
        Ok(())
    }

    fn expect(&self, e: &Expr, want: Type) -> RResult<()> {
        let got = self.expr(e)?;
        if got != want {
            return self.semantic(format!("expected {want}, found {got}"), e.span);
        }
        Ok(())
    }

    fn expr(&self, e: &Expr) -> RResult<Type> {
        Ok(match &e.kind {
            ExprKind::Int(_) => Type::Uint256,
            ExprKind::Bool(_) => Type::Bool,
            ExprKind::Address(_) | ExprKind::MsgSender => Type::Address,
            ExprKind::MsgValue => Type::Uint256,
            ExprKind::Var(name) => {
                if let Some(t) = self.local(name) {
                    t
                } else {
                    match self.state.get(name.as_str()) {
                        Some(StateKind::Scalar(t)) => *t,
                        Some(StateKind::Mapping(..)) => {
                            return self.semantic(format!("mapping `{name}` needs an index"), e.span)
                        }
                        None => return self.unresolved(name, e.span),
                    }
                }
            }
            ExprKind::Index { var, key } => self.index(var, key)?,
            ExprKind::Not(inner) => {
                self.expect(inner, Type::Bool)?;
                Type::Bool
            }
            ExprKind::Binary(op, l, r) => match op {
                BinOp::Add | BinOp::Sub | BinOp::Mul => {
                    self.expect(l, Type::Uint256)?;
                    self.expect(r, Type::Uint256)?;
                    let lit = |x: &Expr| matches!(x.kind, ExprKind::Int(_));
                    if *op == BinOp::Mul && !lit(l) && !lit(r) {
                        return self.semantic("multiplication needs a literal operand", e.span);
                    }
                    Type::Uint256
                }
                BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    self.expect(l, Type::Uint256)?;
                    self.expect(r, Type::Uint256)?;
                    Type::Bool
                }
                BinOp::Eq | BinOp::Ne => {
                    let t = self.expr(l)?;
                    if t == Type::Bytes {
                        return self.semantic("bytes values cannot be compared", e.span);
                    }
                    self.expect(r, t)?;
                    Type::Bool
                }
                BinOp::And | BinOp::Or => {
                    self.expect(l, Type::Bool)?;
                    self.expect(r, Type::Bool)?;
                    Type::Bool
                }
            },
        })
    }

    fn mapping(&self, var: &Ident) -> RResult<(Type, Type)> {
        if self.local(&var.name).is_some() {
            return self.semantic(format!("`{}` is not a mapping", var.name), var.span);
        }
        match self.state.get(var.name.as_str()) {
            Some(StateKind::Mapping(k, v)) => Ok((*k, *v)),
            Some(_) => self.semantic(format!("`{}` is not a mapping", var.name), var.span),
            None => self.unresolved(&var.name, var.span),
        }
    }

    fn index(&self, var: &Ident, key: &Expr) -> RResult<Type> {
        let (k, v) = self.mapping(var)?;
        self.expect(key, k)?;
        Ok(v)
    }

    fn args(&self, what: &str, args: &[Expr], want: &[Type], span: Span) -> RResult<()> {
        if args.len() != want.len() {
            return self.semantic(
                format!("`{what}` takes {} arguments, {} given", want.len(), args.len()),
                span,
            );
        }
        args.iter().zip(want).try_for_each(|(a, t)| self.expect(a, *t))
    }

    fn block(&mut self, b: &mut Block) -> RResult<()> {
        self.scopes.push(BTreeMap::new());
        let r = b.stmts.iter_mut().try_for_each(|s| self.stmt(s));
        self.scopes.pop();
        r
    }

    fn stmt(&mut self, s: &mut Stmt) -> RResult<()> {
        match &mut s.kind {
            StmtKind::Require(e) => self.expect(e, Type::Bool),
            StmtKind::Emit { event, args } => {
                let Some(decl) = self.events.get(event.name.as_str()) else {
                    return self.unresolved(&event.name, event.span);
                };
                let tys: Vec<Type> = decl.params.iter().map(|p| p.ty).collect();
                self.args(&event.name, args, &tys, s.span)
            }
            StmtKind::Let { ty, name, value } => {
                self.expect(value, *ty)?;
                self.declare(name, *ty)
            }
            StmtKind::Assign { target, value } => {
                if let Some(t) = self.local(&target.name) {
                    return self.expect(value, t);
                }
                match self.state.get(target.name.as_str()).copied() {
                    Some(StateKind::Scalar(t)) => {
                        self.expect(value, t)?;
                        let StmtKind::Assign { target, value } =
                            std::mem::replace(&mut s.kind, StmtKind::Revert)
                        else {
                            unreachable!()
                        };
                        s.kind = StmtKind::StorageWrite { var: target, index: None, value };
                        Ok(())
                    }
                    Some(StateKind::Mapping(..)) => self.semantic(
                        format!("mapping `{}` needs an index", target.name),
                        target.span,
                    ),
                    None => self.unresolved(&target.name, target.span),
                }
            }
            StmtKind::StorageWrite { var, index, value } => {
                match index {
                    Some(key) => {
                        let (k, v) = self.mapping(var)?;
                        self.expect(key, k)?;
                        self.expect(value, v)
                    }
                    // Only produced by the resolver itself, re-resolution is a no-op check.
                    None => match self.state.get(var.name.as_str()) {
                        Some(StateKind::Scalar(t)) => self.expect(value, *t),
                        _ => self.unresolved(&var.name, var.span),
                    },
                }
            }
            StmtKind::If { cond, then_body, else_body } => {
                self.expect(cond, Type::Bool)?;
                self.block(then_body)?;
                match else_body {
                    Some(Else::Block(b)) => self.block(b),
                    Some(Else::If(inner)) => self.stmt(inner),
                    None => Ok(()),
                }
            }
            StmtKind::ExternalCall { target, ok } => {
                self.expect(target, Type::Address)?;
                self.declare(ok, Type::Bool)
            }
            StmtKind::Call { func, args } => {
                let Some(tys) = self.functions.get(func.name.as_str()) else {
                    return self.unresolved(&func.name, func.span);
                };
                self.args(&func.name, args, tys, s.span)
            }
            StmtKind::Revert | StmtKind::Return => Ok(()),
        }
    }
}

fn unique<'a>(
    src: &str,
    what: &str,
    names: impl Iterator<Item = &'a Ident>,
) -> Result<(), ParseError> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n.name.as_str()) {
            return Err(ParseError::semantic(src, format!("duplicate {what} `{}`", n.name), n.span));
        }
    }
    Ok(())
}

pub fn resolve(src: &str, mut ast: ContractAst) -> Result<ContractAst, ParseError> {
    unique(src, "event", ast.events.iter().map(|e| &e.name))?;
    unique(src, "state variable", ast.storage.iter().map(|v| &v.name))?;
    unique(src, "function", ast.functions.iter().map(|f| &f.name))?;
    for e in &ast.events {
        unique(src, "event parameter", e.params.iter().map(|p| &p.name))?;
    }
    let snapshot = ast.clone();
    let mut r = Resolver {
        src,
        events: snapshot.events.iter().map(|e| (e.name.name.as_str(), e)).collect(),
        state: snapshot.storage.iter().map(|v| (v.name.name.as_str(), v.kind)).collect(),
        functions: snapshot
            .functions
            .iter()
            .map(|f| (f.name.name.as_str(), f.params.iter().map(|p| p.ty).collect()))
            .collect(),
        scopes: Vec::new(),
    };
    for f in &mut ast.functions {
        r.scopes = vec![BTreeMap::new()];
        for p in &f.params {
            r.declare(&p.name, p.ty)?;
        }
        r.block(&mut f.body)?;
    }
    Ok(ast)
}
