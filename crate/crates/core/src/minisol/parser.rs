//! Lexer and recursive-descent parser.

use ruint::aliases::U256;

use super::ast::*;
use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(U256),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

// Longest first so that `==` wins over `=`.
const PUNCT: &[&str] = &[
    "=>", "->", "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", ",", ";", "=",
    "<", ">", "+", "-", "*", "!", ".",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(end) => i += end + 4,
                None => return Err(ParseError::syntax(src, i, &["*/"], "end of input")),
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), span: Span::new(start, i) });
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = src[start..i].replace('_', "");
            let v = match text.strip_prefix("0x") {
                Some(h) => U256::from_str_radix(h, 16),
                None => U256::from_str_radix(&text, 10),
            };
            let v = v.map_err(|_| ParseError::syntax(src, start, &["integer literal"], &src[start..i]))?;
            out.push(Token { tok: Tok::Int(v), span: Span::new(start, i) });
            continue;
        }
        match PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                i += p.len();
                out.push(Token { tok: Tok::Punct(p), span: Span::new(start, i) });
            }
            None => {
                let ch = src[i..].chars().next().unwrap();
                return Err(ParseError::syntax(src, i, &["token"], &ch.to_string()));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(src.len(), src.len()) });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "contract", "event", "indexed", "mapping", "function", "external", "public", "internal",
    "payable", "require", "emit", "if", "else", "call", "revert", "return", "true", "false", "msg",
    "address", "uint256", "uint", "bool", "bytes",
];

struct Parser<'s> {
    src: &'s str,
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'s> Parser<'s> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    /// End of the previously consumed token.
    fn last_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.toks[self.pos - 1].span.end
        }
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        let found = match self.peek() {
            Tok::Eof => "end of input".to_string(),
            _ => self.span().slice(self.src).to_string(),
        };
        Err(ParseError::syntax(self.src, self.span().start, expected, &found))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &'static str) -> PResult<Span> {
        let sp = self.span();
        if self.eat_punct(p) {
            Ok(sp)
        } else {
            self.error(&[p])
        }
    }

    fn expect_kw(&mut self, kw: &'static str) -> PResult<Span> {
        let sp = self.span();
        if self.eat_kw(kw) {
            Ok(sp)
        } else {
            self.error(&[kw])
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                let span = self.span();
                self.pos += 1;
                Ok(Ident { name, span })
            }
            _ => self.error(&["identifier"]),
        }
    }

    fn try_type(&mut self) -> Option<Type> {
        let ty = match self.peek() {
            Tok::Ident(s) => match s.as_str() {
                "uint256" | "uint" => Type::Uint256,
                "address" => Type::Address,
                "bool" => Type::Bool,
                "bytes" => Type::Bytes,
                _ => return None,
            },
            _ => return None,
        };
        // `address(` starts an expression, not a declaration.
        if ty == Type::Address && matches!(self.peek_at(1), Tok::Punct("(")) {
            return None;
        }
        self.pos += 1;
        Some(ty)
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.try_type() {
            Some(t) => Ok(t),
            None => self.error(&["uint256", "address", "bool", "bytes"]),
        }
    }

    fn contract(&mut self) -> PResult<ContractAst> {
        let start = self.expect_kw("contract")?;
        let name = self.ident()?;
        self.expect_punct("{")?;
        let mut events = Vec::new();
        let mut storage = Vec::new();
        let mut functions = Vec::new();
        loop {
            if self.is_punct("}") {
                break;
            }
            if self.is_kw("event") {
                events.push(self.event()?);
            } else if self.is_kw("function") {
                functions.push(self.function()?);
            } else if self.is_kw("mapping") || self.try_peek_type() {
                storage.push(self.state_var()?);
            } else {
                return self.error(&["event", "function", "mapping", "type", "}"]);
            }
        }
        let end = self.expect_punct("}")?;
        if !matches!(self.peek(), Tok::Eof) {
            return self.error(&["end of input"]);
        }
        Ok(ContractAst { name, events, storage, functions, span: start.to(end) })
    }

    fn try_peek_type(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if ["uint256", "uint", "address", "bool", "bytes"].contains(&s.as_str()))
    }

    fn event(&mut self) -> PResult<EventDecl> {
        let start = self.expect_kw("event")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let p0 = self.span();
                let ty = self.ty()?;
                let indexed = self.eat_kw("indexed");
                let pname = self.ident()?;
                params.push(EventParam { ty, indexed, span: p0.to(pname.span), name: pname });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let end = self.expect_punct(";")?;
        Ok(EventDecl { name, params, span: start.to(end) })
    }

    fn state_var(&mut self) -> PResult<StateVar> {
        let start = self.span();
        let kind = if self.eat_kw("mapping") {
            self.expect_punct("(")?;
            let k = self.ty()?;
            self.expect_punct("=>")?;
            let v = self.ty()?;
            self.expect_punct(")")?;
            StateKind::Mapping(k, v)
        } else {
            StateKind::Scalar(self.ty()?)
        };
        let name = self.ident()?;
        let end = self.expect_punct(";")?;
        Ok(StateVar { name, kind, span: start.to(end) })
    }

    fn function(&mut self) -> PResult<FunctionDecl> {
        let start = self.expect_kw("function")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let p0 = self.span();
                let ty = self.ty()?;
                let pname = self.ident()?;
                params.push(Param { ty, span: p0.to(pname.span), name: pname });
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let visibility = if self.eat_kw("external") {
            Visibility::External
        } else if self.eat_kw("public") {
            Visibility::Public
        } else if self.eat_kw("internal") {
            Visibility::Internal
        } else {
            return self.error(&["external", "public", "internal"]);
        };
        let payable = self.eat_kw("payable");
        let body = self.block()?;
        Ok(FunctionDecl { name, params, visibility, payable, span: start.to(body.span), body })
    }

    fn block(&mut self) -> PResult<Block> {
        let start = self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.error(&["}"]);
            }
            stmts.push(self.stmt()?);
        }
        let end = self.expect_punct("}")?;
        Ok(Block { stmts, span: start.to(end) })
    }

    fn finish(&mut self, start: Span, kind: StmtKind) -> PResult<Stmt> {
        let end = self.expect_punct(";")?;
        Ok(Stmt { kind, span: start.to(end) })
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_punct("(")?;
        let mut args = Vec::new();
        if !self.is_punct(")") {
            loop {
                args.push(self.expr()?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        Ok(args)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.span();
        if self.eat_kw("require") {
            self.expect_punct("(")?;
            let e = self.expr()?;
            self.expect_punct(")")?;
            return self.finish(start, StmtKind::Require(e));
        }
        if self.eat_kw("emit") {
            let event = self.ident()?;
            let args = self.args()?;
            return self.finish(start, StmtKind::Emit { event, args });
        }
        if self.is_kw("if") {
            return self.if_stmt();
        }
        if self.eat_kw("call") {
            self.expect_punct("(")?;
            let target = self.expr()?;
            self.expect_punct(")")?;
            self.expect_punct("->")?;
            let ok = self.ident()?;
            return self.finish(start, StmtKind::ExternalCall { target, ok });
        }
        if self.eat_kw("revert") {
            return self.finish(start, StmtKind::Revert);
        }
        if self.eat_kw("return") {
            return self.finish(start, StmtKind::Return);
        }
        if let Some(ty) = self.try_type() {
            let name = self.ident()?;
            self.expect_punct("=")?;
            let value = self.expr()?;
            return self.finish(start, StmtKind::Let { ty, name, value });
        }
        let target = match self.ident() {
            Ok(t) => t,
            Err(_) => {
                return self.error(&[
                    "require", "emit", "if", "call", "revert", "return", "type", "identifier",
                ])
            }
        };
        if self.is_punct("(") {
            let args = self.args()?;
            return self.finish(start, StmtKind::Call { func: target, args });
        }
        if self.eat_punct("[") {
            let index = self.expr()?;
            self.expect_punct("]")?;
            self.expect_punct("=")?;
            let value = self.expr()?;
            return self.finish(start, StmtKind::StorageWrite { var: target, index: Some(index), value });
        }
        if !self.is_punct("=") {
            return self.error(&["=", "[", "("]);
        }
        self.pos += 1;
        let value = self.expr()?;
        // The resolver turns this into a StorageWrite when `target` is a state variable.
        self.finish(start, StmtKind::Assign { target, value })
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let start = self.expect_kw("if")?;
        self.expect_punct("(")?;
        let cond = self.expr()?;
        self.expect_punct(")")?;
        let then_body = self.block()?;
        let mut end = then_body.span;
        let else_body = if self.eat_kw("else") {
            if self.is_kw("if") {
                let s = self.if_stmt()?;
                end = s.span;
                Some(Else::If(Box::new(s)))
            } else {
                let b = self.block()?;
                end = b.span;
                Some(Else::Block(b))
            }
        } else {
            None
        };
        Ok(Stmt { kind: StmtKind::If { cond, then_body, else_body }, span: start.to(end) })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        let Tok::Punct(p) = self.peek() else { return None };
        Some(match *p {
            "||" => BinOp::Or,
            "&&" => BinOp::And,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            _ => return None,
        })
    }

    /// Precedence climbing. Comparisons do not chain.
    fn binary(&mut self, min: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = op.precedence();
            if prec < min {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(prec + 1)?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span };
            if op.is_comparison() {
                if let Some(next) = self.binop() {
                    if next.is_comparison() {
                        return self.error(&["operator other than a comparison"]);
                    }
                }
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        let start = self.span();
        if self.eat_punct("!") {
            let e = self.unary()?;
            let span = start.to(e.span);
            return Ok(Expr { kind: ExprKind::Not(Box::new(e)), span });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.span();
        let kind = match self.peek().clone() {
            Tok::Int(v) => {
                self.pos += 1;
                ExprKind::Int(v)
            }
            Tok::Punct("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_punct(")")?;
                // Parentheses are not nodes; the inner span excludes them.
                return Ok(e);
            }
            Tok::Ident(s) => match s.as_str() {
                "true" | "false" => {
                    self.pos += 1;
                    ExprKind::Bool(s == "true")
                }
                "msg" => {
                    self.pos += 1;
                    self.expect_punct(".")?;
                    if self.eat_kw("sender") {
                        ExprKind::MsgSender
                    } else if self.eat_kw("value") {
                        ExprKind::MsgValue
                    } else {
                        return self.error(&["sender", "value"]);
                    }
                }
                "address" => {
                    self.pos += 1;
                    self.expect_punct("(")?;
                    let Tok::Int(v) = self.peek().clone() else {
                        return self.error(&["integer literal"]);
                    };
                    self.pos += 1;
                    self.expect_punct(")")?;
                    ExprKind::Address(v)
                }
                _ => {
                    let var = self.ident().or_else(|_| {
                        self.error(&["literal", "identifier", "msg", "address", "(", "!"])
                    })?;
                    if self.eat_punct("[") {
                        let key = self.expr()?;
                        self.expect_punct("]")?;
                        ExprKind::Index { var, key: Box::new(key) }
                    } else {
                        ExprKind::Var(var.name)
                    }
                }
            },
            _ => return self.error(&["literal", "identifier", "msg", "address", "(", "!"]),
        };
        Ok(Expr { kind, span: Span::new(start.start, self.last_end()) })
    }
}

/// Parse one contract without name resolution.
pub fn parse_unresolved(src: &str) -> Result<ContractAst, ParseError> {
    let mut p = Parser { src, toks: lex(src)?, pos: 0 };
    p.contract()
}

/// Parse a standalone expression, used to check span fidelity.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src, toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.error(&["end of input"]);
    }
    Ok(e)
}

/// Parse a standalone statement, used to check span fidelity.
pub fn parse_stmt(src: &str) -> Result<Stmt, ParseError> {
    let mut p = Parser { src, toks: lex(src)?, pos: 0 };
    let s = p.stmt()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.error(&["end of input"]);
    }
    Ok(s)
}
