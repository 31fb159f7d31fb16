use std::fmt;

use ruint::aliases::U256;
use serde::Serialize;

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn to(self, other: Span) -> Span {
        Span { start: self.start, end: other.end }
    }

    pub fn slice(self, src: &str) -> &str {
        &src[self.start..self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Type {
    Uint256,
    Address,
    Bool,
    Bytes,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Uint256 => "uint256",
            Type::Address => "address",
            Type::Bool => "bool",
            Type::Bytes => "bytes",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContractAst {
    pub name: Ident,
    pub events: Vec<EventDecl>,
    pub storage: Vec<StateVar>,
    pub functions: Vec<FunctionDecl>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventParam {
    pub ty: Type,
    pub indexed: bool,
    pub name: Ident,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventDecl {
    pub name: Ident,
    pub params: Vec<EventParam>,
    pub span: Span,
}

impl EventDecl {
    /// `Name(type1,type2,...)`, the string hashed into topic0.
    pub fn signature(&self) -> String {
        let tys: Vec<String> = self.params.iter().map(|p| p.ty.to_string()).collect();
        format!("{}({})", self.name.name, tys.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Scalar(Type),
    Mapping(Type, Type),
}

impl StateKind {
    pub fn value_type(self) -> Type {
        match self {
            StateKind::Scalar(t) | StateKind::Mapping(_, t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateVar {
    pub name: Ident,
    pub kind: StateKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    External,
    Public,
    Internal,
}

impl fmt::Display for Visibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Visibility::External => "external",
            Visibility::Public => "public",
            Visibility::Internal => "internal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Param {
    pub ty: Type,
    pub name: Ident,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionDecl {
    pub name: Ident,
    pub params: Vec<Param>,
    pub visibility: Visibility,
    pub payable: bool,
    pub body: Block,
    pub span: Span,
}

impl FunctionDecl {
    pub fn is_entry(&self) -> bool {
        self.visibility != Visibility::Internal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub stmts: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Else {
    Block(Block),
    If(Box<Stmt>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum StmtKind {
    Require(Expr),
    Emit { event: Ident, args: Vec<Expr> },
    /// `type name = value;`
    Let { ty: Type, name: Ident, value: Expr },
    /// Assignment to a parameter or local.
    Assign { target: Ident, value: Expr },
    StorageWrite { var: Ident, index: Option<Expr>, value: Expr },
    If { cond: Expr, then_body: Block, else_body: Option<Else> },
    /// `call(target) -> ok;` binds the success flag to a fresh bool local.
    ExternalCall { target: Expr, ok: Ident },
    /// Internal call, inlined by the path search.
    Call { func: Ident, args: Vec<Expr> },
    Revert,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul => 5,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 3
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ExprKind {
    Int(U256),
    Bool(bool),
    /// `address(N)`
    Address(U256),
    MsgSender,
    MsgValue,
    Var(String),
    Index { var: Ident, key: Box<Expr> },
    Not(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Pre-order visit of this expression and its children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Index { key, .. } => key.walk(f),
            ExprKind::Not(e) => e.walk(f),
            ExprKind::Binary(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            _ => {}
        }
    }
}

/// Zero every span, leaving only structure. Two ASTs are structurally
/// identical iff their erased forms compare equal.
pub trait EraseSpans {
    fn erase_spans(&mut self);
}

impl EraseSpans for Ident {
    fn erase_spans(&mut self) {
        self.span = Span::default();
    }
}

impl EraseSpans for Expr {
    fn erase_spans(&mut self) {
        self.span = Span::default();
        match &mut self.kind {
            ExprKind::Index { var, key } => {
                var.erase_spans();
                key.erase_spans();
            }
            ExprKind::Not(e) => e.erase_spans(),
            ExprKind::Binary(_, l, r) => {
                l.erase_spans();
                r.erase_spans();
            }
            _ => {}
        }
    }
}

impl EraseSpans for Block {
    fn erase_spans(&mut self) {
        self.span = Span::default();
        self.stmts.iter_mut().for_each(Stmt::erase_spans);
    }
}

impl EraseSpans for Stmt {
    fn erase_spans(&mut self) {
        self.span = Span::default();
        match &mut self.kind {
            StmtKind::Require(e) => e.erase_spans(),
            StmtKind::Emit { event, args } | StmtKind::Call { func: event, args } => {
                event.erase_spans();
                args.iter_mut().for_each(Expr::erase_spans);
            }
            StmtKind::Let { name, value, .. } | StmtKind::Assign { target: name, value } => {
                name.erase_spans();
                value.erase_spans();
            }
            StmtKind::StorageWrite { var, index, value } => {
                var.erase_spans();
                if let Some(i) = index {
                    i.erase_spans();
                }
                value.erase_spans();
            }
            StmtKind::If { cond, then_body, else_body } => {
                cond.erase_spans();
                then_body.erase_spans();
                match else_body {
                    Some(Else::Block(b)) => b.erase_spans(),
                    Some(Else::If(s)) => s.erase_spans(),
                    None => {}
                }
            }
            StmtKind::ExternalCall { target, ok } => {
                target.erase_spans();
                ok.erase_spans();
            }
            StmtKind::Revert | StmtKind::Return => {}
        }
    }
}

impl EraseSpans for ContractAst {
    fn erase_spans(&mut self) {
        self.span = Span::default();
        self.name.erase_spans();
        for e in &mut self.events {
            e.span = Span::default();
            e.name.erase_spans();
            for p in &mut e.params {
                p.span = Span::default();
                p.name.erase_spans();
            }
        }
        for v in &mut self.storage {
            v.span = Span::default();
            v.name.erase_spans();
        }
        for f in &mut self.functions {
            f.span = Span::default();
            f.name.erase_spans();
            for p in &mut f.params {
                p.span = Span::default();
                p.name.erase_spans();
            }
            f.body.erase_spans();
        }
    }
}

impl ContractAst {
    pub fn event(&self, name: &str) -> Option<&EventDecl> {
        self.events.iter().find(|e| e.name.name == name)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name.name == name)
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.storage.iter().find(|v| v.name.name == name)
    }
}
