//! The minisol contract language: a small Solidity-like surface for
//! describing event-emitting contracts.

pub mod ast;
mod parser;
mod print;
mod resolve;
mod summary;

use thiserror::Error;

pub use ast::*;
pub use parser::{parse_expr, parse_stmt, parse_unresolved};
pub use print::{expr_to_string, pretty, stmt_to_string};
pub use summary::{summarize, ContractSummary, FunctionSummary};

pub const GRAMMAR: &str = r#"(* minisol, file extension .msol *)
contract    = "contract" IDENT "{" { event | state_var | function } "}" ;
event       = "event" IDENT "(" [ event_param { "," event_param } ] ")" ";" ;
event_param = type [ "indexed" ] IDENT ;
state_var   = ( type | "mapping" "(" type "=>" type ")" ) IDENT ";" ;
function    = "function" IDENT "(" [ param { "," param } ] ")" visibility [ "payable" ] block ;
param       = type IDENT ;
visibility  = "external" | "public" | "internal" ;
type        = "uint256" | "uint" | "address" | "bool" | "bytes" ;
block       = "{" { stmt } "}" ;
stmt        = "require" "(" expr ")" ";"
            | "emit" IDENT "(" [ args ] ")" ";"
            | "if" "(" expr ")" block [ "else" ( block | if_stmt ) ]
            | "call" "(" expr ")" "->" IDENT ";"
            | "revert" ";"
            | "return" ";"
            | type IDENT "=" expr ";"
            | IDENT [ "[" expr "]" ] "=" expr ";"
            | IDENT "(" [ args ] ")" ";" ;
args        = expr { "," expr } ;
expr        = or ;
or          = and { "||" and } ;
and         = cmp { "&&" cmp } ;
cmp         = sum [ ( "==" | "!=" | "<" | "<=" | ">" | ">=" ) sum ] ;
sum         = product { ( "+" | "-" ) product } ;
product     = unary { "*" unary } ;
unary       = "!" unary | primary ;
primary     = INT | "true" | "false" | "msg" "." ( "sender" | "value" )
            | "address" "(" INT ")" | IDENT [ "[" expr "]" ] | "(" expr ")" ;
INT         = decimal digits | "0x" hex digits ;   (* "_" separators allowed *)
IDENT       = letter { letter | digit | "_" } ;
(* comments: // to end of line, /* ... */ *)

(* Differences from Solidity, on purpose:
   - `call(target) -> ok;` is the only external call; `ok` is a fresh bool.
   - functions take no return values, have no modifiers and no loops.
   - mappings have exactly one key; `+=` and friends do not exist.
   - `*` needs a literal operand; comparisons do not chain.
   - a bare `x = e;` to a state variable is a storage write. *)
"#;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: expected {}, found `{found}`", expected.join(" | "))]
    Syntax { line: usize, col: usize, expected: Vec<String>, found: String },
    #[error("{line}:{col}: cannot resolve `{name}`")]
    Resolution { name: String, span: Span, line: usize, col: usize },
    #[error("{line}:{col}: {message}")]
    Semantic { message: String, span: Span, line: usize, col: usize },
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, col)
}

impl ParseError {
    pub(crate) fn syntax(src: &str, offset: usize, expected: &[&str], found: &str) -> Self {
        let (line, col) = line_col(src, offset);
        ParseError::Syntax {
            line,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: found.to_string(),
        }
    }

    pub(crate) fn resolution(src: &str, name: &str, span: Span) -> Self {
        let (line, col) = line_col(src, span.start);
        ParseError::Resolution { name: name.to_string(), span, line, col }
    }

    pub(crate) fn semantic(src: &str, message: impl Into<String>, span: Span) -> Self {
        let (line, col) = line_col(src, span.start);
        ParseError::Semantic { message: message.into(), span, line, col }
    }
}

/// Parse and resolve a contract.
pub fn parse(src: &str) -> Result<ContractAst, ParseError> {
    resolve::resolve(src, parse_unresolved(src)?)
}
