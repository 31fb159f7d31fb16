//! Statement-level path enumeration towards an `emit`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::minisol::{ContractAst, Else, Expr, Span, StateKind, Stmt, StmtKind, Type};

/// One step of a path. `Exec` holds straight-line statements only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Exec(Stmt),
    Branch { cond: Expr, taken: bool },
    /// Start of an inlined internal call.
    Enter { func: String, params: Vec<(String, Type)>, args: Vec<Expr> },
    Leave,
    /// A call that exceeded the inlining depth and was skipped.
    Skipped { func: String, span: Span },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourcePath {
    pub id: usize,
    pub event: String,
    pub entry: String,
    #[serde(skip)]
    pub entry_params: Vec<(String, Type)>,
    #[serde(skip)]
    pub state: BTreeMap<String, StateKind>,
    #[serde(skip)]
    pub steps: Vec<Step>,
    /// The emit this path ends at; its arguments are the event values.
    pub emit_span: Span,
    #[serde(skip)]
    pub emit_args: Vec<Expr>,
    /// Set when an internal call was not inlined.
    pub incomplete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBounds {
    pub inline_depth: usize,
    pub max_paths: usize,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds { inline_depth: 4, max_paths: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("event `{0}` is not declared")]
    UnknownEvent(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SearchResult {
    pub paths: Vec<SourcePath>,
    /// More than `max_paths` paths exist; the list is a prefix.
    pub truncated: bool,
}

enum Cont<'a> {
    Stmts(&'a [Stmt]),
    Leave,
}

struct Search<'a> {
    ast: &'a ContractAst,
    event: &'a str,
    bounds: SearchBounds,
    entry: &'a str,
    entry_params: Vec<(String, Type)>,
    out: SearchResult,
}

impl<'a> Search<'a> {
    fn explore(&mut self, mut cont: Vec<Cont<'a>>, mut steps: Vec<Step>, mut incomplete: bool) {
        loop {
            if self.out.truncated {
                return;
            }
            let Some(top) = cont.pop() else { return };
            let stmts = match top {
                Cont::Leave => {
                    steps.push(Step::Leave);
                    continue;
                }
                Cont::Stmts(s) => s,
            };
            let Some((s, rest)) = stmts.split_first() else { continue };
            cont.push(Cont::Stmts(rest));
            match &s.kind {
                StmtKind::If { cond, then_body, else_body } => {
                    let mut then_cont: Vec<Cont<'a>> = cont.iter().map(Cont::copy).collect();
                    then_cont.push(Cont::Stmts(&then_body.stmts));
                    let mut then_steps = steps.clone();
                    then_steps.push(Step::Branch { cond: cond.clone(), taken: true });
                    self.explore(then_cont, then_steps, incomplete);
                    match else_body {
                        Some(Else::Block(b)) => cont.push(Cont::Stmts(&b.stmts)),
                        Some(Else::If(inner)) => cont.push(Cont::Stmts(std::slice::from_ref(inner))),
                        None => {}
                    }
                    steps.push(Step::Branch { cond: cond.clone(), taken: false });
                }
                StmtKind::Emit { event, args } if event.name == self.event => {
                    if self.out.paths.len() == self.bounds.max_paths {
                        self.out.truncated = true;
                        return;
                    }
                    self.out.paths.push(SourcePath {
                        id: self.out.paths.len(),
                        event: self.event.to_string(),
                        entry: self.entry.to_string(),
                        entry_params: self.entry_params.clone(),
                        state: self.ast.storage.iter().map(|v| (v.name.name.clone(), v.kind)).collect(),
                        steps: steps.clone(),
                        emit_span: s.span,
                        emit_args: args.clone(),
                        incomplete,
                    });
                    steps.push(Step::Exec(s.clone()));
                }
                StmtKind::Revert => return,
                StmtKind::Return => {
                    // Unwind to the caller of the current inlined function.
                    loop {
                        match cont.pop() {
                            Some(Cont::Leave) => {
                                steps.push(Step::Leave);
                                break;
                            }
                            Some(Cont::Stmts(_)) => {}
                            None => return,
                        }
                    }
                }
                StmtKind::Call { func, args } => {
                    let depth = cont.iter().filter(|c| matches!(c, Cont::Leave)).count();
                    let callee = self.ast.function(&func.name).expect("resolved call");
                    if depth >= self.bounds.inline_depth {
                        incomplete = true;
                        steps.push(Step::Skipped { func: func.name.clone(), span: s.span });
                    } else {
                        steps.push(Step::Enter {
                            func: func.name.clone(),
                            params: callee.params.iter().map(|p| (p.name.name.clone(), p.ty)).collect(),
                            args: args.clone(),
                        });
                        cont.push(Cont::Leave);
                        cont.push(Cont::Stmts(&callee.body.stmts));
                    }
                }
                _ => steps.push(Step::Exec(s.clone())),
            }
        }
    }
}

impl Cont<'_> {
    fn copy(&self) -> Self {
        match self {
            Cont::Stmts(s) => Cont::Stmts(s),
            Cont::Leave => Cont::Leave,
        }
    }
}

/// Every path from an external or public function entry to an `emit` of
/// `event`, in function order and then depth-first, then-arm first.
pub fn search_paths(
    event: &str,
    ast: &ContractAst,
    bounds: SearchBounds,
) -> Result<SearchResult, SearchError> {
    let decl = ast.event(event).ok_or_else(|| SearchError::UnknownEvent(event.to_string()))?;
    let mut search = Search {
        ast,
        event: &decl.name.name,
        bounds,
        entry: "",
        entry_params: Vec::new(),
        out: SearchResult::default(),
    };
    for f in ast.functions.iter().filter(|f| f.is_entry()) {
        search.entry = &f.name.name;
        search.entry_params = f.params.iter().map(|p| (p.name.name.clone(), p.ty)).collect();
        search.explore(vec![Cont::Stmts(&f.body.stmts)], Vec::new(), false);
    }
    Ok(search.out)
}
