//! Source-level detection: enumerate the paths reaching each event,
//! execute them symbolically and compare the resulting constraints.

mod exec;
mod paths;
mod smt;
mod solver;
mod sym;

use std::collections::BTreeSet;

use serde::Serialize;

pub use exec::{symbolic_exec, ConstraintSet, StorageWrite};
pub use paths::{search_paths, SearchBounds, SearchError, SearchResult, SourcePath, Step};
pub use smt::export_smtlib;
pub use solver::{solve, solve_with, Limits, SatResult, Verdict};
pub use sym::{sort_max, Atom, AtomKind, Concrete, Model, SymValue};

use crate::minisol::{summarize, BinOp, ContractAst};
use crate::taint::{Confidence, FindingKind};

/// Source symbols that flow into the emitted values.
fn value_sources(cs: &ConstraintSet) -> BTreeSet<&Atom> {
    cs.values.iter().flat_map(|v| v.atoms()).filter(|a| a.kind.is_source()).collect()
}

fn conjunct_sources(cs: &ConstraintSet) -> BTreeSet<&Atom> {
    cs.conjuncts.iter().flat_map(|v| v.atoms()).filter(|a| a.kind.is_source()).collect()
}

/// True iff some emitted value depends on a transaction-controlled symbol
/// that no conjunct mentions, and no storage write on the path depends on a
/// constrained transaction-controlled symbol (the path never reconciles the
/// event with contract state).
pub fn check_logging_inconsistency(cs: &ConstraintSet) -> bool {
    let constrained = conjunct_sources(cs);
    if value_sources(cs).iter().all(|a| constrained.contains(a)) {
        return false;
    }
    !cs.writes.iter().any(|w| {
        w.key.iter().chain([&w.value]).flat_map(|v| v.atoms()).any(|a| constrained.contains(a))
    })
}

/// Copy of `cs` with every symbol suffixed by `@tag`.
pub fn rename_apart(cs: &ConstraintSet, tag: usize) -> ConstraintSet {
    let f = |n: &str| format!("{n}@{tag}");
    let mut out = cs.clone();
    out.values = cs.values.iter().map(|v| v.rename(&f)).collect();
    out.conjuncts = cs.conjuncts.iter().map(|v| v.rename(&f)).collect();
    out.writes = cs
        .writes
        .iter()
        .map(|w| StorageWrite {
            var: w.var.clone(),
            key: w.key.as_ref().map(|k| k.rename(&f)),
            value: w.value.rename(&f),
        })
        .collect();
    out
}

/// The conjunction asked of the solver for a pair of paths: both paths'
/// constraints, renamed apart, plus (when `coupled`) equality of every
/// emitted parameter.
pub fn pair_query(cs1: &ConstraintSet, cs2: &ConstraintSet, coupled: bool) -> Vec<SymValue> {
    let (a, b) = (rename_apart(cs1, 1), rename_apart(cs2, 2));
    let mut q = a.conjuncts;
    q.extend(b.conjuncts);
    if coupled {
        q.extend(a.values.into_iter().zip(b.values).map(|(x, y)| SymValue::bin(BinOp::Eq, x, y)));
    }
    q
}

/// Can one observable event instance come out of both paths?
pub fn check_counterfeit_pair(cs1: &ConstraintSet, cs2: &ConstraintSet) -> SatResult {
    check_pair(cs1, cs2, true)
}

/// `coupled = false` drops the parameter equalities and only asks whether
/// both paths are feasible, a diagnostic mode.
pub fn check_pair(cs1: &ConstraintSet, cs2: &ConstraintSet, coupled: bool) -> SatResult {
    for cs in [cs1, cs2] {
        if let Some(why) = &cs.unsupported {
            return SatResult::unknown(format!("path {}: {why}", cs.path));
        }
        if cs.incomplete {
            return SatResult::unknown(format!("path {} is incomplete", cs.path));
        }
    }
    if cs1.values.len() != cs2.values.len() {
        return SatResult::unknown("paths emit different arities");
    }
    solve(&pair_query(cs1, cs2, coupled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceCondition {
    /// A parameter rests on an unconstrained transaction input and the path
    /// writes no related storage.
    UnconstrainedParameter,
    /// Two paths admit the same parameter values.
    SatisfiableIntersection,
    /// The solver could not decide some pair.
    Undecided,
    /// Literal constraint-or-storage rule over the function summary (diagnostic).
    Eq2Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathRef {
    pub id: usize,
    pub entry: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairWitness {
    pub paths: (usize, usize),
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceFinding {
    pub kind: FindingKind,
    pub contract: String,
    /// Event signature, e.g. `Deposit(address,uint256,address,uint256)`.
    pub event: String,
    pub conditions: Vec<SourceCondition>,
    pub confidence: Confidence,
    pub paths: Vec<PathRef>,
    /// Pairs whose intersection is satisfiable (or undecided).
    pub pairs: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<PairWitness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairQuery {
    pub event: String,
    pub paths: (usize, usize),
    pub verdict: Verdict,
    pub smtlib: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventPaths {
    pub event: String,
    pub paths: Vec<SourcePath>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceReport {
    pub contract: String,
    pub findings: Vec<SourceFinding>,
    pub events: Vec<EventPaths>,
    #[serde(skip)]
    pub queries: Vec<PairQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceOptions {
    pub bounds: SearchBounds,
    pub coupled: bool,
    pub strict_eq2: bool,
}

impl Default for SourceOptions {
    fn default() -> Self {
        SourceOptions { bounds: SearchBounds::default(), coupled: true, strict_eq2: false }
    }
}

/// Run both source-level checks on every declared event, in name order.
pub fn detect(ast: &ContractAst, opts: SourceOptions) -> SourceReport {
    let mut events: Vec<_> = ast.events.iter().collect();
    events.sort_by(|a, b| a.name.name.cmp(&b.name.name));
    let summary = opts.strict_eq2.then(|| summarize(ast));
    let mut report = SourceReport {
        contract: ast.name.name.clone(),
        findings: Vec::new(),
        events: Vec::new(),
        queries: Vec::new(),
    };
    for decl in events {
        let name = &decl.name.name;
        let sig = decl.signature();
        let found = search_paths(name, ast, opts.bounds).expect("declared event");
        let sets: Vec<ConstraintSet> = found.paths.iter().map(symbolic_exec).collect();
        let pref = |cs: &ConstraintSet| PathRef { id: cs.path, entry: cs.entry.clone() };

        let il: Vec<PathRef> = sets.iter().filter(|cs| check_logging_inconsistency(cs)).map(pref).collect();
        let mut il_conditions = Vec::new();
        if !il.is_empty() {
            il_conditions.push(SourceCondition::UnconstrainedParameter);
        }
        let mut eq2_paths = Vec::new();
        if let Some(summary) = &summary {
            for f in ast.functions.iter().filter(|f| f.is_entry()) {
                let s = &summary.functions[&f.name.name];
                let literal = s.constraints.is_empty() || (s.s_read.is_empty() && s.s_write.is_empty());
                if literal && s.emits.contains(name) {
                    eq2_paths.extend(sets.iter().filter(|cs| cs.entry == f.name.name).map(pref));
                }
            }
            if !eq2_paths.is_empty() {
                il_conditions.push(SourceCondition::Eq2Literal);
            }
        }
        if !il_conditions.is_empty() {
            let confirmed = !il.is_empty();
            let mut paths = il;
            for p in eq2_paths {
                if !paths.contains(&p) {
                    paths.push(p);
                }
            }
            paths.sort_by_key(|p| p.id);
            report.findings.push(SourceFinding {
                kind: FindingKind::InconsistentLogging,
                contract: report.contract.clone(),
                event: sig.clone(),
                conditions: il_conditions,
                confidence: if confirmed { Confidence::Confirmed } else { Confidence::Potential },
                paths,
                pairs: Vec::new(),
                witness: None,
            });
        }

        let mut sat_pairs = Vec::new();
        let mut unknown_pairs = Vec::new();
        let mut witness = None;
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let r = check_pair(&sets[i], &sets[j], opts.coupled);
                report.queries.push(PairQuery {
                    event: sig.clone(),
                    paths: (sets[i].path, sets[j].path),
                    verdict: r.verdict,
                    smtlib: export_smtlib(&pair_query(&sets[i], &sets[j], opts.coupled)),
                });
                match r.verdict {
                    Verdict::Sat => {
                        if witness.is_none() {
                            witness = r.model.map(|model| PairWitness { paths: (sets[i].path, sets[j].path), model });
                        }
                        sat_pairs.push((sets[i].path, sets[j].path));
                    }
                    Verdict::Unknown => unknown_pairs.push((sets[i].path, sets[j].path)),
                    Verdict::Unsat => {}
                }
            }
        }
        if !sat_pairs.is_empty() || !unknown_pairs.is_empty() {
            let confirmed = !sat_pairs.is_empty();
            let pairs = if confirmed { sat_pairs } else { unknown_pairs };
            let involved: BTreeSet<usize> = pairs.iter().flat_map(|(a, b)| [*a, *b]).collect();
            report.findings.push(SourceFinding {
                kind: FindingKind::EventCounterfeiting,
                contract: report.contract.clone(),
                event: sig.clone(),
                conditions: vec![if confirmed {
                    SourceCondition::SatisfiableIntersection
                } else {
                    SourceCondition::Undecided
                }],
                // Undecidable pairs are still flagged, at lower confidence.
                confidence: if confirmed { Confidence::Confirmed } else { Confidence::Potential },
                paths: sets.iter().filter(|cs| involved.contains(&cs.path)).map(pref).collect(),
                pairs,
                witness,
            });
        }
        report.events.push(EventPaths { event: sig, paths: found.paths, truncated: found.truncated });
    }
    report
}
