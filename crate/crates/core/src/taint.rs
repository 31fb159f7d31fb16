//! Backward slicing and taint analysis over the lifted ICFG, and the
//! bytecode-level detectors built on them.

use std::collections::{BTreeMap, BTreeSet};

use ruint::aliases::U256;
use serde::Serialize;

use crate::lifter::{BlockId, FunctionKind, Icfg, Pred, SigDb, TacInstruction, TacOp, VarRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bounds {
    /// Times a back edge may be taken on one path.
    pub unroll: usize,
    pub max_paths: usize,
    /// Maximum blocks per path.
    pub max_depth: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { unroll: 1, max_paths: 256, max_depth: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogOp {
    pub function: usize,
    pub block: BlockId,
    /// Index of the LOG within the block's instructions.
    pub index: usize,
    pub src_offset: usize,
    #[serde(serialize_with = "ser_topic")]
    pub topic0: Option<[u8; 32]>,
    pub arity: u8,
    /// Topics after topic0, then the data words.
    pub data_vars: Vec<VarRef>,
}

impl LogOp {
    pub fn dynamic_signature(&self) -> bool {
        self.arity > 0 && self.topic0.is_none()
    }
}

fn ser_topic<S: serde::Serializer>(t: &Option<[u8; 32]>, s: S) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => s.serialize_str(&format!("0x{}", hex::encode(t))),
        None => s.serialize_none(),
    }
}

/// Constant values of `Def` variables.
pub fn constants(icfg: &Icfg) -> BTreeMap<VarRef, U256> {
    let mut out = BTreeMap::new();
    for b in &icfg.blocks {
        for i in &b.instrs {
            if let (Some(c), Some(d)) = (i.constant, i.defs.first()) {
                out.insert(*d, c);
            }
        }
    }
    out
}

pub fn extract_log_ops(icfg: &Icfg) -> Vec<LogOp> {
    let consts = constants(icfg);
    let mut out = Vec::new();
    for b in icfg.blocks.iter().filter(|b| !b.excluded) {
        for (index, i) in b.instrs.iter().enumerate() {
            let TacOp::Log { topics, data } = &i.op else { continue };
            let topic0 = if *topics > 0 {
                consts.get(&i.uses[2]).map(|c| c.to_be_bytes::<32>())
            } else {
                None
            };
            let mut data_vars: Vec<VarRef> = i.uses.iter().skip(3).copied().collect();
            data_vars.extend(data.iter().copied());
            out.push(LogOp {
                function: b.function,
                block: b.id,
                index,
                src_offset: i.src_offset,
                topic0,
                arity: *topics,
                data_vars,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct PathItem {
    pub block: BlockId,
    pub instr: TacInstruction,
}

/// Reverse execution path from a log site to a function entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSlice {
    pub logop: LogOp,
    /// `path[0]` is the LOG, the last item is the entry marker.
    pub path: Vec<PathItem>,
    /// Blocks visited, log block first.
    pub blocks: Vec<BlockId>,
    pub crossed_functions: Vec<usize>,
    pub entry_function: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BudgetExceeded {
    MaxPaths,
    MaxDepth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceResult {
    pub paths: Vec<PathSlice>,
    /// Set when enumeration stopped early; the path set is partial.
    pub exceeded: Option<BudgetExceeded>,
}

/// Variables read by an instruction, including LOG data words.
pub fn reads(i: &TacInstruction) -> impl Iterator<Item = VarRef> + '_ {
    let data: &[VarRef] = match &i.op {
        TacOp::Log { data, .. } => data,
        _ => &[],
    };
    i.uses.iter().chain(data.iter()).copied()
}

struct Walker<'a> {
    icfg: &'a Icfg,
    logop: &'a LogOp,
    bounds: Bounds,
    out: Vec<PathSlice>,
    exceeded: Option<BudgetExceeded>,
}

impl Walker<'_> {
    fn live_slots(items: &[PathItem], b: BlockId) -> BTreeSet<u16> {
        items
            .iter()
            .flat_map(|it| reads(&it.instr))
            .filter_map(|v| match v {
                VarRef::Slot(blk, d) if blk == b => Some(d),
                _ => None,
            })
            .collect()
    }

    fn push_block(&self, items: &mut Vec<PathItem>, b: BlockId, upto: usize) {
        let blk = &self.icfg.blocks[b];
        for i in blk.instrs[..upto].iter().rev() {
            if i.op != TacOp::Phi {
                items.push(PathItem { block: b, instr: i.clone() });
            }
        }
    }

    fn push_copies(&self, items: &mut Vec<PathItem>, to: BlockId, from: BlockId) {
        let src = &self.icfg.blocks[from];
        for d in Self::live_slots(items, to) {
            items.push(PathItem {
                block: to,
                instr: TacInstruction {
                    op: TacOp::Copy,
                    defs: vec![VarRef::Slot(to, d)],
                    uses: vec![src.exit_value(d as usize)],
                    constant: None,
                    src_offset: self.icfg.blocks[to].start,
                },
            });
        }
    }

    fn emit(&mut self, items: &[PathItem], blocks: &[BlockId]) {
        if self.out.len() >= self.bounds.max_paths {
            self.exceeded = Some(BudgetExceeded::MaxPaths);
            return;
        }
        let entry = *blocks.last().expect("non-empty");
        let mut path = items.to_vec();
        let live: Vec<VarRef> = Self::live_slots(items, entry).into_iter().map(|d| VarRef::Slot(entry, d)).collect();
        path.push(PathItem {
            block: entry,
            instr: TacInstruction {
                op: TacOp::Entry,
                defs: live,
                uses: vec![],
                constant: None,
                src_offset: self.icfg.blocks[entry].start,
            },
        });
        let mut crossed = Vec::new();
        for b in blocks {
            let f = self.icfg.blocks[*b].function;
            if !crossed.contains(&f) {
                crossed.push(f);
            }
        }
        self.out.push(PathSlice {
            logop: self.logop.clone(),
            path,
            blocks: blocks.to_vec(),
            crossed_functions: crossed,
            entry_function: self.icfg.blocks[entry].function,
        });
    }

    fn step(
        &mut self,
        from: BlockId,
        pred: BlockId,
        stack: &mut Vec<usize>,
        items: &mut Vec<PathItem>,
        blocks: &mut Vec<BlockId>,
        back: &mut BTreeMap<(BlockId, BlockId), usize>,
    ) {
        let mark = items.len();
        self.push_copies(items, from, pred);
        let n = self.icfg.blocks[pred].instrs.len();
        self.push_block(items, pred, n);
        blocks.push(pred);
        self.walk(stack, items, blocks, back);
        blocks.pop();
        items.truncate(mark);
    }

    fn walk(
        &mut self,
        stack: &mut Vec<usize>,
        items: &mut Vec<PathItem>,
        blocks: &mut Vec<BlockId>,
        back: &mut BTreeMap<(BlockId, BlockId), usize>,
    ) {
        if self.exceeded == Some(BudgetExceeded::MaxPaths) {
            return;
        }
        if blocks.len() > self.bounds.max_depth {
            self.exceeded.get_or_insert(BudgetExceeded::MaxDepth);
            return;
        }
        let b = *blocks.last().expect("non-empty");
        let icfg = self.icfg;
        let f = icfg.function(b);
        if f.entry == b {
            if let Some(&e) = stack.last() {
                let site = icfg.call_edges[e].site;
                stack.pop();
                self.step(b, site, stack, items, blocks, back);
                stack.push(e);
            } else {
                let sites: Vec<BlockId> = icfg
                    .preds(b)
                    .iter()
                    .filter_map(|p| match p {
                        Pred::Call { from, .. } => Some(*from),
                        _ => None,
                    })
                    .collect();
                if f.is_root() || sites.is_empty() {
                    self.emit(items, blocks);
                }
                if f.kind == FunctionKind::Internal {
                    for s in sites {
                        self.step(b, s, stack, items, blocks, back);
                    }
                }
            }
        }
        for p in icfg.preds(b).to_vec() {
            match p {
                Pred::Intra(p) => {
                    if icfg.blocks[p].excluded {
                        continue;
                    }
                    let is_back = icfg.back_edges.contains(&(p, b));
                    if is_back {
                        let c = back.entry((p, b)).or_insert(0);
                        if *c >= self.bounds.unroll {
                            continue;
                        }
                        *c += 1;
                    }
                    self.step(b, p, stack, items, blocks, back);
                    if is_back {
                        *back.get_mut(&(p, b)).expect("counted") -= 1;
                    }
                }
                Pred::Return { from, edge } => {
                    stack.push(edge);
                    self.step(b, from, stack, items, blocks, back);
                    stack.pop();
                }
                Pred::Call { .. } => {}
            }
        }
    }
}

/// Enumerates reverse paths from the log site to root function entries.
/// Calls are matched with returns; a walk that starts inside an internal
/// function continues through all of its call sites.
pub fn backward_slice(logop: &LogOp, icfg: &Icfg, bounds: Bounds) -> SliceResult {
    let mut w = Walker { icfg, logop, bounds, out: Vec::new(), exceeded: None };
    let mut items = Vec::new();
    w.push_block(&mut items, logop.block, logop.index + 1);
    let mut blocks = vec![logop.block];
    w.walk(&mut Vec::new(), &mut items, &mut blocks, &mut BTreeMap::new());
    SliceResult { paths: w.out, exceeded: w.exceeded }
}

/// Where tainted data enters a path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SourceMarker {
    pub function: usize,
    pub calldata_slots: BTreeSet<usize>,
    /// A CALLDATALOAD with a non-constant offset or a CALLDATACOPY.
    pub calldata_region: bool,
    pub caller: bool,
    pub callvalue: bool,
}

impl SourceMarker {
    fn any(&self) -> bool {
        !self.calldata_slots.is_empty() || self.calldata_region || self.caller || self.callvalue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Source {
    Calldata(usize),
    CalldataRegion,
    Caller,
    CallValue,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Calldata(o) => write!(f, "calldata[{o:#x}]"),
            Source::CalldataRegion => write!(f, "calldata[*]"),
            Source::Caller => write!(f, "caller"),
            Source::CallValue => write!(f, "callvalue"),
        }
    }
}

fn source_of(i: &TacInstruction, consts: &BTreeMap<VarRef, U256>) -> Option<Source> {
    match i.op {
        TacOp::Caller => Some(Source::Caller),
        TacOp::CallValue => Some(Source::CallValue),
        TacOp::CallDataCopy => Some(Source::CalldataRegion),
        TacOp::CallDataLoad => Some(match consts.get(&i.uses[0]) {
            Some(c) if *c < U256::from(usize::MAX) => Source::Calldata(c.to::<usize>()),
            _ => Source::CalldataRegion,
        }),
        _ => None,
    }
}

/// Backward taint propagation state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaintState {
    pub tainted: BTreeSet<VarRef>,
    pub sources: BTreeSet<Source>,
    /// Path indices whose definitions were tainted.
    pub hit: BTreeSet<usize>,
}

impl TaintState {
    pub fn new(seed: impl IntoIterator<Item = VarRef>) -> Self {
        Self { tainted: seed.into_iter().collect(), ..Self::default() }
    }

    pub fn step(&mut self, idx: usize, i: &TacInstruction, consts: &BTreeMap<VarRef, U256>) {
        if !i.defs.iter().any(|d| self.tainted.contains(d)) {
            return;
        }
        self.hit.insert(idx);
        self.tainted.extend(reads(i));
        if let Some(s) = source_of(i, consts) {
            self.sources.insert(s);
        }
    }
}

/// Propagates taint from `vars` over the items after `from` (that is,
/// earlier in execution order).
pub fn trace(path: &[PathItem], from: usize, vars: impl IntoIterator<Item = VarRef>, consts: &BTreeMap<VarRef, U256>) -> TaintState {
    let mut st = TaintState::new(vars);
    for (k, it) in path.iter().enumerate().skip(from + 1) {
        st.step(k, &it.instr, consts);
    }
    st
}

/// Walks the reverse path from the log and returns the entry marker when
/// entry-point data reaches the logged variables.
pub fn taint_analysis(
    path: &PathSlice,
    seed: &BTreeSet<VarRef>,
    consts: &BTreeMap<VarRef, U256>,
) -> Option<SourceMarker> {
    let st = trace(&path.path, 0, seed.iter().copied(), consts);
    let mut m = SourceMarker { function: path.entry_function, ..SourceMarker::default() };
    for s in &st.sources {
        match s {
            Source::Calldata(o) => {
                m.calldata_slots.insert(*o);
            }
            Source::CalldataRegion => m.calldata_region = true,
            Source::Caller => m.caller = true,
            Source::CallValue => m.callvalue = true,
        }
    }
    m.any().then_some(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    InconsistentLogging,
    EventCounterfeiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    NoSstore,
    NoConstraintExternalCall,
    MultiTaintedPaths,
    /// Literal reading of the constraint-or-storage rule (diagnostic).
    Eq2Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Confidence {
    Potential,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PathWitness {
    pub condition: Condition,
    pub entry_function: String,
    pub log_offset: usize,
    /// Start offsets of the visited blocks, log block first.
    pub blocks: Vec<usize>,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BytecodeFinding {
    pub kind: FindingKind,
    pub contract: String,
    #[serde(serialize_with = "ser_topic")]
    pub topic0: Option<[u8; 32]>,
    pub event: Option<String>,
    pub conditions: Vec<Condition>,
    pub confidence: Confidence,
    /// Root functions whose paths reach the event.
    pub entries: Vec<String>,
    pub witnesses: Vec<PathWitness>,
    /// Some path enumeration for this event hit its budget.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IncompleteLog {
    pub src_offset: usize,
    pub function: String,
    pub reason: BudgetExceeded,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BytecodeReport {
    pub findings: Vec<BytecodeFinding>,
    pub incomplete: Vec<IncompleteLog>,
    pub log_ops: usize,
    pub dynamic_signatures: Vec<usize>,
    pub unresolved_jumps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectOptions {
    pub bounds: Bounds,
    pub strict_eq2: bool,
}

fn is_sstore_counted(path: &[PathItem], idx: usize, log_sources: &BTreeSet<Source>, consts: &BTreeMap<VarRef, U256>) -> bool {
    let st = trace(path, idx, path[idx].instr.uses.iter().copied(), consts);
    if st.sources.is_disjoint(log_sources) {
        return false;
    }
    path.iter().enumerate().any(|(k, it)| {
        it.instr.op == TacOp::Jumpi && {
            let cond = trace(path, k, [it.instr.uses[1]], consts);
            !cond.sources.is_disjoint(&st.sources)
        }
    })
}

/// Untainted path with an external call that is not followed by a JUMPI
/// depending on the call or on entry data.
fn unchecked_call(path: &[PathItem], consts: &BTreeMap<VarRef, U256>) -> bool {
    let Some(call_idx) = path.iter().position(|it| it.instr.op.is_external_call()) else {
        return false;
    };
    // the latest call in execution order is the first one in the reverse path
    !path[..call_idx].iter().enumerate().any(|(k, it)| {
        it.instr.op == TacOp::Jumpi && {
            let cond = trace(path, k, [it.instr.uses[1]], consts);
            !cond.sources.is_empty() || cond.hit.iter().any(|h| path[*h].instr.op.is_external_call())
        }
    })
}

fn eq2_literal(path: &[PathItem]) -> bool {
    let has_jumpi = path.iter().any(|it| it.instr.op == TacOp::Jumpi);
    let has_storage = path.iter().any(|it| matches!(it.instr.op, TacOp::SLoad | TacOp::SStore));
    !has_jumpi || !has_storage
}

fn witness(icfg: &Icfg, p: &PathSlice, condition: Condition, sources: &BTreeSet<Source>) -> PathWitness {
    PathWitness {
        condition,
        entry_function: icfg.functions[p.entry_function].name.clone(),
        log_offset: p.logop.src_offset,
        blocks: p.blocks.iter().map(|b| icfg.blocks[*b].start).collect(),
        sources: sources.iter().map(|s| s.to_string()).collect(),
    }
}

/// Runs the bytecode detectors over every log operation.
pub fn detect(icfg: &Icfg, sigdb: &SigDb, opts: DetectOptions) -> BytecodeReport {
    let consts = constants(icfg);
    let logops = extract_log_ops(icfg);
    let mut report = BytecodeReport {
        log_ops: logops.len(),
        unresolved_jumps: icfg.unresolved.len(),
        ..BytecodeReport::default()
    };
    // (kind, topic0) -> accumulated finding
    let mut acc: BTreeMap<(FindingKind, Option<[u8; 32]>), BytecodeFinding> = BTreeMap::new();
    let mut multi: BTreeMap<[u8; 32], (BTreeSet<usize>, Vec<PathWitness>, bool)> = BTreeMap::new();
    let mut incomplete_topics: BTreeSet<Option<[u8; 32]>> = BTreeSet::new();

    for op in &logops {
        if op.dynamic_signature() {
            report.dynamic_signatures.push(op.src_offset);
        }
        let slice = backward_slice(op, icfg, opts.bounds);
        if let Some(reason) = slice.exceeded {
            report.incomplete.push(IncompleteLog {
                src_offset: op.src_offset,
                function: icfg.functions[op.function].name.clone(),
                reason,
            });
            incomplete_topics.insert(op.topic0);
        }
        let seed: BTreeSet<VarRef> = op.data_vars.iter().copied().collect();
        for p in &slice.paths {
            let st = trace(&p.path, 0, seed.iter().copied(), &consts);
            let mut add = |kind: FindingKind, cond: Condition, sources: &BTreeSet<Source>| {
                let f = acc.entry((kind, op.topic0)).or_insert_with(|| BytecodeFinding {
                    kind,
                    contract: icfg.origin.clone(),
                    topic0: op.topic0,
                    event: op.topic0.and_then(|t| sigdb.event(&t).map(str::to_string)),
                    conditions: Vec::new(),
                    confidence: Confidence::Potential,
                    entries: Vec::new(),
                    witnesses: Vec::new(),
                    incomplete: false,
                });
                if !f.conditions.contains(&cond) {
                    f.conditions.push(cond);
                }
                let name = icfg.functions[p.entry_function].name.clone();
                if !f.entries.contains(&name) {
                    f.entries.push(name);
                }
                f.witnesses.push(witness(icfg, p, cond, sources));
            };
            if taint_analysis(p, &seed, &consts).is_some() {
                let counted = p.path.iter().enumerate().any(|(k, it)| {
                    it.instr.op == TacOp::SStore && is_sstore_counted(&p.path, k, &st.sources, &consts)
                });
                if !counted {
                    add(FindingKind::InconsistentLogging, Condition::NoSstore, &st.sources);
                }
                let entry = &icfg.functions[p.entry_function];
                if let (Some(t), true) = (op.topic0, entry.is_root()) {
                    let m = multi.entry(t).or_default();
                    m.0.insert(entry.id);
                    m.1.push(witness(icfg, p, Condition::MultiTaintedPaths, &st.sources));
                    m.2 |= slice.exceeded.is_some();
                }
            } else if unchecked_call(&p.path, &consts) {
                add(FindingKind::EventCounterfeiting, Condition::NoConstraintExternalCall, &st.sources);
            }
            if opts.strict_eq2 && eq2_literal(&p.path) {
                add(FindingKind::InconsistentLogging, Condition::Eq2Literal, &st.sources);
            }
        }
    }

    for (t, (entries, witnesses, _)) in multi {
        if entries.len() < 2 {
            continue;
        }
        let f = acc.entry((FindingKind::EventCounterfeiting, Some(t))).or_insert_with(|| BytecodeFinding {
            kind: FindingKind::EventCounterfeiting,
            contract: icfg.origin.clone(),
            topic0: Some(t),
            event: sigdb.event(&t).map(str::to_string),
            conditions: Vec::new(),
            confidence: Confidence::Potential,
            entries: Vec::new(),
            witnesses: Vec::new(),
            incomplete: false,
        });
        f.conditions.push(Condition::MultiTaintedPaths);
        for e in entries {
            let name = icfg.functions[e].name.clone();
            if !f.entries.contains(&name) {
                f.entries.push(name);
            }
        }
        f.witnesses.extend(witnesses);
    }

    let mut findings: Vec<BytecodeFinding> = acc.into_values().collect();
    for f in &mut findings {
        f.conditions.sort();
        f.entries.sort();
        f.witnesses.sort();
        f.witnesses.dedup();
        f.incomplete = incomplete_topics.contains(&f.topic0);
    }
    findings.sort_by(|a, b| {
        (&a.contract, a.topic0, a.witnesses.first().map(|w| w.log_offset), a.kind)
            .cmp(&(&b.contract, b.topic0, b.witnesses.first().map(|w| w.log_offset), b.kind))
    });
    report.findings = findings;
    report
}
