//! Control-flow recovery and lifting to an inter-procedural CFG.

pub mod blocks;
pub mod sigdb;
pub mod tac;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use ruint::aliases::U256;
use serde::Serialize;

use crate::disasm::{disassemble, strip_metadata, Bytecode, Opcode};
pub use blocks::{build_blocks, resolve_jumps, JumpResolution, RawBlock, ResolvedCfg, Terminator};
pub use sigdb::SigDb;
pub use tac::{lift_block, BlockId, BlockTemplate, TVar, TacInstruction, TacOp, VarRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FunctionKind {
    Public,
    Fallback,
    Internal,
}

/// A function entry found in the dispatcher (public or fallback).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionEntry {
    pub kind: FunctionKind,
    pub selector: Option<[u8; 4]>,
    pub name: String,
    /// Raw block id of the entry.
    pub entry: usize,
}

/// Dispatcher recovery result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recovered {
    pub entries: Vec<FunctionEntry>,
    /// Raw block ids that belong to the dispatcher itself.
    pub dispatcher: Vec<usize>,
}

fn code_ops(b: &RawBlock) -> Vec<&crate::disasm::Instruction> {
    b.instrs.iter().filter(|i| i.opcode != Opcode::JUMPDEST).collect()
}

/// Matches `PUSH4 sel [DUPn] EQ PUSHn dest JUMPI` at the end of a block.
fn selector_compare(b: &RawBlock) -> Option<([u8; 4], usize)> {
    let ops = code_ops(b);
    let n = ops.len();
    if n < 4 || ops[n - 1].opcode != Opcode::JUMPI || !ops[n - 2].opcode.is_push() {
        return None;
    }
    if ops[n - 3].opcode != Opcode::EQ {
        return None;
    }
    let sel_at = if ops[n - 4].opcode.dup_depth().is_some() { n.checked_sub(5)? } else { n - 4 };
    let push = ops[sel_at];
    if push.opcode != Opcode::PUSH4 {
        return None;
    }
    let imm = push.immediate.as_ref()?;
    let sel: [u8; 4] = imm[..4].try_into().ok()?;
    let dest = crate::hash::word_from_bytes(ops[n - 2].immediate.as_ref()?);
    (dest < U256::from(usize::MAX)).then(|| (sel, dest.to::<usize>()))
}

/// Finds public functions from the selector dispatcher and the fallback.
pub fn recover_functions(cfg: &ResolvedCfg, sigdb: &SigDb) -> Recovered {
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    let mut last_compare = None;
    for b in cfg.blocks.iter().filter(|b| b.reachable) {
        let Some((sel, dest)) = selector_compare(b) else { continue };
        let Some(target) = cfg.jumpdest_block(dest) else { continue };
        last_compare = Some(b.id);
        if !seen.insert(sel) {
            continue;
        }
        let name = sigdb
            .function(&sel)
            .map(|s| s.split('(').next().unwrap_or(s).to_string())
            .unwrap_or_else(|| format!("func_{}", hex::encode(sel)));
        entries.push(FunctionEntry {
            kind: FunctionKind::Public,
            selector: Some(sel),
            name,
            entry: target,
        });
    }
    let fallback_entry = match last_compare {
        Some(id) => cfg.blocks[id].fallthrough,
        None => (!cfg.blocks.is_empty()).then_some(0),
    };
    if let Some(fb) = fallback_entry {
        entries.push(FunctionEntry {
            kind: FunctionKind::Fallback,
            selector: None,
            name: "fallback".into(),
            entry: fb,
        });
    }
    let mut dispatcher = Vec::new();
    if last_compare.is_some() {
        let stops: BTreeSet<usize> = entries.iter().map(|e| e.entry).collect();
        let mut seen = BTreeSet::from([0usize]);
        let mut queue = VecDeque::from([0usize]);
        while let Some(b) = queue.pop_front() {
            if stops.contains(&b) {
                continue;
            }
            dispatcher.push(b);
            for &s in &cfg.blocks[b].successors {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        dispatcher.sort_unstable();
    }
    Recovered { entries, dispatcher }
}

/// Lifts every raw block to a position-independent template.
pub fn lift_to_tac(cfg: &ResolvedCfg) -> Vec<BlockTemplate> {
    cfg.blocks.iter().map(lift_block).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionUnit {
    pub id: usize,
    pub kind: FunctionKind,
    pub selector: Option<[u8; 4]>,
    pub name: String,
    pub entry: BlockId,
    pub entry_offset: usize,
    pub blocks: Vec<BlockId>,
    /// Constant CALLDATALOAD offsets read in the body.
    pub params: BTreeSet<usize>,
    /// Blocks that return to a caller.
    pub exits: Vec<BlockId>,
}

impl FunctionUnit {
    pub fn is_root(&self) -> bool {
        self.kind != FunctionKind::Internal
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TacBlock {
    pub id: BlockId,
    pub function: usize,
    pub raw: usize,
    pub start: usize,
    pub end: usize,
    pub instrs: Vec<TacInstruction>,
    pub successors: Vec<BlockId>,
    pub terminator: Terminator,
    pub exit: Vec<VarRef>,
    pub pops_below: u16,
    pub excluded: bool,
}

impl TacBlock {
    /// Variable holding stack slot `depth` when leaving this block.
    pub fn exit_value(&self, depth: usize) -> VarRef {
        if depth < self.exit.len() {
            self.exit[self.exit.len() - 1 - depth]
        } else {
            VarRef::Slot(self.id, (depth - self.exit.len()) as u16 + self.pops_below)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CallEdge {
    pub site: BlockId,
    pub callee: usize,
    pub callee_entry: BlockId,
    pub return_block: BlockId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    LiftFailure,
    StackUnderflow,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Exclusion {
    pub offset: usize,
    pub reason: ExclusionReason,
    /// Function the excluded clone belonged to, if any.
    pub function: Option<usize>,
}

/// How control reaches a block, seen from the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pred {
    Intra(BlockId),
    /// Callee exit returning into this block via call edge `edge`.
    Return { from: BlockId, edge: usize },
    /// Call site entering this function entry via call edge `edge`.
    Call { from: BlockId, edge: usize },
}

impl Pred {
    pub fn block(&self) -> BlockId {
        match *self {
            Pred::Intra(b) | Pred::Return { from: b, .. } | Pred::Call { from: b, .. } => b,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Icfg {
    pub origin: String,
    pub functions: Vec<FunctionUnit>,
    pub blocks: Vec<TacBlock>,
    pub intra_edges: Vec<(BlockId, BlockId)>,
    pub call_edges: Vec<CallEdge>,
    pub back_edges: BTreeSet<(BlockId, BlockId)>,
    /// Offsets of jumps whose targets stayed unknown.
    pub unresolved: Vec<usize>,
    pub excluded: Vec<Exclusion>,
    /// Start offsets of dispatcher blocks.
    pub dispatcher: Vec<usize>,
    #[serde(skip)]
    preds: Vec<Vec<Pred>>,
}

impl Icfg {
    pub fn preds(&self, b: BlockId) -> &[Pred] {
        &self.preds[b]
    }

    pub fn function(&self, b: BlockId) -> &FunctionUnit {
        &self.functions[self.blocks[b].function]
    }

    pub fn is_function_entry(&self, b: BlockId) -> bool {
        self.function(b).entry == b
    }

    pub fn defining_instr(&self, v: VarRef) -> Option<(BlockId, &TacInstruction)> {
        if let VarRef::Def(_) = v {
            for b in &self.blocks {
                for i in &b.instrs {
                    if i.defs.contains(&v) {
                        return Some((b.id, i));
                    }
                }
            }
        }
        None
    }

    /// Deterministic textual dump.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "icfg {}", self.origin);
        for f in &self.functions {
            let sel = f.selector.map(|s| format!(" selector=0x{}", hex::encode(s))).unwrap_or_default();
            let _ = writeln!(
                out,
                "function {} {} {}{} entry=b{} blocks=[{}] params=[{}] exits=[{}]",
                f.id,
                kind_name(f.kind),
                f.name,
                sel,
                f.entry,
                join_ids(&f.blocks),
                f.params.iter().map(|p| format!("{p:#x}")).collect::<Vec<_>>().join(","),
                join_ids(&f.exits),
            );
        }
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "block b{} fn={} {:#06x}..{:#06x} {}{} succ=[{}]",
                b.id,
                b.function,
                b.start,
                b.end,
                b.terminator.name(),
                if b.excluded { " EXCLUDED" } else { "" },
                join_ids(&b.successors),
            );
            for i in &b.instrs {
                let _ = writeln!(out, "  {:04x}: {}", i.src_offset, i);
            }
            if !b.exit.is_empty() {
                let exit: Vec<String> = b.exit.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "  exit [{}] pops={}", exit.join(", "), b.pops_below);
            }
        }
        for e in &self.call_edges {
            let _ = writeln!(
                out,
                "call b{} -> b{} (function {}) return b{}",
                e.site, e.callee_entry, e.callee, e.return_block
            );
        }
        for (a, b) in &self.back_edges {
            let _ = writeln!(out, "back-edge b{a} -> b{b}");
        }
        let _ = writeln!(
            out,
            "unresolved {} [{}]",
            self.unresolved.len(),
            self.unresolved.iter().map(|o| format!("{o:#x}")).collect::<Vec<_>>().join(",")
        );
        for x in &self.excluded {
            let f = x.function.map(|f| format!(" function {f}")).unwrap_or_default();
            let _ = writeln!(out, "excluded {:#06x} {:?}{}", x.offset, x.reason, f);
        }
        let _ = writeln!(
            out,
            "dispatcher [{}]",
            self.dispatcher.iter().map(|o| format!("{o:#x}")).collect::<Vec<_>>().join(",")
        );
        out
    }

    /// Graphviz rendering of the graph.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph icfg {\n  node [shape=box fontname=monospace];\n");
        for f in &self.functions {
            let _ = writeln!(out, "  subgraph cluster_{} {{\n    label=\"{}\";", f.id, f.name);
            for &b in &f.blocks {
                let blk = &self.blocks[b];
                let _ = writeln!(
                    out,
                    "    b{} [label=\"b{} {:#x}..{:#x}\\l{}\"];",
                    b,
                    b,
                    blk.start,
                    blk.end,
                    blk.terminator.name()
                );
            }
            out.push_str("  }\n");
        }
        for (a, b) in &self.intra_edges {
            let _ = writeln!(out, "  b{a} -> b{b};");
        }
        for e in &self.call_edges {
            let _ = writeln!(out, "  b{} -> b{} [style=dashed label=call];", e.site, e.callee_entry);
            for &x in &self.functions[e.callee].exits {
                let _ = writeln!(out, "  b{} -> b{} [style=dotted label=ret];", x, e.return_block);
            }
        }
        out.push_str("}\n");
        out
    }
}

fn kind_name(k: FunctionKind) -> &'static str {
    match k {
        FunctionKind::Public => "public",
        FunctionKind::Fallback => "fallback",
        FunctionKind::Internal => "internal",
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|b| format!("b{b}")).collect::<Vec<_>>().join(",")
}

/// A raw-level internal call: block `site` jumps to `target` having
/// pushed `ret` as its return address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct RawCall {
    site: usize,
    target: usize,
    ret: usize,
}

fn reachable_from(cfg: &ResolvedCfg, start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(b) = stack.pop() {
        for &s in &cfg.blocks[b].successors {
            if seen.insert(s) {
                stack.push(s);
            }
        }
    }
    seen
}

/// Whether the JUMP at the end of the block takes its target from the
/// stack rather than from a constant pushed in the block.
fn is_dynamic_jump(b: &RawBlock, t: &BlockTemplate) -> bool {
    if b.terminator != Terminator::Jump {
        return false;
    }
    match t.instrs.last() {
        Some(i) if i.op == TacOp::Jump => t.constant_of(i.uses[0]).is_none(),
        _ => false,
    }
}

fn detect_calls(cfg: &ResolvedCfg, templates: &[BlockTemplate]) -> Vec<RawCall> {
    let mut candidates = Vec::new();
    for b in cfg.blocks.iter().filter(|b| b.reachable && b.terminator == Terminator::Jump) {
        let t = &templates[b.id];
        let Some(jump) = t.instrs.last().filter(|i| i.op == TacOp::Jump) else { continue };
        if t.constant_of(jump.uses[0]).is_none() {
            continue;
        }
        let [target] = b.successors[..] else { continue };
        for depth in 0..t.exit.len() {
            let v = t.exit_local(depth).expect("in range");
            let Some(c) = t.constant_of(v) else { continue };
            if c >= U256::from(usize::MAX) {
                continue;
            }
            let Some(ret) = cfg.jumpdest_block(c.to::<usize>()) else { continue };
            if ret != target {
                candidates.push(RawCall { site: b.id, target, ret });
            }
        }
    }
    let mut calls = Vec::new();
    for c in candidates {
        let returns = reachable_from(cfg, c.target).into_iter().any(|y| {
            let yb = &cfg.blocks[y];
            is_dynamic_jump(yb, &templates[y]) && yb.successors.contains(&c.ret)
        });
        if returns && !calls.iter().any(|k: &RawCall| k.site == c.site) {
            calls.push(c);
        }
    }
    calls.sort();
    calls
}

struct Builder<'a> {
    cfg: &'a ResolvedCfg,
    templates: &'a [BlockTemplate],
    calls: BTreeMap<usize, RawCall>,
    return_addrs: BTreeSet<usize>,
}

impl Builder<'_> {
    fn is_return_block(&self, b: usize) -> bool {
        let blk = &self.cfg.blocks[b];
        is_dynamic_jump(blk, &self.templates[b])
            && !blk.successors.is_empty()
            && blk.successors.iter().all(|s| self.return_addrs.contains(s))
    }

    /// Successors followed inside a function body.
    fn body_succs(&self, b: usize) -> Vec<usize> {
        if let Some(c) = self.calls.get(&b) {
            return vec![c.ret];
        }
        if self.is_return_block(b) {
            return Vec::new();
        }
        self.cfg.blocks[b].successors.clone()
    }

    fn body(&self, entry: usize) -> Vec<usize> {
        let mut seen = BTreeSet::from([entry]);
        let mut queue = VecDeque::from([entry]);
        while let Some(b) = queue.pop_front() {
            for s in self.body_succs(b) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Relative stack heights within a function; returns the blocks whose
    /// incoming heights disagree and the net delta observed at returns.
    fn heights(
        &self,
        entry: usize,
        memo: &mut BTreeMap<usize, Option<i64>>,
        in_progress: &mut BTreeSet<usize>,
    ) -> (BTreeSet<usize>, Option<i64>) {
        let mut h: BTreeMap<usize, i64> = BTreeMap::from([(entry, 0)]);
        let mut bad = BTreeSet::new();
        let mut queue = VecDeque::from([entry]);
        let mut ret_delta: Option<Option<i64>> = None;
        in_progress.insert(entry);
        while let Some(b) = queue.pop_front() {
            let out = h[&b] + self.templates[b].delta();
            let mut next: Vec<(usize, Option<i64>)> = Vec::new();
            if let Some(c) = self.calls.get(&b) {
                let d = self.callee_delta(c.target, memo, in_progress);
                next.push((c.ret, d.map(|d| out + d)));
            } else if self.is_return_block(b) {
                ret_delta = Some(match ret_delta {
                    None => Some(out),
                    Some(Some(prev)) if prev == out => Some(out),
                    _ => None,
                });
            } else {
                next.extend(self.cfg.blocks[b].successors.iter().map(|&s| (s, Some(out))));
            }
            for (s, hs) in next {
                match (h.get(&s), hs) {
                    (None, Some(v)) => {
                        h.insert(s, v);
                        queue.push_back(s);
                    }
                    (None, None) => {
                        // unknown callee effect: trust the first arrival
                        h.insert(s, 0);
                        queue.push_back(s);
                    }
                    (Some(&old), Some(v)) if old != v => {
                        bad.insert(s);
                    }
                    _ => {}
                }
            }
        }
        in_progress.remove(&entry);
        (bad, ret_delta.flatten())
    }

    fn callee_delta(
        &self,
        entry: usize,
        memo: &mut BTreeMap<usize, Option<i64>>,
        in_progress: &mut BTreeSet<usize>,
    ) -> Option<i64> {
        if let Some(d) = memo.get(&entry) {
            return *d;
        }
        if in_progress.contains(&entry) {
            return None;
        }
        let (_, d) = self.heights(entry, memo, in_progress);
        memo.insert(entry, d);
        d
    }
}

/// Detects internal calls, assigns blocks to functions (cloning shared
/// ones), checks stack discipline and produces the lifted ICFG.
pub fn build_icfg(cfg: &ResolvedCfg, recovered: &Recovered, origin: &str) -> Icfg {
    let templates = lift_to_tac(cfg);
    let raw_calls = detect_calls(cfg, &templates);
    let builder = Builder {
        cfg,
        templates: &templates,
        calls: raw_calls.iter().map(|c| (c.site, *c)).collect(),
        return_addrs: raw_calls.iter().map(|c| c.ret).collect(),
    };

    // function entries: dispatcher targets, fallback, then call targets
    let mut entries: Vec<FunctionEntry> = recovered.entries.clone();
    for c in &raw_calls {
        if !entries.iter().any(|e| e.entry == c.target) {
            entries.push(FunctionEntry {
                kind: FunctionKind::Internal,
                selector: None,
                name: format!("internal_{:04x}", cfg.blocks[c.target].start),
                entry: c.target,
            });
        }
    }
    entries.sort_by_key(|e| (cfg.blocks[e.entry].start, e.kind));
    entries.dedup_by_key(|e| e.entry);
    let dispatcher: BTreeSet<usize> = recovered.dispatcher.iter().copied().collect();

    // clone assignment
    let mut clone_of: BTreeMap<(usize, usize), BlockId> = BTreeMap::new();
    let mut bodies = Vec::new();
    let mut next_id = 0;
    for (fid, e) in entries.iter().enumerate() {
        let body: Vec<usize> = builder.body(e.entry).into_iter().filter(|b| !dispatcher.contains(b) || *b == e.entry).collect();
        for &b in &body {
            clone_of.insert((fid, b), next_id);
            next_id += 1;
        }
        bodies.push(body);
    }

    let mut memo = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut blocks = Vec::with_capacity(next_id);
    let mut next_var = 0u32;
    let mut functions = Vec::new();
    let mut intra_edges = Vec::new();
    for (fid, e) in entries.iter().enumerate() {
        let (bad, _) = builder.heights(e.entry, &mut memo, &mut BTreeSet::new());
        let mut ids = Vec::new();
        let mut params = BTreeSet::new();
        let mut exits = Vec::new();
        for &raw in &bodies[fid] {
            let id = clone_of[&(fid, raw)];
            let rb = &cfg.blocks[raw];
            let t = &templates[raw];
            let base = next_var;
            next_var += t.locals;
            let map = |v: TVar| match v {
                TVar::Local(i) => VarRef::Def(base + i),
                TVar::Entry(d) => VarRef::Slot(id, d),
                TVar::Mem => VarRef::Mem,
            };
            let instrs: Vec<TacInstruction> = t
                .instrs
                .iter()
                .map(|ti| {
                    let mut op = ti.op.clone();
                    if let (TacOp::Log { data, .. }, Some(ld)) = (&mut op, &ti.log_data) {
                        *data = ld.iter().map(|v| map(*v)).collect();
                    }
                    if op == TacOp::CallDataLoad {
                        if let Some(off) = ti.uses.first().and_then(|u| t.constant_of(*u)) {
                            if off < U256::from(usize::MAX) {
                                params.insert(off.to::<usize>());
                            }
                        }
                    }
                    TacInstruction {
                        op,
                        defs: ti.defs.iter().map(|v| map(*v)).collect(),
                        uses: ti.uses.iter().map(|v| map(*v)).collect(),
                        constant: ti.constant,
                        src_offset: ti.src_offset,
                    }
                })
                .collect();
            let successors: Vec<BlockId> = builder
                .body_succs(raw)
                .into_iter()
                .filter(|_| !builder.calls.contains_key(&raw))
                .filter_map(|s| clone_of.get(&(fid, s)).copied())
                .collect();
            for &s in &successors {
                intra_edges.push((id, s));
            }
            if builder.is_return_block(raw) {
                exits.push(id);
            }
            let is_bad = bad.contains(&raw);
            if is_bad {
                excluded.push(Exclusion { offset: rb.start, reason: ExclusionReason::LiftFailure, function: Some(fid) });
            }
            if let Some(off) = rb.underflow {
                excluded.push(Exclusion { offset: off, reason: ExclusionReason::StackUnderflow, function: Some(fid) });
            }
            blocks.push(TacBlock {
                id,
                function: fid,
                raw,
                start: rb.start,
                end: rb.end,
                instrs,
                successors,
                terminator: rb.terminator,
                exit: t.exit.iter().map(|v| map(*v)).collect(),
                pops_below: t.pops_below,
                excluded: is_bad,
            });
            ids.push(id);
        }
        functions.push(FunctionUnit {
            id: fid,
            kind: e.kind,
            selector: e.selector,
            name: e.name.clone(),
            entry: clone_of[&(fid, e.entry)],
            entry_offset: cfg.blocks[e.entry].start,
            blocks: ids,
            params,
            exits,
        });
    }
    blocks.sort_by_key(|b| b.id);

    let mut call_edges = Vec::new();
    for (fid, body) in bodies.iter().enumerate() {
        for &raw in body {
            let Some(c) = builder.calls.get(&raw) else { continue };
            let callee = entries.iter().position(|e| e.entry == c.target).expect("call target is an entry");
            if let Some(&ret) = clone_of.get(&(fid, c.ret)) {
                call_edges.push(CallEdge {
                    site: clone_of[&(fid, raw)],
                    callee,
                    callee_entry: functions[callee].entry,
                    return_block: ret,
                });
            }
        }
    }
    call_edges.sort();
    intra_edges.sort();

    let mut preds = vec![Vec::new(); blocks.len()];
    for &(a, b) in &intra_edges {
        preds[b].push(Pred::Intra(a));
    }
    for (i, e) in call_edges.iter().enumerate() {
        preds[e.callee_entry].push(Pred::Call { from: e.site, edge: i });
        for &x in &functions[e.callee].exits {
            preds[e.return_block].push(Pred::Return { from: x, edge: i });
        }
    }
    for p in &mut preds {
        p.sort();
    }

    // PHIs at joins
    for b in 0..blocks.len() {
        if preds[b].len() < 2 {
            continue;
        }
        let depths = templates[blocks[b].raw].entry_depths();
        let phis: Vec<TacInstruction> = depths
            .iter()
            .map(|&d| TacInstruction {
                op: TacOp::Phi,
                defs: vec![VarRef::Slot(b, d)],
                uses: preds[b].iter().map(|p| blocks[p.block()].exit_value(d as usize)).collect(),
                constant: None,
                src_offset: blocks[b].start,
            })
            .collect();
        blocks[b].instrs.splice(0..0, phis);
    }

    let back_edges = find_back_edges(&functions, &blocks);

    let mut reported: BTreeSet<usize> = BTreeSet::new();
    for b in &cfg.blocks {
        if !b.reachable {
            reported.insert(b.start);
            excluded.push(Exclusion { offset: b.start, reason: ExclusionReason::Unreachable, function: None });
        }
    }
    excluded.sort();
    excluded.dedup();

    Icfg {
        origin: origin.to_string(),
        functions,
        blocks,
        intra_edges,
        call_edges,
        back_edges,
        unresolved: cfg.unresolved.clone(),
        excluded,
        dispatcher: recovered.dispatcher.iter().map(|&b| cfg.blocks[b].start).collect(),
        preds,
    }
}

/// Back edges of each function's intra-procedural graph, by DFS from
/// the function entry in successor order.
fn find_back_edges(functions: &[FunctionUnit], blocks: &[TacBlock]) -> BTreeSet<(BlockId, BlockId)> {
    let mut back = BTreeSet::new();
    let mut state = vec![0u8; blocks.len()]; // 0 new, 1 on stack, 2 done
    for f in functions {
        let mut stack: Vec<(BlockId, usize)> = vec![(f.entry, 0)];
        state[f.entry] = 1;
        while let Some(&mut (b, ref mut i)) = stack.last_mut() {
            if let Some(&s) = blocks[b].successors.get(*i) {
                *i += 1;
                match state[s] {
                    0 => {
                        state[s] = 1;
                        stack.push((s, 0));
                    }
                    1 => {
                        back.insert((b, s));
                    }
                    _ => {}
                }
            } else {
                state[b] = 2;
                stack.pop();
            }
        }
    }
    back
}

/// Full pipeline from bytecode to ICFG.
pub fn lift(code: &Bytecode, sigdb: &SigDb) -> Icfg {
    let stripped = strip_metadata(code);
    let cfg = resolve_jumps(build_blocks(&disassemble(&stripped.bytes)));
    let recovered = recover_functions(&cfg, sigdb);
    build_icfg(&cfg, &recovered, &code.origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;

    fn icfg(src: &str, sigs: &[&str]) -> Icfg {
        let mut db = SigDb::default();
        for s in sigs {
            db.add_function(s);
        }
        lift(&Bytecode::new(assemble(src).unwrap(), "t"), &db)
    }

    const TWO_FUNCS: &str = "
        PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR
        DUP1 PUSH4 selector(a()) EQ PUSH :fa JUMPI
        DUP1 PUSH4 0xdeadbeef EQ PUSH :fb JUMPI
        fallback: PUSH1 0 DUP1 REVERT
        fa: STOP
        fb: CALLER PUSH1 0 SSTORE STOP
    ";

    #[test]
    fn dispatcher_targets_plus_fallback() {
        let g = icfg(TWO_FUNCS, &["a()"]);
        let names: Vec<&str> = g.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["fallback", "a", "func_deadbeef"]);
        assert_eq!(g.functions[0].selector, None);
        assert!(g.call_edges.is_empty());
        assert!(g.unresolved.is_empty());
        assert_eq!(g.dispatcher.len(), 2);
    }

    #[test]
    fn empty_dispatcher_gives_single_fallback() {
        let g = icfg("CALLER PUSH1 0 SSTORE STOP", &[]);
        assert_eq!(g.functions.len(), 1);
        assert_eq!(g.functions[0].kind, FunctionKind::Fallback);
        assert!(g.dispatcher.is_empty());
    }

    const WITH_HELPER: &str = "
        PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR
        DUP1 PUSH4 selector(a()) EQ PUSH :fa JUMPI
        DUP1 PUSH4 selector(b()) EQ PUSH :fb JUMPI
        PUSH1 0 DUP1 REVERT
        fa: PUSH :ra PUSH1 1 PUSH :helper JUMP
        ra: STOP
        fb: PUSH :rb PUSH1 2 PUSH :helper JUMP
        rb: STOP
        helper: PUSH1 0 MSTORE PUSH1 0x20 PUSH1 0 LOG0 JUMP
    ";

    #[test]
    fn shared_helper_gets_call_edges() {
        let g = icfg(WITH_HELPER, &["a()", "b()"]);
        let helper = g.functions.iter().find(|f| f.kind == FunctionKind::Internal).unwrap();
        assert_eq!(g.call_edges.len(), 2);
        for e in &g.call_edges {
            assert_eq!(e.callee, helper.id);
            let site = &g.blocks[e.site];
            let ret = &g.blocks[e.return_block];
            assert_eq!(site.function, ret.function);
            assert_eq!(g.blocks[ret.id].terminator, Terminator::Stop);
        }
        assert_eq!(helper.exits.len(), 1);
        // the helper LOG exists once
        let logs = g.blocks.iter().flat_map(|b| &b.instrs).filter(|i| matches!(i.op, TacOp::Log { .. })).count();
        assert_eq!(logs, 1);
        assert!(g.excluded.iter().all(|x| x.reason != ExclusionReason::LiftFailure));
    }

    #[test]
    fn join_with_mismatched_heights_is_excluded() {
        let g = icfg("CALLVALUE PUSH :j JUMPI PUSH1 1 PUSH1 2 PUSH :j JUMP\nj:\nSTOP", &[]);
        assert!(g.excluded.iter().any(|x| x.reason == ExclusionReason::LiftFailure));
    }

    #[test]
    fn phi_at_join() {
        let g = icfg(
            "PUSH1 1 CALLVALUE PUSH :j JUMPI POP PUSH1 2 PUSH :j JUMP\nj:\nPUSH1 0 SSTORE STOP",
            &[],
        );
        let j = g.blocks.iter().find(|b| b.terminator == Terminator::Stop).unwrap();
        assert_eq!(j.instrs[0].op, TacOp::Phi);
        assert_eq!(j.instrs[0].uses.len(), 2);
    }

    #[test]
    fn dump_is_deterministic() {
        let a = icfg(WITH_HELPER, &["a()"]).dump();
        let b = icfg(WITH_HELPER, &["a()"]).dump();
        assert_eq!(a, b);
        assert!(a.contains("call b"));
        assert!(icfg(WITH_HELPER, &[]).to_dot().starts_with("digraph"));
    }
}
