//! Basic-block construction and jump resolution over stack-form code.

use std::collections::{BTreeMap, BTreeSet};

use ruint::aliases::U256;
use serde::Serialize;

use crate::disasm::{Instruction, Opcode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Terminator {
    Jump,
    Jumpi,
    Return,
    Revert,
    Stop,
    Selfdestruct,
    Invalid,
    Fallthrough,
}

impl Terminator {
    fn of(op: Opcode) -> Option<Terminator> {
        Some(match op {
            Opcode::JUMP => Terminator::Jump,
            Opcode::JUMPI => Terminator::Jumpi,
            Opcode::RETURN => Terminator::Return,
            Opcode::REVERT => Terminator::Revert,
            Opcode::STOP => Terminator::Stop,
            Opcode::SELFDESTRUCT => Terminator::Selfdestruct,
            op if op == Opcode::INVALID || !op.is_known() => Terminator::Invalid,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Terminator::Jump => "JUMP",
            Terminator::Jumpi => "JUMPI",
            Terminator::Return => "RETURN",
            Terminator::Revert => "REVERT",
            Terminator::Stop => "STOP",
            Terminator::Selfdestruct => "SELFDESTRUCT",
            Terminator::Invalid => "INVALID",
            Terminator::Fallthrough => "FALLTHROUGH",
        }
    }
}

/// How the target of a block-ending JUMP/JUMPI was determined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JumpResolution {
    /// Block does not end in a jump.
    NotAJump,
    /// Target not yet computed (output of `build_blocks`).
    Pending,
    Resolved(Vec<usize>),
    /// The target could not be reduced to constants.
    Unresolved,
}

/// A basic block in stack form.
#[derive(Debug, Clone)]
pub struct RawBlock {
    pub id: usize,
    pub start: usize,
    /// Offset of the last instruction.
    pub end: usize,
    pub instrs: Vec<Instruction>,
    pub terminator: Terminator,
    pub fallthrough: Option<usize>,
    pub jump: JumpResolution,
    /// Successor block ids, jump targets first, then fallthrough.
    pub successors: Vec<usize>,
    pub reachable: bool,
    /// Offset of the instruction that underflowed the stack, if any.
    pub underflow: Option<usize>,
    /// Constant targets that are not JUMPDESTs.
    pub bad_targets: Vec<usize>,
}

impl RawBlock {
    pub fn starts_with_jumpdest(&self) -> bool {
        self.instrs.first().map(|i| i.opcode) == Some(Opcode::JUMPDEST)
    }
}

/// Splits an instruction stream at JUMPDESTs and after terminators.
pub fn build_blocks(instrs: &[Instruction]) -> Vec<RawBlock> {
    let mut groups: Vec<Vec<Instruction>> = Vec::new();
    let mut cur: Vec<Instruction> = Vec::new();
    for ins in instrs {
        if ins.opcode == Opcode::JUMPDEST && !cur.is_empty() {
            groups.push(std::mem::take(&mut cur));
        }
        let ends = ins.opcode.is_terminator();
        cur.push(ins.clone());
        if ends {
            groups.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        groups.push(cur);
    }
    let count = groups.len();
    groups
        .into_iter()
        .enumerate()
        .map(|(id, instrs)| {
            let last = instrs.last().expect("non-empty group");
            let terminator = Terminator::of(last.opcode).unwrap_or(Terminator::Fallthrough);
            let next = (id + 1 < count).then_some(id + 1);
            let fallthrough = match terminator {
                Terminator::Jumpi | Terminator::Fallthrough => next,
                _ => None,
            };
            let jump = match terminator {
                Terminator::Jump | Terminator::Jumpi => JumpResolution::Pending,
                _ => JumpResolution::NotAJump,
            };
            RawBlock {
                id,
                start: instrs[0].offset,
                end: last.offset,
                successors: fallthrough.into_iter().collect(),
                instrs,
                terminator,
                fallthrough,
                jump,
                reachable: false,
                underflow: None,
                bad_targets: Vec::new(),
            }
        })
        .collect()
}

const MAX_SET: usize = 8;

/// Abstract stack value: a small set of constants or unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbsVal {
    Top,
    Consts(BTreeSet<U256>),
}

impl AbsVal {
    pub fn constant(v: U256) -> Self {
        AbsVal::Consts(BTreeSet::from([v]))
    }

    pub fn single(&self) -> Option<U256> {
        match self {
            AbsVal::Consts(s) if s.len() == 1 => s.iter().next().copied(),
            _ => None,
        }
    }

    fn join(&self, other: &AbsVal) -> AbsVal {
        match (self, other) {
            (AbsVal::Consts(a), AbsVal::Consts(b)) => {
                let u: BTreeSet<U256> = a.union(b).copied().collect();
                if u.len() > MAX_SET {
                    AbsVal::Top
                } else {
                    AbsVal::Consts(u)
                }
            }
            _ => AbsVal::Top,
        }
    }
}

/// Known top portion of the stack plus the total height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbsStack {
    /// Bottom to top; entries below this are unknown.
    pub vals: Vec<AbsVal>,
    pub height: usize,
}

impl AbsStack {
    fn empty() -> Self {
        Self { vals: Vec::new(), height: 0 }
    }

    fn join(&self, other: &AbsStack) -> AbsStack {
        let n = self.vals.len().min(other.vals.len());
        let a = &self.vals[self.vals.len() - n..];
        let b = &other.vals[other.vals.len() - n..];
        AbsStack {
            vals: a.iter().zip(b).map(|(x, y)| x.join(y)).collect(),
            height: self.height.min(other.height),
        }
    }

    fn pop(&mut self) -> Option<AbsVal> {
        if self.height == 0 {
            return None;
        }
        self.height -= 1;
        Some(self.vals.pop().unwrap_or(AbsVal::Top))
    }

    fn push(&mut self, v: AbsVal) {
        self.vals.push(v);
        self.height += 1;
    }

    fn peek(&self, depth: usize) -> Option<AbsVal> {
        if depth >= self.height {
            return None;
        }
        Some(if depth < self.vals.len() {
            self.vals[self.vals.len() - 1 - depth].clone()
        } else {
            AbsVal::Top
        })
    }

    fn swap(&mut self, depth: usize) -> bool {
        if depth >= self.height {
            return false;
        }
        while self.vals.len() <= depth {
            self.vals.insert(0, AbsVal::Top);
        }
        let n = self.vals.len();
        self.vals.swap(n - 1, n - 1 - depth);
        true
    }
}

/// Folds a pure arithmetic opcode over concrete arguments given in pop
/// order (top of stack first).
pub fn fold(op: Opcode, args: &[U256]) -> Option<U256> {
    let bool_word = |b: bool| if b { U256::from(1u8) } else { U256::ZERO };
    Some(match (op, args) {
        (Opcode::ADD, [a, b]) => a.wrapping_add(*b),
        (Opcode::SUB, [a, b]) => a.wrapping_sub(*b),
        (Opcode::MUL, [a, b]) => a.wrapping_mul(*b),
        (Opcode::DIV, [a, b]) => a.checked_div(*b).unwrap_or(U256::ZERO),
        (Opcode::MOD, [a, b]) => a.checked_rem(*b).unwrap_or(U256::ZERO),
        (Opcode::EXP, [a, b]) => a.wrapping_pow(*b),
        (Opcode::AND, [a, b]) => *a & *b,
        (Opcode::OR, [a, b]) => *a | *b,
        (Opcode::XOR, [a, b]) => *a ^ *b,
        (Opcode::NOT, [a]) => !*a,
        (Opcode::ISZERO, [a]) => bool_word(a.is_zero()),
        (Opcode::EQ, [a, b]) => bool_word(a == b),
        (Opcode::LT, [a, b]) => bool_word(a < b),
        (Opcode::GT, [a, b]) => bool_word(a > b),
        (Opcode::SHL, [shift, v]) => {
            if *shift >= U256::from(256u32) {
                U256::ZERO
            } else {
                *v << shift.to::<usize>()
            }
        }
        (Opcode::SHR, [shift, v]) => {
            if *shift >= U256::from(256u32) {
                U256::ZERO
            } else {
                *v >> shift.to::<usize>()
            }
        }
        _ => return None,
    })
}

fn fold_abstract(op: Opcode, args: &[AbsVal]) -> AbsVal {
    let mut sets = Vec::with_capacity(args.len());
    for a in args {
        match a {
            AbsVal::Consts(s) => sets.push(s.iter().copied().collect::<Vec<_>>()),
            AbsVal::Top => return AbsVal::Top,
        }
    }
    let combos: usize = sets.iter().map(|s| s.len()).product();
    if combos == 0 || combos > MAX_SET {
        return AbsVal::Top;
    }
    let mut out = BTreeSet::new();
    let mut idx = vec![0usize; sets.len()];
    loop {
        let concrete: Vec<U256> = idx.iter().zip(&sets).map(|(&i, s)| s[i]).collect();
        match fold(op, &concrete) {
            Some(v) => {
                out.insert(v);
            }
            None => return AbsVal::Top,
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return AbsVal::Consts(out);
            }
            idx[k] += 1;
            if idx[k] < sets[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

enum Step {
    Continue,
    Underflow(usize),
}

fn transfer(ins: &Instruction, st: &mut AbsStack) -> Step {
    let op = ins.opcode;
    if op.is_push() {
        let v = ins.immediate.as_deref().map(crate::hash::word_from_bytes).unwrap_or(U256::ZERO);
        st.push(AbsVal::constant(v));
        return Step::Continue;
    }
    if let Some(n) = op.dup_depth() {
        return match st.peek(n - 1) {
            Some(v) => {
                st.push(v);
                Step::Continue
            }
            None => Step::Underflow(ins.offset),
        };
    }
    if let Some(n) = op.swap_depth() {
        return if st.swap(n) { Step::Continue } else { Step::Underflow(ins.offset) };
    }
    let (pops, pushes) = op.stack_io();
    let mut args = Vec::with_capacity(pops);
    for _ in 0..pops {
        match st.pop() {
            Some(v) => args.push(v),
            None => return Step::Underflow(ins.offset),
        }
    }
    if pushes == 1 {
        st.push(fold_abstract(op, &args));
    }
    Step::Continue
}

/// Result of running a block's instructions on an entry state.
struct BlockEval {
    jump_target: Option<AbsVal>,
    exit: AbsStack,
    underflow: Option<usize>,
}

fn eval_block(block: &RawBlock, entry: &AbsStack) -> BlockEval {
    let mut st = entry.clone();
    let mut jump_target = None;
    for ins in &block.instrs {
        if matches!(ins.opcode, Opcode::JUMP | Opcode::JUMPI) {
            jump_target = st.peek(0);
        }
        if let Step::Underflow(off) = transfer(ins, &mut st) {
            return BlockEval { jump_target: None, exit: st, underflow: Some(off) };
        }
    }
    BlockEval { jump_target, exit: st, underflow: None }
}

/// Resolved control-flow graph with the abstract entry state of every
/// reachable block.
#[derive(Debug, Clone)]
pub struct ResolvedCfg {
    pub blocks: Vec<RawBlock>,
    pub entry_states: BTreeMap<usize, AbsStack>,
    /// Offsets of JUMP/JUMPI instructions whose target stayed unknown.
    pub unresolved: Vec<usize>,
}

impl ResolvedCfg {
    pub fn block_at(&self, offset: usize) -> Option<&RawBlock> {
        self.blocks
            .binary_search_by_key(&offset, |b| b.start)
            .ok()
            .map(|i| &self.blocks[i])
    }

    pub fn jumpdest_block(&self, offset: usize) -> Option<usize> {
        self.block_at(offset).filter(|b| b.starts_with_jumpdest()).map(|b| b.id)
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for b in &self.blocks {
            for &s in &b.successors {
                preds[s].push(b.id);
            }
        }
        preds
    }
}

/// Resolves jump targets by propagating constant stack contents to a
/// fixpoint from the entry block. Dynamic targets are reported, never
/// guessed; blocks that underflow the stack end as INVALID.
pub fn resolve_jumps(mut blocks: Vec<RawBlock>) -> ResolvedCfg {
    let jumpdests: BTreeMap<usize, usize> = blocks
        .iter()
        .filter(|b| b.starts_with_jumpdest())
        .map(|b| (b.start, b.id))
        .collect();
    let mut entry_states: BTreeMap<usize, AbsStack> = BTreeMap::new();
    if blocks.is_empty() {
        return ResolvedCfg { blocks, entry_states, unresolved: Vec::new() };
    }
    entry_states.insert(0, AbsStack::empty());
    let mut work: BTreeSet<usize> = BTreeSet::from([0]);

    let successors_of = |block: &RawBlock, eval: &BlockEval| -> (Vec<usize>, JumpResolution, Vec<usize>) {
        if eval.underflow.is_some() {
            return (Vec::new(), block.jump.clone(), Vec::new());
        }
        let mut succ = Vec::new();
        let mut bad = Vec::new();
        let res = match block.terminator {
            Terminator::Jump | Terminator::Jumpi => match &eval.jump_target {
                Some(AbsVal::Consts(targets)) => {
                    let mut offs = Vec::new();
                    for t in targets {
                        let off = if *t < U256::from(usize::MAX) { t.to::<usize>() } else { usize::MAX };
                        match jumpdests.get(&off) {
                            Some(&id) => {
                                succ.push(id);
                                offs.push(off);
                            }
                            None => bad.push(off),
                        }
                    }
                    JumpResolution::Resolved(offs)
                }
                _ => JumpResolution::Unresolved,
            },
            _ => JumpResolution::NotAJump,
        };
        if let Some(ft) = block.fallthrough {
            if !succ.contains(&ft) {
                succ.push(ft);
            }
        }
        (succ, res, bad)
    };

    while let Some(id) = work.pop_first() {
        let entry = entry_states[&id].clone();
        let eval = eval_block(&blocks[id], &entry);
        let (succ, _, _) = successors_of(&blocks[id], &eval);
        let out = eval.exit.clone();
        for s in succ {
            let joined = match entry_states.get(&s) {
                Some(old) => {
                    let j = old.join(&out);
                    if &j == old {
                        continue;
                    }
                    j
                }
                None => out.clone(),
            };
            entry_states.insert(s, joined);
            work.insert(s);
        }
    }

    let mut unresolved = Vec::new();
    for id in 0..blocks.len() {
        let Some(entry) = entry_states.get(&id) else {
            blocks[id].reachable = false;
            blocks[id].successors.clear();
            if blocks[id].jump == JumpResolution::Pending {
                blocks[id].jump = JumpResolution::Unresolved;
            }
            continue;
        };
        let eval = eval_block(&blocks[id], entry);
        let (succ, res, bad) = successors_of(&blocks[id], &eval);
        let b = &mut blocks[id];
        b.reachable = true;
        b.underflow = eval.underflow;
        if eval.underflow.is_some() {
            b.terminator = Terminator::Invalid;
            b.jump = JumpResolution::NotAJump;
            b.successors.clear();
            continue;
        }
        if res == JumpResolution::Unresolved {
            unresolved.push(b.end);
        }
        b.jump = res;
        b.successors = succ;
        b.bad_targets = bad;
    }
    ResolvedCfg { blocks, entry_states, unresolved }
}
