//! Three-address form.

use std::collections::BTreeMap;
use std::fmt;

use ruint::aliases::U256;
use serde::Serialize;

use super::blocks::{fold, RawBlock};
use crate::disasm::Opcode;
use crate::hash::word_from_bytes;

pub type BlockId = usize;

/// A TAC variable. `Def` variables have a single defining instruction;
/// `Slot` variables name the stack slot `depth` (0 = top) on entry to a
/// block and are defined by that block's PHI (or by the predecessor's
/// exit stack when there is one predecessor). `Mem` is the whole memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VarRef {
    Def(u32),
    Slot(BlockId, u16),
    Mem,
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarRef::Def(n) => write!(f, "v{n}"),
            VarRef::Slot(b, d) => write!(f, "b{b}.s{d}"),
            VarRef::Mem => write!(f, "mem"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum TacOp {
    Const,
    Phi,
    /// Stack value carried across an edge; only appears in path slices.
    Copy,
    /// Function-entry marker; only appears as the last item of a path.
    Entry,
    /// Pure computation or environment read (ADD, EQ, ADDRESS, GAS, ...).
    Arith(Opcode),
    MLoad,
    MStore,
    MStore8,
    /// CODECOPY, RETURNDATACOPY, EXTCODECOPY.
    MemCopy(Opcode),
    Sha3,
    SLoad,
    SStore,
    CallDataLoad,
    CallDataCopy,
    Caller,
    CallValue,
    Origin,
    /// CALL, CALLCODE, DELEGATECALL, STATICCALL.
    Call(Opcode),
    Create(Opcode),
    /// LOGk. `data` holds the words stored to the data region by
    /// constant-offset MSTOREs in the same block, or `[mem]`.
    Log { topics: u8, data: Vec<VarRef> },
    Jump,
    Jumpi,
    Return,
    Revert,
    Stop,
    Selfdestruct,
    Invalid,
}

impl TacOp {
    pub fn name(&self) -> String {
        match self {
            TacOp::Const => "CONST".into(),
            TacOp::Phi => "PHI".into(),
            TacOp::Copy => "COPY".into(),
            TacOp::Entry => "ENTRY".into(),
            TacOp::Arith(op) | TacOp::MemCopy(op) | TacOp::Call(op) | TacOp::Create(op) => {
                op.mnemonic().into()
            }
            TacOp::MLoad => "MLOAD".into(),
            TacOp::MStore => "MSTORE".into(),
            TacOp::MStore8 => "MSTORE8".into(),
            TacOp::Sha3 => "SHA3".into(),
            TacOp::SLoad => "SLOAD".into(),
            TacOp::SStore => "SSTORE".into(),
            TacOp::CallDataLoad => "CALLDATALOAD".into(),
            TacOp::CallDataCopy => "CALLDATACOPY".into(),
            TacOp::Caller => "CALLER".into(),
            TacOp::CallValue => "CALLVALUE".into(),
            TacOp::Origin => "ORIGIN".into(),
            TacOp::Log { topics, .. } => format!("LOG{topics}"),
            TacOp::Jump => "JUMP".into(),
            TacOp::Jumpi => "JUMPI".into(),
            TacOp::Return => "RETURN".into(),
            TacOp::Revert => "REVERT".into(),
            TacOp::Stop => "STOP".into(),
            TacOp::Selfdestruct => "SELFDESTRUCT".into(),
            TacOp::Invalid => "INVALID".into(),
        }
    }

    pub fn is_external_call(&self) -> bool {
        matches!(self, TacOp::Call(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TacInstruction {
    pub op: TacOp,
    pub defs: Vec<VarRef>,
    /// Operands in EVM pop order (top of stack first).
    pub uses: Vec<VarRef>,
    #[serde(skip)]
    pub constant: Option<U256>,
    pub src_offset: usize,
}

impl fmt::Display for TacInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |vs: &[VarRef]| vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
        if !self.defs.is_empty() {
            write!(f, "{} = ", join(&self.defs))?;
        }
        write!(f, "{}", self.op.name())?;
        if self.op == TacOp::Const {
            if let Some(c) = self.constant {
                write!(f, " {c:#x}")?;
            }
        } else if !self.uses.is_empty() {
            write!(f, " {}", join(&self.uses))?;
        }
        if let TacOp::Log { data, .. } = &self.op {
            write!(f, " data=[{}]", join(data))?;
        }
        if self.op != TacOp::Const {
            if let Some(c) = self.constant {
                write!(f, " ; ={c:#x}")?;
            }
        }
        Ok(())
    }
}

/// Variable in a position-independent block template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TVar {
    Local(u32),
    Entry(u16),
    Mem,
}

#[derive(Debug, Clone)]
pub struct TemplateInstr {
    pub op: TacOp,
    pub defs: Vec<TVar>,
    pub uses: Vec<TVar>,
    pub constant: Option<U256>,
    pub src_offset: usize,
    pub log_data: Option<Vec<TVar>>,
}

/// Lifted form of one raw block, independent of where it is placed.
#[derive(Debug, Clone)]
pub struct BlockTemplate {
    pub instrs: Vec<TemplateInstr>,
    pub locals: u32,
    /// Stack contents pushed by the block (bottom to top) after its
    /// terminator consumed its operands.
    pub exit: Vec<TVar>,
    /// Number of entry slots removed from below.
    pub pops_below: u16,
    pub constants: BTreeMap<TVar, U256>,
}

impl BlockTemplate {
    pub fn delta(&self) -> i64 {
        self.exit.len() as i64 - self.pops_below as i64
    }

    /// Entry depths referenced anywhere in the block.
    pub fn entry_depths(&self) -> Vec<u16> {
        let mut ds: Vec<u16> = self
            .instrs
            .iter()
            .flat_map(|i| i.uses.iter().chain(i.log_data.iter().flatten()))
            .chain(self.exit.iter())
            .filter_map(|v| match v {
                TVar::Entry(d) => Some(*d),
                _ => None,
            })
            .collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    }

    pub fn constant_of(&self, v: TVar) -> Option<U256> {
        self.constants.get(&v).copied()
    }

    /// Variable at `depth` (0 = top) of the exit stack, `None` when the
    /// slot comes from below the block's own pushes.
    pub fn exit_local(&self, depth: usize) -> Option<TVar> {
        (depth < self.exit.len()).then(|| self.exit[self.exit.len() - 1 - depth])
    }
}

struct LiftState {
    stack: Vec<TVar>,
    below: u16,
    next: u32,
    constants: BTreeMap<TVar, U256>,
    mem: BTreeMap<U256, TVar>,
}

impl LiftState {
    fn ensure(&mut self, depth: usize) {
        while self.stack.len() <= depth {
            self.stack.insert(0, TVar::Entry(self.below));
            self.below += 1;
        }
    }

    fn pop(&mut self) -> TVar {
        self.ensure(0);
        self.stack.pop().expect("ensured")
    }

    fn fresh(&mut self) -> TVar {
        let v = TVar::Local(self.next);
        self.next += 1;
        v
    }
}

fn classify(op: Opcode) -> TacOp {
    match op {
        Opcode::MLOAD => TacOp::MLoad,
        Opcode::MSTORE => TacOp::MStore,
        Opcode::MSTORE8 => TacOp::MStore8,
        Opcode::SHA3 => TacOp::Sha3,
        Opcode::SLOAD => TacOp::SLoad,
        Opcode::SSTORE => TacOp::SStore,
        Opcode::CALLDATALOAD => TacOp::CallDataLoad,
        Opcode::CALLDATACOPY => TacOp::CallDataCopy,
        Opcode::CALLER => TacOp::Caller,
        Opcode::CALLVALUE => TacOp::CallValue,
        Opcode::ORIGIN => TacOp::Origin,
        Opcode::CODECOPY | Opcode::RETURNDATACOPY | Opcode::EXTCODECOPY => TacOp::MemCopy(op),
        Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL => {
            TacOp::Call(op)
        }
        Opcode::CREATE | Opcode::CREATE2 => TacOp::Create(op),
        Opcode::JUMP => TacOp::Jump,
        Opcode::JUMPI => TacOp::Jumpi,
        Opcode::RETURN => TacOp::Return,
        Opcode::REVERT => TacOp::Revert,
        Opcode::STOP => TacOp::Stop,
        Opcode::SELFDESTRUCT => TacOp::Selfdestruct,
        op if op.log_topics().is_some() => TacOp::Log {
            topics: op.log_topics().unwrap_or(0) as u8,
            data: Vec::new(),
        },
        op if op == Opcode::INVALID || !op.is_known() => TacOp::Invalid,
        op => TacOp::Arith(op),
    }
}

/// Lifts one stack-form block to a template. Stack slots below the
/// block's own pushes are referenced as `Entry(depth)`.
pub fn lift_block(block: &RawBlock) -> BlockTemplate {
    let mut st = LiftState {
        stack: Vec::new(),
        below: 0,
        next: 0,
        constants: BTreeMap::new(),
        mem: BTreeMap::new(),
    };
    let mut instrs = Vec::new();
    for ins in &block.instrs {
        let op = ins.opcode;
        if block.underflow == Some(ins.offset) {
            instrs.push(TemplateInstr {
                op: TacOp::Invalid,
                defs: vec![],
                uses: vec![],
                constant: None,
                src_offset: ins.offset,
                log_data: None,
            });
            break;
        }
        if op == Opcode::JUMPDEST {
            continue;
        }
        if op.is_push() {
            let value = ins.immediate.as_deref().map(word_from_bytes).unwrap_or(U256::ZERO);
            let v = st.fresh();
            st.constants.insert(v, value);
            st.stack.push(v);
            instrs.push(TemplateInstr {
                op: TacOp::Const,
                defs: vec![v],
                uses: vec![],
                constant: Some(value),
                src_offset: ins.offset,
                log_data: None,
            });
            continue;
        }
        if let Some(n) = op.dup_depth() {
            st.ensure(n - 1);
            let v = st.stack[st.stack.len() - n];
            st.stack.push(v);
            continue;
        }
        if let Some(n) = op.swap_depth() {
            st.ensure(n);
            let len = st.stack.len();
            st.stack.swap(len - 1, len - 1 - n);
            continue;
        }
        if op == Opcode::POP {
            st.pop();
            continue;
        }
        let (pops, pushes) = op.stack_io();
        let uses: Vec<TVar> = (0..pops).map(|_| st.pop()).collect();
        let mut tac = classify(op);
        let mut defs = Vec::new();
        let mut constant = None;
        let mut log_data = None;
        let mut uses_all = uses.clone();
        match &mut tac {
            TacOp::MStore => {
                if let Some(off) = st.constants.get(&uses[0]).copied() {
                    st.mem.insert(off, uses[1]);
                } else {
                    st.mem.clear();
                }
                defs.push(TVar::Mem);
            }
            TacOp::MStore8 | TacOp::MemCopy(_) | TacOp::CallDataCopy => {
                st.mem.clear();
                defs.push(TVar::Mem);
            }
            TacOp::MLoad | TacOp::Sha3 | TacOp::Return | TacOp::Revert => uses_all.push(TVar::Mem),
            TacOp::Call(_) | TacOp::Create(_) => {
                uses_all.push(TVar::Mem);
                st.mem.clear();
            }
            TacOp::Log { .. } => {
                let data = log_data_vars(&st, uses[0], uses[1]);
                uses_all = uses.clone();
                log_data = Some(data);
            }
            _ => {}
        }
        if pushes == 1 {
            let v = st.fresh();
            if let TacOp::Arith(a) = tac {
                let args: Option<Vec<U256>> =
                    uses.iter().map(|u| st.constants.get(u).copied()).collect();
                if let Some(c) = args.and_then(|a_args| fold(a, &a_args)) {
                    constant = Some(c);
                    st.constants.insert(v, c);
                }
            }
            defs.insert(0, v);
            st.stack.push(v);
        }
        if matches!(tac, TacOp::Call(_) | TacOp::Create(_)) {
            defs.push(TVar::Mem);
        }
        instrs.push(TemplateInstr {
            op: tac,
            defs,
            uses: uses_all,
            constant,
            src_offset: ins.offset,
            log_data,
        });
    }
    BlockTemplate {
        instrs,
        locals: st.next,
        exit: st.stack,
        pops_below: st.below,
        constants: st.constants,
    }
}

fn log_data_vars(st: &LiftState, off: TVar, size: TVar) -> Vec<TVar> {
    let (Some(off), Some(size)) = (st.constants.get(&off), st.constants.get(&size)) else {
        return vec![TVar::Mem];
    };
    if size.is_zero() {
        return Vec::new();
    }
    let words = (*size + U256::from(31u8)) / U256::from(32u8);
    if words > U256::from(64u8) {
        return vec![TVar::Mem];
    }
    let mut out = Vec::new();
    for i in 0..words.to::<usize>() {
        match st.mem.get(&(*off + U256::from(32 * i))) {
            Some(v) => out.push(*v),
            None => return vec![TVar::Mem],
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::disasm::disassemble;
    use crate::lifter::blocks::build_blocks;

    fn template(src: &str) -> BlockTemplate {
        let blocks = build_blocks(&disassemble(&assemble(src).unwrap()));
        lift_block(&blocks[0])
    }

    #[test]
    fn add_of_constants_is_folded() {
        let t = template("PUSH1 5 PUSH1 3 ADD");
        let add = &t.instrs[2];
        assert_eq!(add.op, TacOp::Arith(Opcode::ADD));
        assert_eq!(add.defs, vec![TVar::Local(2)]);
        assert_eq!(add.uses, vec![TVar::Local(1), TVar::Local(0)]);
        assert_eq!(add.constant, Some(U256::from(8u8)));
        assert_eq!(t.exit, vec![TVar::Local(2)]);
    }

    #[test]
    fn jumpi_condition_traces_to_callvalue() {
        let t = template("CALLVALUE ISZERO PUSH1 0x10 JUMPI");
        assert_eq!(t.instrs[0].op, TacOp::CallValue);
        let jumpi = t.instrs.last().unwrap();
        assert_eq!(jumpi.op, TacOp::Jumpi);
        let cond = jumpi.uses[1];
        let iszero = t.instrs.iter().find(|i| i.defs.contains(&cond)).unwrap();
        assert_eq!(iszero.op, TacOp::Arith(Opcode::ISZERO));
        assert_eq!(iszero.uses, t.instrs[0].defs);
    }

    #[test]
    fn entry_slots_and_exit() {
        // consumes two entry slots, leaves their sum
        let t = template("ADD PUSH1 1 SWAP1");
        assert_eq!(t.pops_below, 2);
        assert_eq!(t.instrs[0].uses, vec![TVar::Entry(0), TVar::Entry(1)]);
        assert_eq!(t.exit, vec![TVar::Local(1), TVar::Local(0)]);
        assert_eq!(t.delta(), 0);
    }

    #[test]
    fn log_data_resolves_constant_mstores() {
        let t = template(
            "CALLER PUSH1 0x80 MSTORE CALLVALUE PUSH1 0xa0 MSTORE \
             PUSH32 event(E(address,uint256)) PUSH1 0x40 PUSH1 0x80 LOG1",
        );
        let log = t.instrs.last().unwrap();
        assert_eq!(log.uses.len(), 3);
        let data = log.log_data.as_ref().unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(t.instrs[0].defs[0], data[0]);
    }

    #[test]
    fn log_data_falls_back_to_memory() {
        let t = template("CALLDATASIZE PUSH1 0 LOG0");
        assert_eq!(t.instrs.last().unwrap().log_data, Some(vec![TVar::Mem]));
        let t = template("PUSH1 0 PUSH1 0 LOG0");
        assert_eq!(t.instrs.last().unwrap().log_data, Some(vec![]));
    }

    #[test]
    fn call_defines_success_and_memory() {
        let t = template("PUSH1 0 DUP1 DUP1 DUP1 DUP1 DUP1 GAS CALL");
        let call = t.instrs.last().unwrap();
        assert_eq!(call.defs.len(), 2);
        assert_eq!(call.defs[1], TVar::Mem);
        assert_eq!(call.uses.len(), 8);
    }
}
