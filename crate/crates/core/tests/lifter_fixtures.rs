use std::fs;
use std::path::PathBuf;

use phantomscan_core::disasm::{disassemble, strip_metadata, Bytecode, Opcode};
use phantomscan_core::lifter::{lift, ExclusionReason, FunctionKind, Icfg, SigDb, TacOp, VarRef};

fn root() -> PathBuf {
    std::env::var_os("PHANTOMSCAN_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

fn load(name: &str) -> Bytecode {
    let path = root().join("bytecode").join(format!("{name}.hex"));
    Bytecode::from_hex(&fs::read_to_string(&path).unwrap(), name).unwrap()
}

fn sigdb() -> SigDb {
    SigDb::parse(&fs::read_to_string(root().join("sigdb.txt")).unwrap()).unwrap()
}

fn icfg(name: &str) -> Icfg {
    lift(&load(name), &sigdb())
}

#[test]
fn counterfeit_metadata_trailer() {
    let code = load("EventCounterfeit");
    let n = code.len();
    // final two bytes hold the trailer length
    let trailer = u16::from_be_bytes([code.bytes[n - 2], code.bytes[n - 1]]) as usize;
    assert_eq!(trailer, 53);
    let stripped = strip_metadata(&code);
    assert_eq!(stripped.len(), n - 55);
    assert_eq!(stripped.bytes[..], code.bytes[..n - 55]);
}

#[test]
fn counterfeit_functions_and_dispatch() {
    let g = icfg("EventCounterfeit");
    let public: Vec<&str> = g
        .functions
        .iter()
        .filter(|f| f.kind == FunctionKind::Public)
        .map(|f| f.name.as_str())
        .collect();
    assert_eq!(public.len(), 2, "{}", g.dump());
    assert!(public.contains(&"deposit") && public.contains(&"depositETH"));
    assert_eq!(g.functions.iter().filter(|f| f.kind == FunctionKind::Fallback).count(), 1);
    assert!(g.unresolved.is_empty(), "{}", g.dump());
    // depositETH body, deposit body, safeTransfer
    assert_eq!(g.functions.iter().filter(|f| f.kind == FunctionKind::Internal).count(), 3, "{}", g.dump());
    assert_eq!(g.call_edges.len(), 3);
}

#[test]
fn inconsistent_logging_topics_trace_to_sources() {
    let g = icfg("InconsistentLogging");
    let log = g
        .blocks
        .iter()
        .flat_map(|b| &b.instrs)
        .find(|i| matches!(i.op, TacOp::Log { .. }))
        .unwrap();
    // uses: offset, size, topic0, topic1
    assert_eq!(log.uses.len(), 4);
    let (_, topic1_def) = g.defining_instr(log.uses[3]).unwrap();
    assert_eq!(topic1_def.op, TacOp::Caller);
    let TacOp::Log { data, .. } = &log.op else { unreachable!() };
    assert_eq!(data.len(), 2);
    // data words come from the entry stack of the emitting block, i.e. the
    // CALLDATALOADs in the wrapper
    assert!(data.iter().all(|v| matches!(v, VarRef::Slot(..))), "{}", g.dump());
}

#[test]
fn every_log_is_owned_or_excluded() {
    for name in ["EventCounterfeit", "InconsistentLogging", "InconsistentLoggingFixed", "EmitHelper", "UncheckedCall", "Dispatcher", "Branchy", "Loop", "NoLogs"] {
        let code = load(name);
        let raw_logs: Vec<usize> = disassemble(&strip_metadata(&code).bytes)
            .iter()
            .filter(|i| i.opcode.log_topics().is_some())
            .map(|i| i.offset)
            .collect();
        let g = lift(&code, &sigdb());
        for off in raw_logs {
            let owners = g
                .blocks
                .iter()
                .filter(|b| b.instrs.iter().any(|i| i.src_offset == off && matches!(i.op, TacOp::Log { .. })))
                .count();
            assert_eq!(owners, 1, "{name}: log at {off:#x}");
        }
        // only the trailing INVALID guard is dead code
        assert!(
            g.excluded.iter().all(|x| x.reason == ExclusionReason::Unreachable),
            "{name}: {:?}",
            g.excluded
        );
    }
}

#[test]
fn resolved_targets_are_jumpdests() {
    for name in ["EventCounterfeit", "EmitHelper", "Loop"] {
        let code = strip_metadata(&load(name));
        let instrs = disassemble(&code.bytes);
        let g = lift(&load(name), &sigdb());
        for (a, b) in &g.intra_edges {
            let from = &g.blocks[*a];
            let to = &g.blocks[*b];
            if matches!(from.terminator, phantomscan_core::lifter::Terminator::Jump) {
                let first = instrs.iter().find(|i| i.offset == to.start).unwrap();
                assert_eq!(first.opcode, Opcode::JUMPDEST);
            }
        }
    }
}

#[test]
fn canonical_dump_is_stable() {
    for name in ["EventCounterfeit", "EmitHelper"] {
        assert_eq!(icfg(name).dump(), icfg(name).dump());
    }
}
