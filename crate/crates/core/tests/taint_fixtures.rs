use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use phantomscan_core::disasm::Bytecode;
use phantomscan_core::hash::event_topic;
use phantomscan_core::lifter::{lift, Icfg, SigDb, TacOp, VarRef};
use phantomscan_core::taint::{
    backward_slice, constants, detect, extract_log_ops, taint_analysis, trace, Bounds, Condition,
    Confidence, DetectOptions, FindingKind,
};

fn root() -> PathBuf {
    std::env::var_os("PHANTOMSCAN_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

fn sigdb() -> SigDb {
    SigDb::parse(&fs::read_to_string(root().join("sigdb.txt")).unwrap()).unwrap()
}

fn icfg(name: &str) -> Icfg {
    let path = root().join("bytecode").join(format!("{name}.hex"));
    lift(&Bytecode::from_hex(&fs::read_to_string(path).unwrap(), name).unwrap(), &sigdb())
}

fn findings(name: &str) -> Vec<(FindingKind, Vec<Condition>, Option<String>)> {
    detect(&icfg(name), &sigdb(), DetectOptions::default())
        .findings
        .into_iter()
        .map(|f| (f.kind, f.conditions, f.event))
        .collect()
}

#[test]
fn counterfeit_log_ops() {
    let g = icfg("EventCounterfeit");
    let ops = extract_log_ops(&g);
    assert_eq!(ops.len(), 2);
    let topics: BTreeSet<_> = ops.iter().map(|o| o.topic0).collect();
    assert_eq!(topics, BTreeSet::from([Some(event_topic("Deposit(address,uint256,address,uint256)"))]));
}

#[test]
fn counterfeit_paths_reach_both_public_entries() {
    let g = icfg("EventCounterfeit");
    let mut entries = BTreeSet::new();
    let mut total = 0;
    for op in extract_log_ops(&g) {
        let s = backward_slice(&op, &g, Bounds::default());
        assert_eq!(s.exceeded, None);
        total += s.paths.len();
        for p in &s.paths {
            entries.insert(g.functions[p.entry_function].name.clone());
            assert!(p.crossed_functions.len() >= 2);
        }
    }
    assert!(total >= 2);
    assert_eq!(entries, BTreeSet::from(["deposit".to_string(), "depositETH".to_string()]));
}

#[test]
fn counterfeit_bytecode_finding() {
    let report = detect(&icfg("EventCounterfeit"), &sigdb(), DetectOptions::default());
    assert_eq!(report.findings.len(), 1, "{:#?}", report.findings);
    let f = &report.findings[0];
    assert_eq!(f.kind, FindingKind::EventCounterfeiting);
    assert_eq!(f.conditions, vec![Condition::MultiTaintedPaths]);
    assert_eq!(f.confidence, Confidence::Potential);
    assert_eq!(f.entries, vec!["deposit".to_string(), "depositETH".to_string()]);
    assert_eq!(f.event.as_deref(), Some("Deposit(address,uint256,address,uint256)"));
    assert!(!f.witnesses.is_empty());
}

#[test]
fn inconsistent_logging_taint_reaches_calldata() {
    let g = icfg("InconsistentLogging");
    let consts = constants(&g);
    let ops = extract_log_ops(&g);
    assert_eq!(ops.len(), 1);
    assert_eq!(ops[0].topic0, Some(event_topic("WithdrawalRequested(address,uint256,uint256)")));
    let s = backward_slice(&ops[0], &g, Bounds::default());
    assert_eq!(s.paths.len(), 1);
    // the `_amount` word alone traces to calldata
    let amount = *ops[0].data_vars.last().unwrap();
    let m = taint_analysis(&s.paths[0], &BTreeSet::from([amount]), &consts).unwrap();
    assert_eq!(m.calldata_slots, BTreeSet::from([0x24]));
    assert!(!m.caller);
}

#[test]
fn inconsistent_logging_findings() {
    assert_eq!(
        findings("InconsistentLogging"),
        vec![(
            FindingKind::InconsistentLogging,
            vec![Condition::NoSstore],
            Some("WithdrawalRequested(address,uint256,uint256)".to_string())
        )]
    );
    assert!(findings("InconsistentLoggingFixed").is_empty());
}

#[test]
fn strict_eq2_does_not_flag_guarded_reader() {
    let opts = DetectOptions { strict_eq2: true, ..DetectOptions::default() };
    let r = detect(&icfg("InconsistentLogging"), &sigdb(), opts);
    assert!(r.findings.iter().all(|f| !f.conditions.contains(&Condition::Eq2Literal)));
    let r = detect(&icfg("UncheckedCall"), &sigdb(), opts);
    assert!(r.findings.iter().any(|f| f.conditions.contains(&Condition::Eq2Literal)));
}

#[test]
fn unchecked_call_findings() {
    let f = findings("UncheckedCall");
    assert_eq!(
        f,
        vec![(FindingKind::EventCounterfeiting, vec![Condition::NoConstraintExternalCall], Some("Pinged()".to_string()))]
    );
}

#[test]
fn shared_helper_findings() {
    let g = icfg("EmitHelper");
    let ops = extract_log_ops(&g);
    assert_eq!(ops.len(), 1);
    let s = backward_slice(&ops[0], &g, Bounds::default());
    assert_eq!(s.paths.len(), 2);
    let kinds: Vec<_> = findings("EmitHelper").into_iter().map(|f| (f.0, f.1)).collect();
    assert!(kinds.contains(&(FindingKind::EventCounterfeiting, vec![Condition::MultiTaintedPaths])));
    assert!(kinds.contains(&(FindingKind::InconsistentLogging, vec![Condition::NoSstore])));
}

#[test]
fn no_logs_no_findings() {
    assert!(findings("NoLogs").is_empty());
}

#[test]
fn dispatcher_permutation_keeps_findings() {
    let src = fs::read_to_string(root().join("bytecode/EventCounterfeit.easm")).unwrap();
    let a = "        DUP1 PUSH4 selector(deposit(address,uint256,uint256)) EQ PUSH :fn_deposit JUMPI\n";
    let b = "        DUP1 PUSH4 selector(depositETH(uint256)) EQ PUSH :fn_depositETH JUMPI\n";
    assert!(src.contains(a) && src.contains(b));
    let swapped = src.replace(a, "@A@").replace(b, a).replace("@A@", b);
    let code = phantomscan_core::asm::assemble(&swapped).unwrap();
    let g = lift(&Bytecode::new(code, "EventCounterfeit"), &sigdb());
    let strip = |fs: Vec<phantomscan_core::taint::BytecodeFinding>| {
        fs.into_iter().map(|f| (f.kind, f.conditions, f.topic0, f.entries)).collect::<Vec<_>>()
    };
    assert_eq!(
        strip(detect(&g, &sigdb(), DetectOptions::default()).findings),
        strip(detect(&icfg("EventCounterfeit"), &sigdb(), DetectOptions::default()).findings)
    );
}

/// Every tainted variable must have a def-use chain on the path ending at
/// an entry-data instruction: replay the chain from each source.
#[test]
fn tainted_sources_have_def_use_chains() {
    for name in ["EventCounterfeit", "InconsistentLogging", "EmitHelper", "Branchy", "Loop", "Dispatcher"] {
        let g = icfg(name);
        let consts = constants(&g);
        for op in extract_log_ops(&g) {
            for p in backward_slice(&op, &g, Bounds::default()).paths {
                let st = trace(&p.path, 0, op.data_vars.iter().copied(), &consts);
                for &h in &st.hit {
                    let it = &p.path[h].instr;
                    if !matches!(it.op, TacOp::CallDataLoad | TacOp::Caller | TacOp::CallValue | TacOp::CallDataCopy) {
                        continue;
                    }
                    // forward replay: from the source definition, follow uses to the log
                    let mut reach: BTreeSet<VarRef> = it.defs.iter().copied().collect();
                    for k in (0..h).rev() {
                        let i = &p.path[k].instr;
                        if phantomscan_core::taint::reads(i).any(|u| reach.contains(&u)) {
                            reach.extend(i.defs.iter().copied());
                        }
                    }
                    assert!(
                        op.data_vars.iter().any(|v| reach.contains(v)),
                        "{name}: source at {:#x} does not reach the log",
                        it.src_offset
                    );
                }
            }
        }
    }
}

#[test]
fn taint_is_monotone_along_paths() {
    let g = icfg("EventCounterfeit");
    let consts = constants(&g);
    for op in extract_log_ops(&g) {
        for p in backward_slice(&op, &g, Bounds::default()).paths {
            let mut st = phantomscan_core::taint::TaintState::new(op.data_vars.iter().copied());
            let mut prev = st.tainted.clone();
            for (k, it) in p.path.iter().enumerate().skip(1) {
                st.step(k, &it.instr, &consts);
                assert!(prev.is_subset(&st.tainted));
                prev = st.tainted.clone();
            }
        }
    }
}
