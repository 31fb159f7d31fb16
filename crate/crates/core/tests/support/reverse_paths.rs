//! Exhaustive reverse search over the public graph data: the reference
//! for backward slicing.

use std::collections::BTreeMap;

use phantomscan_core::lifter::{FunctionKind, Icfg};
use phantomscan_core::taint::LogOp;

struct State {
    blocks: Vec<usize>,
    stack: Vec<usize>,
    back: BTreeMap<(usize, usize), usize>,
}

pub fn oracle(icfg: &Icfg, log: &LogOp, unroll: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut work = vec![State { blocks: vec![log.block], stack: vec![], back: BTreeMap::new() }];
    while let Some(s) = work.pop() {
        let b = *s.blocks.last().unwrap();
        let f = &icfg.functions[icfg.blocks[b].function];
        let go = |to: usize, stack: Vec<usize>, back: BTreeMap<(usize, usize), usize>| {
            let mut blocks = s.blocks.clone();
            blocks.push(to);
            State { blocks, stack, back }
        };
        if f.entry == b {
            if let Some((&e, rest)) = s.stack.split_last() {
                work.push(go(icfg.call_edges[e].site, rest.to_vec(), s.back.clone()));
            } else {
                let sites: Vec<usize> =
                    icfg.call_edges.iter().filter(|e| e.callee_entry == b).map(|e| e.site).collect();
                if f.kind != FunctionKind::Internal || sites.is_empty() {
                    out.push(s.blocks.clone());
                }
                if f.kind == FunctionKind::Internal {
                    for site in sites {
                        work.push(go(site, vec![], s.back.clone()));
                    }
                }
            }
        }
        for &(p, q) in &icfg.intra_edges {
            if q != b || icfg.blocks[p].excluded {
                continue;
            }
            let mut back = s.back.clone();
            if icfg.back_edges.contains(&(p, q)) {
                let c = back.entry((p, q)).or_insert(0);
                if *c >= unroll {
                    continue;
                }
                *c += 1;
            }
            work.push(go(p, s.stack.clone(), back));
        }
        for (i, e) in icfg.call_edges.iter().enumerate() {
            if e.return_block != b {
                continue;
            }
            for &x in &icfg.functions[e.callee].exits {
                let mut stack = s.stack.clone();
                stack.push(i);
                work.push(go(x, stack, s.back.clone()));
            }
        }
    }
    out.sort();
    out
}
