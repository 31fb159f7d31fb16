//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p phantomscan --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use phantomscan_core::disasm::{strip_metadata, Bytecode};
use phantomscan_core::hash::event_topic;
use phantomscan_core::lifter::{lift, SigDb};
use phantomscan_core::symexec::{solve, Verdict};
use phantomscan_core::taint::{backward_slice, extract_log_ops, Bounds};
use phantomscan_core::txscan::abi::{encode_data, word};
use phantomscan_core::txscan::{scan_str, AbiValue, Address, LogRecord, RuleSet, Scanner, H256};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ruint::aliases::U256;
use serde_json::Value;

#[path = "../../core/tests/support/solver_oracle.rs"]
mod solver_oracle;
#[path = "../../core/tests/support/reverse_paths.rs"]
mod reverse_paths;
#[path = "../../core/tests/support/disasm_check.rs"]
mod disasm_check;

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    std::env::var_os("PHANTOMSCAN_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
    elapsed: Duration,
}

fn cli(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_phantomscan"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("spawn phantomscan");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        elapsed: start.elapsed(),
    }
}

fn findings(r: &Run) -> Result<Vec<Value>, String> {
    r.stdout
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| format!("bad JSONL line {l:?}: {e}")))
        .collect()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn of_kind<'a>(fs: &'a [Value], kind: &str) -> Vec<&'a Value> {
    fs.iter().filter(|f| f["kind"] == kind).collect()
}

const DEPOSIT: &str = "Deposit(address,uint256,address,uint256)";

fn counterfeit_poc() -> Outcome {
    let src = cli(&["--json", "analyze-source", "source/counterfeit.msol"]);
    ensure(src.code == 1, format!("analyze-source exit {} ({})", src.code, src.stderr.trim()))?;
    ensure(src.elapsed < Duration::from_secs(5), format!("analyze-source took {:?}", src.elapsed))?;
    let fs = findings(&src)?;
    let ec = of_kind(&fs, "EVENT_COUNTERFEITING");
    ensure(ec.len() == 1, format!("{} source EC findings", ec.len()))?;
    let f = ec[0];
    ensure(f["confidence"] == "CONFIRMED" && f["event"] == DEPOSIT, format!("unexpected finding {f}"))?;
    let model = f["evidence"]["witness"]["model"].as_object().ok_or("no witness model")?;
    let zero = "0x0000000000000000000000000000000000000000";
    ensure(
        model.iter().any(|(k, v)| k.starts_with("token@") && v == zero),
        format!("witness lacks token = address(0): {model:?}"),
    )?;

    let byc = cli(&["--json", "analyze-bytecode", "bytecode/EventCounterfeit.hex"]);
    ensure(byc.code == 1, format!("analyze-bytecode exit {} ({})", byc.code, byc.stderr.trim()))?;
    ensure(byc.elapsed < Duration::from_secs(5), format!("analyze-bytecode took {:?}", byc.elapsed))?;
    let fs = findings(&byc)?;
    let hits: Vec<_> = of_kind(&fs, "EVENT_COUNTERFEITING")
        .into_iter()
        .filter(|f| {
            f["confidence"] == "POTENTIAL"
                && f["event"] == DEPOSIT
                && f["evidence"]["conditions"].as_array().is_some_and(|c| c.iter().any(|x| x == "MULTI_TAINTED_PATHS"))
        })
        .collect();
    ensure(!hits.is_empty(), "no POTENTIAL MULTI_TAINTED_PATHS finding on Deposit")?;
    Ok(format!("source {:?}, bytecode {:?}, {} bytecode finding(s)", src.elapsed, byc.elapsed, hits.len()))
}

fn disjoint_control() -> Outcome {
    let r = cli(&["--json", "analyze-source", "source/disjoint.msol"]);
    ensure(r.code == 0, format!("exit {} ({})", r.code, r.stderr.trim()))?;
    let n = of_kind(&findings(&r)?, "EVENT_COUNTERFEITING").len();
    ensure(n == 0, format!("{n} EC findings"))?;
    Ok("0 EC findings".into())
}

fn inconsistent_logging() -> Outcome {
    let cases = [
        ("analyze-source", "source/inconsistent_logging.msol", 1),
        ("analyze-bytecode", "bytecode/InconsistentLogging.hex", 1),
        ("analyze-source", "source/inconsistent_logging_fixed.msol", 0),
        ("analyze-bytecode", "bytecode/InconsistentLoggingFixed.hex", 0),
    ];
    for (cmd, file, want) in cases {
        let r = cli(&["--json", cmd, file]);
        let fs = findings(&r)?;
        let n = of_kind(&fs, "INCONSISTENT_LOGGING").len();
        ensure(n == want, format!("{file}: {n} INCONSISTENT_LOGGING findings, want {want}"))?;
        ensure(fs.len() == want, format!("{file}: {} findings in total", fs.len()))?;
        ensure(r.code == i32::from(want > 0), format!("{file}: exit {}", r.code))?;
    }
    Ok("1/1 on the attack, 0/0 on the storage-validating variant".into())
}

fn pnetwork() -> Outcome {
    let r = cli(&["--json", "scan-logs", "logs/pnetwork.jsonl", "--rules", "logs/pnetwork.toml"]);
    ensure(r.code == 1, format!("exit {} ({})", r.code, r.stderr.trim()))?;
    let fs = findings(&r)?;
    ensure(fs.len() == 2, format!("{} findings", fs.len()))?;
    let rules = RuleSet::parse(&fs::read_to_string(root().join("logs/pnetwork.toml")).unwrap()).map_err(|e| e.to_string())?;
    let corpus: Vec<Value> = fs::read_to_string(root().join("logs/pnetwork.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let redeem = format!("0x{}", hex::encode(event_topic("Redeem(address,uint256,string,bytes)")));

    let blended = of_kind(&fs, "BLENDED_EVENT");
    ensure(blended.len() == 1, format!("{} BLENDED_EVENT findings", blended.len()))?;
    let forged = blended[0]["evidence"]["forged"].as_array().ok_or("no forged list")?;
    ensure(forged.len() == 1, "forged list should cite one log")?;
    let idx = forged[0]["log_index"].as_u64().ok_or("no log index")?;
    let log = corpus.iter().find(|l| l["logIndex"] == idx).ok_or("cited log not in corpus")?;
    let emitter = Address::parse(log["address"].as_str().unwrap()).map_err(|e| e.to_string())?;
    ensure(!rules.projects[0].is_authentic(&emitter), "cited log comes from an authentic emitter")?;
    ensure(log["topics"][0] == redeem.as_str(), "cited log is not a Redeem")?;

    let rv = of_kind(&fs, "RULE_VIOLATION");
    ensure(rv.len() == 1 && rv[0]["evidence"]["check"] == 2, format!("rule violations: {rv:?}"))?;

    let b = cli(&["--json", "scan-logs", "logs/pnetwork_benign.jsonl", "--rules", "logs/pnetwork.toml"]);
    ensure(b.code == 0 && findings(&b)?.is_empty(), format!("benign corpus: exit {}, {}", b.code, b.stdout))?;
    Ok(format!("BLENDED_EVENT on log {idx}, RULE_VIOLATION check 2; benign 0"))
}

fn spoofing() -> Outcome {
    let text = fs::read_to_string(root().join("logs/spoofing.jsonl")).unwrap();
    let mut txs: Vec<String> = Vec::new();
    for l in text.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        let h = v["txHash"].as_str().unwrap().to_string();
        if !txs.contains(&h) {
            txs.push(h);
        }
    }
    ensure(txs.len() == 3, format!("{} rows in the corpus", txs.len()))?;
    let r = cli(&["--json", "scan-logs", "logs/spoofing.jsonl", "--rules", "logs/spoofing.toml"]);
    ensure(r.code == 1, format!("exit {} ({})", r.code, r.stderr.trim()))?;
    let fs = findings(&r)?;
    ensure(fs.len() == 1, format!("{} findings", fs.len()))?;
    ensure(fs[0]["kind"] == "TRANSFER_SPOOFING", format!("kind {}", fs[0]["kind"]))?;
    ensure(fs[0]["subject"] == txs[1].as_str(), format!("finding on {} not row 2", fs[0]["subject"]))?;
    let a = cli(&["--json", "scan-logs", "logs/spoofing_approved.jsonl", "--rules", "logs/spoofing.toml"]);
    ensure(a.code == 0 && findings(&a)?.is_empty(), format!("with prior approval: exit {}, {}", a.code, a.stdout))?;
    Ok("1 finding on row 2; 0 with the prior Approval".into())
}

fn deterministic(seed: u8, cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

fn solver_oracle() -> Outcome {
    use solver_oracle::*;
    let mut runner = deterministic(7, 1000);
    let counts = std::cell::RefCell::new((0usize, 0usize, 0usize));
    let strat = prop::collection::vec(form_strategy(), 1..5);
    runner
        .run(&strat, |fs| {
            let (all, syms) = bounded(&fs);
            let r = solve(&syms);
            let expected = brute(&all);
            prop_assert_eq!(r.verdict, if expected { Verdict::Sat } else { Verdict::Unsat });
            if r.verdict == Verdict::Sat {
                let m = r.model.as_ref().ok_or_else(|| TestCaseError::fail("SAT without a model"))?;
                let x = model_point(m);
                prop_assert!(all.iter().all(|f| holds(f, &x)), "model {:?} violates a conjunct", x);
            }
            let mut c = counts.borrow_mut();
            c.0 += 1;
            if expected {
                c.1 += 1;
            } else {
                c.2 += 1;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let (total, sat, unsat) = *counts.borrow();
    ensure(total == 1000, format!("only {total} cases ran"))?;
    Ok(format!("{total} conjunctions, {sat} SAT / {unsat} UNSAT, all agree"))
}

fn hex_fixtures() -> Vec<(String, PathBuf)> {
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(root().join("bytecode"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "hex"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    out
}

fn path_oracle() -> Outcome {
    let sigdb = SigDb::parse(&fs::read_to_string(root().join("sigdb.txt")).unwrap()).map_err(|e| e.to_string())?;
    let (mut fixtures, mut sites) = (0, 0);
    for (name, path) in hex_fixtures() {
        let code = Bytecode::from_hex(&fs::read_to_string(&path).unwrap(), &name).map_err(|e| e.to_string())?;
        let icfg = lift(&code, &sigdb);
        if icfg.blocks.len() > 64 {
            continue;
        }
        fixtures += 1;
        for unroll in [0, 1, 2] {
            let bounds = Bounds { unroll, max_paths: 100_000, max_depth: 10_000 };
            for log in extract_log_ops(&icfg) {
                let r = backward_slice(&log, &icfg, bounds);
                ensure(r.exceeded.is_none(), format!("{name}: search bound hit"))?;
                let mut got: Vec<Vec<usize>> = r.paths.iter().map(|p| p.blocks.clone()).collect();
                got.sort();
                got.dedup();
                ensure(got.len() == r.paths.len(), format!("{name}: duplicate paths"))?;
                let want = reverse_paths::oracle(&icfg, &log, unroll);
                ensure(got == want, format!("{name} @{:#x} unroll {unroll}: {} vs {} paths", log.src_offset, got.len(), want.len()))?;
                sites += 1;
            }
        }
    }
    ensure(sites > 0, "no log sites checked")?;
    Ok(format!("{fixtures} fixtures, {sites} (log site, unroll) pairs"))
}

/// One CLI invocation whose machine output must not vary between runs.
struct Invocation {
    args: Vec<String>,
    smt: bool,
}

fn run_capture(inv: &Invocation, dir: &Path) -> (Run, Vec<u8>, BTreeMap<String, Vec<u8>>) {
    let out = dir.join("out.jsonl");
    let smt = dir.join("smt");
    let mut args: Vec<String> = vec!["--json".into(), "--out".into(), out.display().to_string()];
    args.extend(inv.args.iter().cloned());
    if inv.smt {
        args.push("--emit-smt".into());
        args.push(smt.display().to_string());
    }
    let r = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let file = fs::read(&out).unwrap_or_default();
    let mut smts = BTreeMap::new();
    if let Ok(rd) = fs::read_dir(&smt) {
        for e in rd {
            let p = e.unwrap().path();
            smts.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    (r, file, smts)
}

fn determinism() -> Outcome {
    let s = |x: &str| x.to_string();
    let mut invs: Vec<Invocation> = Vec::new();
    for (_, p) in hex_fixtures() {
        let p = p.display().to_string();
        for cmd in ["disasm", "icfg", "analyze-bytecode"] {
            invs.push(Invocation { args: vec![s(cmd), p.clone()], smt: false });
        }
    }
    let mut sources: Vec<PathBuf> =
        fs::read_dir(root().join("source")).unwrap().map(|e| e.unwrap().path()).collect();
    sources.sort();
    for p in &sources {
        let p = p.display().to_string();
        invs.push(Invocation { args: vec![s("parse"), p.clone()], smt: false });
        invs.push(Invocation { args: vec![s("analyze-source"), p], smt: true });
    }
    let logs = root().join("logs");
    for (corpus, rules) in [
        ("pnetwork.jsonl", "pnetwork.toml"),
        ("pnetwork.jsonl", "pnetwork_strict.toml"),
        ("pnetwork_benign.jsonl", "pnetwork.toml"),
        ("spoofing.jsonl", "spoofing.toml"),
        ("spoofing_approved.jsonl", "spoofing.toml"),
        ("empty.jsonl", "pnetwork.toml"),
    ] {
        invs.push(Invocation {
            args: vec![
                s("scan-logs"),
                logs.join(corpus).display().to_string(),
                s("--rules"),
                logs.join(rules).display().to_string(),
            ],
            smt: false,
        });
    }

    let tmp = tempfile::tempdir().unwrap();
    let mut reports: Vec<String> = Vec::new();
    let mut n = 0;
    for (i, inv) in invs.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b")));
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        let (ra, fa, sa) = run_capture(inv, &a);
        let (rb, fb, sb) = run_capture(inv, &b);
        let what = inv.args.join(" ");
        ensure(ra.code == 0 || ra.code == 1, format!("{what}: exit {} ({})", ra.code, ra.stderr.trim()))?;
        ensure(ra.code == rb.code, format!("{what}: exit codes differ"))?;
        ensure(ra.stdout == rb.stdout, format!("{what}: stdout differs"))?;
        ensure(fa == fb, format!("{what}: --out files differ"))?;
        ensure(!fa.is_empty() || ra.code == 0, format!("{what}: empty --out with findings"))?;
        ensure(sa == sb, format!("{what}: SMT scripts differ"))?;
        if inv.smt && !sa.is_empty() {
            n += 1;
        }
        if inv.args[0].starts_with("analyze") || inv.args[0] == "scan-logs" {
            reports.push(a.join("out.jsonl").display().to_string());
        }
        n += 1;
    }
    // The report merge, over every findings file produced above and in
    // reverse order.
    let mut rev = reports.clone();
    rev.reverse();
    let mut outs = Vec::new();
    for (k, files) in [&reports, &rev].into_iter().enumerate() {
        let out = tmp.path().join(format!("report{k}.jsonl"));
        let mut args = vec![s("--json"), s("--out"), out.display().to_string(), s("report")];
        args.extend(files.iter().cloned());
        let r = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
        ensure(r.code == 1, format!("report exit {} ({})", r.code, r.stderr.trim()))?;
        outs.push((r.stdout, fs::read(&out).unwrap()));
        n += 1;
    }
    ensure(outs[0] == outs[1], "report output depends on input order")?;
    Ok(format!("{n} invocations, byte-identical"))
}

fn disasm_round_trip() -> Outcome {
    let mut runner = deterministic(11, 10_000);
    let count = std::cell::Cell::new(0u32);
    let strat = prop::collection::vec(any::<u8>(), 0..=512);
    runner
        .run(&strat, |code| {
            disasm_check::check(&code);
            let s = strip_metadata(&Bytecode::new(code.clone(), "fuzz"));
            prop_assert!(code.starts_with(&s.bytes));
            count.set(count.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    for len in [0usize, 1, 33, 512] {
        disasm_check::check(&vec![0x7f; len]);
    }
    ensure(count.get() == 10_000, format!("only {} cases ran", count.get()))?;
    Ok("10000 random byte strings plus boundary sizes".into())
}

fn synthetic_corpus(n: usize) -> (String, RuleSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let pool: Vec<Address> = (1..=6u8)
        .map(|i| {
            let mut a = [0u8; 20];
            a[0] = 0xa0;
            a[19] = i;
            Address(a)
        })
        .collect();
    let rules = RuleSet::parse(&format!(
        "[[project]]\nname = \"bridge\"\nemitters = [\"{}\"]\n\
         [[project.event]]\ndecl = \"Redeem(address indexed redeemer, uint256 value, string recipient, bytes data)\"\n\
         selectors = [\"redeem(uint256,string)\"]\npredicates = [\"redeemer == tx.from\", \"value > 0\"]\n",
        pool[0]
    ))
    .unwrap();
    let addr = |a: Address| H256(word(&AbiValue::Address(a)));
    let mut text = String::new();
    let (mut produced, mut tx) = (0usize, 0u64);
    while produced < n {
        let sender = pool[rng.gen_range(0..pool.len())];
        let logs = rng.gen_range(1..=5).min(n - produced);
        let mut hash = [0u8; 32];
        hash[24..].copy_from_slice(&tx.to_be_bytes());
        for k in 0..logs {
            let emitter = pool[rng.gen_range(0..pool.len())];
            let (a, b) = (pool[rng.gen_range(0..pool.len())], pool[rng.gen_range(0..pool.len())]);
            let amount = AbiValue::Uint(U256::from(rng.gen_range(0u64..3)));
            let (sig, topics, data) = match rng.gen_range(0..4) {
                0 => ("Transfer(address,address,uint256)", vec![addr(a), addr(b)], vec![amount]),
                1 => ("Approval(address,address,uint256)", vec![addr(a), addr(b)], vec![amount]),
                2 => ("ApprovalForAll(address,address,bool)", vec![addr(a), addr(b)], vec![AbiValue::Bool(rng.gen())]),
                _ => (
                    "Redeem(address,uint256,string,bytes)",
                    vec![addr(if rng.gen() { sender } else { a })],
                    vec![amount, AbiValue::String("btc".into()), AbiValue::Bytes(vec![])],
                ),
            };
            let mut all = vec![H256(event_topic(sig))];
            all.extend(topics);
            let rec = LogRecord {
                tx_hash: H256(hash),
                log_index: k as u64,
                block_number: 1000 + tx / 3,
                emitter,
                topics: all,
                data: encode_data(&data),
                tx_sender: sender,
                tx_to: Some(pool[0]),
                tx_input_selector: None,
            };
            text += &rec.to_json_line();
            text.push('\n');
        }
        produced += logs;
        tx += 1;
    }
    (text, rules)
}

fn streaming() -> Outcome {
    let (text, rules) = synthetic_corpus(1000);
    let whole = scan_str(&text, &rules);
    ensure(whole.records == 1000, format!("{} records ingested", whole.records))?;
    ensure(whole.errors.is_empty(), format!("{} ingest errors", whole.errors.len()))?;
    ensure(!whole.findings.is_empty(), "synthetic corpus produced no findings")?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut slowest = Duration::ZERO;
    for _ in 0..5 {
        let start = Instant::now();
        let mut s = Scanner::new(&rules);
        let mut at = 0;
        while at < text.len() {
            let end = (at + rng.gen_range(1..700)).min(text.len());
            s.feed_text(&text[at..end]);
            at = end;
        }
        let chunked = s.finish();
        slowest = slowest.max(start.elapsed());
        ensure(chunked.findings == whole.findings, "chunked findings differ from one pass")?;
        ensure(chunked == whole, "chunked report differs from one pass")?;
    }
    ensure(slowest < Duration::from_secs(2), format!("chunked scan took {slowest:?}"))?;
    Ok(format!("{} findings in {} txs, 5 chunkings equal, slowest {slowest:?}", whole.findings.len(), whole.transactions))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("counterfeiting PoC at source and bytecode level", counterfeit_poc),
        ("disjoint-constraint control", disjoint_control),
        ("inconsistent-logging PoC and fixed variant", inconsistent_logging),
        ("pNetwork corpus and benign sibling", pnetwork),
        ("transfer spoofing corpus and prior approval", spoofing),
        ("solver agrees with brute force", solver_oracle),
        ("backward slices equal exhaustive reverse search", path_oracle),
        ("deterministic machine output", determinism),
        ("disassembler round trip", disasm_round_trip),
        ("streaming equals batch scan", streaming),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match res {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
