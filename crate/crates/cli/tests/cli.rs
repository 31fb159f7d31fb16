use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_in(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phantomscan")).args(args).current_dir(dir).output().unwrap()
}

fn run(args: &[&str]) -> Output {
    run_in(&root(), args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn jsonl(o: &Output) -> Vec<Value> {
    stdout(o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["analyze-source", "source/counterfeit.msol"]).status.code(), Some(1));
    assert_eq!(run(&["analyze-source", "source/disjoint.msol"]).status.code(), Some(0));
    assert_eq!(run(&["scan-logs", "logs/empty.jsonl", "--rules", "logs/spoofing.toml"]).status.code(), Some(0));
    assert_eq!(run(&["disasm", "bytecode/Loop.hex"]).status.code(), Some(0));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["disasm", "missing.hex"]).status.code(), Some(2));
    assert_eq!(run(&["scan-logs", "logs/empty.jsonl"]).status.code(), Some(2));
    assert_eq!(run(&["scan-logs", "logs/empty.jsonl", "--rules", "logs/empty.jsonl"]).status.code(), Some(0));
}

#[test]
fn bad_inputs_exit_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.msol"), "contract C {\n  function f( {}\n}\n").unwrap();
    let o = run_in(dir.path(), &["analyze-source", "bad.msol"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.msol:2:"), "{}", stderr(&o));

    fs::write(dir.path().join("bad.hex"), "0x60zz").unwrap();
    assert_eq!(run_in(dir.path(), &["disasm", "bad.hex"]).status.code(), Some(2));

    fs::write(dir.path().join("bad.toml"), "[[project]]\nname = 1\n").unwrap();
    let o = run_in(dir.path(), &["scan-logs", &root().join("logs/empty.jsonl").display().to_string(), "--rules", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_log_lines_are_skipped_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = fs::read_to_string(root().join("logs/spoofing.jsonl")).unwrap();
    corpus.insert_str(0, "{not json}\n");
    fs::write(dir.path().join("c.jsonl"), corpus).unwrap();
    let rules = root().join("logs/spoofing.toml").display().to_string();
    let o = run_in(dir.path(), &["--json", "scan-logs", "c.jsonl", "--rules", &rules]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(jsonl(&o).len(), 1);
    assert!(stderr(&o).contains("c.jsonl:1:"), "{}", stderr(&o));
}

#[test]
fn disasm_listing() {
    let o = run(&["disasm", "bytecode/Loop.hex"]);
    let text = stdout(&o);
    let first: Vec<&str> = text.lines().take(2).collect();
    assert_eq!(first, ["0: PUSH1 0x04", "2: CALLDATASIZE"]);
    let o = run(&["--json", "disasm", "bytecode/Loop.hex"]);
    let rows = jsonl(&o);
    assert_eq!(rows[0]["immediate"], "0x04");
    assert_eq!(rows.len(), text.lines().count());
}

#[test]
fn icfg_dot_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("g.dot");
    let o = run(&["--json", "icfg", "bytecode/Dispatcher.hex", "--dot", &dot.display().to_string()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(&dot).unwrap().starts_with("digraph"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["functions"].as_array().unwrap().len() >= 2);
    // Names come from the fixture signature database found next to the input.
    assert!(stdout(&run(&["icfg", "bytecode/Dispatcher.hex"])).contains("set"));
}

#[test]
fn parse_modes() {
    let o = run(&["parse", "source/disjoint.msol"]);
    assert!(stdout(&o).contains("moveSmall: emits [Moved]"));
    let o = run(&["parse", "--dump-ast", "source/disjoint.msol"]);
    let ast: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(ast["name"]["name"], "Tiers");
    let o = run(&["parse", "--grammar"]);
    assert!(stdout(&o).contains("contract"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn emit_smt_writes_one_script_per_query() {
    let dir = tempfile::tempdir().unwrap();
    let smt = dir.path().join("smt");
    let o = run(&["-q", "analyze-source", "source/branches.msol", "--emit-smt", &smt.display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let mut names: Vec<String> =
        fs::read_dir(&smt).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["Flagged_0_1.smt2", "Recorded_0_1.smt2"]);
    let script = fs::read_to_string(smt.join("Flagged_0_1.smt2")).unwrap();
    assert!(script.ends_with("(check-sat)\n"));
}

#[test]
fn out_file_matches_json_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.jsonl");
    let o = run(&["--json", "--out", &out.display().to_string(), "analyze-bytecode", "bytecode/EmitHelper.hex"]);
    assert_eq!(stdout(&o), fs::read_to_string(&out).unwrap());
    let o = run(&["--out", &out.display().to_string(), "analyze-bytecode", "bytecode/EmitHelper.hex"]);
    assert!(stdout(&o).contains("[POTENTIAL] EVENT_COUNTERFEITING"));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
}

#[test]
fn report_links_layers() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b.jsonl").display().to_string();
    let s = dir.path().join("s.jsonl").display().to_string();
    let t = dir.path().join("t.jsonl").display().to_string();
    run(&["-q", "--out", &b, "analyze-bytecode", "bytecode/EventCounterfeit.hex", "--contract", "Bridge"]);
    run(&["-q", "--out", &s, "analyze-source", "source/counterfeit.msol"]);
    run(&["-q", "--out", &t, "scan-logs", "logs/pnetwork.jsonl", "--rules", "logs/pnetwork.toml"]);
    let o = run(&["--json", "report", &b, &s, &t, &b]);
    assert_eq!(o.status.code(), Some(1));
    let merged = jsonl(&o);
    assert_eq!(merged.len(), 4, "duplicates collapse");
    let byte = merged.iter().find(|f| f["layer"] == "BYTECODE").unwrap();
    let src = merged.iter().find(|f| f["layer"] == "SOURCE").unwrap();
    assert_eq!(byte["confirmed_by"], src["id"]);
    assert_eq!(byte["confidence"], "POTENTIAL");
    // Feeding the merged output back in is a fixed point.
    let m = dir.path().join("m.jsonl");
    fs::write(&m, stdout(&o)).unwrap();
    let again = run(&["--json", "report", &m.display().to_string()]);
    assert_eq!(stdout(&again), stdout(&o));
    let text = stdout(&run(&["report", &b, &s]));
    assert!(text.contains("[CONFIRMED] EVENT_COUNTERFEITING BYTECODE Bridge"), "{text}");

    fs::write(dir.path().join("junk.jsonl"), "nonsense\n").unwrap();
    let o = run(&["report", &dir.path().join("junk.jsonl").display().to_string()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("junk.jsonl:1"));
}

#[test]
fn fixture_root_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_phantomscan"))
        .args(["--json", "analyze-bytecode", "bytecode/Dispatcher.hex"])
        .current_dir(dir.path())
        .env("PHANTOMSCAN_FIXTURES", root())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(jsonl(&o)[0]["event"], "Set(uint256)");
}

#[test]
fn quiet_prints_nothing() {
    let o = run(&["--quiet", "scan-logs", "logs/spoofing.jsonl", "--rules", "logs/spoofing.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
}
