//! `phantomscan`: forged-event detectors behind one command.
//!
//! Exit status: 0 ran with no findings, 1 ran with findings, 2 usage or
//! I/O error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use phantomscan_core::disasm::{disassemble, strip_metadata, Bytecode};
use phantomscan_core::lifter::{lift, SigDb};
use phantomscan_core::minisol::{self, summarize, GRAMMAR};
use phantomscan_core::report::{self, effective_confidence, Finding, LineError};
use phantomscan_core::symexec::{self, SearchBounds, SourceOptions};
use phantomscan_core::taint::{self, Bounds, DetectOptions};
use phantomscan_core::txscan::{RuleSet, Scanner};
use serde_json::Value;

const FIXTURES_ENV: &str = "PHANTOMSCAN_FIXTURES";

#[derive(Parser)]
#[command(name = "phantomscan", version, about = "Detect forged smart-contract events")]
struct Cli {
    /// Print nothing on stdout; rely on the exit status and --out.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Print machine-readable output on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Also write the machine-readable output to this file.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Disassemble a hex bytecode file.
    Disasm { file: PathBuf },
    /// Print the inter-procedural control-flow graph.
    Icfg {
        file: PathBuf,
        #[arg(long)]
        sigdb: Option<PathBuf>,
        /// Write a Graphviz rendering of the graph.
        #[arg(long, value_name = "FILE")]
        dot: Option<PathBuf>,
    },
    /// Parse a minisol contract.
    Parse {
        #[arg(required_unless_present = "grammar")]
        file: Option<PathBuf>,
        #[arg(long)]
        dump_ast: bool,
        /// Print the grammar and exit.
        #[arg(long)]
        grammar: bool,
    },
    /// Backward taint analysis over bytecode.
    AnalyzeBytecode {
        file: PathBuf,
        #[arg(long)]
        sigdb: Option<PathBuf>,
        #[arg(long, default_value_t = Bounds::default().max_paths)]
        max_paths: usize,
        #[arg(long, default_value_t = Bounds::default().unroll)]
        unroll: usize,
        /// Contract id used as the finding subject (default: file stem).
        #[arg(long)]
        contract: Option<String>,
        /// Also report the literal constraint-or-storage rule.
        #[arg(long)]
        strict_eq2: bool,
    },
    /// Symbolic execution over minisol source.
    AnalyzeSource {
        file: PathBuf,
        /// Write one SMT-LIB script per path-pair query into this directory.
        #[arg(long, value_name = "DIR")]
        emit_smt: Option<PathBuf>,
        /// Drop the per-parameter equality coupling (diagnostic).
        #[arg(long)]
        uncoupled: bool,
        #[arg(long)]
        strict_eq2: bool,
    },
    /// Scan a JSONL log corpus.
    ScanLogs {
        corpus: PathBuf,
        #[arg(long)]
        rules: PathBuf,
    },
    /// Merge findings files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

struct Output<'a> {
    cli: &'a Cli,
    machine: String,
    human: String,
}

impl Output<'_> {
    fn finish(self) -> Result<()> {
        if let Some(path) = &self.cli.out {
            fs::write(path, &self.machine).with_context(|| format!("writing {}", path.display()))?;
        }
        if !self.cli.quiet {
            print!("{}", if self.cli.json { &self.machine } else { &self.human });
        }
        Ok(())
    }
}

/// Input paths that do not exist as given are looked up under the
/// fixture root when `PHANTOMSCAN_FIXTURES` is set.
fn resolve(p: &Path) -> PathBuf {
    if !p.exists() {
        if let Some(root) = std::env::var_os(FIXTURES_ENV) {
            let alt = PathBuf::from(root).join(p);
            if alt.exists() {
                return alt;
            }
        }
    }
    p.to_path_buf()
}

fn read(p: &Path) -> Result<String> {
    let p = resolve(p);
    fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
}

fn load_sigdb(explicit: Option<&Path>, input: &Path) -> Result<SigDb> {
    let path = match explicit {
        Some(p) => Some(resolve(p)),
        None => {
            let mut candidates: Vec<PathBuf> = Vec::new();
            if let Some(root) = std::env::var_os(FIXTURES_ENV) {
                candidates.push(PathBuf::from(root).join("sigdb.txt"));
            }
            let input = resolve(input);
            for dir in input.ancestors().skip(1).take(2) {
                candidates.push(dir.join("sigdb.txt"));
            }
            candidates.into_iter().find(|c| c.is_file())
        }
    };
    match path {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            SigDb::parse(&text).with_context(|| format!("signature database {}", p.display()))
        }
        None => Ok(SigDb::default()),
    }
}

fn load_bytecode(file: &Path, label: String) -> Result<Bytecode> {
    Bytecode::from_hex(&read(file)?, label).with_context(|| format!("decoding {}", file.display()))
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "contract".to_string(), |s| s.to_string_lossy().into_owned())
}

fn describe(f: &Finding) -> String {
    let mut s = format!(
        "[{}] {} {} {} {}",
        serde_json::to_value(effective_confidence(f)).expect("enum").as_str().unwrap_or("?"),
        f.kind,
        serde_json::to_value(f.layer).expect("enum").as_str().unwrap_or("?"),
        f.subject,
        f.event.as_deref().or(f.topic0.as_deref()).unwrap_or("-"),
    );
    let ev = &f.evidence;
    let list = |v: &Value| -> String {
        v.as_array()
            .map(|a| a.iter().map(|x| x.as_str().map_or_else(|| x.to_string(), str::to_string)).collect::<Vec<_>>().join(","))
            .unwrap_or_default()
    };
    if let Some(c) = ev.get("conditions") {
        let _ = write!(s, " conditions={}", list(c));
    }
    if let Some(e) = ev.get("entries") {
        let _ = write!(s, " entries={}", list(e));
    }
    if let Some(p) = ev.get("paths").and_then(Value::as_array) {
        let entries: Vec<String> =
            p.iter().filter_map(|x| x.get("entry").and_then(Value::as_str)).map(str::to_string).collect();
        if !entries.is_empty() {
            let _ = write!(s, " entries={}", entries.join(","));
        }
    }
    if let Some(r) = ev.get("rule").and_then(Value::as_str) {
        let _ = write!(s, " rule={r} logs={}", ev.get("log_indices").map(|v| v.to_string()).unwrap_or_default());
    }
    if let Some(d) = ev.get("detail").and_then(Value::as_str) {
        let _ = write!(s, " ({d})");
    }
    if let Some(b) = &f.confirmed_by {
        let _ = write!(s, " confirmed_by={}", &b[..12]);
    }
    s.push('\n');
    if let Some(model) = ev.pointer("/witness/model").and_then(Value::as_object) {
        let parts: Vec<String> = model.iter().map(|(k, v)| format!("{k}={}", v.as_str().map_or_else(|| v.to_string(), str::to_string))).collect();
        let _ = writeln!(s, "    witness: {}", parts.join(" "));
    }
    s
}

fn findings_output<'a>(cli: &'a Cli, findings: &[Finding], extra: &str) -> Output<'a> {
    let mut human = String::new();
    for f in findings {
        human += &describe(f);
    }
    human += extra;
    Output { cli, machine: report::to_jsonl(findings), human }
}

/// Runs a subcommand and returns its finding count.
fn run(cli: &Cli) -> Result<usize> {
    match &cli.cmd {
        Cmd::Disasm { file } => {
            let code = load_bytecode(file, stem(file))?;
            let stripped = strip_metadata(&code);
            let instrs = disassemble(&stripped.bytes);
            let mut human = String::new();
            let mut machine = String::new();
            for i in &instrs {
                let _ = write!(human, "{:x}: {}", i.offset, i.opcode);
                if let Some(imm) = &i.immediate {
                    let _ = write!(human, " 0x{}", hex::encode(imm));
                }
                human.push('\n');
                machine += &serde_json::to_string(i)?;
                machine.push('\n');
            }
            let trailer = code.len() - stripped.len();
            if trailer > 0 && !cli.quiet {
                eprintln!("note: stripped {trailer} bytes of metadata");
            }
            Output { cli, machine, human }.finish()?;
            Ok(0)
        }
        Cmd::Icfg { file, sigdb, dot } => {
            let db = load_sigdb(sigdb.as_deref(), file)?;
            let icfg = lift(&load_bytecode(file, stem(file))?, &db);
            if let Some(dot) = dot {
                fs::write(dot, icfg.to_dot()).with_context(|| format!("writing {}", dot.display()))?;
            }
            Output { cli, machine: serde_json::to_string(&icfg)? + "\n", human: icfg.dump() }.finish()?;
            Ok(0)
        }
        Cmd::Parse { file, dump_ast, grammar } => {
            if *grammar {
                Output { cli, machine: GRAMMAR.to_string(), human: GRAMMAR.to_string() }.finish()?;
                return Ok(0);
            }
            let file = file.as_ref().expect("required by clap");
            let src = read(file)?;
            let ast = minisol::parse(&src).map_err(|e| anyhow::anyhow!("{}:{e}", file.display()))?;
            let machine = serde_json::to_string(&ast)? + "\n";
            let human = if *dump_ast {
                serde_json::to_string_pretty(&ast)? + "\n"
            } else {
                let mut h = format!(
                    "contract {}: {} event(s), {} state variable(s), {} function(s)\n",
                    ast.name.name,
                    ast.events.len(),
                    ast.storage.len(),
                    ast.functions.len()
                );
                let join = |s: &std::collections::BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
                for (name, f) in &summarize(&ast).functions {
                    let _ = writeln!(
                        h,
                        "  {name}: emits [{}] reads [{}] writes [{}] requires [{}] calls [{}]",
                        join(&f.emits),
                        join(&f.s_read),
                        join(&f.s_write),
                        join(&f.constraints),
                        join(&f.external_calls)
                    );
                }
                h
            };
            Output { cli, machine, human }.finish()?;
            Ok(0)
        }
        Cmd::AnalyzeBytecode { file, sigdb, max_paths, unroll, contract, strict_eq2 } => {
            let db = load_sigdb(sigdb.as_deref(), file)?;
            let code = load_bytecode(file, contract.clone().unwrap_or_else(|| stem(file)))?;
            let icfg = lift(&code, &db);
            let bounds = Bounds { unroll: *unroll, max_paths: *max_paths, ..Bounds::default() };
            let rep = taint::detect(&icfg, &db, DetectOptions { bounds, strict_eq2: *strict_eq2 });
            let findings = report::merge(rep.findings.iter().map(Finding::from_bytecode));
            let mut extra = format!(
                "{} log operation(s), {} finding(s), {} unresolved jump(s)\n",
                rep.log_ops,
                findings.len(),
                rep.unresolved_jumps
            );
            for i in &rep.incomplete {
                let _ = writeln!(extra, "incomplete: log at {:#x} in {} ({:?})", i.src_offset, i.function, i.reason);
            }
            findings_output(cli, &findings, &extra).finish()?;
            Ok(findings.len())
        }
        Cmd::AnalyzeSource { file, emit_smt, uncoupled, strict_eq2 } => {
            let src = read(file)?;
            let ast = minisol::parse(&src).map_err(|e| anyhow::anyhow!("{}:{e}", file.display()))?;
            let opts = SourceOptions { bounds: SearchBounds::default(), coupled: !uncoupled, strict_eq2: *strict_eq2 };
            let rep = symexec::detect(&ast, opts);
            if let Some(dir) = emit_smt {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                for q in &rep.queries {
                    let name = q.event.split('(').next().unwrap_or(&q.event);
                    let path = dir.join(format!("{name}_{}_{}.smt2", q.paths.0, q.paths.1));
                    fs::write(&path, &q.smtlib).with_context(|| format!("writing {}", path.display()))?;
                }
            }
            let findings = report::merge(rep.findings.iter().map(Finding::from_source));
            let paths: usize = rep.events.iter().map(|e| e.paths.len()).sum();
            let extra = format!(
                "contract {}: {} event(s), {} path(s), {} pair queries, {} finding(s)\n",
                rep.contract,
                rep.events.len(),
                paths,
                rep.queries.len(),
                findings.len()
            );
            findings_output(cli, &findings, &extra).finish()?;
            Ok(findings.len())
        }
        Cmd::ScanLogs { corpus, rules } => {
            let rules = RuleSet::parse(&read(rules)?).with_context(|| format!("rules {}", rules.display()))?;
            let path = resolve(corpus);
            let file = fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
            let mut scanner = Scanner::new(&rules);
            for line in std::io::BufRead::lines(std::io::BufReader::new(file)) {
                scanner.feed_line(&line.with_context(|| format!("reading {}", path.display()))?);
            }
            let rep = scanner.finish();
            if !cli.quiet {
                for e in &rep.errors {
                    eprintln!("{}:{}: skipped: {}", corpus.display(), e.line, e.message);
                }
            }
            let findings = report::merge(rep.findings.iter().map(Finding::from_tx));
            let mut extra = format!(
                "{} record(s) in {} transaction(s), {} skipped line(s), {} finding(s)\n",
                rep.records,
                rep.transactions,
                rep.errors.len(),
                findings.len()
            );
            for c in &rep.caveats {
                let _ = writeln!(extra, "note: {c}");
            }
            findings_output(cli, &findings, &extra).finish()?;
            Ok(findings.len())
        }
        Cmd::Report { files } => {
            if files.is_empty() {
                bail!("report needs at least one findings file");
            }
            let mut errors: Vec<LineError> = Vec::new();
            let mut all = Vec::new();
            for f in files {
                all.extend(report::read_findings(&f.display().to_string(), &read(f)?, &mut errors));
            }
            if !cli.quiet {
                for e in &errors {
                    eprintln!("{}:{}: skipped: {}", e.file, e.line, e.message);
                }
            }
            let merged = report::merge(all);
            let extra = report::summary(&merged);
            findings_output(cli, &merged, &extra).finish()?;
            Ok(merged.len())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
