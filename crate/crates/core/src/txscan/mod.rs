//! Transaction-log detectors: blended events, rule checks and transfer
//! spoofing.

pub mod abi;
pub mod approvals;
pub mod record;
pub mod rules;

use std::collections::BTreeMap;
use std::fmt;

use ruint::aliases::U256;
use serde::Serialize;

pub use abi::{AbiType, AbiValue, EventAbi};
pub use approvals::{track_approvals, ApprovalState};
pub use record::{ingest, ingest_str, Address, Corpus, Grouper, LogRecord, SchemaError, TxGroup, H256};
pub use rules::RuleSet;

use approvals::transfer_topic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxFindingKind {
    BlendedEvent,
    TransferSpoofing,
    RuleViolation,
}

impl fmt::Display for TxFindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxFindingKind::BlendedEvent => "BLENDED_EVENT",
            TxFindingKind::TransferSpoofing => "TRANSFER_SPOOFING",
            TxFindingKind::RuleViolation => "RULE_VIOLATION",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EmittedAt {
    pub log_index: u64,
    pub emitter: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TxEvidence {
    Blended {
        project: String,
        event: String,
        topic0: H256,
        authentic: Vec<EmittedAt>,
        forged: Vec<EmittedAt>,
    },
    Rule {
        project: String,
        event: Option<String>,
        check: u8,
        detail: String,
        params: BTreeMap<String, AbiValue>,
    },
    Spoofing {
        token: Address,
        token_sender: Address,
        tx_sender: Address,
        recipient: Option<Address>,
        /// Amount (ERC-20) or token id (ERC-721), decimal.
        value: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TxFinding {
    pub kind: TxFindingKind,
    pub tx_hash: H256,
    pub block_number: u64,
    pub log_indices: Vec<u64>,
    pub rule: String,
    pub evidence: TxEvidence,
}

impl TxFinding {
    fn key(&self) -> (u64, H256, u64, TxFindingKind, &str) {
        (self.block_number, self.tx_hash, self.log_indices[0], self.kind, &self.rule)
    }
}

pub fn sort_findings(f: &mut [TxFinding]) {
    f.sort_by(|a, b| a.key().cmp(&b.key()));
}

/// Same-signature logs from authentic and non-authentic emitters in one
/// transaction.
pub fn detect_blended(tx: &TxGroup, rules: &RuleSet) -> Vec<TxFinding> {
    let mut out = Vec::new();
    for p in &rules.projects {
        for e in &p.events {
            let (mut authentic, mut forged) = (Vec::new(), Vec::new());
            for l in tx.logs.iter().filter(|l| l.topic0() == Some(&e.topic0)) {
                let at = EmittedAt { log_index: l.log_index, emitter: l.emitter };
                if p.is_authentic(&l.emitter) {
                    authentic.push(at);
                } else {
                    forged.push(at);
                }
            }
            if authentic.is_empty() || forged.is_empty() {
                continue;
            }
            out.push(TxFinding {
                kind: TxFindingKind::BlendedEvent,
                tx_hash: tx.tx_hash(),
                block_number: tx.block_number(),
                log_indices: forged.iter().map(|a| a.log_index).collect(),
                rule: format!("{}/{}/blended", p.name, e.abi.name),
                evidence: TxEvidence::Blended {
                    project: p.name.clone(),
                    event: e.abi.signature(),
                    topic0: e.topic0,
                    authentic,
                    forged,
                },
            });
        }
    }
    out
}

/// The four per-log checks: (1) signature declared with the right topic
/// layout, (2) emitter authentic, (3) outer selector expected when the
/// transaction calls the project directly, (4) parameters decode and
/// satisfy the predicates.
pub fn verify_rules(tx: &TxGroup, rules: &RuleSet) -> Vec<TxFinding> {
    let mut out = Vec::new();
    for l in &tx.logs {
        for p in &rules.projects {
            let authentic = p.is_authentic(&l.emitter);
            let rule = l.topic0().and_then(|t| p.event(t));
            if !authentic && rule.is_none() {
                continue;
            }
            let mut fail = |check: u8, detail: String, params: BTreeMap<String, AbiValue>| {
                out.push(TxFinding {
                    kind: TxFindingKind::RuleViolation,
                    tx_hash: l.tx_hash,
                    block_number: l.block_number,
                    log_indices: vec![l.log_index],
                    rule: format!("{}/{}/check{check}", p.name, rule.map_or("?", |r| r.abi.name.as_str())),
                    evidence: TxEvidence::Rule {
                        project: p.name.clone(),
                        event: rule.map(|r| r.abi.signature()),
                        check,
                        detail,
                        params,
                    },
                });
            };
            let Some(rule) = rule else {
                let t0 = l.topic0().map_or("none".to_string(), |t| t.to_string());
                fail(1, format!("authentic emitter {} logged undeclared topic0 {t0}", l.emitter), BTreeMap::new());
                continue;
            };
            if l.topics.len() != rule.abi.topic_count() {
                fail(
                    1,
                    format!("{} topics, {} declares {}", l.topics.len(), rule.abi.signature(), rule.abi.topic_count()),
                    BTreeMap::new(),
                );
                continue;
            }
            if !authentic {
                fail(2, format!("emitter {} is not an authentic {} contract", l.emitter, p.name), BTreeMap::new());
            }
            if !rule.selectors.is_empty() && l.tx_to.is_some_and(|to| p.is_authentic(&to)) {
                match l.tx_input_selector {
                    Some(s) if rule.selectors.contains(&s) => {}
                    s => fail(
                        3,
                        format!(
                            "transaction selector {} not expected for {}",
                            s.map_or("none".to_string(), |s| format!("0x{}", hex::encode(s))),
                            rule.abi.name
                        ),
                        BTreeMap::new(),
                    ),
                }
            }
            match rule.abi.decode(l) {
                Err(e) => fail(4, format!("undecodable: {e}"), BTreeMap::new()),
                Ok(values) => {
                    let failed: Vec<String> = rule
                        .predicates
                        .iter()
                        .filter(|pr| pr.eval(&values, l) != Some(true))
                        .map(|pr| pr.to_string())
                        .collect();
                    if !failed.is_empty() {
                        fail(4, format!("predicate failed: {}", failed.join(", ")), values.into_iter().collect());
                    }
                }
            }
        }
    }
    out
}

/// `from` and the value/id of a Transfer log, ERC-20 or ERC-721 shaped.
fn transfer_parts(l: &LogRecord) -> Option<(Address, Address, U256, bool)> {
    if l.topic0() != Some(&transfer_topic()) {
        return None;
    }
    let from = Address::from_word(&l.topics.get(1)?.0)?;
    let to = Address::from_word(&l.topics.get(2)?.0)?;
    match l.topics.len() {
        3 if l.data.len() == 32 => Some((from, to, U256::from_be_slice(&l.data), false)),
        4 if l.data.is_empty() => Some((from, to, U256::from_be_bytes(l.topics[3].0), true)),
        _ => None,
    }
}

/// A Transfer whose token sender neither sent the transaction nor
/// approved its sender, judged against `approvals` at the log's position.
pub fn spoofing_check(l: &LogRecord, approvals: &ApprovalState, rules: &RuleSet) -> Option<TxFinding> {
    let (from, to, value, nft) = transfer_parts(l)?;
    if from == l.tx_sender || rules.spoof_ignore.contains(&from) {
        return None;
    }
    if approvals.approves(l.emitter, from, l.tx_sender, nft.then_some(value)) {
        return None;
    }
    Some(TxFinding {
        kind: TxFindingKind::TransferSpoofing,
        tx_hash: l.tx_hash,
        block_number: l.block_number,
        log_indices: vec![l.log_index],
        rule: "transfer/spoofing".into(),
        evidence: TxEvidence::Spoofing {
            token: l.emitter,
            token_sender: from,
            tx_sender: l.tx_sender,
            recipient: Some(to),
            value: Some(value.to_string()),
        },
    })
}

/// Spoofing findings for one transaction, folding its approvals into
/// `approvals` as it goes.
pub fn detect_spoofing(tx: &TxGroup, approvals: &mut ApprovalState, rules: &RuleSet) -> Vec<TxFinding> {
    let mut out = Vec::new();
    for l in &tx.logs {
        out.extend(spoofing_check(l, approvals, rules));
        approvals.apply(l);
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub findings: Vec<TxFinding>,
    pub errors: Vec<SchemaError>,
    pub records: usize,
    pub transactions: usize,
    pub caveats: Vec<String>,
}

/// Single streaming pass over a corpus. Text can be fed in arbitrary
/// chunks; approval state is threaded across them.
pub struct Scanner<'r> {
    rules: &'r RuleSet,
    grouper: Grouper,
    approvals: ApprovalState,
    findings: Vec<TxFinding>,
    transactions: usize,
    first_block: Option<u64>,
    ready: Vec<TxGroup>,
}

impl<'r> Scanner<'r> {
    pub fn new(rules: &'r RuleSet) -> Self {
        Scanner {
            rules,
            grouper: Grouper::new(),
            approvals: ApprovalState::default(),
            findings: Vec::new(),
            transactions: 0,
            first_block: None,
            ready: Vec::new(),
        }
    }

    pub fn feed_text(&mut self, chunk: &str) {
        self.grouper.feed_text(chunk, &mut self.ready);
        self.drain();
    }

    pub fn feed_line(&mut self, line: &str) {
        self.grouper.feed_line(line, &mut self.ready);
        self.drain();
    }

    pub fn approvals(&self) -> &ApprovalState {
        &self.approvals
    }

    fn drain(&mut self) {
        for tx in std::mem::take(&mut self.ready) {
            self.first_block.get_or_insert(tx.block_number());
            self.transactions += 1;
            self.findings.extend(detect_spoofing(&tx, &mut self.approvals, self.rules));
            self.findings.extend(detect_blended(&tx, self.rules));
            self.findings.extend(verify_rules(&tx, self.rules));
        }
    }

    pub fn finish(mut self) -> ScanReport {
        self.grouper.finish(&mut self.ready);
        self.drain();
        sort_findings(&mut self.findings);
        let mut caveats = Vec::new();
        if self.findings.iter().any(|f| f.kind == TxFindingKind::TransferSpoofing) {
            caveats.push(format!(
                "approval state is built from this corpus only (first block {}); approvals granted earlier are not visible",
                self.first_block.unwrap_or(0)
            ));
        }
        ScanReport {
            findings: self.findings,
            errors: self.grouper.errors.clone(),
            records: self.grouper.records,
            transactions: self.transactions,
            caveats,
        }
    }
}

pub fn scan_str(text: &str, rules: &RuleSet) -> ScanReport {
    let mut s = Scanner::new(rules);
    s.feed_text(text);
    s.finish()
}
