//! The checked-in `.hex` fixtures must match their assembly listings.
//! Run with `PHANTOMSCAN_REGEN=1` to rewrite them.

use std::fs;
use std::path::PathBuf;

use phantomscan_core::asm::assemble;
use phantomscan_core::hash::{event_topic, selector};

const FUNCTIONS: &[&str] = &[
    "deposit(address,uint256,uint256)",
    "depositETH(uint256)",
    "requestWithdraw(uint256,uint256)",
    "depositA(uint256)",
    "depositB(uint256)",
    "ping()",
    "pingChecked()",
    "set(uint256)",
    "get()",
    "record(uint256)",
    "sum(uint256)",
    "store(uint256)",
    "transfer(address,uint256)",
    "transferFrom(address,address,uint256)",
    "redeem(uint256,string)",
];

const EVENTS: &[&str] = &[
    "Deposit(address,uint256,address,uint256)",
    "WithdrawalRequested(address,uint256,uint256)",
    "Deposited(uint256)",
    "Pinged()",
    "PingedChecked()",
    "Set(uint256)",
    "Recorded(uint256,uint256)",
    "Summed(uint256)",
    "Transfer(address,address,uint256)",
    "Approval(address,address,uint256)",
    "ApprovalForAll(address,address,bool)",
    "Burned(address,address,uint256,bytes,bytes)",
    "Redeem(address,uint256,string,bytes)",
];

fn root() -> PathBuf {
    std::env::var_os("PHANTOMSCAN_FIXTURES")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"))
}

fn regen() -> bool {
    std::env::var_os("PHANTOMSCAN_REGEN").is_some()
}

#[test]
fn hex_matches_assembly() {
    let dir = root().join("bytecode");
    let mut listings: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "easm"))
        .collect();
    listings.sort();
    assert!(listings.len() >= 7);
    for src in listings {
        let code = assemble(&fs::read_to_string(&src).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", src.display()));
        let hex_path = src.with_extension("hex");
        let text = format!("0x{}\n", hex::encode(&code));
        if regen() {
            fs::write(&hex_path, &text).unwrap();
        }
        assert_eq!(fs::read_to_string(&hex_path).unwrap(), text, "{} is stale", hex_path.display());
    }
}

#[test]
fn sigdb_matches_signatures() {
    let mut text = String::from("# function selectors\n");
    for f in FUNCTIONS {
        text += &format!("{} {f}\n", hex::encode(selector(f)));
    }
    text += "# event topics\n";
    for e in EVENTS {
        text += &format!("{} {e}\n", hex::encode(event_topic(e)));
    }
    let path = root().join("sigdb.txt");
    if regen() {
        fs::write(&path, &text).unwrap();
    }
    assert_eq!(fs::read_to_string(path).unwrap(), text);
}
