//! Approval state folded from Approval / ApprovalForAll logs.

use std::collections::BTreeMap;

use ruint::aliases::U256;

use super::record::{Address, LogRecord, H256};
use crate::hash::event_topic;

pub fn transfer_topic() -> H256 {
    H256(event_topic("Transfer(address,address,uint256)"))
}

pub fn approval_topic() -> H256 {
    H256(event_topic("Approval(address,address,uint256)"))
}

pub fn approval_for_all_topic() -> H256 {
    H256(event_topic("ApprovalForAll(address,address,bool)"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApprovalState {
    /// ERC-20 allowances: (token, owner, spender) → amount.
    pub allowances: BTreeMap<(Address, Address, Address), U256>,
    /// Operator approvals: (token, owner, operator) → flag.
    pub operators: BTreeMap<(Address, Address, Address), bool>,
    /// ERC-721 single-token approvals: (token, token id) → (owner, approved).
    pub token_approvals: BTreeMap<(Address, U256), (Address, Address)>,
}

fn word(b: &[u8]) -> Option<U256> {
    (b.len() == 32).then(|| U256::from_be_slice(b))
}

impl ApprovalState {
    /// Folds one log; anything that is not a well-formed approval is ignored.
    pub fn apply(&mut self, log: &LogRecord) {
        let Some(t0) = log.topic0() else { return };
        let token = log.emitter;
        if *t0 == approval_topic() {
            let (Some(owner), Some(spender)) = (
                log.topics.get(1).and_then(|t| Address::from_word(&t.0)),
                log.topics.get(2).and_then(|t| Address::from_word(&t.0)),
            ) else {
                return;
            };
            match (log.topics.len(), word(&log.data)) {
                (3, Some(amount)) => {
                    self.allowances.insert((token, owner, spender), amount);
                }
                (4, None) if log.data.is_empty() => {
                    let id = U256::from_be_bytes(log.topics[3].0);
                    self.token_approvals.insert((token, id), (owner, spender));
                }
                _ => {}
            }
        } else if *t0 == approval_for_all_topic() && log.topics.len() == 3 {
            let (Some(owner), Some(operator), Some(flag)) = (
                Address::from_word(&log.topics[1].0),
                Address::from_word(&log.topics[2].0),
                word(&log.data),
            ) else {
                return;
            };
            if flag <= U256::from(1) {
                self.operators.insert((token, owner, operator), flag == U256::from(1));
            }
        }
    }

    /// Whether `owner` has authorised `spender` on `token`: a positive
    /// allowance, an operator approval, or (for an NFT id) a single-token
    /// approval granted by that owner.
    pub fn approves(&self, token: Address, owner: Address, spender: Address, token_id: Option<U256>) -> bool {
        self.allowances.get(&(token, owner, spender)).is_some_and(|a| !a.is_zero())
            || self.operators.get(&(token, owner, spender)).copied().unwrap_or(false)
            || token_id.is_some_and(|id| self.token_approvals.get(&(token, id)) == Some(&(owner, spender)))
    }

    pub fn is_empty(&self) -> bool {
        self.allowances.is_empty() && self.operators.is_empty() && self.token_approvals.is_empty()
    }
}

pub fn track_approvals<'a>(logs: impl IntoIterator<Item = &'a LogRecord>) -> ApprovalState {
    let mut s = ApprovalState::default();
    for l in logs {
        s.apply(l);
    }
    s
}
