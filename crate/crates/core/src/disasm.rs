//! EVM bytecode decoding.
//!
//! The opcode table is pinned to the Shanghai instruction set (PUSH0 is
//! known, later additions such as TLOAD/MCOPY decode as INVALID).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HexError {
    #[error("odd number of hex digits ({0})")]
    OddLength(usize),
    #[error("invalid hex digit {digit:?} at position {pos}")]
    InvalidDigit { digit: char, pos: usize },
}

/// Raw contract code together with a label describing where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bytecode {
    pub bytes: Vec<u8>,
    pub origin: String,
}

impl Bytecode {
    pub fn new(bytes: Vec<u8>, origin: impl Into<String>) -> Self {
        Self { bytes, origin: origin.into() }
    }

    /// Parses hex text with an optional `0x` prefix. Whitespace anywhere in
    /// the text is ignored.
    pub fn from_hex(text: &str, origin: impl Into<String>) -> Result<Self, HexError> {
        let digits: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let digits = digits
            .strip_prefix("0x")
            .or_else(|| digits.strip_prefix("0X"))
            .unwrap_or(&digits);
        if let Some((pos, digit)) = digits.char_indices().find(|(_, c)| !c.is_ascii_hexdigit()) {
            return Err(HexError::InvalidDigit { digit, pos });
        }
        if !digits.len().is_multiple_of(2) {
            return Err(HexError::OddLength(digits.len()));
        }
        let bytes = hex::decode(digits).expect("validated hex");
        Ok(Self::new(bytes, origin))
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// A single EVM opcode byte.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Opcode(pub u8);

impl serde::Serialize for Opcode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.mnemonic())
    }
}

macro_rules! opcodes {
    ($($name:ident = $byte:expr, $pops:expr, $pushes:expr;)*) => {
        impl Opcode {
            $(pub const $name: Opcode = Opcode($byte);)*
        }

        const fn base_info(byte: u8) -> Option<(&'static str, u8, u8)> {
            match byte {
                $($byte => Some((stringify!($name), $pops, $pushes)),)*
                _ => None,
            }
        }
    };
}

opcodes! {
    STOP = 0x00, 0, 0;
    ADD = 0x01, 2, 1;
    MUL = 0x02, 2, 1;
    SUB = 0x03, 2, 1;
    DIV = 0x04, 2, 1;
    SDIV = 0x05, 2, 1;
    MOD = 0x06, 2, 1;
    SMOD = 0x07, 2, 1;
    ADDMOD = 0x08, 3, 1;
    MULMOD = 0x09, 3, 1;
    EXP = 0x0a, 2, 1;
    SIGNEXTEND = 0x0b, 2, 1;
    LT = 0x10, 2, 1;
    GT = 0x11, 2, 1;
    SLT = 0x12, 2, 1;
    SGT = 0x13, 2, 1;
    EQ = 0x14, 2, 1;
    ISZERO = 0x15, 1, 1;
    AND = 0x16, 2, 1;
    OR = 0x17, 2, 1;
    XOR = 0x18, 2, 1;
    NOT = 0x19, 1, 1;
    BYTE = 0x1a, 2, 1;
    SHL = 0x1b, 2, 1;
    SHR = 0x1c, 2, 1;
    SAR = 0x1d, 2, 1;
    SHA3 = 0x20, 2, 1;
    ADDRESS = 0x30, 0, 1;
    BALANCE = 0x31, 1, 1;
    ORIGIN = 0x32, 0, 1;
    CALLER = 0x33, 0, 1;
    CALLVALUE = 0x34, 0, 1;
    CALLDATALOAD = 0x35, 1, 1;
    CALLDATASIZE = 0x36, 0, 1;
    CALLDATACOPY = 0x37, 3, 0;
    CODESIZE = 0x38, 0, 1;
    CODECOPY = 0x39, 3, 0;
    GASPRICE = 0x3a, 0, 1;
    EXTCODESIZE = 0x3b, 1, 1;
    EXTCODECOPY = 0x3c, 4, 0;
    RETURNDATASIZE = 0x3d, 0, 1;
    RETURNDATACOPY = 0x3e, 3, 0;
    EXTCODEHASH = 0x3f, 1, 1;
    BLOCKHASH = 0x40, 1, 1;
    COINBASE = 0x41, 0, 1;
    TIMESTAMP = 0x42, 0, 1;
    NUMBER = 0x43, 0, 1;
    PREVRANDAO = 0x44, 0, 1;
    GASLIMIT = 0x45, 0, 1;
    CHAINID = 0x46, 0, 1;
    SELFBALANCE = 0x47, 0, 1;
    BASEFEE = 0x48, 0, 1;
    POP = 0x50, 1, 0;
    MLOAD = 0x51, 1, 1;
    MSTORE = 0x52, 2, 0;
    MSTORE8 = 0x53, 2, 0;
    SLOAD = 0x54, 1, 1;
    SSTORE = 0x55, 2, 0;
    JUMP = 0x56, 1, 0;
    JUMPI = 0x57, 2, 0;
    PC = 0x58, 0, 1;
    MSIZE = 0x59, 0, 1;
    GAS = 0x5a, 0, 1;
    JUMPDEST = 0x5b, 0, 0;
    PUSH0 = 0x5f, 0, 1;
    CREATE = 0xf0, 3, 1;
    CALL = 0xf1, 7, 1;
    CALLCODE = 0xf2, 7, 1;
    RETURN = 0xf3, 2, 0;
    DELEGATECALL = 0xf4, 6, 1;
    CREATE2 = 0xf5, 4, 1;
    STATICCALL = 0xfa, 6, 1;
    REVERT = 0xfd, 2, 0;
    INVALID = 0xfe, 0, 0;
    SELFDESTRUCT = 0xff, 1, 0;
}

const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8", "PUSH9", "PUSH10",
    "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16", "PUSH17", "PUSH18", "PUSH19",
    "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24", "PUSH25", "PUSH26", "PUSH27", "PUSH28",
    "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8", "DUP9", "DUP10", "DUP11",
    "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8", "SWAP9", "SWAP10",
    "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];
const LOG_NAMES: [&str; 5] = ["LOG0", "LOG1", "LOG2", "LOG3", "LOG4"];

impl Opcode {
    pub const PUSH1: Opcode = Opcode(0x60);
    pub const PUSH2: Opcode = Opcode(0x61);
    pub const PUSH4: Opcode = Opcode(0x63);
    pub const PUSH32: Opcode = Opcode(0x7f);
    pub const DUP1: Opcode = Opcode(0x80);
    pub const SWAP1: Opcode = Opcode(0x90);
    pub const LOG0: Opcode = Opcode(0xa0);
    pub const LOG4: Opcode = Opcode(0xa4);

    /// Mnemonic, or `INVALID` for bytes outside the table.
    pub fn mnemonic(self) -> &'static str {
        match self.0 {
            0x60..=0x7f => PUSH_NAMES[(self.0 - 0x60) as usize],
            0x80..=0x8f => DUP_NAMES[(self.0 - 0x80) as usize],
            0x90..=0x9f => SWAP_NAMES[(self.0 - 0x90) as usize],
            0xa0..=0xa4 => LOG_NAMES[(self.0 - 0xa0) as usize],
            b => base_info(b).map(|(name, _, _)| name).unwrap_or("INVALID"),
        }
    }

    pub fn from_mnemonic(name: &str) -> Option<Opcode> {
        let upper = name.to_ascii_uppercase();
        let alias = match upper.as_str() {
            "KECCAK256" => "SHA3",
            "DIFFICULTY" => "PREVRANDAO",
            other => other,
        };
        (0u8..=255)
            .map(Opcode)
            .find(|op| op.is_known() && op.mnemonic() == alias)
    }

    pub fn is_known(self) -> bool {
        matches!(self.0, 0x60..=0xa4) || base_info(self.0).is_some()
    }

    /// Immediate width in bytes for PUSH1..PUSH32, zero otherwise.
    pub fn push_width(self) -> usize {
        match self.0 {
            0x60..=0x7f => (self.0 - 0x5f) as usize,
            _ => 0,
        }
    }

    pub fn is_push(self) -> bool {
        self.0 == 0x5f || self.push_width() > 0
    }

    pub fn dup_depth(self) -> Option<usize> {
        matches!(self.0, 0x80..=0x8f).then(|| (self.0 - 0x7f) as usize)
    }

    pub fn swap_depth(self) -> Option<usize> {
        matches!(self.0, 0x90..=0x9f).then(|| (self.0 - 0x8f) as usize)
    }

    pub fn log_topics(self) -> Option<usize> {
        matches!(self.0, 0xa0..=0xa4).then(|| (self.0 - 0xa0) as usize)
    }

    /// Number of stack items consumed and produced.
    pub fn stack_io(self) -> (usize, usize) {
        match self.0 {
            0x60..=0x7f => (0, 1),
            0x80..=0x8f => {
                let n = (self.0 - 0x7f) as usize;
                (n, n + 1)
            }
            0x90..=0x9f => {
                let n = (self.0 - 0x8f) as usize;
                (n + 1, n + 1)
            }
            0xa0..=0xa4 => ((self.0 - 0xa0) as usize + 2, 0),
            b => base_info(b)
                .map(|(_, pops, pushes)| (pops as usize, pushes as usize))
                .unwrap_or((0, 0)),
        }
    }

    /// Opcodes that end a basic block.
    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::JUMP
                | Opcode::JUMPI
                | Opcode::STOP
                | Opcode::RETURN
                | Opcode::REVERT
                | Opcode::SELFDESTRUCT
        ) || !self.is_known()
            || self == Opcode::INVALID
    }

    pub fn is_external_call(self) -> bool {
        matches!(
            self,
            Opcode::CALL | Opcode::CALLCODE | Opcode::DELEGATECALL | Opcode::STATICCALL
        )
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.mnemonic())
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Instruction {
    pub offset: usize,
    pub opcode: Opcode,
    /// Present iff the opcode is PUSH1..PUSH32; always the full push width.
    #[serde(serialize_with = "ser_immediate")]
    pub immediate: Option<Vec<u8>>,
    /// Bytes consumed from the input.
    pub size: usize,
    /// The immediate ran past the end of the code and was zero-padded.
    pub truncated: bool,
}

fn ser_immediate<S: serde::Serializer>(imm: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
    match imm {
        Some(b) => s.collect_str(&format_args!("0x{}", hex::encode(b))),
        None => s.serialize_none(),
    }
}

impl Instruction {
    /// Original bytes of this instruction (padding of a truncated push is
    /// not emitted).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size);
        out.push(self.opcode.0);
        if let Some(imm) = &self.immediate {
            out.extend_from_slice(&imm[..self.size - 1]);
        }
        out
    }

    pub fn next_offset(&self) -> usize {
        self.offset + self.size
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}: {}", self.offset, self.opcode)?;
        if let Some(imm) = &self.immediate {
            write!(f, " 0x{}", hex::encode(imm))?;
        }
        Ok(())
    }
}

pub fn disassemble(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < code.len() {
        let opcode = Opcode(code[pc]);
        let width = opcode.push_width();
        let (immediate, size, truncated) = if width > 0 {
            let avail = (code.len() - pc - 1).min(width);
            let mut imm = code[pc + 1..pc + 1 + avail].to_vec();
            imm.resize(width, 0);
            (Some(imm), avail + 1, avail < width)
        } else {
            (None, 1, false)
        };
        out.push(Instruction { offset: pc, opcode, immediate, size, truncated });
        pc += size;
    }
    out
}

/// Removes a trailing CBOR metadata section (as appended by solc/vyper):
/// `<cbor map> <u16 big-endian length of the map>`. The trailer is only
/// removed when the length fits and the bytes parse as exactly one CBOR map.
pub fn strip_metadata(code: &Bytecode) -> Bytecode {
    let bytes = &code.bytes;
    let n = bytes.len();
    if n < 2 {
        return code.clone();
    }
    let len = u16::from_be_bytes([bytes[n - 2], bytes[n - 1]]) as usize;
    if len == 0 || len + 2 > n {
        return code.clone();
    }
    let trailer = &bytes[n - 2 - len..n - 2];
    if !(0xa0..=0xbf).contains(&trailer[0]) {
        return code.clone();
    }
    match cbor_item_len(trailer, 0) {
        Some(used) if used == trailer.len() => {
            Bytecode::new(bytes[..n - 2 - len].to_vec(), code.origin.clone())
        }
        _ => code.clone(),
    }
}

/// Length in bytes of the CBOR item starting at `data[0]`, for the subset
/// of CBOR that appears in compiler metadata.
fn cbor_item_len(data: &[u8], depth: usize) -> Option<usize> {
    if depth > 8 {
        return None;
    }
    let head = *data.first()?;
    let major = head >> 5;
    let info = head & 0x1f;
    let (arg, mut pos) = match info {
        0..=23 => (info as usize, 1),
        24 => (*data.get(1)? as usize, 2),
        25 => (u16::from_be_bytes([*data.get(1)?, *data.get(2)?]) as usize, 3),
        _ => return None,
    };
    match major {
        0 | 1 => Some(pos),
        2 | 3 => {
            let end = pos.checked_add(arg)?;
            (end <= data.len()).then_some(end)
        }
        4 => {
            for _ in 0..arg {
                pos += cbor_item_len(data.get(pos..)?, depth + 1)?;
            }
            Some(pos)
        }
        5 => {
            for _ in 0..arg * 2 {
                pos += cbor_item_len(data.get(pos..)?, depth + 1)?;
            }
            Some(pos)
        }
        7 if (20..=22).contains(&info) => Some(1),
        _ => None,
    }
}
