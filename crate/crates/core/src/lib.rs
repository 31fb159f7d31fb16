//! Detection of forged smart-contract events at the bytecode, source and
//! transaction-log level.

pub mod asm;
pub mod disasm;
pub mod hash;
pub mod lifter;
pub mod minisol;
pub mod report;
pub mod symexec;
pub mod taint;
pub mod txscan;
