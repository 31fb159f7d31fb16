//! Structural checks on a disassembly: offsets chain, immediates have
//! the declared width, re-encoding gives back the input.

use phantomscan_core::disasm::disassemble;

pub fn check(code: &[u8]) {
    let instrs = disassemble(code);
    let mut pc = 0;
    let mut rebuilt = Vec::with_capacity(code.len());
    for i in &instrs {
        assert_eq!(i.offset, pc);
        let width = i.opcode.push_width();
        match &i.immediate {
            Some(imm) => {
                assert!(width > 0);
                assert_eq!(imm.len(), width);
                assert_eq!(i.truncated, i.size < width + 1);
                // Padding is zeros.
                assert!(imm[i.size - 1..].iter().all(|b| *b == 0));
            }
            None => {
                assert_eq!(width, 0);
                assert_eq!(i.size, 1);
            }
        }
        if !i.opcode.is_known() {
            assert_eq!(i.opcode.mnemonic(), "INVALID");
        }
        rebuilt.extend(i.encode());
        pc += i.size;
    }
    assert_eq!(pc, code.len());
    assert_eq!(rebuilt, code);
    assert_eq!(disassemble(code), instrs);
    // Only the final instruction can run off the end.
    assert!(instrs.iter().rev().skip(1).all(|i| !i.truncated));
}
