use std::fmt::Write as _;

use super::assemble::encode_instruction;
use super::parse::{condition_name, parse_program, Slot, Statement};
use crate::uisa::{
    nop_encoding, register_mnemonic, Microinstruction, Op, OpClass, SeqAction, SequenceWord, Size, Triad,
};

#[derive(Debug, Clone, Default)]
pub struct DisasmOptions {
    /// Address of the first triad, emitted as `.start`.
    pub start: u16,
    /// Prefix each triad with a `// 0x...` address comment.
    pub addresses: bool,
    /// Emit `// set match register` pragmas for nonzero entries.
    pub match_registers: Option<[u32; 8]>,
}

/// Renders triads as assemblable text. Each triad becomes one bundle line,
/// followed by a sequence directive unless the word is a plain next-triad.
/// Anything that would not reassemble to the same bits is written as
/// `.raw` / `.sw_raw`.
pub fn disassemble(triads: &[Triad], options: &DisasmOptions) -> String {
    let mut out = String::new();
    if let Some(mrs) = options.match_registers {
        for (i, m) in mrs.iter().enumerate().filter(|(_, m)| **m != 0) {
            let _ = writeln!(out, "// set match register {i} to {m:#x}");
        }
        if mrs.iter().any(|m| *m != 0) {
            out.push('\n');
        }
    }
    let _ = writeln!(out, ".start {:#x}", options.start);
    for (i, t) in triads.iter().enumerate() {
        if options.addresses {
            let _ = writeln!(out, "// {:#05x}", options.start as usize + i);
        }
        out.push_str(&disassemble_triad(t));
        out.push('\n');
    }
    out
}

/// One triad: the bundle line and, if needed, a sequence directive line.
pub fn disassemble_triad(triad: &Triad) -> String {
    let slots: Vec<String> = triad
        .insns
        .iter()
        .enumerate()
        .map(|(slot, mi)| render_checked(mi, slot))
        .collect();
    let mut line = slots.join(" | ");
    if let Some(d) = sequence_directive(&triad.seq) {
        line.push('\n');
        line.push_str(&d);
    }
    line
}

fn sequence_directive(seq: &SequenceWord) -> Option<String> {
    let canonical = |s: &SequenceWord| s.unknown == 0 && (s.address == 0 || s.action == SeqAction::Branch);
    match seq.action {
        _ if !canonical(seq) => Some(format!(".sw_raw {:#010x}", seq.encode().expect("decoded words encode"))),
        SeqAction::NextTriad => None,
        SeqAction::Complete => Some(".sw_complete".into()),
        SeqAction::Branch => Some(format!(".sw_branch {:#x}", seq.address)),
        SeqAction::Unknown(_) => Some(format!(".sw_raw {:#010x}", seq.encode().expect("decoded words encode"))),
    }
}

fn render_checked(mi: &Microinstruction, slot: usize) -> String {
    let word = mi.encode().expect("decoded instructions encode");
    let placed_ok = match mi.op() {
        Some(Op::Mul | Op::Imul) => slot == 0,
        Some(Op::WritePc) => slot == 2,
        _ => true,
    };
    if placed_ok {
        if let Some(text) = render_insn(mi) {
            if reassembles_to(&text, word) {
                return text;
            }
        }
    }
    format!(".raw {word:#018x}")
}

fn reassembles_to(text: &str, word: u64) -> bool {
    let Ok(program) = parse_program(text) else { return false };
    match program.statements.as_slice() {
        [Statement::Slot(Slot::Insn(insn))] => encode_instruction(insn)
            .ok()
            .and_then(|mi| mi.encode().ok())
            .is_some_and(|w| w == word),
        _ => false,
    }
}

/// Best-effort text for one microinstruction; `None` when it has no
/// canonical spelling. The result is not verified against the bits.
pub fn render_insn(mi: &Microinstruction) -> Option<String> {
    if *mi == nop_encoding() {
        return Some("nop".into());
    }
    if mi.unknown != 0 || mi.sw {
        return None;
    }
    let op = mi.op()?;
    let size = Size::from_code(mi.size)?;
    let reg = |code: u8, size: Size| register_mnemonic(code, size);
    match mi.class {
        OpClass::SpecOp => match op {
            Op::WritePc if mi.cc == 0 && mi.reg2 == 0 && mi.imm16 == 0 && !mi.three_operand => {
                Some(format!("writePC {}", reg(mi.reg1, size)?))
            }
            Op::BranchCc
                if mi.size == 0 && mi.reg1 == 0 && mi.reg2 == 0 && !mi.three_operand && mi.imm16 <= 0xfff =>
            {
                Some(format!("jcc {}, {:#x}", condition_name(mi.cc)?, mi.imm16))
            }
            _ => None,
        },
        OpClass::LdOp => {
            if mi.three_operand || !mi.rmod || mi.imm16 != 0 {
                return None;
            }
            Some(format!("ld {}, [{}]", reg(mi.reg1, Size::Dword)?, reg(mi.reg2, Size::Dword)?))
        }
        OpClass::StOp => {
            if mi.three_operand || !mi.rmod || mi.imm16 != 0 {
                return None;
            }
            Some(format!("st [{}], {}", reg(mi.reg2, Size::Dword)?, reg(mi.reg1, size)?))
        }
        OpClass::RegOp => {
            let always_flags = matches!(op, Op::Cmp | Op::Test);
            let suffix = match (mi.flags, always_flags) {
                (0b11, true) => "",
                (0b11, false) => ".f",
                (0, false) => "",
                _ => return None,
            };
            let name = format!("{}{}", op.mnemonic(), suffix);
            if matches!(op, Op::Not | Op::Bswap) {
                if !mi.rmod || mi.imm16 != 0 {
                    return None;
                }
                return if mi.three_operand {
                    Some(format!("{name} {}, {}", reg(mi.reg2, size)?, reg(mi.reg1, size)?))
                } else if mi.reg2 == 0 {
                    Some(format!("{name} {}", reg(mi.reg1, size)?))
                } else {
                    None
                };
            }
            let src = if mi.rmod {
                format!("{:#x}", mi.imm16)
            } else {
                if mi.imm16 > 0x3f {
                    return None;
                }
                reg(mi.reg3(), size)?.to_string()
            };
            if mi.three_operand {
                Some(format!("{name} {}, {}, {src}", reg(mi.reg2, size)?, reg(mi.reg1, size)?))
            } else if mi.reg2 == 0 {
                Some(format!("{name} {}, {src}", reg(mi.reg1, size)?))
            } else {
                None
            }
        }
        OpClass::Reserved(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtl::assemble_source;
    use crate::uisa::decode_microinstruction;

    #[test]
    fn zero_triad_renders_add_al() {
        let t = Triad::from_words([0; 3], 0);
        assert_eq!(disassemble_triad(&t), "add al, al | add al, al | add al, al");
    }

    #[test]
    fn unknown_type_becomes_raw() {
        let word = 0b111111111u64 << 54;
        let t = Triad::from_words([word, 0, 0], 0);
        assert!(disassemble_triad(&t).starts_with(".raw 0x7fc0000000000000 |"));
    }

    #[test]
    fn misplaced_mul_becomes_raw() {
        let mul = assemble_source("mul eax, ebx").unwrap().triads()[0].insns[0];
        let t = Triad::new([nop_encoding(), mul, nop_encoding()], SequenceWord::NEXT);
        assert!(disassemble_triad(&t).contains("| .raw "));
    }

    #[test]
    fn sequence_directives() {
        let t = Triad::nops(SequenceWord::branch(0x7e6));
        assert_eq!(disassemble_triad(&t), "nop | nop | nop\n.sw_branch 0x7e6");
        let odd = Triad::from_words([0; 3], 0x0000_0123);
        assert!(disassemble_triad(&odd).ends_with(".sw_raw 0x00000123"));
    }

    #[test]
    fn round_trips_random_words() {
        let mut x = 0x9e37_79b9_7f4a_7c15u64;
        for _ in 0..5000 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let t = Triad::from_words([x, x.rotate_left(21), x.rotate_left(42)], (x >> 7) as u32);
            let text = disassemble(&[t], &DisasmOptions::default());
            let back = assemble_source(&text).unwrap().triads();
            assert_eq!(back, vec![t], "{text}");
        }
        let mi = decode_microinstruction(0x5402_4040_8780_0000);
        assert_eq!(render_insn(&mi).unwrap(), "st [edi], t2d");
    }
}
