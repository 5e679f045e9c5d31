//! A synthetic microcode ROM and a catalogue of the macroinstructions it
//! implements, for exercising the engine and heat-map harness.
//!
//! Layout (triad addresses):
//!
//! | address | macroinstruction |
//! |---|---|
//! | 0x900, 0x913 | call r/m32 (0x913 is the shared exit triad) |
//! | 0x901, 0x913 | ret |
//! | 0x914 - 0x917 | rep cmps m8 |
//! | 0x960, 0xa43 | mul r/m16 (memory) |
//! | 0x976 - 0x977, 0x961, 0x979 - 0x97a | idiv (stub) |
//! | 0x962 | mul r/m16 (register) |
//! | 0x964, 0xa44 | imul r/m16 (memory) |
//! | 0x965 | bound |
//! | 0x966 | imul r/m16 (register) |
//! | 0x968, 0xa40 | bts r/m32, imm8 |
//! | 0x972 - 0x973, 0x7e5 - 0x7eb | div r/m32 (0x7e5 is effect-free) |
//! | 0x9a8, 0xa41 - 0xa42 | btr r/m32, imm8 |
//! | 0x9ae | mfence |
//! | 0xaca - 0xacc | shrd r/m32, r32, imm8 |
//!
//! Everything else is the trap triad.

use crate::heatmap::Workload;
use crate::engine::{MachineState, MacroContext, MicrocodeStore, ROM_TRIADS};
use crate::rtl::assemble_source;
use crate::uisa::{Microinstruction, Op, SequenceWord, Size, Triad};
use crate::tables::REG_CODE_ZERO;

pub const TOY_ROM_SOURCE: &str = include_str!("../fixtures/toy_rom.rtl");

/// Address the div stub enters the shared loop through; it holds only nops.
pub const DIV_SKIPPABLE_TRIAD: u16 = 0x7e5;
/// First triad of the div loop.
pub const DIV_LOOP_TRIAD: u16 = 0x7e6;

pub const CODE_BASE: u32 = 0x0040_0000;
pub const DATA_BASE: u32 = 0x0010_0000;
pub const STACK_BASE: u32 = 0x0020_0000;

/// `st [zerod], zerod`: a dword store to address 0, which is never mapped.
pub fn crash_insn() -> Microinstruction {
    Microinstruction {
        reg1: REG_CODE_ZERO,
        reg2: REG_CODE_ZERO,
        size: Size::Dword.code(),
        rmod: true,
        ..Microinstruction::new(Op::St)
    }
}

/// Crash instruction followed by two nops, completing decode.
pub fn trap_triad() -> Triad {
    let mut t = Triad::nops(SequenceWord::COMPLETE);
    t.insns[0] = crash_insn();
    t
}

/// The 3072-triad toy ROM image.
pub fn toy_rom_triads() -> Vec<Triad> {
    let program = assemble_source(TOY_ROM_SOURCE).expect("toy ROM source assembles");
    let rom = program.image(trap_triad()).expect("toy ROM segments do not overlap");
    pad_rom(rom).expect("toy ROM fits")
}

/// Pads a partial ROM image to 3072 triads with the trap triad. Returns
/// `None` if the image is larger than the ROM.
pub fn pad_rom(mut triads: Vec<Triad>) -> Option<Vec<Triad>> {
    if triads.len() > ROM_TRIADS {
        return None;
    }
    triads.resize(ROM_TRIADS, trap_triad());
    Some(triads)
}

pub fn build_toy_rom() -> MicrocodeStore {
    MicrocodeStore::new(toy_rom_triads())
}

/// A macroinstruction implemented by the toy ROM.
#[derive(Debug, Clone, Copy)]
pub struct ToyMacro {
    pub name: &'static str,
    /// Assembly form the context models.
    pub form: &'static str,
    pub entry: u16,
    /// ModRM r/m and reg registers (x86 numbering).
    pub operand_regs: [Option<u8>; 2],
    /// Encoding; an imm8, when present, is appended.
    pub opcode: &'static [u8],
    pub takes_imm8: bool,
}

const EAX: u8 = 0;
const EBX: u8 = 3;

pub const TOY_MACROS: &[ToyMacro] = &[
    ToyMacro { name: "call", form: "call eax", entry: 0x900, operand_regs: [Some(EAX), None], opcode: &[0xff, 0xd0], takes_imm8: false },
    ToyMacro { name: "ret", form: "ret", entry: 0x901, operand_regs: [None, None], opcode: &[0xc3], takes_imm8: false },
    ToyMacro { name: "rep_cmps_mem8", form: "repe cmpsb", entry: 0x914, operand_regs: [None, None], opcode: &[0xf3, 0xa6], takes_imm8: false },
    ToyMacro { name: "mul_mem16", form: "mul word [ebx]", entry: 0x960, operand_regs: [Some(EBX), None], opcode: &[0x66, 0xf7, 0x23], takes_imm8: false },
    ToyMacro { name: "idiv", form: "idiv ebx", entry: 0x976, operand_regs: [Some(EBX), None], opcode: &[0xf7, 0xfb], takes_imm8: false },
    ToyMacro { name: "mul_reg16", form: "mul bx", entry: 0x962, operand_regs: [Some(EBX), None], opcode: &[0x66, 0xf7, 0xe3], takes_imm8: false },
    ToyMacro { name: "imul_mem16", form: "imul word [ebx]", entry: 0x964, operand_regs: [Some(EBX), None], opcode: &[0x66, 0xf7, 0x2b], takes_imm8: false },
    ToyMacro { name: "bound", form: "bound eax, [ebx]", entry: 0x965, operand_regs: [Some(EBX), Some(EAX)], opcode: &[0x62, 0x03], takes_imm8: false },
    ToyMacro { name: "imul_reg16", form: "imul bx", entry: 0x966, operand_regs: [Some(EBX), None], opcode: &[0x66, 0xf7, 0xeb], takes_imm8: false },
    ToyMacro { name: "bts_imm", form: "bts ebx, imm8", entry: 0x968, operand_regs: [Some(EBX), None], opcode: &[0x0f, 0xba, 0xeb], takes_imm8: true },
    ToyMacro { name: "div", form: "div ebx", entry: 0x972, operand_regs: [Some(EBX), None], opcode: &[0xf7, 0xf3], takes_imm8: false },
    ToyMacro { name: "btr_imm", form: "btr ebx, imm8", entry: 0x9a8, operand_regs: [Some(EBX), None], opcode: &[0x0f, 0xba, 0xf3], takes_imm8: true },
    ToyMacro { name: "mfence", form: "mfence", entry: 0x9ae, operand_regs: [None, None], opcode: &[0x0f, 0xae, 0xf0], takes_imm8: false },
    ToyMacro { name: "shrd", form: "shrd eax, ebx, imm8", entry: 0xaca, operand_regs: [Some(EAX), Some(EBX)], opcode: &[0x0f, 0xac, 0xd8], takes_imm8: true },
];

pub fn toy_macro(name: &str) -> Option<&'static ToyMacro> {
    TOY_MACROS.iter().find(|m| m.name == name)
}

impl ToyMacro {
    /// Context for one execution at [`CODE_BASE`]. `imm8` is ignored by
    /// macros without an immediate.
    pub fn context(&self, imm8: u8) -> MacroContext {
        let mut bytes = self.opcode.to_vec();
        if self.takes_imm8 {
            bytes.push(imm8);
        }
        MacroContext {
            entry_address: self.entry,
            operand_regs: self.operand_regs,
            next_pc: CODE_BASE + bytes.len() as u32,
            instruction_bytes: bytes,
        }
    }
}

/// A state under which every toy macro completes: data and stack pages
/// mapped, `esi`/`edi`/`ebx` pointing into data, `esp` into the stack,
/// `ecx` = 1 and `eax` = 0.
pub fn toy_state() -> MachineState {
    let mut s = MachineState::new();
    s.memory.map(DATA_BASE, 0x1000).expect("not page 0");
    s.memory.map(STACK_BASE, 0x1000).expect("not page 0");
    s.memory.map(CODE_BASE, 0x1000).expect("not page 0");
    s.set_gpr("ecx", 1);
    s.set_gpr("ebx", DATA_BASE + 0x40);
    s.set_gpr("esi", DATA_BASE + 0x100);
    s.set_gpr("edi", DATA_BASE);
    s.set_gpr("esp", STACK_BASE + 0x800);
    s
}

/// Heat-map workload running `name` once on [`toy_state`].
pub fn workload(name: &str) -> Option<Workload> {
    let m = toy_macro(name)?;
    Some(Workload::new(name, vec![(toy_state(), m.context(3))]))
}

/// Reference workload: the call and ret stubs, whose triads are test
/// scaffolding rather than part of any measured instruction.
pub fn reference_workload() -> Workload {
    let runs = ["call", "ret"]
        .iter()
        .map(|n| (toy_state(), toy_macro(n).expect("catalogued").context(0)))
        .collect();
    Workload::new("reference", runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_macroinstruction, RunConfig};
    use crate::uisa::OpType;

    #[test]
    fn bound_stub_is_planted() {
        let rom = build_toy_rom();
        let t = rom.fetch_triad(0x965).unwrap();
        assert_eq!(t.insns[0].op_type, OpType::Known(Op::Ld));
        assert_eq!(t.insns[1].op_type, OpType::Known(Op::Cmp));
        assert_eq!(t.insns[2].op_type, OpType::Known(Op::BranchCc));
        assert_eq!(rom.fetch_triad(0x123).unwrap(), trap_triad());
    }

    #[test]
    fn every_macro_completes_on_the_default_state() {
        let rom = build_toy_rom();
        for m in TOY_MACROS {
            let out = run_macroinstruction(&rom, toy_state(), &m.context(3), &RunConfig::default());
            assert_eq!(out.fault, None, "{}", m.name);
        }
    }

    #[test]
    fn div_ten_by_two() {
        let rom = build_toy_rom();
        let mut s = toy_state();
        s.set_gpr("eax", 10);
        s.set_gpr("ebx", 2);
        let out = run_macroinstruction(&rom, s, &toy_macro("div").unwrap().context(0), &RunConfig::default());
        assert_eq!(out.fault, None);
        assert_eq!(out.final_state.gpr("eax"), Some(5));
        assert_eq!(out.final_state.gpr("edx"), Some(0));
    }
}
