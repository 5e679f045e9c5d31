use super::alu::{alu, condition};
use super::state::{Flags, MachineState, GPR_NAMES};
use super::trace::{MemDelta, RegDelta, TraceRecord};
use super::{Access, Fault, MacroContext};
use crate::rtl::render_insn;
use crate::tables::{REG_CODE_PC, REG_CODE_REG, REG_CODE_REGM, REG_CODE_ZERO};
use crate::uisa::{Microinstruction, Op, OpClass, OpType, Size, Triad};

/// Which bits of a 32-bit register a view covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Low8,
    High8,
    Low16,
    Full,
}

impl Part {
    fn get(self, v: u32) -> u32 {
        match self {
            Part::Low8 => v & 0xff,
            Part::High8 => (v >> 8) & 0xff,
            Part::Low16 => v & 0xffff,
            Part::Full => v,
        }
    }

    fn put(self, old: u32, v: u32) -> u32 {
        match self {
            Part::Low8 => (old & !0xff) | (v & 0xff),
            Part::High8 => (old & !0xff00) | ((v & 0xff) << 8),
            Part::Low16 => (old & !0xffff) | (v & 0xffff),
            Part::Full => v,
        }
    }
}

/// A register operand after substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegLocation {
    Gpr(usize, Part),
    Temp(usize, Part),
    Pc,
    Zero,
}

fn view(code: u8, size: Size) -> Part {
    match size {
        Size::Byte if code & 4 != 0 => Part::High8,
        Size::Byte => Part::Low8,
        Size::Word => Part::Low16,
        _ => Part::Full,
    }
}

/// Maps a 6-bit register code at `size` to storage, substituting macro
/// operands for the `regm`/`reg` codes.
pub fn resolve_register(code: u8, size: Size, ctx: &MacroContext) -> Result<RegLocation, Fault> {
    if size == Size::Qword {
        return Err(Fault::invalid("64-bit operand size is not supported by the 32-bit machine model"));
    }
    match code {
        0..=7 => {
            let index = if size == Size::Byte { (code & 3) as usize } else { code as usize };
            Ok(RegLocation::Gpr(index, view(code, size)))
        }
        8..=15 => {
            let index = if size == Size::Byte { (code & 3) as usize } else { (code - 8) as usize };
            Ok(RegLocation::Temp(index, view(code - 8, size)))
        }
        REG_CODE_REGM | REG_CODE_REG => {
            let slot = if code == REG_CODE_REGM { 0 } else { 1 };
            match ctx.operand_regs[slot] {
                Some(r) if r < 8 => resolve_register(r, size, ctx),
                Some(r) => Err(Fault::invalid(format!("macro operand {} names register {r}", slot + 1))),
                None => Err(Fault::invalid(format!("macroinstruction has no operand {}", slot + 1))),
            }
        }
        REG_CODE_PC => Ok(RegLocation::Pc),
        REG_CODE_ZERO => Ok(RegLocation::Zero),
        other => Err(Fault::invalid(format!("unassigned register code {other:06b}"))),
    }
}

fn read_loc(state: &MachineState, ctx: &MacroContext, loc: RegLocation, size: Size) -> u32 {
    match loc {
        RegLocation::Gpr(i, p) => p.get(state.gprs[i]),
        RegLocation::Temp(i, p) => p.get(state.temps[i]),
        RegLocation::Pc => ctx.next_pc & super::alu::mask(size),
        RegLocation::Zero => 0,
    }
}

fn read_reg(state: &MachineState, ctx: &MacroContext, code: u8, size: Size) -> Result<u32, Fault> {
    Ok(read_loc(state, ctx, resolve_register(code, size, ctx)?, size))
}

/// Observable effect of one microinstruction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Effect {
    /// Register write (value at operand width). Writes to the zero
    /// register are dropped before this point.
    pub reg: Option<(RegLocation, u32)>,
    /// Memory write: address, byte count, value.
    pub mem: Option<(u32, u32, u32)>,
    /// New flag state when flags are committed.
    pub flags: Option<Flags>,
    pub write_pc: Option<u32>,
    /// Taken conditional branch target.
    pub branch: Option<u16>,
}

fn size_of(mi: &Microinstruction) -> Result<Size, Fault> {
    Size::from_code(mi.size).ok_or_else(|| Fault::invalid(format!("size code {:03b}", mi.size)))
}

/// Computes the effect of `mi` without modifying anything.
fn evaluate(state: &MachineState, ctx: &MacroContext, mi: &Microinstruction) -> Result<Effect, Fault> {
    let op = match (mi.class, mi.op_type) {
        (OpClass::Reserved(code), _) => return Err(Fault::invalid(format!("reserved op class {code:03b}"))),
        (_, OpType::Unrecognized(code)) => return Err(Fault::invalid(format!("unrecognized op type {code:#x}"))),
        (_, OpType::Known(op)) => op,
    };
    let (reg1, reg2) = if mi.sw { (mi.reg2, mi.reg1) } else { (mi.reg1, mi.reg2) };
    let mut effect = Effect::default();
    let write = |code: u8, size: Size, value: u32| -> Result<Option<(RegLocation, u32)>, Fault> {
        match resolve_register(code, size, ctx)? {
            RegLocation::Zero => Ok(None),
            RegLocation::Pc => Err(Fault::invalid("pc registers are read-only")),
            loc => Ok(Some((loc, value))),
        }
    };
    match op {
        Op::Ld => {
            let offset = if mi.rmod { mi.imm16 as u32 } else { read_reg(state, ctx, mi.reg3(), Size::Dword)? };
            let address = read_reg(state, ctx, reg2, Size::Dword)?.wrapping_add(offset);
            let value = state.memory.read_u32(address)?;
            effect.reg = write(reg1, Size::Dword, value)?;
        }
        Op::St => {
            let size = size_of(mi)?;
            let offset = if mi.rmod { mi.imm16 as u32 } else { read_reg(state, ctx, mi.reg3(), Size::Dword)? };
            let address = read_reg(state, ctx, reg2, Size::Dword)?.wrapping_add(offset);
            let value = read_reg(state, ctx, reg1, size)?;
            if size == Size::Qword {
                return Err(Fault::invalid("64-bit store"));
            }
            let len = size.bits() / 8;
            state.memory.check(address, len, Access::Write)?;
            effect.mem = Some((address, len, value));
        }
        Op::WritePc => {
            effect.write_pc = Some(read_reg(state, ctx, reg1, size_of(mi)?)?);
        }
        Op::BranchCc => {
            let taken = condition(mi.cc, state.flags)
                .ok_or_else(|| Fault::invalid(format!("undefined condition code {:05b}", mi.cc)))?;
            if taken {
                effect.branch = Some(mi.imm16 & 0xfff);
            }
        }
        _ => {
            let size = size_of(mi)?;
            let (dst, src_a) = if mi.three_operand { (reg2, reg1) } else { (reg1, reg1) };
            let a = read_reg(state, ctx, src_a, size)?;
            let b = match op {
                Op::Not | Op::Bswap => 0,
                _ if mi.rmod => mi.imm16 as u32 & super::alu::mask(size),
                _ => read_reg(state, ctx, mi.reg3(), size)?,
            };
            let result = alu(op, a, b, size, state.flags);
            if let Some(v) = result.value {
                effect.reg = write(dst, size, v)?;
            }
            if mi.flags != 0 {
                effect.flags = Some(result.flags.apply(state.flags));
            }
        }
    }
    Ok(effect)
}

fn apply(state: &mut MachineState, effect: &Effect) {
    if let Some((loc, v)) = effect.reg {
        match loc {
            RegLocation::Gpr(i, p) => state.gprs[i] = p.put(state.gprs[i], v),
            RegLocation::Temp(i, p) => state.temps[i] = p.put(state.temps[i], v),
            RegLocation::Pc | RegLocation::Zero => {}
        }
    }
    if let Some((address, len, value)) = effect.mem {
        state.memory.write(address, len, value).expect("write checked during evaluation");
    }
    if let Some(f) = effect.flags {
        state.flags = f;
    }
}

/// Executes one microinstruction, updating `state` and returning its effect.
/// A faulting instruction leaves `state` unchanged.
pub fn execute_insn(state: &mut MachineState, ctx: &MacroContext, mi: &Microinstruction) -> Result<Effect, Fault> {
    let effect = evaluate(state, ctx, mi)?;
    apply(state, &effect);
    Ok(effect)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqOutcome {
    Continue(u16),
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepResult {
    /// Last writePC value seen in the triad, even if a later slot faulted.
    pub write_pc: Option<u32>,
    pub seq: Result<SeqOutcome, Fault>,
}

/// Executes slots 0, 1 and 2 in order, then sequences. A taken conditional
/// branch overrides the sequence word once the whole triad has executed.
pub fn step_triad(
    state: &mut MachineState,
    ctx: &MacroContext,
    triad: &Triad,
    resolved: u16,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> StepResult {
    let mut write_pc = None;
    let mut branch = None;
    for (slot, mi) in triad.insns.iter().enumerate() {
        let before = trace.as_ref().map(|_| state.clone());
        let effect = match execute_insn(state, ctx, mi) {
            Ok(e) => e,
            Err(fault) => return StepResult { write_pc, seq: Err(fault) },
        };
        if let (Some(t), Some(before)) = (trace.as_deref_mut(), before) {
            t.push(record(&before, state, resolved, slot, mi, &effect));
        }
        write_pc = effect.write_pc.or(write_pc);
        branch = effect.branch.or(branch);
    }
    let seq = match branch {
        Some(target) => Ok(SeqOutcome::Continue(target)),
        None => SeqOutcome::from_action(triad.seq.action, triad.seq.address, resolved),
    };
    StepResult { write_pc, seq }
}

fn record(
    before: &MachineState,
    after: &MachineState,
    address: u16,
    slot: usize,
    mi: &Microinstruction,
    effect: &Effect,
) -> TraceRecord {
    let mnemonic = render_insn(mi).unwrap_or_else(|| format!(".raw {:#018x}", mi.encode().unwrap_or(0)));
    let mut registers = Vec::new();
    for (i, name) in GPR_NAMES.iter().enumerate() {
        if before.gprs[i] != after.gprs[i] {
            registers.push(RegDelta { name: name.to_string(), old: before.gprs[i], new: after.gprs[i] });
        }
        if before.temps[i] != after.temps[i] {
            registers.push(RegDelta { name: format!("t{}d", i + 1), old: before.temps[i], new: after.temps[i] });
        }
    }
    if before.flags != after.flags {
        registers.push(RegDelta {
            name: "flags".into(),
            old: flag_bits(before.flags),
            new: flag_bits(after.flags),
        });
    }
    let memory = effect
        .mem
        .map(|(address, len, _)| MemDelta {
            address,
            size: len,
            old: before.memory.read(address, len).unwrap_or(0),
            new: after.memory.read(address, len).unwrap_or(0),
        })
        .into_iter()
        .collect();
    TraceRecord { address, slot, mnemonic, registers, memory }
}

fn flag_bits(f: Flags) -> u32 {
    (f.zf as u32) | (f.cf as u32) << 1 | (f.sf as u32) << 2 | (f.of as u32) << 3
}
