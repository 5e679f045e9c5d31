use super::parse::{parse_program, Directive, Instruction, Mnemonic, Operand, Program, Slot, Statement};
use super::{Loc, RtlError, RtlErrorKind};
use crate::container::UpdateFile;
use crate::uisa::{
    decode_sequence_word, nop_encoding, Microinstruction, Op, OpClass, RegisterName, SequenceWord, Size, Triad,
};

/// Consecutive triads starting at a `.start` address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: u16,
    pub triads: Vec<Triad>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AssembledProgram {
    pub segments: Vec<Segment>,
    /// Match registers requested by pragmas (0 = unset).
    pub match_registers: [u32; 8],
}

impl AssembledProgram {
    /// Triads laid out from address 0, gaps filled with `fill`.
    pub fn image(&self, fill: Triad) -> Result<Vec<Triad>, RtlError> {
        let mut out: Vec<Option<Triad>> = Vec::new();
        for seg in &self.segments {
            let start = seg.start as usize;
            if out.len() < start + seg.triads.len() {
                out.resize(start + seg.triads.len(), None);
            }
            for (i, t) in seg.triads.iter().enumerate() {
                let slot = &mut out[start + i];
                if slot.is_some() {
                    return Err(RtlError::new(
                        Loc::default(),
                        RtlErrorKind::Overlap { start: seg.start, address: (start + i) as u16 },
                    ));
                }
                *slot = Some(*t);
            }
        }
        Ok(out.into_iter().map(|t| t.unwrap_or(fill)).collect())
    }

    /// Patch-RAM image; unused triads in gaps are nops that complete.
    pub fn patch_triads(&self) -> Result<Vec<Triad>, RtlError> {
        self.image(Triad::nops(SequenceWord::COMPLETE))
    }

    /// Update file holding the patch-RAM image and the pragma match
    /// registers.
    pub fn to_update(&self) -> Result<UpdateFile, RtlError> {
        let triads = self.patch_triads()?;
        let count = triads.len();
        UpdateFile::new(self.match_registers, triads)
            .map_err(|_| RtlError::new(Loc::default(), RtlErrorKind::TooManyTriads(count)))
    }

    /// All triads in source order, ignoring addresses.
    pub fn triads(&self) -> Vec<Triad> {
        self.segments.iter().flat_map(|s| s.triads.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Any,
    First,
    Last,
}

fn placement(slot: &Slot) -> Placement {
    match slot {
        Slot::Insn(Instruction { mnemonic: Mnemonic::Op(Op::Mul | Op::Imul), .. }) => Placement::First,
        Slot::Insn(Instruction { mnemonic: Mnemonic::Op(Op::WritePc), .. }) => Placement::Last,
        _ => Placement::Any,
    }
}

#[derive(Default)]
struct Builder {
    segments: Vec<Segment>,
    slots: Vec<u64>,
    open: bool,
}

impl Builder {
    fn segment(&mut self) -> &mut Segment {
        if self.segments.is_empty() {
            self.segments.push(Segment { start: 0, triads: Vec::new() });
        }
        self.segments.last_mut().unwrap()
    }

    fn seal(&mut self, seq: SequenceWord) {
        let nop = nop_encoding().encode().expect("nop encodes");
        let mut words = [nop; 3];
        words[..self.slots.len()].copy_from_slice(&self.slots);
        let triad = Triad::from_words(words, 0);
        let triad = Triad { seq, ..triad };
        self.segment().triads.push(triad);
        self.slots.clear();
        self.open = false;
    }

    fn seal_if_open(&mut self) {
        if self.open {
            self.seal(SequenceWord::NEXT);
        }
    }

    fn place(&mut self, word: u64, placement: Placement) {
        let nop = nop_encoding().encode().expect("nop encodes");
        match placement {
            Placement::First => {
                if self.open && !self.slots.is_empty() {
                    self.seal(SequenceWord::NEXT);
                }
            }
            Placement::Any | Placement::Last => {
                if self.open && self.slots.len() == 3 {
                    self.seal(SequenceWord::NEXT);
                }
            }
        }
        if placement == Placement::Last {
            while self.slots.len() < 2 {
                self.slots.push(nop);
            }
        }
        self.open = true;
        self.slots.push(word);
    }
}

pub fn assemble_source(text: &str) -> Result<AssembledProgram, RtlError> {
    assemble(&parse_program(text)?)
}

pub fn assemble(program: &Program) -> Result<AssembledProgram, RtlError> {
    let mut b = Builder::default();
    for stmt in &program.statements {
        match stmt {
            Statement::Slot(slot) => {
                let word = encode_slot(slot)?;
                b.place(word, placement(slot));
            }
            Statement::Bundle(slots, loc) => {
                b.seal_if_open();
                for (i, slot) in slots.iter().enumerate() {
                    let ok = match placement(slot) {
                        Placement::Any => true,
                        Placement::First => i == 0,
                        Placement::Last => i == 2,
                    };
                    if !ok {
                        return Err(RtlError::new(
                            slot.loc(),
                            RtlErrorKind::ConstraintUnsatisfiable(format!(
                                "slot {i} of the triad at line {} cannot hold this instruction",
                                loc.line
                            )),
                        ));
                    }
                    b.slots.push(encode_slot(slot)?);
                }
                b.open = true;
            }
            Statement::Directive(d, loc) => match d {
                Directive::Start(addr) => {
                    let start = u16::try_from(*addr)
                        .ok()
                        .filter(|a| *a <= 0xfff)
                        .ok_or_else(|| RtlError::new(*loc, RtlErrorKind::BranchTargetTooLarge(*addr)))?;
                    b.seal_if_open();
                    b.segments.push(Segment { start, triads: Vec::new() });
                }
                _ => {
                    let seq = match d {
                        Directive::SwNext => SequenceWord::NEXT,
                        Directive::SwComplete => SequenceWord::COMPLETE,
                        Directive::SwBranch(addr) => {
                            if *addr > 0xfff {
                                return Err(RtlError::new(*loc, RtlErrorKind::BranchTargetTooLarge(*addr)));
                            }
                            SequenceWord::branch(*addr as u16)
                        }
                        Directive::SwRaw(word) => {
                            let w = u32::try_from(*word).map_err(|_| {
                                RtlError::new(*loc, RtlErrorKind::Syntax(format!("{word:#x} exceeds 32 bits")))
                            })?;
                            decode_sequence_word(w)
                        }
                        Directive::Start(_) => unreachable!(),
                    };
                    b.seal(seq);
                }
            },
        }
    }
    b.seal_if_open();
    let mut match_registers = [0u32; 8];
    for &(n, addr) in &program.match_registers {
        match_registers[n] = addr;
    }
    Ok(AssembledProgram { segments: b.segments, match_registers })
}

fn encode_slot(slot: &Slot) -> Result<u64, RtlError> {
    match slot {
        Slot::Raw(word, _) => Ok(*word),
        Slot::Insn(insn) => {
            let mi = encode_instruction(insn)?;
            mi.encode().map_err(|e| RtlError::new(insn.loc, e.into()))
        }
    }
}

/// Translates one instruction into its microinstruction fields.
pub fn encode_instruction(insn: &Instruction) -> Result<Microinstruction, RtlError> {
    let err = |kind: RtlErrorKind| RtlError::new(insn.loc, kind);
    let bad = |msg: &str| err(RtlErrorKind::InvalidOperands(msg.to_string()));
    let ops = insn.operands.as_slice();

    let op = match insn.mnemonic {
        Mnemonic::Nop => {
            return if ops.is_empty() { Ok(nop_encoding()) } else { Err(bad("nop takes no operands")) };
        }
        Mnemonic::Jcc => {
            return match ops {
                [Operand::Cond(cc), Operand::Imm(addr)] => {
                    if *addr > 0xfff {
                        return Err(err(RtlErrorKind::BranchTargetTooLarge(*addr)));
                    }
                    Ok(Microinstruction { cc: *cc, imm16: *addr as u16, ..Microinstruction::new(Op::BranchCc) })
                }
                _ => Err(bad("jcc expects a condition and a target address")),
            };
        }
        Mnemonic::Op(op) => op,
    };

    let same_size = |regs: &[RegisterName]| -> Result<Size, RtlError> {
        let size = regs[0].size;
        if regs.iter().any(|r| r.size != size) {
            let names: Vec<String> = regs.iter().map(|r| r.to_string()).collect();
            return Err(err(RtlErrorKind::SizeMismatch(names.join(", "))));
        }
        Ok(size)
    };
    // Returns (rmod, imm16) for the final source operand.
    let src_b = |o: &Operand| -> Result<(bool, u16, Option<RegisterName>), RtlError> {
        match o {
            Operand::Reg(r) => Ok((false, r.code as u16, Some(*r))),
            Operand::Imm(v) if *v <= 0xffff => Ok((true, *v as u16, None)),
            Operand::Imm(v) => Err(err(RtlErrorKind::ImmediateTooLarge(*v))),
            _ => Err(bad("expected a register or immediate")),
        }
    };

    let mut mi = Microinstruction::new(op);
    match op {
        Op::Ld => match ops {
            [Operand::Reg(dst), Operand::Mem(base)] => {
                if dst.size != Size::Dword {
                    return Err(err(RtlErrorKind::SizeMismatch(format!("ld loads a dword, not into {dst}"))));
                }
                mi.reg1 = dst.code;
                mi.reg2 = base.code;
                mi.rmod = true;
            }
            _ => return Err(bad("ld expects `ld reg, [reg]`")),
        },
        Op::St => match ops {
            [Operand::Mem(base), Operand::Reg(src)] => {
                mi.reg1 = src.code;
                mi.reg2 = base.code;
                mi.size = src.size.code();
                mi.rmod = true;
            }
            _ => return Err(bad("st expects `st [reg], reg`")),
        },
        Op::WritePc => match ops {
            [Operand::Reg(r)] => {
                mi.reg1 = r.code;
                mi.size = r.size.code();
            }
            _ => return Err(bad("writePC expects one register")),
        },
        Op::Not | Op::Bswap => match ops {
            [Operand::Reg(r)] => {
                mi.reg1 = r.code;
                mi.size = r.size.code();
                mi.rmod = true;
            }
            [Operand::Reg(dst), Operand::Reg(src)] => {
                mi.size = same_size(&[*dst, *src])?.code();
                mi.three_operand = true;
                mi.reg2 = dst.code;
                mi.reg1 = src.code;
                mi.rmod = true;
            }
            _ => return Err(bad("expected `op reg` or `op dst, src`")),
        },
        _ => {
            debug_assert_eq!(op.class(), OpClass::RegOp);
            let two_only = matches!(op, Op::Cmp | Op::Test | Op::Mov);
            match ops {
                [Operand::Reg(dst), src] => {
                    let (rmod, imm, reg) = src_b(src)?;
                    let mut regs = vec![*dst];
                    regs.extend(reg);
                    mi.size = same_size(&regs)?.code();
                    mi.reg1 = dst.code;
                    mi.rmod = rmod;
                    mi.imm16 = imm;
                }
                [Operand::Reg(dst), Operand::Reg(a), src] if !two_only => {
                    let (rmod, imm, reg) = src_b(src)?;
                    let mut regs = vec![*dst, *a];
                    regs.extend(reg);
                    mi.size = same_size(&regs)?.code();
                    mi.three_operand = true;
                    mi.reg2 = dst.code;
                    mi.reg1 = a.code;
                    mi.rmod = rmod;
                    mi.imm16 = imm;
                }
                _ if two_only => return Err(bad("expected `op dst, src`")),
                _ => return Err(bad("expected `op dst, src` or `op dst, src1, src2`")),
            }
        }
    }
    if insn.set_flags || matches!(op, Op::Cmp | Op::Test) {
        mi.flags = 0b11;
    }
    Ok(mi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uisa::{decode_microinstruction, SeqAction};

    fn words(src: &str) -> Vec<[u64; 3]> {
        assemble_source(src).unwrap().triads().iter().map(|t| t.words().unwrap().0).collect()
    }

    #[test]
    fn store_matches_packing_oracle() {
        assert_eq!(words("st [edi], t2d")[0][0], 0x5402_4040_8780_0000);
    }

    #[test]
    fn single_instruction_pads_with_nops() {
        let p = assemble_source("mov t1d, 0x1").unwrap();
        let t = p.triads();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].insns[0].op(), Some(Op::Mov));
        assert_eq!(t[0].insns[1], nop_encoding());
        assert_eq!(t[0].insns[2], nop_encoding());
        assert_eq!(t[0].seq, SequenceWord::NEXT);
    }

    #[test]
    fn mul_starts_a_fresh_triad() {
        let t = assemble_source("mov eax, 0x1\nmov ebx, 0x2\nmul eax, ebx").unwrap().triads();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].insns[2], nop_encoding());
        assert_eq!(t[1].insns[0].op(), Some(Op::Mul));
    }

    #[test]
    fn write_pc_goes_last() {
        let t = assemble_source("mov t1d, 0x1\nwritePC t1d\n.sw_complete").unwrap().triads();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].insns[1], nop_encoding());
        assert_eq!(t[0].insns[2].op(), Some(Op::WritePc));
        assert_eq!(t[0].seq.action, SeqAction::Complete);
    }

    #[test]
    fn bundle_constraints_are_checked() {
        let err = assemble_source("nop | mul eax, ebx | nop").unwrap_err();
        assert!(matches!(err.kind, RtlErrorKind::ConstraintUnsatisfiable(_)));
        let err = assemble_source("mul eax, ebx | writePC t1d | mul ecx, edx").unwrap_err();
        assert!(matches!(err.kind, RtlErrorKind::ConstraintUnsatisfiable(_)));
    }

    #[test]
    fn operand_checks() {
        let kind = |s: &str| assemble_source(s).unwrap_err().kind;
        assert!(matches!(kind("mov t1d, 0x10000"), RtlErrorKind::ImmediateTooLarge(0x10000)));
        assert!(matches!(kind("jcc ZF, 0x1000"), RtlErrorKind::BranchTargetTooLarge(0x1000)));
        assert!(matches!(kind(".sw_branch 0x1000"), RtlErrorKind::BranchTargetTooLarge(_)));
        assert!(matches!(kind("add eax, bx"), RtlErrorKind::SizeMismatch(_)));
        assert!(matches!(kind("ld t2w, [edi]"), RtlErrorKind::SizeMismatch(_)));
        assert!(matches!(kind("add eax, 0x1, ebx"), RtlErrorKind::InvalidOperands(_)));
    }

    #[test]
    fn three_operand_form_targets_reg2() {
        let w = words("srl t2d, t1d, 16")[0][0];
        let mi = decode_microinstruction(w);
        assert!(mi.three_operand);
        assert_eq!((mi.reg1, mi.reg2, mi.imm16, mi.rmod), (0b001000, 0b001001, 16, true));
    }

    #[test]
    fn segments_and_gaps() {
        let p = assemble_source(".start 0x2\nnop\n.sw_complete\n.start 0x0\nnop").unwrap();
        let img = p.patch_triads().unwrap();
        assert_eq!(img.len(), 3);
        assert_eq!(img[1], Triad::nops(SequenceWord::COMPLETE));
        let err = assemble_source(".start 0x0\nnop\nnop\nnop\nnop\n.start 0x1\nnop").unwrap();
        assert!(err.patch_triads().is_err());
    }

    #[test]
    fn directive_after_full_triad_closes_it() {
        let t = assemble_source("nop\nnop\nnop\n.sw_complete").unwrap().triads();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].seq, SequenceWord::COMPLETE);
    }
}
