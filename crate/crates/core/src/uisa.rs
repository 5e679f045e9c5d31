//! Bit-exact codec for 64-bit microinstructions and 32-bit sequence words.
//!
//! Decoding is total: every word maps to a [`Microinstruction`] and encoding
//! it again reproduces the word exactly, including bits whose meaning is
//! unknown.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables::{self, BitField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpClass {
    RegOp,
    LdOp,
    StOp,
    SpecOp,
    /// Class codes 011..111, never observed in known microcode.
    Reserved(u8),
}

impl OpClass {
    pub fn name(&self) -> &'static str {
        match self {
            OpClass::RegOp => "RegOp",
            OpClass::LdOp => "LdOp",
            OpClass::StOp => "StOp",
            OpClass::SpecOp => "SpecOp",
            OpClass::Reserved(_) => "Reserved",
        }
    }

    /// Value of the op class field (bits 39..37).
    pub fn code(&self) -> u8 {
        match self {
            OpClass::RegOp | OpClass::SpecOp => 0b000,
            OpClass::LdOp => 0b001,
            OpClass::StOp => 0b010,
            OpClass::Reserved(code) => *code,
        }
    }

    fn fields(&self) -> &'static [BitField] {
        match self {
            OpClass::RegOp => tables::REG_OP_LAYOUT.fields,
            OpClass::LdOp => tables::LD_OP_LAYOUT.fields,
            OpClass::StOp => tables::ST_OP_LAYOUT.fields,
            OpClass::SpecOp => tables::SPEC_OP_LAYOUT.fields,
            OpClass::Reserved(_) => tables::RESERVED_LAYOUT_FIELDS,
        }
    }

    fn has(&self, field: BitField) -> bool {
        self.fields().contains(&field)
    }

    /// Bits this class does not assign to any field.
    pub fn unknown_mask(&self) -> u64 {
        !self.fields().iter().fold(0, |m, f| m | f.mask())
    }
}

impl fmt::Display for OpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpClass::Reserved(code) => write!(f, "Reserved({code:03b})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Add,
    Or,
    Adc,
    Sbb,
    And,
    Sub,
    Xor,
    Cmp,
    Test,
    Rll,
    Rrl,
    Sll,
    Srl,
    Mov,
    Mul,
    Imul,
    Bswap,
    Not,
    WritePc,
    BranchCc,
    Ld,
    St,
}

impl Op {
    pub fn mnemonic(self) -> &'static str {
        tables::op_entry(self).mnemonic
    }

    pub fn class(self) -> OpClass {
        tables::op_entry(self).class
    }
}

/// The op-type field, either a known table entry or the raw type bits.
///
/// For SpecOps the raw value is the 4-bit type nibble; for every other class
/// it is the full 9-bit field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpType {
    Known(Op),
    Unrecognized(u16),
}

impl OpType {
    pub fn op(&self) -> Option<Op> {
        match self {
            OpType::Known(op) => Some(*op),
            OpType::Unrecognized(_) => None,
        }
    }
}

/// Operand width selected by a 2-bit size code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Size {
    Byte = 0,
    Word = 1,
    Dword = 2,
    Qword = 3,
}

impl Size {
    pub const ALL: [Size; 4] = [Size::Byte, Size::Word, Size::Dword, Size::Qword];

    pub fn from_code(code: u8) -> Option<Size> {
        Size::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn bits(self) -> u32 {
        8 << (self as u32)
    }
}

/// A register operand: 6-bit code plus the size that selects its width view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegisterName {
    pub code: u8,
    pub size: Size,
}

impl RegisterName {
    pub const fn new(code: u8, size: Size) -> Self {
        RegisterName { code, size }
    }

    pub fn mnemonic(&self) -> Option<&'static str> {
        register_mnemonic(self.code, self.size)
    }

    pub fn is_pc(&self) -> bool {
        self.code == tables::REG_CODE_PC
    }

    pub fn is_zero(&self) -> bool {
        self.code == tables::REG_CODE_ZERO
    }
}

impl fmt::Display for RegisterName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mnemonic() {
            Some(name) => f.write_str(name),
            None => write!(f, "r{:06b}.{}", self.code, self.size.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UisaError {
    #[error("unknown register mnemonic `{0}`")]
    UnknownRegister(String),
    #[error("field `{field}` value {value:#x} does not fit in {width} bits")]
    FieldOverflow { field: &'static str, value: u64, width: u32 },
    #[error("field `{field}` is not part of the {class} layout but holds {value:#x}")]
    FieldNotInClass { field: &'static str, class: OpClass, value: u64 },
    #[error("unknown bits {bits:#018x} overlap documented fields of {class}")]
    UnknownBitsOverlap { class: OpClass, bits: u64 },
    #[error("op type {op:?} does not belong to class {class}")]
    OpClassMismatch { op: Op, class: OpClass },
    #[error("raw op type {code:#x} would decode under a different class than {class}")]
    AmbiguousOpType { code: u16, class: OpClass },
    #[error("sequence word address {0:#x} exceeds 12 bits")]
    AddressOverflow(u16),
}

/// Looks up a mnemonic from the register table.
pub fn lookup_register(mnemonic: &str) -> Result<RegisterName, UisaError> {
    for row in &tables::REGISTERS {
        for (i, name) in row.names.iter().enumerate() {
            if name.eq_ignore_ascii_case(mnemonic) {
                return Ok(RegisterName::new(row.code, Size::ALL[i]));
            }
        }
    }
    Err(UisaError::UnknownRegister(mnemonic.to_string()))
}

pub fn register_mnemonic(code: u8, size: Size) -> Option<&'static str> {
    tables::REGISTERS
        .iter()
        .find(|row| row.code == code)
        .map(|row| row.names[size as usize])
}

/// A decoded 64-bit microinstruction.
///
/// Fields that the instruction's class does not define are zero; their bits
/// (and every other undocumented bit) live in `unknown` at their original
/// positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Microinstruction {
    pub class: OpClass,
    pub op_type: OpType,
    /// Condition field, SpecOp only.
    pub cc: u8,
    pub sw: bool,
    pub three_operand: bool,
    pub reg1: u8,
    /// Flags commit field, RegOp only.
    pub flags: u8,
    /// Size field, absent for LdOp.
    pub size: u8,
    pub reg2: u8,
    /// Set selects the 16-bit immediate, clear selects reg3. Absent for SpecOp.
    pub rmod: bool,
    /// Immediate, reg3 (low six bits) or branch target (low twelve bits).
    pub imm16: u16,
    pub unknown: u64,
}

impl Microinstruction {
    /// A blank instruction of the given op; every other field zero.
    pub fn new(op: Op) -> Self {
        Microinstruction {
            class: op.class(),
            op_type: OpType::Known(op),
            cc: 0,
            sw: false,
            three_operand: false,
            reg1: 0,
            flags: 0,
            size: 0,
            reg2: 0,
            rmod: false,
            imm16: 0,
            unknown: 0,
        }
    }

    pub fn op(&self) -> Option<Op> {
        self.op_type.op()
    }

    pub fn reg3(&self) -> u8 {
        (self.imm16 & 0x3f) as u8
    }

    pub fn size_code(&self) -> Option<Size> {
        Size::from_code(self.size)
    }

    pub fn uses_immediate(&self) -> bool {
        self.rmod
    }

    pub fn decode(word: u64) -> Self {
        decode_microinstruction(word)
    }

    pub fn encode(&self) -> Result<u64, UisaError> {
        encode_microinstruction(self)
    }
}

/// Decodes any 64-bit word.
pub fn decode_microinstruction(word: u64) -> Microinstruction {
    let class_code = tables::OP_CLASS.get(word) as u8;
    let type9 = tables::TYPE.get(word) as u16;
    let class = match class_code {
        0b000 => {
            let nibble = tables::SPEC_TYPE.get(word) as u16;
            if nibble == tables::SPEC_TYPE_WRITE_PC || nibble == tables::SPEC_TYPE_BRANCH_CC {
                OpClass::SpecOp
            } else {
                OpClass::RegOp
            }
        }
        0b001 => OpClass::LdOp,
        0b010 => OpClass::StOp,
        other => OpClass::Reserved(other),
    };

    let op_type = match class {
        OpClass::SpecOp => {
            let nibble = tables::SPEC_TYPE.get(word) as u16;
            if nibble == tables::SPEC_TYPE_WRITE_PC {
                OpType::Known(Op::WritePc)
            } else {
                OpType::Known(Op::BranchCc)
            }
        }
        OpClass::Reserved(_) => OpType::Unrecognized(type9),
        _ => tables::OP_TYPES
            .iter()
            .find(|e| e.class == class && e.fixed_mask == 0x1ff && e.encoding == type9)
            .map(|e| OpType::Known(e.op))
            .unwrap_or(OpType::Unrecognized(type9)),
    };

    let get = |field: BitField| if class.has(field) { field.get(word) } else { 0 };
    Microinstruction {
        class,
        op_type,
        cc: get(tables::CC) as u8,
        sw: get(tables::SW) != 0,
        three_operand: get(tables::THREE_OPERAND) != 0,
        reg1: get(tables::REG1) as u8,
        flags: get(tables::FLAGS) as u8,
        size: get(tables::SIZE) as u8,
        reg2: get(tables::REG2) as u8,
        rmod: get(tables::RMOD) != 0,
        imm16: get(tables::IMM16) as u16,
        unknown: word & class.unknown_mask(),
    }
}

/// Packs a microinstruction, rejecting any field that does not fit its slot.
pub fn encode_microinstruction(insn: &Microinstruction) -> Result<u64, UisaError> {
    let class = insn.class;
    if let OpClass::Reserved(code) = class {
        if !(0b011..=0b111).contains(&code) {
            return Err(UisaError::FieldOverflow {
                field: "op_class",
                value: code as u64,
                width: 3,
            });
        }
    }

    let type_value: u64 = match (class, insn.op_type) {
        (_, OpType::Known(op)) => {
            if op.class() != class {
                return Err(UisaError::OpClassMismatch { op, class });
            }
            let entry = tables::op_entry(op);
            match class {
                OpClass::SpecOp => (entry.encoding >> 5) as u64,
                _ => entry.encoding as u64,
            }
        }
        (OpClass::SpecOp, OpType::Unrecognized(code)) => {
            // Only two nibbles decode as SpecOp and both are known ops.
            return Err(UisaError::AmbiguousOpType { code, class });
        }
        (_, OpType::Unrecognized(code)) => {
            check(tables::TYPE, code as u64)?;
            if class == OpClass::RegOp {
                let nibble = code >> 5;
                let known = tables::OP_TYPES
                    .iter()
                    .any(|e| e.class == OpClass::RegOp && e.encoding == code);
                if known
                    || nibble == tables::SPEC_TYPE_WRITE_PC
                    || nibble == tables::SPEC_TYPE_BRANCH_CC
                {
                    return Err(UisaError::AmbiguousOpType { code, class });
                }
            } else if tables::OP_TYPES
                .iter()
                .any(|e| e.class == class && e.encoding == code)
            {
                return Err(UisaError::AmbiguousOpType { code, class });
            }
            code as u64
        }
    };

    let overlap = insn.unknown & !class.unknown_mask();
    if overlap != 0 {
        return Err(UisaError::UnknownBitsOverlap { class, bits: overlap });
    }

    let mut word = insn.unknown;
    let mut put = |field: BitField, value: u64| -> Result<(), UisaError> {
        if !class.has(field) {
            if value != 0 {
                return Err(UisaError::FieldNotInClass { field: field.name, class, value });
            }
            return Ok(());
        }
        check(field, value)?;
        word = field.put(word, value);
        Ok(())
    };
    let type_field = if class == OpClass::SpecOp { tables::SPEC_TYPE } else { tables::TYPE };
    put(type_field, type_value)?;
    put(tables::CC, insn.cc as u64)?;
    put(tables::SW, insn.sw as u64)?;
    put(tables::THREE_OPERAND, insn.three_operand as u64)?;
    put(tables::REG1, insn.reg1 as u64)?;
    put(tables::FLAGS, insn.flags as u64)?;
    put(tables::OP_CLASS, class.code() as u64)?;
    put(tables::SIZE, insn.size as u64)?;
    put(tables::REG2, insn.reg2 as u64)?;
    put(tables::RMOD, insn.rmod as u64)?;
    put(tables::IMM16, insn.imm16 as u64)?;
    Ok(word)
}

fn check(field: BitField, value: u64) -> Result<(), UisaError> {
    if value > field.max() {
        Err(UisaError::FieldOverflow { field: field.name, value, width: field.width() })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeqAction {
    NextTriad,
    Branch,
    Complete,
    Unknown(u8),
}

impl SeqAction {
    pub fn code(self) -> u8 {
        match self {
            SeqAction::NextTriad => tables::SEQ_NEXT_TRIAD,
            SeqAction::Branch => tables::SEQ_BRANCH,
            SeqAction::Complete => tables::SEQ_COMPLETE,
            SeqAction::Unknown(code) => code,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code {
            tables::SEQ_NEXT_TRIAD => SeqAction::NextTriad,
            tables::SEQ_BRANCH => SeqAction::Branch,
            tables::SEQ_COMPLETE => SeqAction::Complete,
            other => SeqAction::Unknown(other),
        }
    }
}

/// A decoded sequence word. `address` carries bits 11..0 for every action
/// (they are only meaningful for branches); `unknown` keeps bits 31..17 and
/// 13..12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SequenceWord {
    pub action: SeqAction,
    pub address: u16,
    pub unknown: u32,
}

const SEQ_UNKNOWN_MASK: u32 = !((tables::SEQ_ACTION.mask() | tables::SEQ_ADDRESS.mask()) as u32);

impl SequenceWord {
    pub const NEXT: SequenceWord =
        SequenceWord { action: SeqAction::NextTriad, address: 0, unknown: 0 };
    pub const COMPLETE: SequenceWord =
        SequenceWord { action: SeqAction::Complete, address: 0, unknown: 0 };

    pub fn branch(address: u16) -> Self {
        SequenceWord { action: SeqAction::Branch, address, unknown: 0 }
    }

    pub fn decode(word: u32) -> Self {
        decode_sequence_word(word)
    }

    pub fn encode(&self) -> Result<u32, UisaError> {
        encode_sequence_word(self)
    }
}

impl Default for SequenceWord {
    fn default() -> Self {
        SequenceWord::NEXT
    }
}

pub fn decode_sequence_word(word: u32) -> SequenceWord {
    let w = word as u64;
    SequenceWord {
        action: SeqAction::from_code(tables::SEQ_ACTION.get(w) as u8),
        address: tables::SEQ_ADDRESS.get(w) as u16,
        unknown: word & SEQ_UNKNOWN_MASK,
    }
}

pub fn encode_sequence_word(sw: &SequenceWord) -> Result<u32, UisaError> {
    if sw.address as u64 > tables::SEQ_ADDRESS.max() {
        return Err(UisaError::AddressOverflow(sw.address));
    }
    check(tables::SEQ_ACTION, sw.action.code() as u64)?;
    if sw.unknown & !SEQ_UNKNOWN_MASK != 0 {
        return Err(UisaError::FieldOverflow {
            field: "sequence unknown bits",
            value: sw.unknown as u64,
            width: SEQ_UNKNOWN_MASK.count_ones(),
        });
    }
    let mut w = sw.unknown as u64;
    w = tables::SEQ_ACTION.put(w, sw.action.code() as u64);
    w = tables::SEQ_ADDRESS.put(w, sw.address as u64);
    Ok(w as u32)
}

/// Three microinstructions and a sequence word; the unit of addressing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triad {
    pub insns: [Microinstruction; 3],
    pub seq: SequenceWord,
}

/// Size of a serialized triad: three 64-bit words plus a 32-bit word.
pub const TRIAD_BYTES: usize = 28;

impl Triad {
    pub fn new(insns: [Microinstruction; 3], seq: SequenceWord) -> Self {
        Triad { insns, seq }
    }

    pub fn nops(seq: SequenceWord) -> Self {
        Triad { insns: [nop_encoding(); 3], seq }
    }

    pub fn from_words(words: [u64; 3], seq: u32) -> Self {
        Triad {
            insns: words.map(decode_microinstruction),
            seq: decode_sequence_word(seq),
        }
    }

    pub fn words(&self) -> Result<([u64; 3], u32), UisaError> {
        Ok((
            [self.insns[0].encode()?, self.insns[1].encode()?, self.insns[2].encode()?],
            self.seq.encode()?,
        ))
    }

    /// Little-endian serialization: three microinstructions then the sequence word.
    pub fn to_bytes(&self) -> Result<[u8; TRIAD_BYTES], UisaError> {
        let (words, seq) = self.words()?;
        let mut out = [0u8; TRIAD_BYTES];
        for (i, w) in words.iter().enumerate() {
            out[i * 8..i * 8 + 8].copy_from_slice(&w.to_le_bytes());
        }
        out[24..28].copy_from_slice(&seq.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8; TRIAD_BYTES]) -> Self {
        let word = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        let seq = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
        Triad::from_words([word(0), word(1), word(2)], seq)
    }
}

/// The canonical no-op: `or zerod, zerod, zerod` in three-operand register
/// mode without committing flags.
pub fn nop_encoding() -> Microinstruction {
    let zero = tables::REG_CODE_ZERO;
    Microinstruction {
        three_operand: true,
        reg1: zero,
        reg2: zero,
        size: Size::Dword.code(),
        rmod: false,
        imm16: zero as u16,
        ..Microinstruction::new(Op::Or)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_field_selects_ld_and_st() {
        let ld = decode_microinstruction(0b001 << 37);
        assert_eq!(ld.class, OpClass::LdOp);
        let st = decode_microinstruction(0b010 << 37);
        assert_eq!(st.class, OpClass::StOp);
        let mut insn = Microinstruction::new(Op::St);
        insn.size = 2;
        assert_eq!(tables::OP_CLASS.get(insn.encode().unwrap()), 0b010);
    }

    #[test]
    fn zero_word_is_add_al() {
        let insn = decode_microinstruction(0);
        assert_eq!(insn.class, OpClass::RegOp);
        assert_eq!(insn.op_type, OpType::Known(Op::Add));
        assert_eq!((insn.reg1, insn.reg2, insn.imm16), (0, 0, 0));
        assert_eq!(insn.encode().unwrap(), 0);
    }

    #[test]
    fn mov_t1d_imm_matches_packing_oracle() {
        // Packed independently from the field table.
        const EXPECTED: u64 = 0x1802_0000_8080_0042;
        let insn = Microinstruction {
            reg1: 0b001000,
            size: 0b010,
            rmod: true,
            imm16: 0x0042,
            ..Microinstruction::new(Op::Mov)
        };
        assert_eq!(insn.encode().unwrap(), EXPECTED);
        let back = decode_microinstruction(EXPECTED);
        assert_eq!(back, insn);
        assert_eq!(tables::TYPE.get(EXPECTED), 0b001100000);
    }

    #[test]
    fn branch_cc_keeps_target_in_low_bits() {
        let insn = Microinstruction {
            cc: (3 << 1) | 1,
            imm16: 0xfe5,
            ..Microinstruction::new(Op::BranchCc)
        };
        let word = insn.encode().unwrap();
        assert_eq!(word & 0xfff, 0xfe5);
        assert_eq!(word, 0x29c0_0000_0000_0fe5);
        let back = decode_microinstruction(word);
        assert_eq!(back.op(), Some(Op::BranchCc));
        assert_eq!(back.cc, 7);
    }

    #[test]
    fn nop_matches_packing_oracle() {
        assert_eq!(nop_encoding().encode().unwrap(), 0x005f_c000_bf00_003f);
        assert_eq!(decode_microinstruction(0x005f_c000_bf00_003f), nop_encoding());
    }

    #[test]
    fn encode_rejects_overflow_and_misplaced_fields() {
        let mut insn = Microinstruction::new(Op::Add);
        insn.reg1 = 64;
        assert!(matches!(insn.encode(), Err(UisaError::FieldOverflow { field: "reg1", .. })));

        let mut ld = Microinstruction::new(Op::Ld);
        ld.flags = 1;
        assert!(matches!(ld.encode(), Err(UisaError::FieldNotInClass { field: "flags", .. })));

        let mut bad = Microinstruction::new(Op::Add);
        bad.class = OpClass::LdOp;
        assert!(matches!(bad.encode(), Err(UisaError::OpClassMismatch { .. })));

        let mut spill = Microinstruction::new(Op::Add);
        spill.unknown = 1 << 23;
        assert!(matches!(spill.encode(), Err(UisaError::UnknownBitsOverlap { .. })));
    }

    #[test]
    fn unrecognized_reg_op_types_are_flagged() {
        let word = 0b111111111u64 << 54;
        let insn = decode_microinstruction(word);
        assert_eq!(insn.class, OpClass::RegOp);
        assert_eq!(insn.op_type, OpType::Unrecognized(0b111111111));
        assert_eq!(insn.encode().unwrap(), word);
    }

    #[test]
    fn sequence_word_actions() {
        assert_eq!(decode_sequence_word(0b110 << 14).action, SeqAction::Complete);
        let br = decode_sequence_word((0b010 << 14) | 0x7e6);
        assert_eq!((br.action, br.address), (SeqAction::Branch, 0x7e6));
        assert_eq!(decode_sequence_word(0), SequenceWord::NEXT);
        assert_eq!(
            SequenceWord::branch(0x1000).encode(),
            Err(UisaError::AddressOverflow(0x1000))
        );
    }

    #[test]
    fn register_lookup() {
        assert_eq!(lookup_register("pcd").unwrap(), RegisterName::new(0b111000, Size::Dword));
        assert_eq!(lookup_register("zerob").unwrap(), RegisterName::new(0b111111, Size::Byte));
        assert!(matches!(lookup_register("r9d"), Err(UisaError::UnknownRegister(_))));
        for row in &tables::REGISTERS {
            for size in Size::ALL {
                let name = register_mnemonic(row.code, size).unwrap();
                assert_eq!(lookup_register(name).unwrap(), RegisterName::new(row.code, size));
            }
        }
    }
}
