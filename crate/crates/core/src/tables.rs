//! Machine-readable encoding tables for the microinstruction set.
//!
//! Everything the codec knows about bit positions, op-type encodings,
//! register codes, sequence-word actions and condition codes lives here.
//! [`export_json`] renders the same data as the `tables/uisa.json` document
//! shipped with the crate.

use serde_json::{json, Value};

use crate::uisa::{Op, OpClass};

/// A contiguous bit range `hi..=lo` inside a 64-bit (or 32-bit) word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitField {
    pub name: &'static str,
    pub hi: u8,
    pub lo: u8,
}

impl BitField {
    pub const fn new(name: &'static str, hi: u8, lo: u8) -> Self {
        BitField { name, hi, lo }
    }

    pub const fn width(&self) -> u32 {
        (self.hi - self.lo + 1) as u32
    }

    /// Largest value the field can hold.
    pub const fn max(&self) -> u64 {
        if self.width() == 64 {
            u64::MAX
        } else {
            (1u64 << self.width()) - 1
        }
    }

    /// The field's bits in word position.
    pub const fn mask(&self) -> u64 {
        self.max() << self.lo
    }

    #[inline]
    pub const fn get(&self, word: u64) -> u64 {
        (word >> self.lo) & self.max()
    }

    #[inline]
    pub const fn put(&self, word: u64, value: u64) -> u64 {
        (word & !self.mask()) | ((value & self.max()) << self.lo)
    }
}

pub const TYPE: BitField = BitField::new("type", 62, 54);
pub const SPEC_TYPE: BitField = BitField::new("type", 62, 59);
pub const CC: BitField = BitField::new("cc", 58, 54);
pub const SW: BitField = BitField::new("sw", 53, 53);
pub const THREE_OPERAND: BitField = BitField::new("3o", 52, 52);
pub const REG1: BitField = BitField::new("reg1", 51, 46);
pub const FLAGS: BitField = BitField::new("flags", 42, 41);
pub const OP_CLASS: BitField = BitField::new("op_class", 39, 37);
pub const SIZE: BitField = BitField::new("size", 32, 30);
pub const REG2: BitField = BitField::new("reg2", 29, 24);
pub const RMOD: BitField = BitField::new("rmod", 23, 23);
pub const IMM16: BitField = BitField::new("imm16", 15, 0);

/// Field layout of one operation class. Bits not covered by `fields` are
/// unknown and carried verbatim.
#[derive(Debug, Clone, Copy)]
pub struct ClassLayout {
    pub class: OpClass,
    pub class_code: u8,
    pub fields: &'static [BitField],
}

impl ClassLayout {
    pub const fn known_mask(&self) -> u64 {
        let mut mask = 0u64;
        let mut i = 0;
        while i < self.fields.len() {
            mask |= self.fields[i].mask();
            i += 1;
        }
        mask
    }

    pub const fn unknown_mask(&self) -> u64 {
        !self.known_mask()
    }
}

pub const REG_OP_LAYOUT: ClassLayout = ClassLayout {
    class: OpClass::RegOp,
    class_code: 0b000,
    fields: &[TYPE, SW, THREE_OPERAND, REG1, FLAGS, OP_CLASS, SIZE, REG2, RMOD, IMM16],
};

pub const LD_OP_LAYOUT: ClassLayout = ClassLayout {
    class: OpClass::LdOp,
    class_code: 0b001,
    fields: &[TYPE, SW, THREE_OPERAND, REG1, OP_CLASS, REG2, RMOD, IMM16],
};

pub const ST_OP_LAYOUT: ClassLayout = ClassLayout {
    class: OpClass::StOp,
    class_code: 0b010,
    fields: &[TYPE, SW, THREE_OPERAND, REG1, OP_CLASS, SIZE, REG2, RMOD, IMM16],
};

pub const SPEC_OP_LAYOUT: ClassLayout = ClassLayout {
    class: OpClass::SpecOp,
    class_code: 0b000,
    fields: &[SPEC_TYPE, CC, SW, THREE_OPERAND, REG1, OP_CLASS, SIZE, REG2, IMM16],
};

/// Class codes 011..111 have no documented layout; they are decoded with the
/// generic LdOp-like field set.
pub const RESERVED_LAYOUT_FIELDS: &[BitField] =
    &[TYPE, SW, THREE_OPERAND, REG1, OP_CLASS, REG2, RMOD, IMM16];

pub const CLASS_LAYOUTS: [ClassLayout; 4] =
    [REG_OP_LAYOUT, LD_OP_LAYOUT, ST_OP_LAYOUT, SPEC_OP_LAYOUT];

/// SpecOp type nibbles (bits 62..59). Every other nibble under class 000 is a
/// RegOp.
pub const SPEC_TYPE_WRITE_PC: u16 = 0b0010;
pub const SPEC_TYPE_BRANCH_CC: u16 = 0b0101;

#[derive(Debug, Clone, Copy)]
pub struct OpTypeEntry {
    pub op: Op,
    pub mnemonic: &'static str,
    pub class: OpClass,
    /// 9-bit type encoding; for branchCC the low five bits are the cc field.
    pub encoding: u16,
    /// Bits of `encoding` that are fixed; SpecOps leave the cc bits free.
    pub fixed_mask: u16,
}

const fn op(op: Op, mnemonic: &'static str, class: OpClass, encoding: u16) -> OpTypeEntry {
    OpTypeEntry { op, mnemonic, class, encoding, fixed_mask: 0x1ff }
}

pub const OP_TYPES: [OpTypeEntry; 22] = [
    op(Op::Add, "add", OpClass::RegOp, 0b000000000),
    op(Op::Or, "or", OpClass::RegOp, 0b000000001),
    op(Op::Adc, "adc", OpClass::RegOp, 0b000000010),
    op(Op::Sbb, "sbb", OpClass::RegOp, 0b000000011),
    op(Op::And, "and", OpClass::RegOp, 0b000000100),
    op(Op::Sub, "sub", OpClass::RegOp, 0b000000101),
    op(Op::Xor, "xor", OpClass::RegOp, 0b000000110),
    op(Op::Cmp, "cmp", OpClass::RegOp, 0b000000111),
    op(Op::Test, "test", OpClass::RegOp, 0b000001000),
    op(Op::Rll, "rll", OpClass::RegOp, 0b000010000),
    op(Op::Rrl, "rrl", OpClass::RegOp, 0b000010001),
    op(Op::Sll, "sll", OpClass::RegOp, 0b000010100),
    op(Op::Srl, "srl", OpClass::RegOp, 0b000010101),
    op(Op::Mov, "mov", OpClass::RegOp, 0b001100000),
    op(Op::Mul, "mul", OpClass::RegOp, 0b001110000),
    op(Op::Imul, "imul", OpClass::RegOp, 0b001110001),
    op(Op::Bswap, "bswap", OpClass::RegOp, 0b111000000),
    op(Op::Not, "not", OpClass::RegOp, 0b111110101),
    OpTypeEntry {
        op: Op::WritePc,
        mnemonic: "writePC",
        class: OpClass::SpecOp,
        encoding: 0b001000000,
        fixed_mask: 0b111100000,
    },
    OpTypeEntry {
        op: Op::BranchCc,
        mnemonic: "branchCC",
        class: OpClass::SpecOp,
        encoding: 0b010100000,
        fixed_mask: 0b111100000,
    },
    op(Op::Ld, "ld", OpClass::LdOp, 0b001111111),
    op(Op::St, "st", OpClass::StOp, 0b101010000),
];

pub fn op_entry(op: Op) -> &'static OpTypeEntry {
    OP_TYPES.iter().find(|e| e.op == op).expect("every op has a table entry")
}

/// One row of the register table: a 6-bit code and its byte/word/dword/qword
/// mnemonics.
#[derive(Debug, Clone, Copy)]
pub struct RegisterRow {
    pub code: u8,
    pub names: [&'static str; 4],
}

const fn reg(code: u8, names: [&'static str; 4]) -> RegisterRow {
    RegisterRow { code, names }
}

pub const REGISTERS: [RegisterRow; 20] = [
    reg(0b000000, ["al", "ax", "eax", "rax"]),
    reg(0b000001, ["cl", "cx", "ecx", "rcx"]),
    reg(0b000010, ["dl", "dx", "edx", "rdx"]),
    reg(0b000011, ["bl", "bx", "ebx", "rbx"]),
    reg(0b000100, ["ah", "sp", "esp", "rsp"]),
    reg(0b000101, ["ch", "bp", "ebp", "rbp"]),
    reg(0b000110, ["dh", "si", "esi", "rsi"]),
    reg(0b000111, ["bh", "di", "edi", "rdi"]),
    reg(0b001000, ["t1l", "t1w", "t1d", "t1q"]),
    reg(0b001001, ["t2l", "t2w", "t2d", "t2q"]),
    reg(0b001010, ["t3l", "t3w", "t3d", "t3q"]),
    reg(0b001011, ["t4l", "t4w", "t4d", "t4q"]),
    reg(0b001100, ["t1h", "t5w", "t5d", "t5q"]),
    reg(0b001101, ["t2h", "t6w", "t6d", "t6q"]),
    reg(0b001110, ["t3h", "t7w", "t7d", "t7q"]),
    reg(0b001111, ["t4h", "t8w", "t8d", "t8q"]),
    reg(0b101000, ["regmb", "regmw", "regmd", "regmq"]),
    reg(0b101100, ["regb", "regw", "regd", "regq"]),
    reg(0b111000, ["pcb", "pcw", "pcd", "pcq"]),
    reg(0b111111, ["zerob", "zerow", "zerod", "zeroq"]),
];

pub const REG_CODE_REGM: u8 = 0b101000;
pub const REG_CODE_REG: u8 = 0b101100;
pub const REG_CODE_PC: u8 = 0b111000;
pub const REG_CODE_ZERO: u8 = 0b111111;

pub const SEQ_ACTION: BitField = BitField::new("action", 16, 14);
pub const SEQ_ADDRESS: BitField = BitField::new("address", 11, 0);

pub const SEQ_NEXT_TRIAD: u8 = 0b000;
pub const SEQ_BRANCH: u8 = 0b010;
pub const SEQ_COMPLETE: u8 = 0b110;

pub const SEQ_ACTIONS: [(&str, u8); 3] = [
    ("next_triad", SEQ_NEXT_TRIAD),
    ("branch", SEQ_BRANCH),
    ("complete", SEQ_COMPLETE),
];

/// Provisional condition table. The four high bits of the cc field select a
/// condition; bit 0 inverts it. Mnemonics for inverted conditions carry an
/// `n` prefix (`nZF`).
pub const CONDITIONS: [(&str, u8); 8] = [
    ("T", 0),
    ("OF", 1),
    ("CF", 2),
    ("ZF", 3),
    ("BE", 4),
    ("SF", 5),
    ("LT", 6),
    ("LE", 7),
];

/// Renders every table as the JSON document published in `tables/uisa.json`.
pub fn export_json() -> Value {
    let field = |f: &BitField| json!({ "name": f.name, "hi": f.hi, "lo": f.lo });
    let layout = |l: &ClassLayout| {
        json!({
            "class": l.class.name(),
            "class_code": format!("{:03b}", l.class_code),
            "fields": l.fields.iter().map(field).collect::<Vec<_>>(),
            "unknown_mask": format!("0x{:016x}", l.unknown_mask()),
        })
    };
    json!({
        "microinstruction": {
            "width": 64,
            "classes": CLASS_LAYOUTS.iter().map(layout).collect::<Vec<_>>(),
            "spec_op_type_nibbles": {
                "writePC": format!("{:04b}", SPEC_TYPE_WRITE_PC),
                "branchCC": format!("{:04b}", SPEC_TYPE_BRANCH_CC),
            },
        },
        "op_types": OP_TYPES.iter().map(|e| {
            let pattern: String = (0..9).rev().map(|bit| {
                if e.fixed_mask >> bit & 1 == 0 {
                    'C'
                } else if e.encoding >> bit & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            }).collect();
            json!({ "class": e.class.name(), "mnemonic": e.mnemonic, "encoding": pattern })
        }).collect::<Vec<_>>(),
        "registers": REGISTERS.iter().map(|r| json!({
            "code": format!("{:06b}", r.code),
            "byte": r.names[0],
            "word": r.names[1],
            "dword": r.names[2],
            "qword": r.names[3],
        })).collect::<Vec<_>>(),
        "sequence_word": {
            "width": 32,
            "fields": [field(&SEQ_ACTION), field(&SEQ_ADDRESS)],
            "actions": SEQ_ACTIONS.iter().map(|(name, code)| json!({
                "name": name,
                "code": format!("{:03b}", code),
            })).collect::<Vec<_>>(),
        },
        "conditions": {
            "invert_bit": 0,
            "entries": CONDITIONS.iter().map(|(name, code)| json!({
                "name": name,
                "code": format!("{:04b}", code),
            })).collect::<Vec<_>>(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_cover_all_64_bits_without_overlap() {
        for layout in CLASS_LAYOUTS {
            let mut seen = 0u64;
            for f in layout.fields {
                assert_eq!(seen & f.mask(), 0, "{} overlaps in {:?}", f.name, layout.class);
                seen |= f.mask();
            }
            assert_eq!(seen | layout.unknown_mask(), u64::MAX);
        }
    }

    #[test]
    fn reg_op_unknown_bits_are_the_dash_columns() {
        let expected = (1u64 << 63)
            | (0b111 << 43)
            | (1 << 40)
            | (0b1111 << 33)
            | (0x7f << 16);
        assert_eq!(REG_OP_LAYOUT.unknown_mask(), expected);
    }

    #[test]
    fn register_codes_are_unique() {
        for (i, a) in REGISTERS.iter().enumerate() {
            for b in &REGISTERS[i + 1..] {
                assert_ne!(a.code, b.code);
            }
        }
    }
}
