//! Assembler and disassembler for the microcode register-transfer language.
//!
//! One instruction per line, `//` comments, destination first:
//!
//! ```text
//! // set match register 0 to 0x7e5
//! .start 0x0
//! mov t1d, 0x0042
//! sub.f t8d, 0x1              // `.f` commits flags
//! srl t2d, t1d, 16            // three-operand form: t2d := t1d >> 16
//! ld t2d, [edi]
//! jcc nZF, 0x7e6
//! mul eax, ebx | nop | nop    // explicit triad
//! .sw_branch 0x7e6
//! ```
//!
//! Instructions are packed into triads in order. `mul`/`imul` are moved to
//! slot 0 and `writePC` to slot 2, padding with nops. A sequence directive
//! (`.sw_complete`, `.sw_branch N`, `.sw_next`, `.sw_raw N`) closes the
//! current triad. `.raw 0x...` emits a literal 64-bit word.

mod assemble;
mod disasm;
mod parse;

use std::fmt;

use thiserror::Error;

use crate::uisa::UisaError;

pub use assemble::{assemble, assemble_source, encode_instruction, AssembledProgram, Segment};
pub use disasm::{disassemble, disassemble_triad, render_insn, DisasmOptions};
pub use parse::{
    parse_program, Directive, Instruction, Mnemonic, Operand, Program, Slot, Statement,
};
pub use crate::uisa::nop_encoding;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RtlErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("malformed operand `{0}`")]
    MalformedOperand(String),
    #[error("{0}")]
    InvalidOperands(String),
    #[error("operand sizes differ: {0}")]
    SizeMismatch(String),
    #[error("immediate {0:#x} exceeds 16 bits")]
    ImmediateTooLarge(u64),
    #[error("branch target {0:#x} exceeds 12 bits")]
    BranchTargetTooLarge(u64),
    #[error("placement constraint cannot be satisfied: {0}")]
    ConstraintUnsatisfiable(String),
    #[error("segment at {start:#x} overlaps triad {address:#x}")]
    Overlap { start: u16, address: u16 },
    #[error("{0} triads exceed the 255-triad update limit")]
    TooManyTriads(usize),
    #[error(transparent)]
    Encoding(#[from] UisaError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{loc}: {kind}")]
pub struct RtlError {
    pub loc: Loc,
    pub kind: RtlErrorKind,
}

impl RtlError {
    pub fn new(loc: Loc, kind: RtlErrorKind) -> Self {
        RtlError { loc, kind }
    }
}
