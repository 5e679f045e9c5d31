use super::{Loc, RtlError, RtlErrorKind};
use crate::tables::{self, CONDITIONS};
use crate::uisa::{lookup_register, Op, RegisterName, Size};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mnemonic {
    Op(Op),
    /// Conditional branch, encoded as a branchCC SpecOp.
    Jcc,
    Nop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Reg(RegisterName),
    Imm(u64),
    /// `[reg]`
    Mem(RegisterName),
    /// Full 5-bit cc value, including the invert bit.
    Cond(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub mnemonic: Mnemonic,
    /// `.f` suffix: commit flags.
    pub set_flags: bool,
    pub operands: Vec<Operand>,
    pub loc: Loc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Insn(Instruction),
    /// `.raw 0x...`
    Raw(u64, Loc),
}

impl Slot {
    pub fn loc(&self) -> Loc {
        match self {
            Slot::Insn(i) => i.loc,
            Slot::Raw(_, loc) => *loc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Start(u64),
    SwNext,
    SwComplete,
    SwBranch(u64),
    SwRaw(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    Slot(Slot),
    /// `a | b | c`: exactly one triad.
    Bundle(Vec<Slot>, Loc),
    Directive(Directive, Loc),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub statements: Vec<Statement>,
    /// From `// set match register N to ADDR` comments.
    pub match_registers: Vec<(usize, u32)>,
}

pub fn parse_program(text: &str) -> Result<Program, RtlError> {
    let mut program = Program::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let (code, comment) = match raw_line.find("//") {
            Some(pos) => (&raw_line[..pos], Some(&raw_line[pos + 2..])),
            None => (raw_line, None),
        };
        if let Some(c) = comment {
            if let Some((n, addr)) = parse_pragma(c) {
                let loc = Loc { line: line_no, column: raw_line.find("//").unwrap() + 1 };
                if n >= 8 {
                    return Err(RtlError::new(loc, RtlErrorKind::Syntax(format!("match register {n} out of range 0..7"))));
                }
                program.match_registers.push((n, addr));
            }
        }
        if code.trim().is_empty() {
            continue;
        }
        let pieces = split_columns(code, '|');
        let loc = Loc { line: line_no, column: pieces[0].0 };
        if pieces.len() > 1 {
            let mut slots = Vec::new();
            for (col, piece) in pieces {
                let loc = Loc { line: line_no, column: col };
                if piece.trim().is_empty() {
                    return Err(RtlError::new(loc, RtlErrorKind::Syntax("empty bundle slot".into())));
                }
                match parse_statement(piece, loc)? {
                    Statement::Slot(s) => slots.push(s),
                    _ => return Err(RtlError::new(loc, RtlErrorKind::Syntax("directives cannot appear in a bundle".into()))),
                }
            }
            if slots.len() != 3 {
                return Err(RtlError::new(loc, RtlErrorKind::Syntax(format!("bundle has {} slots, expected 3", slots.len()))));
            }
            program.statements.push(Statement::Bundle(slots, loc));
        } else {
            program.statements.push(parse_statement(pieces[0].1, loc)?);
        }
    }
    Ok(program)
}

/// Splits `s` on `sep`, returning each piece trimmed with its 1-based column.
fn split_columns(s: &str, sep: char) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), sep))) {
        if c == sep {
            let piece = &s[start..i];
            let lead = piece.len() - piece.trim_start().len();
            out.push((start + lead + 1, piece.trim()));
            start = i + c.len_utf8();
        }
    }
    out
}

fn parse_pragma(comment: &str) -> Option<(usize, u32)> {
    let words: Vec<String> = comment.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    match words.as_slice() {
        [set, m, r, n, to, addr] if set == "set" && m == "match" && r == "register" && to == "to" => {
            let n = parse_number(n)? as usize;
            let addr = u32::try_from(parse_number(addr)?).ok()?;
            Some((n, addr))
        }
        _ => None,
    }
}

pub(crate) fn parse_number(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()
    } else if let Some(bin) = s.strip_prefix("0b") {
        u64::from_str_radix(bin, 2).ok()
    } else if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
        s.parse().ok()
    } else {
        None
    }
}

fn parse_statement(text: &str, loc: Loc) -> Result<Statement, RtlError> {
    let text = text.trim();
    let (head, rest) = match text.find(char::is_whitespace) {
        Some(pos) => (&text[..pos], text[pos..].trim()),
        None => (text, ""),
    };
    let rest_col = loc.column + text.len() - rest.len();
    let number_arg = |what: &str| -> Result<u64, RtlError> {
        parse_number(rest).ok_or_else(|| {
            RtlError::new(
                Loc { line: loc.line, column: rest_col },
                RtlErrorKind::Syntax(format!("{what} expects a number, found `{rest}`")),
            )
        })
    };
    let no_arg = |d: Directive| -> Result<Statement, RtlError> {
        if rest.is_empty() {
            Ok(Statement::Directive(d, loc))
        } else {
            Err(RtlError::new(loc, RtlErrorKind::Syntax(format!("`{head}` takes no argument"))))
        }
    };
    match head {
        ".start" => Ok(Statement::Directive(Directive::Start(number_arg(".start")?), loc)),
        ".sw_next" => no_arg(Directive::SwNext),
        ".sw_complete" => no_arg(Directive::SwComplete),
        ".sw_branch" => Ok(Statement::Directive(Directive::SwBranch(number_arg(".sw_branch")?), loc)),
        ".sw_raw" => Ok(Statement::Directive(Directive::SwRaw(number_arg(".sw_raw")?), loc)),
        ".raw" => Ok(Statement::Slot(Slot::Raw(number_arg(".raw")?, loc))),
        h if h.starts_with('.') => Err(RtlError::new(loc, RtlErrorKind::UnknownMnemonic(h.to_string()))),
        _ => Ok(Statement::Slot(Slot::Insn(parse_instruction(head, rest, loc, rest_col)?))),
    }
}

fn parse_mnemonic(head: &str, loc: Loc) -> Result<(Mnemonic, bool), RtlError> {
    let lower = head.to_ascii_lowercase();
    let (base, set_flags) = match lower.strip_suffix(".f") {
        Some(b) => (b, true),
        None => (lower.as_str(), false),
    };
    let mnemonic = match base {
        "jcc" => Mnemonic::Jcc,
        "nop" => Mnemonic::Nop,
        "writepc" => Mnemonic::Op(Op::WritePc),
        _ => match tables::OP_TYPES.iter().find(|e| e.mnemonic == base && e.op != Op::BranchCc) {
            Some(e) => Mnemonic::Op(e.op),
            None => return Err(RtlError::new(loc, RtlErrorKind::UnknownMnemonic(head.to_string()))),
        },
    };
    if set_flags && !matches!(mnemonic, Mnemonic::Op(op) if op.class() == crate::uisa::OpClass::RegOp) {
        return Err(RtlError::new(loc, RtlErrorKind::UnknownMnemonic(head.to_string())));
    }
    Ok((mnemonic, set_flags))
}

fn parse_instruction(head: &str, rest: &str, loc: Loc, rest_col: usize) -> Result<Instruction, RtlError> {
    let (mnemonic, set_flags) = parse_mnemonic(head, loc)?;
    let mut operands = Vec::new();
    if !rest.is_empty() {
        for (col, piece) in split_columns(rest, ',') {
            let oloc = Loc { line: loc.line, column: rest_col + col - 1 };
            operands.push(parse_operand(piece).map_err(|k| RtlError::new(oloc, k))?);
        }
    }
    Ok(Instruction { mnemonic, set_flags, operands, loc })
}

/// Resolves a register mnemonic, including the numbered operand aliases
/// `regm?4` (first macro operand) and `regm?6` (second macro operand).
pub(crate) fn parse_register(name: &str) -> Option<RegisterName> {
    let lower = name.to_ascii_lowercase();
    if let Ok(r) = lookup_register(&lower) {
        return Some(r);
    }
    let rest = lower.strip_prefix("regm")?;
    let mut chars = rest.chars();
    let size = match chars.next()? {
        'b' => Size::Byte,
        'w' => Size::Word,
        'd' => Size::Dword,
        'q' => Size::Qword,
        _ => return None,
    };
    match chars.as_str() {
        "4" => Some(RegisterName::new(tables::REG_CODE_REGM, size)),
        "6" => Some(RegisterName::new(tables::REG_CODE_REG, size)),
        _ => None,
    }
}

pub(crate) fn parse_condition(name: &str) -> Option<u8> {
    let find = |n: &str| CONDITIONS.iter().find(|(c, _)| c.eq_ignore_ascii_case(n)).map(|(_, code)| *code);
    if let Some(code) = find(name) {
        return Some(code << 1);
    }
    let inner = name.strip_prefix('n').or_else(|| name.strip_prefix('N'))?;
    find(inner).map(|code| (code << 1) | 1)
}

pub(crate) fn condition_name(cc: u8) -> Option<String> {
    let (name, _) = CONDITIONS.iter().find(|(_, code)| *code == cc >> 1)?;
    Some(if cc & 1 == 1 { format!("n{name}") } else { name.to_string() })
}

fn parse_operand(text: &str) -> Result<Operand, RtlErrorKind> {
    if text.is_empty() {
        return Err(RtlErrorKind::Syntax("missing operand".into()));
    }
    if let Some(inner) = text.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| RtlErrorKind::MalformedOperand(text.to_string()))?
            .trim();
        return parse_register(inner)
            .map(Operand::Mem)
            .ok_or_else(|| RtlErrorKind::MalformedOperand(text.to_string()));
    }
    if text.starts_with(|c: char| c.is_ascii_digit()) {
        return parse_number(text)
            .map(Operand::Imm)
            .ok_or_else(|| RtlErrorKind::MalformedOperand(text.to_string()));
    }
    if let Some(r) = parse_register(text) {
        return Ok(Operand::Reg(r));
    }
    if let Some(cc) = parse_condition(text) {
        return Ok(Operand::Cond(cc));
    }
    Err(RtlErrorKind::MalformedOperand(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(text: &str) -> Instruction {
        match parse_program(text).unwrap().statements.remove(0) {
            Statement::Slot(Slot::Insn(i)) => i,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_mov_immediate() {
        let i = single("mov t1d, 0x0042");
        assert_eq!(i.mnemonic, Mnemonic::Op(Op::Mov));
        assert_eq!(
            i.operands,
            vec![Operand::Reg(RegisterName::new(0b001000, Size::Dword)), Operand::Imm(0x42)]
        );
    }

    #[test]
    fn parses_jcc() {
        let i = single("jcc nZF, 0xfe5");
        assert_eq!(i.mnemonic, Mnemonic::Jcc);
        assert_eq!(i.operands, vec![Operand::Cond(0b00111), Operand::Imm(0xfe5)]);
    }

    #[test]
    fn empty_and_comment_only_programs() {
        assert!(parse_program("").unwrap().statements.is_empty());
        let p = parse_program("// set match register 0 to 0x7e5\n\n").unwrap();
        assert!(p.statements.is_empty());
        assert_eq!(p.match_registers, vec![(0, 0x7e5)]);
    }

    #[test]
    fn reports_locations() {
        let err = parse_program("nop\n  frob eax").unwrap_err();
        assert_eq!(err.loc, Loc { line: 2, column: 3 });
        assert!(matches!(err.kind, RtlErrorKind::UnknownMnemonic(_)));
        let err = parse_program("mov eax, [ebx").unwrap_err();
        assert_eq!(err.loc, Loc { line: 1, column: 10 });
        assert!(matches!(err.kind, RtlErrorKind::MalformedOperand(_)));
    }

    #[test]
    fn operand_aliases_and_memory() {
        assert_eq!(parse_register("regmd4"), Some(RegisterName::new(0b101000, Size::Dword)));
        assert_eq!(parse_register("regmd6"), Some(RegisterName::new(0b101100, Size::Dword)));
        let i = single("st [edi], t2d");
        assert_eq!(i.operands[0], Operand::Mem(RegisterName::new(0b000111, Size::Dword)));
    }

    #[test]
    fn bundles_need_three_slots() {
        let p = parse_program("mul eax, ebx | nop | .raw 0x0").unwrap();
        assert!(matches!(&p.statements[0], Statement::Bundle(s, _) if s.len() == 3));
        assert!(parse_program("nop | nop").is_err());
    }
}
