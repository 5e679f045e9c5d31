//! Arithmetic and flag computation for RegOps, following x86 conventions at
//! the operand width.

use super::state::Flags;
use crate::uisa::{Op, Size};

/// Per-flag outcome of an operation; `None` leaves the flag unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlagUpdate {
    pub zf: Option<bool>,
    pub cf: Option<bool>,
    pub sf: Option<bool>,
    pub of: Option<bool>,
}

impl FlagUpdate {
    pub const NONE: FlagUpdate = FlagUpdate { zf: None, cf: None, sf: None, of: None };

    pub fn apply(&self, flags: Flags) -> Flags {
        Flags {
            zf: self.zf.unwrap_or(flags.zf),
            cf: self.cf.unwrap_or(flags.cf),
            sf: self.sf.unwrap_or(flags.sf),
            of: self.of.unwrap_or(flags.of),
        }
    }
}

pub fn mask(size: Size) -> u32 {
    match size {
        Size::Byte => 0xff,
        Size::Word => 0xffff,
        _ => u32::MAX,
    }
}

fn sign_bit(size: Size) -> u32 {
    1 << (size.bits().min(32) - 1)
}

fn sign_extend(v: u32, size: Size) -> i64 {
    let bits = size.bits().min(32);
    ((v as i64) << (64 - bits)) >> (64 - bits)
}

fn zs(r: u32, size: Size) -> (Option<bool>, Option<bool>) {
    (Some(r & mask(size) == 0), Some(r & sign_bit(size) != 0))
}

/// Result of one ALU operation. `value` is `None` for flag-only ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AluResult {
    pub value: Option<u32>,
    pub flags: FlagUpdate,
}

/// Computes `op` on operands already truncated to `size` (32-bit sizes
/// only). `a` is the first source, `b` the second; unary ops ignore `b`.
pub fn alu(op: Op, a: u32, b: u32, size: Size, flags: Flags) -> AluResult {
    let m = mask(size);
    let (a, b) = (a & m, b & m);
    let width = size.bits().min(32);
    let logic = |r: u32| {
        let (zf, sf) = zs(r, size);
        AluResult { value: Some(r), flags: FlagUpdate { zf, sf, cf: Some(false), of: Some(false) } }
    };
    let add = |carry_in: u32| {
        let wide = a as u64 + b as u64 + carry_in as u64;
        let r = wide as u32 & m;
        let (zf, sf) = zs(r, size);
        let of = (!(a ^ b) & (a ^ r) & sign_bit(size)) != 0;
        AluResult { value: Some(r), flags: FlagUpdate { zf, sf, cf: Some(wide > m as u64), of: Some(of) } }
    };
    let sub = |borrow_in: u32| {
        let r = a.wrapping_sub(b).wrapping_sub(borrow_in) & m;
        let (zf, sf) = zs(r, size);
        let cf = (a as u64) < b as u64 + borrow_in as u64;
        let of = ((a ^ b) & (a ^ r) & sign_bit(size)) != 0;
        AluResult { value: Some(r), flags: FlagUpdate { zf, sf, cf: Some(cf), of: Some(of) } }
    };
    match op {
        Op::Add => add(0),
        Op::Adc => add(flags.cf as u32),
        Op::Sub => sub(0),
        Op::Sbb => sub(flags.cf as u32),
        Op::Cmp => AluResult { value: None, ..sub(0) },
        Op::And => logic(a & b),
        Op::Or => logic(a | b),
        Op::Xor => logic(a ^ b),
        Op::Test => AluResult { value: None, ..logic(a & b) },
        Op::Mov => AluResult { value: Some(b), flags: FlagUpdate::NONE },
        Op::Not => AluResult { value: Some(!a & m), flags: FlagUpdate::NONE },
        Op::Bswap => {
            let r = match size {
                Size::Byte => a,
                Size::Word => (a as u16).swap_bytes() as u32,
                _ => a.swap_bytes(),
            };
            AluResult { value: Some(r), flags: FlagUpdate::NONE }
        }
        Op::Sll | Op::Srl => {
            let count = b & 0x3f;
            if count == 0 {
                return AluResult { value: Some(a), flags: FlagUpdate::NONE };
            }
            let left = op == Op::Sll;
            let r = if count >= width {
                0
            } else if left {
                (a << count) & m
            } else {
                a >> count
            };
            let cf = if count > width {
                false
            } else if left {
                (a >> (width - count)) & 1 == 1
            } else {
                (a >> (count - 1)) & 1 == 1
            };
            let of = (count == 1).then(|| {
                if left {
                    (r & sign_bit(size) != 0) != cf
                } else {
                    a & sign_bit(size) != 0
                }
            });
            let (zf, sf) = zs(r, size);
            AluResult { value: Some(r), flags: FlagUpdate { zf, sf, cf: Some(cf), of } }
        }
        Op::Rll | Op::Rrl => {
            let masked = b & 0x3f;
            if masked == 0 {
                return AluResult { value: Some(a), flags: FlagUpdate::NONE };
            }
            let n = masked % width;
            let r = if n == 0 {
                a
            } else if op == Op::Rll {
                ((a << n) | (a >> (width - n))) & m
            } else {
                ((a >> n) | (a << (width - n))) & m
            };
            let msb = r & sign_bit(size) != 0;
            let (cf, of) = if op == Op::Rll {
                let cf = r & 1 == 1;
                (cf, msb != cf)
            } else {
                let next = r & (sign_bit(size) >> 1) != 0;
                (msb, msb != next)
            };
            let flags = FlagUpdate { cf: Some(cf), of: (masked == 1).then_some(of), ..FlagUpdate::NONE };
            AluResult { value: Some(r), flags }
        }
        Op::Mul => {
            let full = a as u64 * b as u64;
            let r = full as u32 & m;
            let over = full >> width != 0;
            AluResult { value: Some(r), flags: FlagUpdate { cf: Some(over), of: Some(over), ..FlagUpdate::NONE } }
        }
        Op::Imul => {
            let full = sign_extend(a, size) * sign_extend(b, size);
            let r = full as u32 & m;
            let over = sign_extend(r, size) != full;
            AluResult { value: Some(r), flags: FlagUpdate { cf: Some(over), of: Some(over), ..FlagUpdate::NONE } }
        }
        Op::WritePc | Op::BranchCc | Op::Ld | Op::St => {
            unreachable!("{op:?} is not an ALU operation")
        }
    }
}

/// Evaluates a 5-bit cc value: bits 4..1 select the condition, bit 0
/// inverts it. Returns `None` for conditions outside the table.
pub fn condition(cc: u8, f: Flags) -> Option<bool> {
    let base = match cc >> 1 {
        0 => true,
        1 => f.of,
        2 => f.cf,
        3 => f.zf,
        4 => f.cf || f.zf,
        5 => f.sf,
        6 => f.sf != f.of,
        7 => (f.sf != f.of) || f.zf,
        _ => return None,
    };
    Some(base != (cc & 1 == 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(op: Op, a: u32, b: u32, size: Size) -> AluResult {
        alu(op, a, b, size, Flags::default())
    }

    #[test]
    fn add_carry_and_overflow() {
        let r = run(Op::Add, 0xff, 0x01, Size::Byte);
        assert_eq!(r.value, Some(0));
        assert_eq!(r.flags, FlagUpdate { zf: Some(true), cf: Some(true), sf: Some(false), of: Some(false) });
        let r = run(Op::Add, 0x7fff_ffff, 1, Size::Dword);
        assert_eq!(r.flags.of, Some(true));
        assert_eq!(r.flags.sf, Some(true));
    }

    #[test]
    fn sub_borrow() {
        let r = run(Op::Sub, 1, 2, Size::Word);
        assert_eq!(r.value, Some(0xffff));
        assert_eq!(r.flags.cf, Some(true));
        assert_eq!(run(Op::Cmp, 5, 5, Size::Dword).value, None);
    }

    #[test]
    fn shifts_past_width_clear() {
        assert_eq!(run(Op::Sll, 0xffff_ffff, 32, Size::Dword).value, Some(0));
        assert_eq!(run(Op::Srl, 0x8000_0000, 31, Size::Dword).value, Some(1));
        assert_eq!(run(Op::Srl, 5, 0, Size::Dword).flags, FlagUpdate::NONE);
        assert_eq!(run(Op::Sll, 0x8000_0000, 1, Size::Dword).flags.cf, Some(true));
    }

    #[test]
    fn rotates() {
        assert_eq!(run(Op::Rll, 0x81, 1, Size::Byte).value, Some(0x03));
        assert_eq!(run(Op::Rrl, 0x01, 1, Size::Word).value, Some(0x8000));
    }

    #[test]
    fn multiply_low_half() {
        let r = run(Op::Mul, 0x1_0000, 0x1_0000, Size::Dword);
        assert_eq!(r.value, Some(0));
        assert_eq!(r.flags.cf, Some(true));
        let r = run(Op::Imul, 0xffff, 0xffff, Size::Word);
        assert_eq!(r.value, Some(1));
        assert_eq!(r.flags.of, Some(false));
    }

    #[test]
    fn conditions() {
        let f = Flags { zf: true, ..Flags::default() };
        assert_eq!(condition(0b00110, f), Some(true));
        assert_eq!(condition(0b00111, f), Some(false));
        assert_eq!(condition(0, f), Some(true));
        assert_eq!(condition(0b10000, f), None);
    }
}
