use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Access, Fault};

pub const PAGE_SIZE: u32 = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub zf: bool,
    pub cf: bool,
    pub sf: bool,
    pub of: bool,
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bit = |b: bool, c: char| if b { c } else { '-' };
        write!(f, "{}{}{}{}", bit(self.zf, 'Z'), bit(self.cf, 'C'), bit(self.sf, 'S'), bit(self.of, 'O'))
    }
}

/// Sparse byte-addressed memory made of 4 KiB pages. Page 0 can never be
/// mapped, so any access below 0x1000 faults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Memory {
    pages: BTreeMap<u32, Box<[u8; PAGE_SIZE as usize]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("page 0 cannot be mapped")]
pub struct GuardPageError;

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Maps every page touching `[start, start + len)`; mapped pages keep
    /// their contents.
    pub fn map(&mut self, start: u32, len: u32) -> Result<(), GuardPageError> {
        if len == 0 {
            return Ok(());
        }
        let first = start / PAGE_SIZE;
        let last = start.saturating_add(len - 1) / PAGE_SIZE;
        if first == 0 {
            return Err(GuardPageError);
        }
        for page in first..=last {
            self.pages.entry(page).or_insert_with(|| Box::new([0; PAGE_SIZE as usize]));
        }
        Ok(())
    }

    pub fn is_mapped(&self, address: u32) -> bool {
        self.pages.contains_key(&(address / PAGE_SIZE))
    }

    /// Checks that `len` bytes from `address` are mapped, returning the
    /// first unmapped byte's address otherwise.
    pub fn check(&self, address: u32, len: u32, access: Access) -> Result<(), Fault> {
        for i in 0..len {
            let a = address.wrapping_add(i);
            if !self.is_mapped(a) {
                return Err(Fault::PageFault { address: a, access });
            }
        }
        Ok(())
    }

    pub fn read_u8(&self, address: u32) -> Result<u8, Fault> {
        self.pages
            .get(&(address / PAGE_SIZE))
            .map(|p| p[(address % PAGE_SIZE) as usize])
            .ok_or(Fault::PageFault { address, access: Access::Read })
    }

    /// Little-endian read of `len` (1..=4) bytes.
    pub fn read(&self, address: u32, len: u32) -> Result<u32, Fault> {
        let mut value = 0u32;
        for i in 0..len {
            value |= (self.read_u8(address.wrapping_add(i))? as u32) << (8 * i);
        }
        Ok(value)
    }

    pub fn read_u32(&self, address: u32) -> Result<u32, Fault> {
        self.read(address, 4)
    }

    /// Little-endian write of the low `len` bytes of `value`. Nothing is
    /// written if any byte is unmapped.
    pub fn write(&mut self, address: u32, len: u32, value: u32) -> Result<(), Fault> {
        self.check(address, len, Access::Write)?;
        for i in 0..len {
            let a = address.wrapping_add(i);
            let page = self.pages.get_mut(&(a / PAGE_SIZE)).expect("checked");
            page[(a % PAGE_SIZE) as usize] = (value >> (8 * i)) as u8;
        }
        Ok(())
    }

    pub fn write_u32(&mut self, address: u32, value: u32) -> Result<(), Fault> {
        self.write(address, 4, value)
    }

    pub fn write_bytes(&mut self, address: u32, bytes: &[u8]) -> Result<(), Fault> {
        self.check(address, bytes.len() as u32, Access::Write)?;
        for (i, b) in bytes.iter().enumerate() {
            self.write(address.wrapping_add(i as u32), 1, *b as u32)?;
        }
        Ok(())
    }
}

/// Architectural and microcode-visible state of a 32-bit machine.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MachineState {
    /// eax, ecx, edx, ebx, esp, ebp, esi, edi.
    pub gprs: [u32; 8],
    /// t1 .. t8.
    pub temps: [u32; 8],
    pub flags: Flags,
    pub memory: Memory,
}

pub const GPR_NAMES: [&str; 8] = ["eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"];

/// Index of a 32-bit GPR mnemonic.
pub fn gpr_index(name: &str) -> Option<usize> {
    GPR_NAMES.iter().position(|n| n.eq_ignore_ascii_case(name))
}

impl MachineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn gpr(&self, name: &str) -> Option<u32> {
        gpr_index(name).map(|i| self.gprs[i])
    }

    pub fn set_gpr(&mut self, name: &str, value: u32) -> bool {
        match gpr_index(name) {
            Some(i) => {
                self.gprs[i] = value;
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_zero_is_reserved() {
        let mut m = Memory::new();
        assert_eq!(m.map(0, 4), Err(GuardPageError));
        assert_eq!(m.write(0, 4, 0), Err(Fault::PageFault { address: 0, access: Access::Write }));
    }

    #[test]
    fn cross_page_access() {
        let mut m = Memory::new();
        m.map(0x1ffe, 2).unwrap();
        assert_eq!(
            m.write_u32(0x1ffe, 0xdeadbeef),
            Err(Fault::PageFault { address: 0x2000, access: Access::Write })
        );
        assert_eq!(m.read(0x1ffe, 2).unwrap(), 0, "failed write leaves memory untouched");
        m.map(0x2000, 1).unwrap();
        m.write_u32(0x1ffe, 0xdeadbeef).unwrap();
        assert_eq!(m.read_u32(0x1ffe).unwrap(), 0xdeadbeef);
    }
}
