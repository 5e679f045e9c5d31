use std::sync::Arc;

use super::Fault;
use crate::container::{compute_checksum, UpdateFile, MATCH_REGISTER_COUNT};
use crate::uisa::Triad;

pub const ROM_TRIADS: usize = 0xc00;
pub const PATCH_BASE: u16 = 0xc00;

/// Microcode ROM plus patch RAM and match registers. The ROM is shared, so
/// clones are cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicrocodeStore {
    rom: Arc<Vec<Triad>>,
    pub patch_ram: Vec<Triad>,
    pub match_registers: [u32; MATCH_REGISTER_COUNT],
}

impl MicrocodeStore {
    /// Panics unless `rom` holds exactly 3072 triads.
    pub fn new(rom: Vec<Triad>) -> Self {
        assert_eq!(rom.len(), ROM_TRIADS, "ROM must hold {ROM_TRIADS} triads");
        MicrocodeStore { rom: Arc::new(rom), patch_ram: Vec::new(), match_registers: [0; MATCH_REGISTER_COUNT] }
    }

    pub fn rom(&self) -> &[Triad] {
        &self.rom
    }

    /// Address a fetch of `address` actually reads after match-register
    /// redirection. Only ROM addresses are intercepted; the lowest matching
    /// register wins.
    pub fn resolve(&self, address: u16) -> Result<u16, Fault> {
        let a = address as usize;
        if a < ROM_TRIADS {
            if let Some(i) = self.match_registers.iter().position(|&m| m != 0 && m == address as u32) {
                let target = PATCH_BASE as usize + 2 * i;
                if 2 * i >= self.patch_ram.len() {
                    return Err(Fault::FetchOutOfRange { address: target as u16 });
                }
                return Ok(target as u16);
            }
            Ok(address)
        } else if a - ROM_TRIADS < self.patch_ram.len() {
            Ok(address)
        } else {
            Err(Fault::FetchOutOfRange { address })
        }
    }

    /// Triad stored at a resolved address.
    pub fn triad_at(&self, resolved: u16) -> &Triad {
        let a = resolved as usize;
        if a < ROM_TRIADS {
            &self.rom[a]
        } else {
            &self.patch_ram[a - ROM_TRIADS]
        }
    }

    pub fn fetch_triad(&self, address: u16) -> Result<Triad, Fault> {
        Ok(*self.triad_at(self.resolve(address)?))
    }

    /// Loads an update into patch RAM and the match registers. With
    /// `verify` set a bad checksum is rejected with a general-protection
    /// fault and the store is left unchanged.
    pub fn apply_update(&mut self, update: &UpdateFile, verify: bool) -> Result<(), Fault> {
        if verify {
            let ok = compute_checksum(update).map(|c| c == update.header.checksum).unwrap_or(false);
            if !ok {
                return Err(Fault::GeneralProtection);
            }
        }
        self.patch_ram = update.triads.clone();
        self.match_registers = update.match_registers;
        Ok(())
    }

    pub fn with_update(&self, update: &UpdateFile, verify: bool) -> Result<Self, Fault> {
        let mut s = self.clone();
        s.apply_update(update, verify)?;
        Ok(s)
    }
}

/// Free-function form of [`MicrocodeStore::apply_update`].
pub fn apply_update(store: &MicrocodeStore, update: &UpdateFile, verify: bool) -> Result<MicrocodeStore, Fault> {
    store.with_update(update, verify)
}
