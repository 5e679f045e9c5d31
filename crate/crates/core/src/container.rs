//! Microcode update files: a 64-byte header (including eight match
//! registers) followed by 28-byte triads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uisa::{Triad, UisaError, TRIAD_BYTES};

pub const HEADER_BYTES: usize = 64;
pub const MATCH_REGISTER_COUNT: usize = 8;

/// Byte offsets of the header fields. All fields are little-endian.
pub mod offsets {
    pub const DATE: usize = 0;
    pub const PATCH_ID: usize = 4;
    pub const PATCH_BLOCK: usize = 8;
    pub const LEN: usize = 10;
    pub const INIT: usize = 11;
    pub const CHECKSUM: usize = 12;
    pub const NORTHBRIDGE_ID: usize = 16;
    pub const SOUTHBRIDGE_ID: usize = 20;
    pub const CPUID: usize = 24;
    pub const MAGIC: usize = 28;
    pub const MATCH_REGISTERS: usize = 32;
    pub const TRIADS: usize = 64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UpdateHeader {
    pub date: u32,
    pub patch_id: u32,
    pub patch_block: u16,
    /// Triad count as stored in the file.
    pub len: u8,
    pub init: u8,
    pub checksum: u32,
    pub northbridge_id: u32,
    pub southbridge_id: u32,
    pub cpuid: u32,
    pub magic: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct UpdateFile {
    pub header: UpdateHeader,
    /// ROM triad addresses to intercept; 0 means unused.
    pub match_registers: [u32; MATCH_REGISTER_COUNT],
    pub triads: Vec<Triad>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("file is {0} bytes, shorter than the 64-byte header")]
    Truncated(usize),
    #[error("header declares {declared} triads ({expected} bytes) but file has {actual} bytes")]
    LengthMismatch { declared: u8, expected: usize, actual: usize },
    #[error("checksum mismatch: header {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{0} triads exceed the 8-bit length field")]
    TooManyTriads(usize),
    #[error(transparent)]
    Encoding(#[from] UisaError),
    #[error("invalid JSON dump: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Checksum {
    /// Recompute over the serialized triads.
    #[default]
    Recompute,
    /// Write the header's checksum field unchanged.
    Keep,
}

fn le32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Wrapping sum of the little-endian 32-bit words of a triad region.
pub fn checksum_bytes(triad_region: &[u8]) -> u32 {
    triad_region
        .chunks(4)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..c.len()].copy_from_slice(c);
            u32::from_le_bytes(w)
        })
        .fold(0u32, u32::wrapping_add)
}

pub fn compute_checksum(update: &UpdateFile) -> Result<u32, ContainerError> {
    Ok(checksum_bytes(&triad_region(&update.triads)?))
}

fn triad_region(triads: &[Triad]) -> Result<Vec<u8>, ContainerError> {
    let mut out = Vec::with_capacity(triads.len() * TRIAD_BYTES);
    for t in triads {
        out.extend_from_slice(&t.to_bytes()?);
    }
    Ok(out)
}

/// Parses an update file. With `verify` set the stored checksum must match.
pub fn parse_update(bytes: &[u8], verify: bool) -> Result<UpdateFile, ContainerError> {
    if bytes.len() < HEADER_BYTES {
        return Err(ContainerError::Truncated(bytes.len()));
    }
    let header = UpdateHeader {
        date: le32(bytes, offsets::DATE),
        patch_id: le32(bytes, offsets::PATCH_ID),
        patch_block: u16::from_le_bytes([bytes[offsets::PATCH_BLOCK], bytes[offsets::PATCH_BLOCK + 1]]),
        len: bytes[offsets::LEN],
        init: bytes[offsets::INIT],
        checksum: le32(bytes, offsets::CHECKSUM),
        northbridge_id: le32(bytes, offsets::NORTHBRIDGE_ID),
        southbridge_id: le32(bytes, offsets::SOUTHBRIDGE_ID),
        cpuid: le32(bytes, offsets::CPUID),
        magic: le32(bytes, offsets::MAGIC),
    };
    let expected = HEADER_BYTES + header.len as usize * TRIAD_BYTES;
    if bytes.len() != expected {
        return Err(ContainerError::LengthMismatch {
            declared: header.len,
            expected,
            actual: bytes.len(),
        });
    }
    if verify {
        let computed = checksum_bytes(&bytes[offsets::TRIADS..]);
        if computed != header.checksum {
            return Err(ContainerError::ChecksumMismatch { stored: header.checksum, computed });
        }
    }
    let mut match_registers = [0u32; MATCH_REGISTER_COUNT];
    for (i, m) in match_registers.iter_mut().enumerate() {
        *m = le32(bytes, offsets::MATCH_REGISTERS + 4 * i);
    }
    let triads = bytes[offsets::TRIADS..]
        .chunks_exact(TRIAD_BYTES)
        .map(|c| Triad::from_bytes(c.try_into().unwrap()))
        .collect();
    Ok(UpdateFile { header, match_registers, triads })
}

/// Serializes an update file. The length field is always derived from the
/// triad list.
pub fn serialize_update(update: &UpdateFile, checksum: Checksum) -> Result<Vec<u8>, ContainerError> {
    let len = u8::try_from(update.triads.len())
        .map_err(|_| ContainerError::TooManyTriads(update.triads.len()))?;
    let region = triad_region(&update.triads)?;
    let h = &update.header;
    let sum = match checksum {
        Checksum::Recompute => checksum_bytes(&region),
        Checksum::Keep => h.checksum,
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + region.len());
    out.extend_from_slice(&h.date.to_le_bytes());
    out.extend_from_slice(&h.patch_id.to_le_bytes());
    out.extend_from_slice(&h.patch_block.to_le_bytes());
    out.push(len);
    out.push(h.init);
    out.extend_from_slice(&sum.to_le_bytes());
    out.extend_from_slice(&h.northbridge_id.to_le_bytes());
    out.extend_from_slice(&h.southbridge_id.to_le_bytes());
    out.extend_from_slice(&h.cpuid.to_le_bytes());
    out.extend_from_slice(&h.magic.to_le_bytes());
    for m in &update.match_registers {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out.extend_from_slice(&region);
    Ok(out)
}

impl UpdateFile {
    /// Builds an update with a consistent length field and checksum.
    pub fn new(match_registers: [u32; MATCH_REGISTER_COUNT], triads: Vec<Triad>) -> Result<Self, ContainerError> {
        let mut update = UpdateFile { header: UpdateHeader::default(), match_registers, triads };
        update.seal()?;
        Ok(update)
    }

    /// Recomputes the length field and checksum from the triads.
    pub fn seal(&mut self) -> Result<(), ContainerError> {
        self.header.len = u8::try_from(self.triads.len())
            .map_err(|_| ContainerError::TooManyTriads(self.triads.len()))?;
        self.header.checksum = compute_checksum(self)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ContainerError> {
        serialize_update(self, Checksum::Recompute)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        parse_update(bytes, false)
    }
}

/// A reversible transform over the triad region of an update file.
pub trait TriadTransform {
    fn apply(&self, triad_region: &mut [u8]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl TriadTransform for Identity {
    fn apply(&self, _triad_region: &mut [u8]) {}
}

/// XOR with a repeating key; its own inverse.
#[derive(Debug, Clone)]
pub struct XorKey(pub Vec<u8>);

impl TriadTransform for XorKey {
    fn apply(&self, triad_region: &mut [u8]) {
        if self.0.is_empty() {
            return;
        }
        for (b, k) in triad_region.iter_mut().zip(self.0.iter().cycle()) {
            *b ^= k;
        }
    }
}

/// Applies `transform` to the triad region of a complete update file; the
/// header is left untouched. Inputs shorter than the header pass through.
pub fn deobfuscate_triads(bytes: &[u8], transform: &dyn TriadTransform) -> Vec<u8> {
    let mut out = bytes.to_vec();
    if out.len() > HEADER_BYTES {
        transform.apply(&mut out[HEADER_BYTES..]);
    }
    out
}

/// JSON dump of one triad. `disasm` is informational and ignored on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriadJson {
    pub insns: [String; 3],
    pub seq: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disasm: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateJson {
    pub header: HeaderJson,
    pub match_registers: Vec<String>,
    pub triads: Vec<TriadJson>,
}

/// Header with every field as a hex string.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeaderJson {
    pub date: String,
    pub patch_id: String,
    pub patch_block: String,
    pub len: String,
    pub init: String,
    pub checksum: String,
    pub northbridge_id: String,
    pub southbridge_id: String,
    pub cpuid: String,
    pub magic: String,
}

fn hex<T: Into<u64>>(v: T, digits: usize) -> String {
    format!("0x{:0width$x}", v.into(), width = digits)
}

fn parse_hex(s: &str) -> Result<u64, ContainerError> {
    let t = s.trim();
    let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    u64::from_str_radix(digits, 16).map_err(|_| ContainerError::Json(format!("bad hex value `{s}`")))
}

fn parse_hex_n<T: TryFrom<u64>>(s: &str, what: &str) -> Result<T, ContainerError> {
    T::try_from(parse_hex(s)?).map_err(|_| ContainerError::Json(format!("{what} out of range: `{s}`")))
}

impl UpdateJson {
    /// `disasm` renders a text line for each triad, or `None` to omit it.
    pub fn from_update(update: &UpdateFile, disasm: impl Fn(&Triad) -> Option<String>) -> Result<Self, ContainerError> {
        let h = &update.header;
        let mut triads = Vec::with_capacity(update.triads.len());
        for t in &update.triads {
            let (words, seq) = t.words()?;
            triads.push(TriadJson {
                insns: words.map(|w| hex(w, 16)),
                seq: hex(seq, 8),
                disasm: disasm(t),
            });
        }
        Ok(UpdateJson {
            header: HeaderJson {
                date: hex(h.date, 8),
                patch_id: hex(h.patch_id, 8),
                patch_block: hex(h.patch_block, 4),
                len: hex(h.len, 2),
                init: hex(h.init, 2),
                checksum: hex(h.checksum, 8),
                northbridge_id: hex(h.northbridge_id, 8),
                southbridge_id: hex(h.southbridge_id, 8),
                cpuid: hex(h.cpuid, 8),
                magic: hex(h.magic, 8),
            },
            match_registers: update.match_registers.iter().map(|&m| hex(m, 8)).collect(),
            triads,
        })
    }

    /// Rebuilds the update. Header values, including `len` and `checksum`,
    /// are taken verbatim so a dump packs back to the original bytes.
    pub fn to_update(&self) -> Result<UpdateFile, ContainerError> {
        let h = &self.header;
        let header = UpdateHeader {
            date: parse_hex_n(&h.date, "date")?,
            patch_id: parse_hex_n(&h.patch_id, "patch_id")?,
            patch_block: parse_hex_n(&h.patch_block, "patch_block")?,
            len: parse_hex_n(&h.len, "len")?,
            init: parse_hex_n(&h.init, "init")?,
            checksum: parse_hex_n(&h.checksum, "checksum")?,
            northbridge_id: parse_hex_n(&h.northbridge_id, "northbridge_id")?,
            southbridge_id: parse_hex_n(&h.southbridge_id, "southbridge_id")?,
            cpuid: parse_hex_n(&h.cpuid, "cpuid")?,
            magic: parse_hex_n(&h.magic, "magic")?,
        };
        if self.match_registers.len() != MATCH_REGISTER_COUNT {
            return Err(ContainerError::Json(format!(
                "expected 8 match registers, found {}",
                self.match_registers.len()
            )));
        }
        let mut match_registers = [0u32; MATCH_REGISTER_COUNT];
        for (m, s) in match_registers.iter_mut().zip(&self.match_registers) {
            *m = parse_hex_n(s, "match register")?;
        }
        let mut triads = Vec::with_capacity(self.triads.len());
        for t in &self.triads {
            let w = |i: usize| parse_hex(&t.insns[i]);
            triads.push(Triad::from_words([w(0)?, w(1)?, w(2)?], parse_hex_n(&t.seq, "sequence word")?));
        }
        Ok(UpdateFile { header, match_registers, triads })
    }
}

/// Serializes an update exactly as its header describes it (stored checksum
/// kept), which is what `pack` does with a JSON dump.
pub fn pack_verbatim(update: &UpdateFile) -> Result<Vec<u8>, ContainerError> {
    let mut bytes = serialize_update(update, Checksum::Keep)?;
    bytes[offsets::LEN] = update.header.len;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uisa::SequenceWord;

    #[test]
    fn empty_update_is_header_only() {
        let u = UpdateFile::new([0; 8], vec![]).unwrap();
        let bytes = u.to_bytes().unwrap();
        assert_eq!(bytes.len(), 64);
        assert_eq!(compute_checksum(&u).unwrap(), 0);
        assert_eq!(parse_update(&bytes, true).unwrap(), u);
    }

    #[test]
    fn zero_triad_checksum_is_zero() {
        let t = Triad::from_words([0; 3], 0);
        let u = UpdateFile::new([0; 8], vec![t]).unwrap();
        assert_eq!(u.header.checksum, 0);
    }

    #[test]
    fn length_and_truncation_errors() {
        assert_eq!(parse_update(&[0; 10], false), Err(ContainerError::Truncated(10)));
        let mut bytes = UpdateFile::new([0; 8], vec![Triad::nops(SequenceWord::COMPLETE)])
            .unwrap()
            .to_bytes()
            .unwrap();
        bytes.pop();
        assert!(matches!(parse_update(&bytes, false), Err(ContainerError::LengthMismatch { .. })));
    }

    #[test]
    fn checksum_verified_only_on_request() {
        let mut bytes = UpdateFile::new([0x7e5, 0, 0, 0, 0, 0, 0, 0], vec![Triad::nops(SequenceWord::COMPLETE)])
            .unwrap()
            .to_bytes()
            .unwrap();
        bytes[70] ^= 1;
        assert!(parse_update(&bytes, false).is_ok());
        assert!(matches!(parse_update(&bytes, true), Err(ContainerError::ChecksumMismatch { .. })));
    }

    #[test]
    fn xor_transform_is_an_involution() {
        let bytes: Vec<u8> = (0..=255u8).cycle().take(64 + 56).collect();
        let key = XorKey(vec![0x5a, 0xc3, 0x11]);
        let once = deobfuscate_triads(&bytes, &key);
        assert_eq!(&once[..64], &bytes[..64]);
        assert_ne!(once, bytes);
        assert_eq!(deobfuscate_triads(&once, &key), bytes);
        assert_eq!(deobfuscate_triads(&bytes, &Identity), bytes);
    }
}
