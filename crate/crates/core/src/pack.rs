//! Offset-encoded level storage.
//!
//! Each level is stored as `level - l_min`, which is never negative. For
//! 4-bit quantization two codes share a byte: the earlier element (row-major
//! order) in the low nibble, the later one in the high nibble, and an odd
//! tail is padded with a zero nibble. Other bit widths use one byte per code.

use crate::error::{Error, Result};
use crate::rtn::LevelVector;
use crate::types::QuantConfig;

/// Bytes needed to store `count` codes.
pub fn packed_len(count: usize, bits: u8) -> usize {
    if bits == 4 {
        count.div_ceil(2)
    } else {
        count
    }
}

pub fn pack_levels(levels: &LevelVector) -> Vec<u8> {
    let l_min = QuantConfig::with_bits(levels.bits()).l_min();
    let codes = levels.levels().iter().map(|&l| (l as i32 - l_min) as u8);
    if levels.bits() == 4 {
        let codes: Vec<u8> = codes.collect();
        codes
            .chunks(2)
            .map(|pair| pair[0] | pair.get(1).map_or(0, |hi| hi << 4))
            .collect()
    } else {
        codes.collect()
    }
}

pub fn unpack_levels(bytes: &[u8], count: usize, bits: u8) -> Result<LevelVector> {
    let cfg = QuantConfig::with_bits(bits);
    cfg.validate()?;
    let need = packed_len(count, bits);
    if bytes.len() < need {
        return Err(Error::ShortLevels {
            have: bytes.len(),
            need,
            count,
        });
    }
    let l_min = cfg.l_min();
    let levels: Vec<i16> = if bits == 4 {
        bytes[..need]
            .iter()
            .flat_map(|&b| [b & 0x0f, b >> 4])
            .take(count)
            .map(|code| (code as i32 + l_min) as i16)
            .collect()
    } else {
        bytes[..need]
            .iter()
            .map(|&code| (code as i32 + l_min) as i16)
            .collect()
    };
    LevelVector::new(levels, bits)
}
