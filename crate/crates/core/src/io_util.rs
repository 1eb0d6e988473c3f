//! Shared little-endian read helpers for the binary containers.

use std::io::Read;

use crate::error::{Error, Result};

pub(crate) fn read_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Truncated("file shorter than magic".into()))?;
    if magic != expected {
        return Err(Error::BadMagic {
            expected,
            found: magic,
        });
    }
    Ok(())
}

pub(crate) fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)
        .map_err(|_| Error::Truncated(format!("missing {what}")))?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Truncated(format!("missing {what}")))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32_payload(r: &mut impl Read, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Truncated(format!("{what}: payload shorter than header claims")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
