//! Distortion-vector container ("OCTD"), little-endian:
//! magic `OCTD` | u16 version=1 | u32 N | u32 vector count | count*N f32
//! values, vector-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::DistortionVector;
use crate::error::{Error, Result};
use crate::io_util::{read_f32_payload, read_magic, read_u16, read_u32};

const OCTD_MAGIC: [u8; 4] = *b"OCTD";
const OCTD_VERSION: u16 = 1;

/// Write a list of equal-length distortion vectors.
pub fn save_vectors(vectors: &[DistortionVector<f32>], path: &Path) -> Result<()> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Data("cannot save an empty vector list".into()))?;
    let n = first.len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::DimMismatch {
            op: "save_vectors",
            left: (n, 1),
            right: (bad.len(), 1),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&OCTD_MAGIC)?;
    w.write_all(&OCTD_VERSION.to_le_bytes())?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(vectors.len() as u32).to_le_bytes())?;
    for v in vectors {
        for &s in v.shifts() {
            w.write_all(&s.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a list of distortion vectors.
pub fn load_vectors(path: &Path) -> Result<Vec<DistortionVector<f32>>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, OCTD_MAGIC)?;
    let version = read_u16(&mut r, "version")?;
    if version != OCTD_VERSION {
        return Err(Error::VersionMismatch {
            expected: OCTD_VERSION,
            found: version,
        });
    }
    let n = read_u32(&mut r, "vector length")? as usize;
    let count = read_u32(&mut r, "vector count")? as usize;
    if n == 0 || count == 0 {
        return Err(Error::Integrity("empty vector container".into()));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let data = read_f32_payload(&mut r, n, &format!("vector {k}"))?;
        out.push(
            DistortionVector::new(data)
                .map_err(|e| Error::Integrity(format!("vector {k}: {e}")))?,
        );
    }
    Ok(out)
}
