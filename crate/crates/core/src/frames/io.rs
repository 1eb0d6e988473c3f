//! Bit-exact container and image I/O.
//!
//! Frame container ("OCTF"), little-endian:
//! bytes 0-3 magic `OCTF` | u16 version=1 | u32 N | u32 M | u32 frame count
//! | u8 dtype (0 = f32 LE) | 3 reserved zero bytes | F*N*M f32 values,
//! frame-major, A-line-major.
//!
//! Images are binary PGM (P5) in and binary PPM (P6) out; both are
//! codec-free and byte-reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BScanFrame, FrameSequence};
use crate::error::{Error, Result};
use crate::io_util::{read_f32_payload, read_magic, read_u16, read_u32};
use crate::numerics::{Real, Tensor2};

const OCTF_MAGIC: [u8; 4] = *b"OCTF";
const OCTF_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// Write a frame sequence to an OCTF container.
pub fn save_sequence(seq: &FrameSequence<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&OCTF_MAGIC)?;
    w.write_all(&OCTF_VERSION.to_le_bytes())?;
    w.write_all(&(seq.n_alines() as u32).to_le_bytes())?;
    w.write_all(&(seq.n_points() as u32).to_le_bytes())?;
    w.write_all(&(seq.len() as u32).to_le_bytes())?;
    w.write_all(&[DTYPE_F32, 0, 0, 0])?;
    for frame in seq.iter() {
        for &v in frame.pixels().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a frame sequence from an OCTF container.
pub fn load_sequence(path: &Path) -> Result<FrameSequence<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, OCTF_MAGIC)?;
    let version = read_u16(&mut r, "version")?;
    if version != OCTF_VERSION {
        return Err(Error::VersionMismatch {
            expected: OCTF_VERSION,
            found: version,
        });
    }
    let n = read_u32(&mut r, "n_alines")? as usize;
    let m = read_u32(&mut r, "n_points")? as usize;
    let f = read_u32(&mut r, "frame count")? as usize;
    let mut tail = [0u8; 4];
    r.read_exact(&mut tail)
        .map_err(|_| Error::Truncated("missing dtype/reserved bytes".into()))?;
    if tail[0] != DTYPE_F32 {
        return Err(Error::Integrity(format!(
            "unsupported dtype code {}",
            tail[0]
        )));
    }
    if f == 0 {
        return Err(Error::Integrity("container holds zero frames".into()));
    }
    let mut frames = Vec::with_capacity(f);
    for fi in 0..f {
        let data = read_f32_payload(&mut r, n * m, &format!("frame {fi}"))?;
        let tensor = Tensor2::from_vec(n, m, data)
            .map_err(|e| Error::Integrity(format!("frame {fi}: {e}")))?;
        frames.push(
            BScanFrame::new(tensor).map_err(|e| Error::Integrity(format!("frame {fi}: {e}")))?,
        );
    }
    FrameSequence::new(frames)
}

/// Round half up into a byte.
fn to_byte<T: Real>(v: T) -> u8 {
    let x = (v.to_f64() * 255.0 + 0.5).floor();
    x.clamp(0.0, 255.0) as u8
}

pub(super) fn write_ppm<T: Real>(
    f1: &BScanFrame<T>,
    f2: &BScanFrame<T>,
    f3: &BScanFrame<T>,
    path: &Path,
) -> Result<()> {
    for (other, which) in [(f2, "second"), (f3, "third")] {
        if (other.n_alines(), other.n_points()) != (f1.n_alines(), f1.n_points()) {
            return Err(Error::DimMismatch {
                op: "rgb_overlay",
                left: (f1.n_alines(), f1.n_points()),
                right: (other.n_alines(), other.n_points()),
            });
        }
        let _ = which;
    }
    let (h, w_px) = (f1.n_alines(), f1.n_points());
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{w_px} {h}\n255\n")?;
    let mut row = Vec::with_capacity(w_px * 3);
    for i in 0..h {
        row.clear();
        for j in 0..w_px {
            row.push(to_byte(f1.pixels().get(i, j)));
            row.push(to_byte(f2.pixels().get(i, j)));
            row.push(to_byte(f3.pixels().get(i, j)));
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pull the next whitespace-delimited token, skipping `#` comments.
fn next_pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let n = bytes.len();
    loop {
        while *pos < n && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < n && bytes[*pos] == b'#' {
            while *pos < n && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= n {
        return Err(Error::Parse("unexpected end of PGM header".into()));
    }
    let start = *pos;
    while *pos < n && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub(super) fn read_pgm(path: &Path) -> Result<BScanFrame<f32>> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let magic = next_pnm_token(&bytes, &mut pos)?;
    if magic == "P2" {
        return Err(Error::Parse(
            "ASCII PGM (P2) is not supported, use binary P5".into(),
        ));
    }
    if magic != "P5" {
        return Err(Error::Parse(format!("not a binary PGM: magic {magic:?}")));
    }
    let parse_dim = |tok: String, what: &str| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad {what} {tok:?}")))
    };
    let width = parse_dim(next_pnm_token(&bytes, &mut pos)?, "width")?;
    let height = parse_dim(next_pnm_token(&bytes, &mut pos)?, "height")?;
    let maxval = parse_dim(next_pnm_token(&bytes, &mut pos)?, "maxval")?;
    if maxval > 255 {
        return Err(Error::Parse(format!(
            "16-bit PGM (maxval {maxval}) is not supported"
        )));
    }
    if maxval == 0 {
        return Err(Error::Parse("PGM maxval must be positive".into()));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Parse("missing separator before PGM payload".into()));
    }
    pos += 1;
    let need = width * height;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(Error::Truncated(format!(
            "PGM payload has {} bytes, header claims {}",
            payload.len(),
            need
        )));
    }
    let data: Vec<f32> = payload[..need].iter().map(|&b| b as f32 / 255.0).collect();
    let tensor = Tensor2::from_vec(height, width, data)?;
    BScanFrame::new(tensor)
}
