//! Checkpoint container ("OCTW"), little-endian:
//! magic `OCTW` | u16 version=1 | u32 N, M, E, heads, blocks, mlp_hidden |
//! tensors in parameter-layout order, each as u32 rows, u32 cols, then
//! rows*cols f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{init_params, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io_util::{read_f32_payload, read_magic, read_u16, read_u32};
use crate::numerics::{ParameterSet, RngState, Tensor2};

const OCTW_MAGIC: [u8; 4] = *b"OCTW";
const OCTW_VERSION: u16 = 1;

/// Write parameters and config to an OCTW checkpoint.
pub fn save_model(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let cfg = params.config();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&OCTW_MAGIC)?;
    w.write_all(&OCTW_VERSION.to_le_bytes())?;
    for dim in [
        cfg.n_alines,
        cfg.n_points,
        cfg.embed_dim,
        cfg.n_heads,
        cfg.n_blocks,
        cfg.mlp_hidden,
    ] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for k in 0..params.n_params() {
        let t = &params.param(k).value;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back; the tensor list must match the header config
/// exactly.
pub fn load_model(path: &Path) -> Result<ModelParams<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, OCTW_MAGIC)?;
    let version = read_u16(&mut r, "version")?;
    if version != OCTW_VERSION {
        return Err(Error::VersionMismatch {
            expected: OCTW_VERSION,
            found: version,
        });
    }
    let mut dims = [0usize; 6];
    for (d, name) in dims.iter_mut().zip([
        "n_alines",
        "n_points",
        "embed_dim",
        "n_heads",
        "n_blocks",
        "mlp_hidden",
    ]) {
        *d = read_u32(&mut r, name)? as usize;
    }
    let cfg = ModelConfig {
        n_alines: dims[0],
        n_points: dims[1],
        embed_dim: dims[2],
        n_heads: dims[3],
        n_blocks: dims[4],
        mlp_hidden: dims[5],
    };
    cfg.validate()
        .map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;

    // build the expected layout, then overwrite every tensor from the file
    let mut params = init_params::<f32>(&cfg, &mut RngState::new(0))?;
    for k in 0..params.n_params() {
        let rows = read_u32(&mut r, "tensor rows")? as usize;
        let cols = read_u32(&mut r, "tensor cols")? as usize;
        let expected = params.param(k).value.shape();
        if (rows, cols) != expected {
            return Err(Error::Integrity(format!(
                "tensor {k} has shape {rows}x{cols}, config requires {}x{}",
                expected.0, expected.1
            )));
        }
        let data = read_f32_payload(&mut r, rows * cols, &format!("tensor {k}"))?;
        params.param_mut(k).value = Tensor2::from_vec(rows, cols, data)
            .map_err(|e| Error::Integrity(format!("tensor {k}: {e}")))?;
        params.param_mut(k).zero_grad();
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after final tensor",
            rest.len()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_alines: 8,
            n_points: 4,
            embed_dim: 16,
            n_heads: 2,
            n_blocks: 1,
            mlp_hidden: 8,
        }
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let params = init_params::<f32>(&tiny(), &mut RngState::new(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.octw");
        save_model(&params, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn checkpoint_truncation_detected() {
        let params = init_params::<f32>(&tiny(), &mut RngState::new(10)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.octw");
        save_model(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn checkpoint_shape_integrity_checked() {
        let params = init_params::<f32>(&tiny(), &mut RngState::new(11)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.octw");
        save_model(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // corrupt the first tensor's row count (offset: 4 magic + 2 version + 24 dims)
        bytes[30] = bytes[30].wrapping_add(1);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Integrity(_))));
    }
}
