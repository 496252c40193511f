//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic        8 bytes   "SGNNCKPT"
//! parcels      u32
//! classes      u32
//! conv1        u32
//! conv2        u32
//! hidden       u32
//! activation   u8        0 = relu, 1 = identity
//! epoch        u32       epoch the parameters were taken from
//! config_hash  32 bytes  SHA-256 of the resolved run config (zeros if none)
//! tensors      f64[]     the 11 tensors in TENSOR_NAMES order, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, RngStream};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGNNCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub config_hash: [u8; 32],
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f64>, meta: &CheckpointMeta) -> Result<()> {
    params.validate()?;
    let d = params.dims();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [d.parcels, d.classes, d.conv1, d.conv2, d.hidden] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[params.activation.code()])?;
    w.write_all(&meta.epoch.to_le_bytes())?;
    w.write_all(&meta.config_hash)?;
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams<f64>, CheckpointMeta)> {
    let what = || path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(what(), "bad magic"));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        *d = u32::from_le_bytes(buf) as usize;
    }
    let mut act = [0u8; 1];
    r.read_exact(&mut act)?;
    let activation = Activation::from_code(act[0])
        .ok_or_else(|| Error::format(what(), format!("unknown activation code {}", act[0])))?;
    let mut epoch = [0u8; 4];
    r.read_exact(&mut epoch)?;
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash)?;

    let dims = ModelDims {
        parcels: dims[0],
        classes: dims[1],
        conv1: dims[2],
        conv2: dims[3],
        hidden: dims[4],
    };
    // Shapes come from a template; values are overwritten below.
    let mut params = ModelParams::<f64>::init(dims, &mut RngStream::new(0));
    params.activation = activation;
    for t in params.tensors_mut() {
        let (rows, cols) = t.shape();
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::format(what(), format!("truncated tensor data: {e}")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *t = DenseMatrix::new(rows, cols, values)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(what(), format!("{} trailing bytes", rest.len())));
    }
    params.validate()?;
    Ok((
        params,
        CheckpointMeta {
            epoch: u32::from_le_bytes(epoch),
            config_hash,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_everything() {
        let dims = ModelDims {
            parcels: 4,
            classes: 3,
            conv1: 5,
            conv2: 2,
            hidden: 3,
        };
        let mut params = ModelParams::<f64>::init(dims, &mut RngStream::new(1));
        params.mask_raw[(0, 1)] = 0.25;
        params.mask_raw[(1, 0)] = 0.25;
        let meta = CheckpointMeta {
            epoch: 17,
            config_hash: [7; 32],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&path, &params, &meta).unwrap();
        let n_values: usize = params.tensors().iter().map(|t| t.data().len()).sum();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 8 + 20 + 1 + 4 + 32 + 8 * n_values);
        let (back, back_meta) = read_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let params = ModelParams::<f64>::init(ModelDims::new(3, 2), &mut RngStream::new(1));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        write_checkpoint(&path, &params, &CheckpointMeta::default()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
