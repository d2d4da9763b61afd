//! Binary checkpoint format for parameter sets.
//!
//! Layout: `FEGO` magic, version and tensor count as u32 LE, then per tensor
//! a u32 name length + name bytes, u32 rank, u32 dims, and row-major f32 LE
//! data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamTensors;
use crate::error::{Error, Result};

const FEGO_MAGIC: &[u8; 4] = b"FEGO";
const FEGO_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &impl ParamTensors) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    let tensors = params.tensors();
    w.write_all(FEGO_MAGIC).map_err(io)?;
    w.write_all(&FEGO_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for t in &tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(t.name.as_bytes()).map_err(io)?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes()).map_err(io)?;
        for &d in &t.dims {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in t.data {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Fill an existing, congruently-shaped parameter set from a checkpoint.
/// Tensor names, ranks, and dims must match exactly.
pub fn load_checkpoint_into(path: &Path, params: &mut impl ParamTensors) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    let bad = |msg: &str| Error::Invalid(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != FEGO_MAGIC {
        return Err(bad("bad checkpoint magic"));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        r.read_exact(&mut u32_buf).map_err(io)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let version = read_u32(&mut r)?;
    if version != FEGO_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(bad(&format!(
            "checkpoint holds {count} tensors, parameter set holds {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        if name != t.name {
            return Err(bad(&format!("expected tensor `{}`, found `{name}`", t.name)));
        }
        let rank = read_u32(&mut r)? as usize;
        if rank != t.dims.len() {
            return Err(bad(&format!("tensor `{name}` rank mismatch")));
        }
        for &expected in &t.dims {
            let got = read_u32(&mut r)? as usize;
            if got != expected {
                return Err(bad(&format!("tensor `{name}` dimension mismatch")));
            }
        }
        let mut f32_buf = [0u8; 4];
        for v in t.data.iter_mut() {
            r.read_exact(&mut f32_buf).map_err(io)?;
            *v = f32::from_le_bytes(f32_buf) as f64;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ModelDims, ModelParams, ParamTensors};
    use crate::nn::Activation;
    use crate::rng::derive_stream;

    #[test]
    fn checkpoint_round_trips_at_f32_precision() {
        let dims = ModelDims {
            feature_dim: 5,
            reduction_layers: 2,
            reduction_dim: 4,
            hidden_dim: 3,
            num_classes: 2,
            hops: 2,
        };
        let mut rng = derive_stream(17, "ckpt", 0);
        let params = ModelParams::init(&dims, Activation::Relu, Activation::Identity, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fego");
        save_checkpoint(&path, &params).unwrap();

        let mut restored = params.zeros_like();
        load_checkpoint_into(&path, &mut restored).unwrap();
        for (a, b) in params.tensors().iter().zip(restored.tensors().iter()) {
            for (&x, &y) in a.data.iter().zip(b.data) {
                assert!((x - y).abs() <= x.abs() * 1e-6 + 1e-7, "{}", a.name);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dims = ModelDims {
            feature_dim: 5,
            reduction_layers: 1,
            reduction_dim: 4,
            hidden_dim: 3,
            num_classes: 2,
            hops: 2,
        };
        let mut rng = derive_stream(18, "ckpt", 0);
        let params = ModelParams::init(&dims, Activation::Relu, Activation::Relu, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fego");
        save_checkpoint(&path, &params).unwrap();

        let other_dims = ModelDims {
            reduction_dim: 5,
            ..dims
        };
        let mut other = ModelParams::init(&other_dims, Activation::Relu, Activation::Relu, &mut rng);
        assert!(load_checkpoint_into(&path, &mut other).is_err());
    }
}
