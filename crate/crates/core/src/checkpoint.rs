//! Binary checkpoint container.
//!
//! Layout: magic, format version, rng seed, entry count, then a header
//! listing (name, shape) per entry, then the payloads as little-endian
//! 64-bit floats in header order.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TLJDCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Write named tensors to `path` atomically (temp file + rename).
pub fn write_entries(path: &Path, rng_seed: u64, entries: &[(String, &Tensor)]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        write_u64(&mut w, rng_seed)?;
        write_u32(&mut w, entries.len() as u32)?;
        for (name, tensor) in entries {
            write_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_u32(&mut w, tensor.shape().len() as u32)?;
            for &dim in tensor.shape() {
                write_u64(&mut w, dim as u64)?;
            }
        }
        for (_, tensor) in entries {
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a checkpoint container back as (rng_seed, named tensors).
pub fn read_entries(path: &Path) -> Result<(u64, Vec<(String, Tensor)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let rng_seed = read_u64(&mut r)?;
    let count = read_u32(&mut r)? as usize;

    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| Error::Checkpoint(format!("invalid entry name: {e}")))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        headers.push((name, shape));
    }

    let mut entries = Vec::with_capacity(count);
    for (name, shape) in headers {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok((rng_seed, entries))
}

/// Save a parameter store, entries in name order.
pub fn save_params(path: &Path, store: &ParamStore) -> Result<()> {
    let entries: Vec<(String, &Tensor)> = store
        .iter_values()
        .map(|(name, t)| (name.to_string(), t))
        .collect();
    write_entries(path, store.rng_seed(), &entries)
}

/// Load a parameter store written by [`save_params`].
pub fn load_params(path: &Path) -> Result<ParamStore> {
    let (rng_seed, entries) = read_entries(path)?;
    let mut store = ParamStore::new(rng_seed);
    for (name, tensor) in entries {
        store.register(&name, tensor)?;
    }
    Ok(store)
}
