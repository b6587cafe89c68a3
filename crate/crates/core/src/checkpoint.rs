//! Versioned little-endian parameter checkpoints.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "HWMCKPT\0"
//! version  u32
//! count    u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank }
//! raw f64 values of every entry, in table order
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::param::ParamStore;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"HWMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameter {name}: checkpoint has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("parameter {0} missing from checkpoint")]
    Missing(String),
}

/// Writes named tensors in the checkpoint layout.
pub fn write_entries<'a, S: Scalar + 'a>(
    w: &mut impl Write,
    entries: &[(&'a str, &'a Tensor<S>)],
) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, t) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.rank() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
    }
    for (_, t) in entries {
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
    }
    Ok(())
}

/// Reads every named tensor of a checkpoint.
pub fn read_entries<S: Scalar>(
    r: &mut impl Read,
) -> Result<Vec<(String, Tensor<S>)>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>()? as usize;
        if len > 1 << 16 {
            return Err(CheckpointError::Malformed(format!("name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!(
                "rank {rank} for {name}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        table.push((name, shape));
    }
    let mut out = Vec::with_capacity(table.len());
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(S::lit(r.read_f64::<LittleEndian>()?));
        }
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Saves the parameters of several stores into one file.
pub fn save<S: Scalar>(path: &Path, stores: &[&ParamStore<S>]) -> Result<(), CheckpointError> {
    let entries: Vec<(&str, &Tensor<S>)> = stores.iter().flat_map(|s| s.iter()).collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_entries(&mut w, &entries)?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into existing stores, matching parameters by name.
/// Every store parameter must be present with the same shape; extra
/// checkpoint entries are ignored.
pub fn load_into<S: Scalar>(
    path: &Path,
    stores: &mut [&mut ParamStore<S>],
) -> Result<(), CheckpointError> {
    let entries = read_entries::<S>(&mut BufReader::new(File::open(path)?))?;
    assign(&entries, stores)
}

pub fn assign<S: Scalar>(
    entries: &[(String, Tensor<S>)],
    stores: &mut [&mut ParamStore<S>],
) -> Result<(), CheckpointError> {
    for store in stores.iter_mut() {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let slot = store.get_mut(store.find(&name).unwrap());
            if slot.shape() != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: slot.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *slot = t.clone();
        }
    }
    Ok(())
}
