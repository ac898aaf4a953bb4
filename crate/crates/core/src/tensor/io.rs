//! Binary tensor format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PSLT"
//! 4       4         format version, u32 little-endian (currently 1)
//! 8       4         rank r, u32 little-endian
//! 12      8·r       dims, u64 little-endian each, outermost first
//! 12+8r   8·∏dims   payload, f64 little-endian, row-major
//! ```
//!
//! Several tensors may be written back to back into one stream; checkpoints
//! do exactly that.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSLT";
pub const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one tensor; `origin` is only used in error messages.
pub fn read_tensor<R: Read>(r: &mut R, origin: &Path) -> Result<Tensor> {
    let io = |e| Error::io(origin, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::format(origin, format!("bad magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported tensor version {version}")));
    }
    r.read_exact(&mut word).map_err(io)?;
    let rank = u32::from_le_bytes(word) as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format(origin, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut quad = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut quad).map_err(io)?;
        shape.push(u64::from_le_bytes(quad) as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(io)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(&shape, data).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_tensor(&mut w, t).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&mut BufReader::new(f), path)
}
