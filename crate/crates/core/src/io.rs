//! Binary tensor serialization: magic "MVT1", little-endian throughout.
//!
//! Layout: 4 magic bytes, u32 order d, d x u64 dimensions, then
//! prod(dims) x f64 entries in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};

pub const MAGIC: &[u8; 4] = b"MVT1";

pub fn write_tensor<W: Write>(tensor: &DenseTensor, mut w: W) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: "<writer>".into(),
        source: e,
    };
    w.write_all(MAGIC).map_err(io_err)?;
    let dims = tensor.shape().dims();
    w.write_all(&(dims.len() as u32).to_le_bytes()).map_err(io_err)?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let io_err = |e: std::io::Error| Error::Io {
        path: "<reader>".into(),
        source: e,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let mut d4 = [0u8; 4];
    r.read_exact(&mut d4).map_err(io_err)?;
    let d = u32::from_le_bytes(d4) as usize;
    if !(2..=16).contains(&d) {
        return Err(Error::Format(format!("implausible tensor order {d}")));
    }
    let mut dims = Vec::with_capacity(d);
    let mut d8 = [0u8; 8];
    for _ in 0..d {
        r.read_exact(&mut d8).map_err(io_err)?;
        let dim = u64::from_le_bytes(d8) as usize;
        dims.push(dim);
    }
    let shape = Shape::new(dims)?;
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.len() {
        r.read_exact(&mut d8).map_err(io_err)?;
        data.push(f64::from_le_bytes(d8));
    }
    DenseTensor::from_vec(shape, data)
}

pub fn write_tensor_file(tensor: &DenseTensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    write_tensor(tensor, &mut w)?;
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_tensor_file(path: &Path) -> Result<DenseTensor> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_tensor(BufReader::new(file))
}
