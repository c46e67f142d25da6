//! Minimal binary tensor container used for depth maps, feature maps,
//! point clouds, embedding matrices, and trained parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes   "CVPT"
//! version  u32       currently 1
//! dtype    u8        1 = f32, 2 = f64
//! ndim     u8
//! dims     ndim * u64
//! payload  row-major elements, little-endian
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"CVPT";
pub const TENSOR_VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

/// Element storage. Readers widen `F32` to `f64` where needed; writers keep
/// whichever variant they were handed.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Tensor {
    pub fn from_f64(dims: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        let tensor = Tensor {
            dims,
            data: TensorData::F64(values),
        };
        tensor.check_element_count()?;
        Ok(tensor)
    }

    pub fn from_f32(dims: Vec<u64>, values: Vec<f32>) -> Result<Self> {
        let tensor = Tensor {
            dims,
            data: TensorData::F32(values),
        };
        tensor.check_element_count()?;
        Ok(tensor)
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    /// The payload as `f64`, widening `f32` storage.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn check_element_count(&self) -> Result<()> {
        if self.element_count() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {} elements but payload has {}",
                self.dims,
                self.element_count(),
                self.data.len()
            )));
        }
        Ok(())
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    tensor.check_element_count()?;
    if tensor.dims.len() > u8::MAX as usize {
        return Err(Error::ShapeMismatch(format!(
            "tensor rank {} exceeds the format maximum of 255",
            tensor.dims.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(&TENSOR_MAGIC).map_err(io_err)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes()).map_err(io_err)?;
    let dtype = match tensor.data {
        TensorData::F32(_) => DTYPE_F32,
        TensorData::F64(_) => DTYPE_F64,
    };
    w.write_all(&[dtype, tensor.dims.len() as u8])
        .map_err(io_err)?;
    for &dim in &tensor.dims {
        w.write_all(&dim.to_le_bytes()).map_err(io_err)?;
    }
    match &tensor.data {
        TensorData::F32(values) => {
            for value in values {
                w.write_all(&value.to_le_bytes()).map_err(io_err)?;
            }
        }
        TensorData::F64(values) => {
            for value in values {
                w.write_all(&value.to_le_bytes()).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let format_err = |detail: String| Error::Format {
        path: PathBuf::from(path),
        detail,
    };

    let mut header = [0u8; 10];
    read_exact(&mut r, path, &mut header)?;
    if header[..4] != TENSOR_MAGIC {
        return Err(format_err(format!(
            "bad magic {:?}, expected {:?}",
            &header[..4],
            TENSOR_MAGIC
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(format_err(format!(
            "unsupported version {version}, expected {TENSOR_VERSION}"
        )));
    }
    let dtype = header[8];
    let ndim = header[9] as usize;

    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut buf = [0u8; 8];
        read_exact(&mut r, path, &mut buf)?;
        dims.push(u64::from_le_bytes(buf));
    }
    let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or_else(|| format_err(format!("dims {dims:?} overflow u64")))? as usize;

    let data = match dtype {
        DTYPE_F32 => {
            let mut raw = vec![0u8; count * 4];
            read_exact(&mut r, path, &mut raw)?;
            TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        DTYPE_F64 => {
            let mut raw = vec![0u8; count * 8];
            read_exact(&mut r, path, &mut raw)?;
            TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        other => return Err(format_err(format!("unknown dtype code {other}"))),
    };

    let mut trailer = [0u8; 1];
    match r.read(&mut trailer) {
        Ok(0) => {}
        Ok(_) => return Err(format_err("trailing bytes after payload".into())),
        Err(e) => return Err(Error::io(path, e)),
    }

    Ok(Tensor { dims, data })
}

fn read_exact(r: &mut impl Read, path: &Path, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                path: PathBuf::from(path),
                detail: "file truncated".into(),
            }
        } else {
            Error::io(path, e)
        }
    })
}
