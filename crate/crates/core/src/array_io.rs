//! Binary array files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `CSPC`                     |
//! | u32          | format version (1)               |
//! | u32          | dtype tag: 0 = f32, 1 = f64      |
//! | u32          | rank `r`                         |
//! | r × u64      | dimensions                       |
//! | payload      | row-major little-endian values   |

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSPC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// A dense array held as `f64` regardless of its on-disk dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape {
                what: "array elements",
                expected,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        // nalgebra is column-major; transpose to get row-major order
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => Err(Error::Shape {
                what: "array rank",
                expected: 2,
                found: self.shape.len(),
            }),
        }
    }

    /// Checks the shape, naming the array in the error.
    pub fn expect_shape(&self, what: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::invalid(
                "array shape",
                format!("{what}: expected {shape:?}, found {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

pub fn encode(array: &Array, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * array.shape.len() + dtype.width() * array.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    out.extend_from_slice(&(array.shape.len() as u32).to_le_bytes());
    for &d in &array.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F64 => array.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => array
            .data
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(
                self.offset,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.offset),
            ));
        };
        let slice = &self.bytes[self.offset..end];
        self.offset = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses an array; errors name the byte offset of the offending field.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Array> {
    let mut r = Reader {
        bytes,
        offset: 0,
        path,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic, expected \"CSPC\""));
    }
    let at = r.offset;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.fail(at, format!("unsupported version {version}")));
    }
    let at = r.offset;
    let dtype = match r.u32("dtype")? {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(r.fail(at, format!("unknown dtype tag {other}"))),
    };
    let rank = r.u32("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for axis in 0..rank {
        let at = r.offset;
        let d = r.u64("dimension")?;
        let d = usize::try_from(d).map_err(|_| r.fail(at, format!("dimension {axis} too large")))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| r.fail(at, "element count overflows"))?;
        shape.push(d);
    }
    let payload_at = r.offset;
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| r.fail(payload_at, "payload size overflows"))?;
    let payload = r.take(expected, "payload")?;
    let data = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    if r.offset != bytes.len() {
        return Err(r.fail(
            r.offset,
            format!("{} trailing bytes after payload", bytes.len() - r.offset),
        ));
    }
    Ok(Array { shape, data })
}

pub fn write_array(path: impl AsRef<Path>, array: &Array) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(array, DType::F64)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: impl AsRef<Path>) -> Result<Array> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
