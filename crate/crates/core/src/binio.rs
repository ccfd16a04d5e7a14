//! Little-endian binary layouts shared by the matrix, index and model files.
//!
//! Matrix file (`features.bin`):
//!
//! ```text
//! magic    8 bytes  "MSWPMAT\0"
//! version  u32      1
//! blocks   u32      number of matrices that follow
//! per block:
//!   rows   u64
//!   cols   u64
//!   data   rows*cols f64, row-major
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"MSWPMAT\0";
pub const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for v in vs {
            self.f64(*v);
        }
        self
    }

    /// Row-major dump of a column-major matrix.
    pub fn matrix_body(&mut self, m: &DMatrix<f64>) -> &mut Self {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.f64(m[(i, j)]);
            }
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], context: &'a str) -> Self {
        Reader { buf, pos: 0, context }
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.context, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        if self.take(expected.len())? != expected {
            return Err(self.err("bad magic"));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err("size overflows usize"))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn matrix_body(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let n = rows.checked_mul(cols).ok_or_else(|| self.err("size overflow"))?;
        let data = self.f64s(n)?;
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.err(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn encode_matrices(blocks: &[&DMatrix<f64>]) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MATRIX_MAGIC).u32(MATRIX_VERSION).u32(blocks.len() as u32);
    for m in blocks {
        w.u64(m.nrows() as u64).u64(m.ncols() as u64).matrix_body(m);
    }
    w.finish()
}

pub fn decode_matrices(bytes: &[u8], context: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut r = Reader::new(bytes, context);
    r.magic(MATRIX_MAGIC)?;
    let version = r.u32()?;
    if version != MATRIX_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rows = r.usize()?;
        let cols = r.usize()?;
        out.push(r.matrix_body(rows, cols)?);
    }
    r.expect_end()?;
    Ok(out)
}

pub fn write_matrices(path: &Path, blocks: &[&DMatrix<f64>]) -> Result<()> {
    fs::write(path, encode_matrices(blocks)).map_err(|e| Error::io(path, e))
}

pub fn read_matrices(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrices(&bytes, &path.display().to_string())
}
