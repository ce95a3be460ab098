//! File formats: PFM depth, Middlebury `.flo` flow, 8-bit PNG images, camera
//! and manifest JSON, and the binary checkpoint container.

pub mod checkpoint;
pub mod flo;
pub mod json;
pub mod pfm;
pub mod png;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Largest accepted image side, guarding allocations driven by headers.
pub const MAX_DIM: usize = 1 << 14;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_dims(path: &Path, offset: u64, width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::format(
            path,
            offset,
            format!("image dimensions in 1..={MAX_DIM}, got {width}x{height}"),
        ));
    }
    Ok(())
}

/// Cursor over a byte buffer whose failures report the file and offset.
pub(crate) struct ByteReader<'a> {
    path: PathBuf,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(path: &Path, bytes: &'a [u8]) -> Self {
        ByteReader {
            path: path.to_path_buf(),
            bytes,
            pos: 0,
        }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn error(&self, expected: impl Into<String>) -> Error {
        Error::format(&self.path, self.offset(), expected)
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error(format!("{what} ({n} bytes), found {} bytes", self.remaining()))),
        }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    /// Reads a `u64` length and checks that at least `len * elem` bytes remain.
    pub fn len_prefix(&mut self, elem: usize, what: &str) -> Result<usize> {
        let at = self.offset();
        let n = self.u64(what)?;
        let fits = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(elem))
            .filter(|&b| b <= self.remaining());
        match fits {
            Some(_) => Ok(n as usize),
            None => Err(Error::format(
                &self.path,
                at,
                format!("{what} length that fits the remaining {} bytes, got {n}", self.remaining()),
            )),
        }
    }

    pub fn f64_vec(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.len_prefix(8, what)?;
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn bytes_vec(&mut self, what: &str) -> Result<Vec<u8>> {
        let n = self.len_prefix(1, what)?;
        Ok(self.take(n, what)?.to_vec())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("end of file, found {} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

/// Little-endian writer matching [`ByteReader`].
#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }
}
