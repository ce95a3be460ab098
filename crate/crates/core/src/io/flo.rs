//! Middlebury `.flo`: `f32` magic 202021.25, `i32` width and height, then
//! interleaved `(u, v)` `f32` pairs in row-major order, all little-endian.

use std::path::Path;

use super::{check_dims, read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::flow::FlowField;

pub const MAGIC: f32 = 202021.25;

pub fn parse(path: &Path, bytes: &[u8]) -> Result<FlowField> {
    let mut r = ByteReader::new(path, bytes);
    let magic = r.f32("magic 202021.25")?;
    if magic != MAGIC {
        return Err(Error::format(path, 0, format!("magic 202021.25, found {magic}")));
    }
    let w = r.i32("width")?;
    let h = r.i32("height")?;
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, 4, format!("positive dimensions, found {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    check_dims(path, 4, w, h)?;
    let n = 2 * w * h;
    if r.remaining() != n * 4 {
        return Err(r.error(format!("{} bytes of flow vectors, found {}", n * 4, r.remaining())));
    }
    let raw = r.take(n * 4, "flow vectors")?;
    let mut data = Vec::with_capacity(n);
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(path, 12 + 4 * i as u64, "finite flow component"));
        }
        data.push(v as f64);
    }
    FlowField::new(w, h, data)
}

/// Components are narrowed to `f32`.
pub fn encode(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * flow.data.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for v in &flow.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn read(path: &Path) -> Result<FlowField> {
    parse(path, &read_file(path)?)
}

pub fn write(path: &Path, flow: &FlowField) -> Result<()> {
    write_file(path, &encode(flow))
}
