//! Grayscale PFM (`Pf`). Rows are stored bottom to top; a negative scale
//! marks little-endian samples, a positive one big-endian. Writes are always
//! little-endian with scale `-1`.

use std::path::Path;

use super::{check_dims, read_file, write_file, ByteReader};
use crate::error::{Error, Result};

/// Row-major (top row first) depth samples.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Reads one whitespace-terminated header field.
fn header_field(r: &mut ByteReader<'_>, what: &str) -> Result<(String, u64)> {
    let start = r.offset();
    let mut field = String::new();
    loop {
        let b = r.take(1, what)?[0];
        if b.is_ascii_whitespace() {
            break;
        }
        if !b.is_ascii_graphic() || field.len() >= 64 {
            return Err(Error::format(r.path(), r.offset() - 1, format!("printable {what} of at most 64 characters")));
        }
        field.push(b as char);
    }
    if field.is_empty() {
        return Err(Error::format(r.path(), start, format!("non-empty {what}")));
    }
    Ok((field, start))
}

pub fn parse(path: &Path, bytes: &[u8]) -> Result<DepthMap> {
    let mut r = ByteReader::new(path, bytes);
    let (magic, at) = header_field(&mut r, "magic")?;
    if magic != "Pf" {
        return Err(Error::format(path, at, format!("grayscale PFM magic \"Pf\", found {magic:?}")));
    }
    let (w, at_w) = header_field(&mut r, "width")?;
    let width: usize = w.parse().map_err(|_| Error::format(path, at_w, format!("integer width, found {w:?}")))?;
    let (h, at_h) = header_field(&mut r, "height")?;
    let height: usize = h.parse().map_err(|_| Error::format(path, at_h, format!("integer height, found {h:?}")))?;
    check_dims(path, at_w, width, height)?;
    let (s, at_s) = header_field(&mut r, "scale")?;
    let scale: f64 = s.parse().map_err(|_| Error::format(path, at_s, format!("numeric scale, found {s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(path, at_s, "non-zero finite scale"));
    }
    let little = scale < 0.0;
    let n = width * height;
    if r.remaining() != n * 4 {
        return Err(r.error(format!("{} bytes of samples, found {}", n * 4, r.remaining())));
    }
    let raw = r.take(n * 4, "samples")?;
    let mut data = vec![0.0; n];
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let b: [u8; 4] = c.try_into().expect("4 bytes");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (i / width, i % width);
        data[(height - 1 - row) * width + col] = v as f64;
    }
    Ok(DepthMap { width, height, data })
}

/// Samples are narrowed to `f32`.
pub fn encode(map: &DepthMap) -> Result<Vec<u8>> {
    if map.data.len() != map.width * map.height {
        return Err(Error::invalid("depth map size does not match its dimensions"));
    }
    let mut out = format!("Pf\n{} {}\n-1\n", map.width, map.height).into_bytes();
    for row in (0..map.height).rev() {
        for col in 0..map.width {
            out.extend_from_slice(&(map.data[row * map.width + col] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<DepthMap> {
    parse(path, &read_file(path)?)
}

pub fn write(path: &Path, map: &DepthMap) -> Result<()> {
    write_file(path, &encode(map)?)
}
