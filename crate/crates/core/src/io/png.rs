//! 8-bit RGB PNG to planar `[3, H, W]` values in `[0, 1]` and back. No gamma
//! conversion is applied in either direction.

use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::{check_dims, read_file, write_file};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

pub fn parse(path: &Path, bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(SIGNATURE) {
        return Err(Error::format(path, 0, "PNG signature"));
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, SIGNATURE.len() as u64, format!("decodable PNG stream ({e})")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    check_dims(path, 16, w, h)?;
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        let p = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * w * h + p] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Values are clamped to `[0, 1]` and rounded to the nearest 8-bit level.
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid(format!("expected a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = image.data();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        let q = |c: usize| (d[c * w * h + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn read(path: &Path) -> Result<Tensor> {
    parse(path, &read_file(path)?)
}

pub fn write(path: &Path, image: &Tensor) -> Result<()> {
    write_file(path, &encode(image)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantized() {
        let t = Tensor::new(vec![3, 1, 2], vec![0.0, 1.0, 0.2, 0.4, 128.0 / 255.0, 2.0]).unwrap();
        let back = parse(Path::new("a.png"), &encode(&t).unwrap()).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 1.0);
        assert_eq!(back.data()[2], 51.0 / 255.0);
        assert_eq!(back.data()[4], 128.0 / 255.0);
        assert_eq!(back.data()[5], 1.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse(Path::new("a.png"), b"GIF89a").unwrap_err().to_string().contains("byte 0"));
        let mut b = encode(&Tensor::zeros(vec![3, 2, 2])).unwrap();
        b.truncate(b.len() / 2);
        assert!(parse(Path::new("a.png"), &b).is_err());
    }
}
