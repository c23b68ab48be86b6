//! RGB images stored as flat interleaved vectors, plus binary PPM emission.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An RGB image; `values[(y·width + x)·3 + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        crate::error::ensure_len("image values", height * width * 3, &values)?;
        crate::error::ensure_finite("image", &values)?;
        Ok(Image { height, width, values })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let values = (0..height * width).flat_map(|_| rgb).collect();
        Image { height, width, values }
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.values[(y * self.width + x) * 3 + c] = v;
    }

    pub fn rgb(&self, pixel: usize) -> [f64; 3] {
        [self.values[3 * pixel], self.values[3 * pixel + 1], self.values[3 * pixel + 2]]
    }

    /// 8-bit quantization used for emission: `round(255·clamp(v, 0, 1))`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|&v| quantize(v)).collect()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    /// Parses a P6 file with maxval 255 back into `[0,1]` values.
    pub fn from_ppm(bytes: &[u8]) -> Result<Image> {
        let bad = |offset: usize, m: &str| Error::Format {
            offset: offset as u64,
            message: m.to_string(),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad(pos, "truncated PPM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(start, "non-ASCII header"))?);
        }
        if fields[0] != "P6" {
            return Err(bad(0, "not a P6 file"));
        }
        let parse = |s: &str, off| s.parse::<usize>().map_err(|_| bad(off, "bad header number"));
        let width = parse(fields[1], 3)?;
        let height = parse(fields[2], 3)?;
        if parse(fields[3], 3)? != 255 {
            return Err(bad(pos, "only maxval 255 is supported"));
        }
        let data = &bytes[pos + 1..];
        if data.len() != width * height * 3 {
            return Err(bad(pos + 1, "payload size mismatch"));
        }
        Ok(Image {
            height,
            width,
            values: data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        })
    }
}

pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Rounds `v` to the nearest multiple of 2⁻⁴⁰ (for |v| < 2¹¹).
///
/// Adding and removing 2¹² forces the rounding; the subtraction is exact.
/// Values on this lattice subtract exactly, which is what makes band splits
/// reconstruct bit-for-bit.
#[inline]
pub fn snap(v: f64) -> f64 {
    const SHIFT: f64 = 4096.0;
    if v >= 0.0 {
        (v + SHIFT) - SHIFT
    } else {
        (v - SHIFT) + SHIFT
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_layout() {
        let mut img = Image::filled(2, 3, [0.0, 0.5, 1.0]);
        img.set(2, 1, 0, 1.7);
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ppm.len(), 11 + 18);
        assert_eq!(&ppm[11..14], &[0, 128, 255]);
        assert_eq!(ppm[11 + 15], 255);
        let back = Image::from_ppm(&ppm).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.get(2, 1, 0), 1.0);
    }

    #[test]
    fn snap_lands_on_lattice() {
        for &v in &[0.0, 0.123456789012345, 0.999999999999, -0.3, 1e-17] {
            let s = snap(v);
            assert!((s - v).abs() <= 2f64.powi(-41));
            let scaled = s * 2f64.powi(40);
            assert_eq!(scaled, scaled.round());
        }
    }
}
