//! Maps from image values (`3·H·W`, interleaved RGB) to criterion outputs.

use crate::autodiff::{DiffMap, Lin, Linearization};
use crate::error::{ensure_len, Error, Result};
use crate::image::snap;

use super::PixelMask;

/// `x ↦ x ⊙ m`, keeping the full image layout.
pub struct MaskedPixels {
    pub mask: PixelMask,
}

impl DiffMap for MaskedPixels {
    fn in_dim(&self) -> usize {
        3 * self.mask.bits.len()
    }
    fn out_dim(&self) -> usize {
        3 * self.mask.bits.len()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("masked photometry input", self.in_dim(), x)?;
        Ok(Lin::boxed(self.mask.apply(x), move |c: &[f64]| Ok(self.mask.apply(c))))
    }
}

fn masked_pixels(mask: &PixelMask, what: &str) -> Result<Vec<usize>> {
    let idx: Vec<usize> = mask.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::EmptyMask(what.to_string()));
    }
    Ok(idx)
}

fn channel_means(x: &[f64], idx: &[usize]) -> [f64; 3] {
    let mut m = [0.0; 3];
    for &p in idx {
        for c in 0..3 {
            m[c] += x[3 * p + c];
        }
    }
    m.map(|v| v / idx.len() as f64)
}

/// Per-channel mean over the masked pixels.
pub struct MaskedAvgColor {
    pixels: Vec<usize>,
    len: usize,
}

impl MaskedAvgColor {
    pub fn new(mask: &PixelMask) -> Result<Self> {
        Ok(MaskedAvgColor {
            pixels: masked_pixels(mask, "masked average color")?,
            len: mask.bits.len(),
        })
    }
}

impl DiffMap for MaskedAvgColor {
    fn in_dim(&self) -> usize {
        3 * self.len
    }
    fn out_dim(&self) -> usize {
        3
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("masked average color input", self.in_dim(), x)?;
        let m = channel_means(x, &self.pixels);
        Ok(Lin::boxed(m.to_vec(), move |c: &[f64]| {
            let k = 1.0 / self.pixels.len() as f64;
            let mut g = vec![0.0; 3 * self.len];
            for &p in &self.pixels {
                for ch in 0..3 {
                    g[3 * p + ch] = k * c[ch];
                }
            }
            Ok(g)
        }))
    }
}

/// Masked pixel values minus their masked mean, stacked pixel by pixel.
pub struct MaskedResidual {
    pixels: Vec<usize>,
    len: usize,
}

impl MaskedResidual {
    pub fn new(mask: &PixelMask) -> Result<Self> {
        Ok(MaskedResidual {
            pixels: masked_pixels(mask, "masked residual")?,
            len: mask.bits.len(),
        })
    }
}

impl DiffMap for MaskedResidual {
    fn in_dim(&self) -> usize {
        3 * self.len
    }
    fn out_dim(&self) -> usize {
        3 * self.pixels.len()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("masked residual input", self.in_dim(), x)?;
        let m = channel_means(x, &self.pixels);
        let y = self.pixels.iter().flat_map(|&p| (0..3).map(move |c| x[3 * p + c] - m[c])).collect();
        Ok(Lin::boxed(y, move |c: &[f64]| {
            let mut total = [0.0; 3];
            for k in 0..self.pixels.len() {
                for ch in 0..3 {
                    total[ch] += c[3 * k + ch];
                }
            }
            let n = self.pixels.len() as f64;
            let mut g = vec![0.0; 3 * self.len];
            for (k, &p) in self.pixels.iter().enumerate() {
                for ch in 0..3 {
                    g[3 * p + ch] = c[3 * k + ch] - total[ch] / n;
                }
            }
            Ok(g)
        }))
    }
}

/// Box downsampling by `factor` followed by bilinear upsampling with
/// half-pixel centers (coarse coordinates clamped at the borders).
#[derive(Debug, Clone)]
pub struct LowPass {
    size: usize,
    factor: usize,
    /// Per fine coordinate: two coarse taps and their weights.
    taps: Vec<[(usize, f64); 2]>,
}

impl LowPass {
    pub fn new(size: usize, factor: usize) -> Result<Self> {
        if factor == 0 || size % factor != 0 {
            return Err(Error::InvalidArgument(format!("factor {factor} does not divide image size {size}")));
        }
        let coarse = size / factor;
        let taps = (0..size)
            .map(|x| {
                let src = ((x as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (coarse - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(coarse - 1);
                let w = src - i0 as f64;
                [(i0, 1.0 - w), (i1, w)]
            })
            .collect();
        Ok(LowPass { size, factor, taps })
    }

    fn down(&self, x: &[f64]) -> Vec<f64> {
        let (n, f) = (self.size, self.factor);
        let m = n / f;
        let k = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; m * m * 3];
        for y in 0..n {
            for xx in 0..n {
                let dst = ((y / f) * m + xx / f) * 3;
                for c in 0..3 {
                    out[dst + c] += k * x[(y * n + xx) * 3 + c];
                }
            }
        }
        out
    }

    fn down_t(&self, g: &[f64]) -> Vec<f64> {
        let (n, f) = (self.size, self.factor);
        let m = n / f;
        let k = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; n * n * 3];
        for y in 0..n {
            for xx in 0..n {
                let src = ((y / f) * m + xx / f) * 3;
                for c in 0..3 {
                    out[(y * n + xx) * 3 + c] = k * g[src + c];
                }
            }
        }
        out
    }

    fn up(&self, coarse: &[f64]) -> Vec<f64> {
        let n = self.size;
        let m = n / self.factor;
        let mut out = vec![0.0; n * n * 3];
        for y in 0..n {
            for x in 0..n {
                for &(iy, wy) in &self.taps[y] {
                    for &(ix, wx) in &self.taps[x] {
                        for c in 0..3 {
                            out[(y * n + x) * 3 + c] += wy * wx * coarse[(iy * m + ix) * 3 + c];
                        }
                    }
                }
            }
        }
        out
    }

    fn up_t(&self, g: &[f64]) -> Vec<f64> {
        let n = self.size;
        let m = n / self.factor;
        let mut out = vec![0.0; m * m * 3];
        for y in 0..n {
            for x in 0..n {
                for &(iy, wy) in &self.taps[y] {
                    for &(ix, wx) in &self.taps[x] {
                        for c in 0..3 {
                            out[(iy * m + ix) * 3 + c] += wy * wx * g[(y * n + x) * 3 + c];
                        }
                    }
                }
            }
        }
        out
    }

    /// The low band, snapped to the same lattice as generator output.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.up(&self.down(x)).into_iter().map(snap).collect()
    }

    fn pullback(&self, c: &[f64]) -> Vec<f64> {
        self.down_t(&self.up_t(c))
    }
}

impl DiffMap for LowPass {
    fn in_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn out_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("low-pass input", self.in_dim(), x)?;
        Ok(Lin::boxed(self.apply(x), move |c: &[f64]| Ok(self.pullback(c))))
    }
}

/// `x − low(x)`.
pub struct HighPass(pub LowPass);

impl DiffMap for HighPass {
    fn in_dim(&self) -> usize {
        self.0.in_dim()
    }
    fn out_dim(&self) -> usize {
        self.0.out_dim()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("high-pass input", self.in_dim(), x)?;
        let low = self.0.apply(x);
        let y = x.iter().zip(&low).map(|(a, b)| a - b).collect();
        Ok(Lin::boxed(y, move |c: &[f64]| {
            let back = self.0.pullback(c);
            Ok(c.iter().zip(&back).map(|(a, b)| a - b).collect())
        }))
    }
}
