use crate::error::{Error, Result};

/// A binary per-pixel mask, frozen once computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "pixel mask",
                expected: height * width,
                actual: bits.len(),
            });
        }
        Ok(PixelMask { height, width, bits })
    }

    pub fn full(height: usize, width: usize) -> Self {
        PixelMask {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        PixelMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn complement(&self) -> Self {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn union(&self, other: &PixelMask) -> Self {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// `(x_min, y_min, x_max, y_max)` of the set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = (i % self.width, i / self.width);
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }

    /// Zeroes every channel of pixels outside the mask.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.bits[i / 3] { v } else { 0.0 })
            .collect()
    }
}

/// Selected landmark indices out of `len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkMask {
    pub bits: Vec<bool>,
}

impl LandmarkMask {
    pub fn all(len: usize) -> Self {
        LandmarkMask { bits: vec![true; len] }
    }

    pub fn complement(&self) -> Self {
        LandmarkMask {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn selected(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect()
    }

    /// Output coordinates (x then y per landmark) picked out of the detector output.
    pub fn coordinate_indices(&self) -> Vec<usize> {
        self.selected().into_iter().flat_map(|i| [2 * i, 2 * i + 1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_partitions() {
        let m = PixelMask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(m.complement().complement(), m);
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let a = m.apply(&x);
        let b = m.complement().apply(&x);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
        assert_eq!(sum, x);
        assert_eq!(m.union(&m.complement()), PixelMask::full(2, 2));
        assert_eq!(m.bounding_box(), Some((0, 0, 1, 1)));
    }
}
