//! Image values sampled at points that ride on a landmark mesh.

use crate::autodiff::{DiffMap, Lin, Linearization, MapRef};
use crate::error::{ensure_len, Error, Result};
use crate::synth::GaussianBlur;

use super::delaunay::{bary_point, BarySample, BarySampleSet, DelaunayMesh};
use super::PixelMask;

/// A sampling position after clamping, with per-axis "inside" flags so the
/// pullback can zero the position gradient where clamping bit.
#[derive(Debug, Clone, Copy)]
pub struct SamplePos {
    pub x: f64,
    pub y: f64,
    pub free: [bool; 2],
}

impl SamplePos {
    /// Clamps to `[0.5, size − 1.5]` on both axes.
    pub fn clamped(p: [f64; 2], size: usize) -> Self {
        let hi = size as f64 - 1.5;
        let c = |v: f64| v.clamp(0.5, hi);
        SamplePos {
            x: c(p[0]),
            y: c(p[1]),
            free: [(0.5..=hi).contains(&p[0]), (0.5..=hi).contains(&p[1])],
        }
    }
}

/// Catmull-Rom weights and their derivatives for taps at offsets −1, 0, 1, 2.
fn cubic_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

struct Stencil {
    xs: [usize; 4],
    ys: [usize; 4],
    wx: [f64; 4],
    wy: [f64; 4],
    dx: [f64; 4],
    dy: [f64; 4],
}

impl Stencil {
    fn new(size: usize, pos: &SamplePos) -> Self {
        let (x0, y0) = (pos.x.floor(), pos.y.floor());
        let taps = |base: f64| [-1.0, 0.0, 1.0, 2.0].map(|o| (base + o).clamp(0.0, size as f64 - 1.0) as usize);
        let (wx, dx) = cubic_weights(pos.x - x0);
        let (wy, dy) = cubic_weights(pos.y - y0);
        Stencil {
            xs: taps(x0),
            ys: taps(y0),
            wx,
            wy,
            dx,
            dy,
        }
    }
}

/// Bicubic (Catmull-Rom) RGB value at `pos` with pixel centers on integer
/// coordinates. Exact at pixel centers and for linear ramps.
pub fn bicubic(values: &[f64], size: usize, pos: &SamplePos) -> [f64; 3] {
    let st = Stencil::new(size, pos);
    let mut out = [0.0; 3];
    for (j, &y) in st.ys.iter().enumerate() {
        for (i, &x) in st.xs.iter().enumerate() {
            let w = st.wx[i] * st.wy[j];
            let base = (y * size + x) * 3;
            for c in 0..3 {
                out[c] += w * values[base + c];
            }
        }
    }
    out
}

/// Adds the pullback of `bicubic` for cotangent `g` into `gimg`; returns the
/// gradient with respect to the (unclamped) position.
fn bicubic_pullback(values: &[f64], size: usize, pos: &SamplePos, g: [f64; 3], gimg: &mut [f64]) -> [f64; 2] {
    let st = Stencil::new(size, pos);
    let mut gp = [0.0; 2];
    for (j, &y) in st.ys.iter().enumerate() {
        for (i, &x) in st.xs.iter().enumerate() {
            let w = st.wx[i] * st.wy[j];
            let base = (y * size + x) * 3;
            for c in 0..3 {
                gimg[base + c] += g[c] * w;
                gp[0] += g[c] * st.dx[i] * st.wy[j] * values[base + c];
                gp[1] += g[c] * st.wx[i] * st.dy[j] * values[base + c];
            }
        }
    }
    if !pos.free[0] {
        gp[0] = 0.0;
    }
    if !pos.free[1] {
        gp[1] = 0.0;
    }
    gp
}

/// `x ↦ [x̃(p′_j)]_j` with `p′_j` the barycentric points of the landmarks
/// detected on `x` itself and `x̃` the image after an optional Gaussian
/// smoothing. Smoothing keeps subpixel resampling close to translation
/// invariant on sharp edges.
pub struct AlignedPhotometry {
    detector: MapRef,
    mesh: DelaunayMesh,
    samples: Vec<BarySample>,
    size: usize,
    smooth: Option<GaussianBlur>,
}

impl AlignedPhotometry {
    /// Keeps the samples whose reference position rounds to a masked pixel.
    /// `smoothing` is a blur sigma in pixels; zero samples the raw image.
    pub fn new(
        detector: MapRef,
        mesh: DelaunayMesh,
        samples: &BarySampleSet,
        reference: &[f64],
        mask: &PixelMask,
        smoothing: f64,
    ) -> Result<Self> {
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing must be non-negative, got {smoothing}")));
        }
        let size = mask.width;
        if detector.in_dim() != 3 * size * size || mask.height != size {
            return Err(Error::dims("aligned photometry image", 3 * size * size, detector.in_dim()));
        }
        ensure_len("reference landmarks", detector.out_dim(), reference)?;
        let mut kept = Vec::new();
        for s in &samples.samples {
            let p = bary_point(reference, &mesh, s.facet, s.coords)?;
            let (x, y) = (p[0].round(), p[1].round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < size && (y as usize) < size && mask.contains(x as usize, y as usize)
            {
                kept.push(s.clone());
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyMask("no mesh samples fall inside the aligned-photometry mask".into()));
        }
        Ok(AlignedPhotometry {
            detector,
            mesh,
            samples: kept,
            size,
            smooth: (smoothing > 0.0).then(|| GaussianBlur::new(size, smoothing)),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    pub fn mesh(&self) -> &DelaunayMesh {
        &self.mesh
    }

    /// Clamped sampling positions for landmarks `q`.
    pub fn positions(&self, q: &[f64]) -> Result<Vec<SamplePos>> {
        self.samples
            .iter()
            .map(|s| Ok(SamplePos::clamped(bary_point(q, &self.mesh, s.facet, s.coords)?, self.size)))
            .collect()
    }
}

impl DiffMap for AlignedPhotometry {
    fn in_dim(&self) -> usize {
        self.detector.in_dim()
    }
    fn out_dim(&self) -> usize {
        3 * self.samples.len()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("aligned photometry input", self.in_dim(), x)?;
        let det = self.detector.linearize(x)?;
        let pos = self.positions(det.value())?;
        let values = match &self.smooth {
            Some(b) => b.apply(x, false),
            None => x.to_vec(),
        };
        let y = pos.iter().flat_map(|p| bicubic(&values, self.size, p)).collect();
        Ok(Lin::boxed(y, move |c: &[f64]| {
            let mut gimg = vec![0.0; values.len()];
            let mut gq = vec![0.0; self.detector.out_dim()];
            for (j, (s, p)) in self.samples.iter().zip(&pos).enumerate() {
                let g = [c[3 * j], c[3 * j + 1], c[3 * j + 2]];
                let gp = bicubic_pullback(&values, self.size, p, g, &mut gimg);
                for (k, &v) in self.mesh.facets[s.facet].iter().enumerate() {
                    gq[2 * v] += s.coords[k] * gp[0];
                    gq[2 * v + 1] += s.coords[k] * gp[1];
                }
            }
            if let Some(b) = &self.smooth {
                gimg = b.apply(&gimg, true);
            }
            let through = det.vjp(&gq)?;
            Ok(gimg.iter().zip(&through).map(|(a, b)| a + b).collect())
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bicubic_hits_pixels_and_midpoints() {
        let n = 4;
        let vals: Vec<f64> = (0..n * n).flat_map(|i| [i as f64, 0.0, 1.0]).collect();
        let p = SamplePos::clamped([2.0, 1.0], n);
        assert_eq!(bicubic(&vals, n, &p), [6.0, 0.0, 1.0]);
        let p = SamplePos::clamped([1.5, 1.5], n);
        assert_eq!(bicubic(&vals, n, &p)[0], 7.5);
        let p = SamplePos::clamped([-3.0, 9.0], n);
        assert_eq!((p.x, p.y, p.free), (0.5, 2.5, [false, false]));
    }

    #[test]
    fn position_gradient_matches_differences() {
        let n = 6;
        let vals: Vec<f64> = (0..3 * n * n).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let g = [0.3, -1.2, 0.7];
        let at = |x: f64, y: f64| {
            let v = bicubic(&vals, n, &SamplePos::clamped([x, y], n));
            g[0] * v[0] + g[1] * v[1] + g[2] * v[2]
        };
        let (x, y, h) = (2.3, 3.6, 1e-6);
        let mut gimg = vec![0.0; vals.len()];
        let gp = bicubic_pullback(&vals, n, &SamplePos::clamped([x, y], n), g, &mut gimg);
        assert!((gp[0] - (at(x + h, y) - at(x - h, y)) / (2.0 * h)).abs() < 1e-8);
        assert!((gp[1] - (at(x, y + h) - at(x, y - h)) / (2.0 * h)).abs() < 1e-8);
    }
}
