//! A procedural, fully differentiable toy face generator with an input space
//! and a style space, plus differentiable analysis models (parser, landmark
//! detector, identity embedder, attribute classifiers).
//!
//! Rendering: each region is a soft ellipse `σ(β(1 − q(p)))`; regions are
//! composited by a softmax over `logit_r · indicator_r(p)` against a constant
//! background logit, blurred by a small Gaussian, and finally snapped to a
//! 2⁻⁴⁰ lattice (the snap is treated as identity by the pullback).

pub mod layout;
pub mod models;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{compose, DiffMap, Lin, Linearization, MapRef};
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::image::{snap, Image};
use crate::linalg::{orthonormalize, Matrix};
use crate::rng::{normal_vec, stream};
use layout::{Field, Region, Target, BLOB_COUNT, CANONICAL, PARAM_COUNT};

pub use models::{AnalysisModels, LandmarkRegion, ParseRegion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    Input,
    Style,
}

impl LatentSpace {
    pub fn name(self) -> &'static str {
        match self {
            LatentSpace::Input => "input",
            LatentSpace::Style => "style",
        }
    }
}

impl std::str::FromStr for LatentSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(LatentSpace::Input),
            "style" => Ok(LatentSpace::Style),
            other => Err(Error::InvalidArgument(format!("unknown latent space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentSpaceSpec {
    pub space: LatentSpace,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub space: LatentSpaceSpec,
    pub u: Vec<f64>,
}

impl LatentCode {
    pub fn new(space: LatentSpaceSpec, u: Vec<f64>) -> Result<Self> {
        ensure_len("latent code", space.dim, &u)?;
        ensure_finite("latent code", &u)?;
        Ok(LatentCode { space, u })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub input_dim: usize,
    pub style_dim: usize,
    pub image_size: usize,
    /// Soft-ellipse boundary sharpness.
    pub beta: f64,
    /// Soft-argmax temperature of the landmark detector.
    pub tau: f64,
    pub blur_sigma: f64,
    /// Relative strength of cross-group leakage in the input→style mapper.
    pub mapper_leak: f64,
    /// Subpixel samples per axis when rendering.
    pub supersample: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            input_dim: layout::DEFAULT_INPUT_DIM,
            style_dim: layout::DEFAULT_STYLE_DIM,
            image_size: 64,
            beta: 2.0,
            tau: 0.05,
            blur_sigma: 0.5,
            mapper_leak: 0.05,
            supersample: 3,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.style_dim != layout::DEFAULT_STYLE_DIM {
            return Err(Error::Config(format!(
                "style_dim must be {} (the blob wiring is fixed), got {}",
                layout::DEFAULT_STYLE_DIM,
                self.style_dim
            )));
        }
        if self.input_dim == 0 || self.input_dim > self.style_dim {
            return Err(Error::Config(format!(
                "input_dim must be in 1..={}, got {}",
                self.style_dim, self.input_dim
            )));
        }
        if self.image_size < 16 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            )));
        }
        if !(1..=8).contains(&self.supersample) {
            return Err(Error::Config(format!("supersample must be in 1..=8, got {}", self.supersample)));
        }
        for (name, v) in [("beta", self.beta), ("tau", self.tau), ("blur_sigma", self.blur_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mapper_leak >= 0.0) {
            return Err(Error::Config("mapper_leak must be non-negative".into()));
        }
        Ok(())
    }
}

/// Geometry and color of one blob after applying the style wiring.
#[derive(Debug, Clone, Copy)]
struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    color: [f64; 3],
    logit: f64,
}

/// Separable Gaussian blur of an RGB image with clamped borders.
#[derive(Debug, Clone)]
pub struct GaussianBlur {
    size: usize,
    kernel: Vec<f64>,
}

impl GaussianBlur {
    pub fn new(size: usize, sigma: f64) -> Self {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        GaussianBlur { size, kernel }
    }

    /// `transpose` applies the adjoint.
    pub fn apply(&self, img: &[f64], transpose: bool) -> Vec<f64> {
        let n = self.size;
        let r = (self.kernel.len() / 2) as isize;
        let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
        let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
            let mut dst = vec![0.0; src.len()];
            for y in 0..n {
                for x in 0..n {
                    for (t, &k) in self.kernel.iter().enumerate() {
                        let off = t as isize - r;
                        let (sx, sy) = if horizontal {
                            (clamp(x as isize + off), y)
                        } else {
                            (x, clamp(y as isize + off))
                        };
                        let (out_i, in_i) = if transpose {
                            ((sy * n + sx) * 3, (y * n + x) * 3)
                        } else {
                            ((y * n + x) * 3, (sy * n + sx) * 3)
                        };
                        for c in 0..3 {
                            dst[out_i + c] += k * src[in_i + c];
                        }
                    }
                }
            }
            dst
        };
        if transpose {
            pass(&pass(img, false), true)
        } else {
            pass(&pass(img, true), false)
        }
    }

}

/// The style → image map.
pub struct Renderer {
    size: usize,
    beta: f64,
    blur: GaussianBlur,
    base: Vec<f64>,
    /// `(param, style, coefficient)`.
    wiring: Vec<(usize, usize, f64)>,
    style_dim: usize,
    /// Samples per pixel along each axis, box-averaged.
    supersample: usize,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Renderer {
    fn new(params: &GeneratorParams) -> Self {
        let scale = params.image_size as f64 / layout::CANVAS;
        let mut base = vec![0.0; PARAM_COUNT];
        for blob in &CANONICAL {
            let r = blob.region;
            base[layout::param_index(r, Field::Cx)] = blob.center[0] * scale;
            base[layout::param_index(r, Field::Cy)] = blob.center[1] * scale;
            base[layout::param_index(r, Field::LogA)] = (blob.axes[0] * scale).ln();
            base[layout::param_index(r, Field::LogB)] = (blob.axes[1] * scale).ln();
            base[layout::param_index(r, Field::Theta)] = blob.theta;
            for c in 0..3 {
                base[layout::param_index(r, Field::Red) + c] = logit(blob.color[c]);
            }
        }
        for c in 0..3 {
            base[layout::background_index(c)] = logit(layout::BACKGROUND_COLOR[c]);
        }

        let mut wiring = Vec::new();
        for (style, target, coef) in layout::style_wiring() {
            match target {
                Target::Blob(r, f) => {
                    let k = if matches!(f, Field::Cx | Field::Cy) { coef * scale } else { coef };
                    wiring.push((layout::param_index(r, f), style, k));
                }
                Target::BackgroundRamp(axis) => wiring.push((layout::ramp_index(axis), style, coef)),
                Target::AllCenters(axis) => {
                    let f = if axis == 0 { Field::Cx } else { Field::Cy };
                    for r in Region::ALL {
                        wiring.push((layout::param_index(r, f), style, coef * scale));
                    }
                    wiring.push((layout::offset_index(axis), style, coef * scale));
                }
            }
        }

        Renderer {
            size: params.image_size,
            beta: params.beta,
            blur: GaussianBlur::new(params.image_size, params.blur_sigma),
            base,
            wiring,
            style_dim: params.style_dim,
            supersample: params.supersample,
        }
    }

    fn params(&self, style: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for &(pi, si, k) in &self.wiring {
            p[pi] += k * style[si];
        }
        p
    }

    fn blobs(&self, p: &[f64]) -> [Blob; BLOB_COUNT] {
        Region::ALL.map(|r| {
            let at = |f: Field| p[layout::param_index(r, f)];
            let theta = at(Field::Theta);
            Blob {
                cx: at(Field::Cx),
                cy: at(Field::Cy),
                a: at(Field::LogA).exp(),
                b: at(Field::LogB).exp(),
                cos: theta.cos(),
                sin: theta.sin(),
                color: [sigmoid(at(Field::Red)), sigmoid(at(Field::Green)), sigmoid(at(Field::Blue))],
                logit: layout::region_logit(r),
            }
        })
    }

    fn background(&self, p: &[f64]) -> Background {
        Background {
            logits: [0, 1, 2].map(|c| p[layout::background_index(c)]),
            ramp: [0, 1].map(|a| p[layout::ramp_index(a)]),
            offset: [0, 1].map(|a| p[layout::offset_index(a)]),
            half: self.size as f64 / 2.0,
        }
    }

    /// Subpixel offsets along one axis, centered on the pixel.
    fn offsets(&self) -> Vec<f64> {
        let s = self.supersample as f64;
        (0..self.supersample).map(|i| (i as f64 + 0.5) / s - 0.5).collect()
    }

    fn sample(&self, blobs: &[Blob; BLOB_COUNT], bg: &Background, px: f64, py: f64) -> Sample {
        let mut logits = [0.0; BLOB_COUNT + 1];
        logits[BLOB_COUNT] = layout::BACKGROUND_LOGIT;
        let mut s = [0.0; BLOB_COUNT];
        for (k, blob) in blobs.iter().enumerate() {
            let (dx, dy) = (px - blob.cx, py - blob.cy);
            let u1 = blob.cos * dx + blob.sin * dy;
            let u2 = -blob.sin * dx + blob.cos * dy;
            let q = (u1 / blob.a).powi(2) + (u2 / blob.b).powi(2);
            s[k] = sigmoid(self.beta * (1.0 - q));
            logits[k] = blob.logit * s[k];
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - m).exp();
            total += *l;
        }
        let w = logits.map(|l| l / total);
        let bg = bg.color(px, py);
        let mut value = [0.0; 3];
        for (c, v) in value.iter_mut().enumerate() {
            *v = w[BLOB_COUNT] * bg[c];
            for (k, blob) in blobs.iter().enumerate() {
                *v += w[k] * blob.color[c];
            }
        }
        Sample { s, w, bg, value }
    }

    fn forward(&self, style: &[f64]) -> RenderState {
        let p = self.params(style);
        let blobs = self.blobs(&p);
        let bg = self.background(&p);
        let n = self.size;
        let offs = self.offsets();
        let norm = 1.0 / (offs.len() * offs.len()) as f64;
        let mut composite = vec![0.0; n * n * 3];
        for y in 0..n {
            for x in 0..n {
                let pix = y * n + x;
                for oy in &offs {
                    for ox in &offs {
                        let smp = self.sample(&blobs, &bg, x as f64 + ox, y as f64 + oy);
                        for c in 0..3 {
                            composite[pix * 3 + c] += norm * smp.value[c];
                        }
                    }
                }
            }
        }
        let image = self.blur.apply(&composite, false).into_iter().map(snap).collect();
        RenderState { blobs, bg, image }
    }

    fn pullback(&self, st: &RenderState, cot: &[f64]) -> Vec<f64> {
        let n = self.size;
        let offs = self.offsets();
        let norm = 1.0 / (offs.len() * offs.len()) as f64;
        let g = self.blur.apply(cot, true);
        let mut dp = vec![0.0; PARAM_COUNT];
        for y in 0..n {
            for x in 0..n {
                let pix = y * n + x;
                let gp = [g[pix * 3] * norm, g[pix * 3 + 1] * norm, g[pix * 3 + 2] * norm];
                if gp == [0.0; 3] {
                    continue;
                }
                for oy in &offs {
                    for ox in &offs {
                        let (px, py) = (x as f64 + ox, y as f64 + oy);
                        let smp = self.sample(&st.blobs, &st.bg, px, py);
                        self.sample_pullback(st, &smp, px, py, gp, &mut dp);
                    }
                }
            }
        }
        let mut ds = vec![0.0; self.style_dim];
        for &(pi, si, k) in &self.wiring {
            ds[si] += k * dp[pi];
        }
        ds
    }

    fn sample_pullback(&self, st: &RenderState, smp: &Sample, px: f64, py: f64, gp: [f64; 3], dp: &mut [f64]) {
        let w = &smp.w;
        let wb = w[BLOB_COUNT];
        let (rx, ry) = st.bg.coords(px, py);
        for c in 0..3 {
            let d = wb * gp[c] * smp.bg[c] * (1.0 - smp.bg[c]);
            dp[layout::background_index(c)] += d;
            dp[layout::ramp_index(0)] += d * rx;
            dp[layout::ramp_index(1)] += d * ry;
            dp[layout::offset_index(0)] -= d * st.bg.ramp[0] / st.bg.half;
            dp[layout::offset_index(1)] -= d * st.bg.ramp[1] / st.bg.half;
        }
        for (k, blob) in st.blobs.iter().enumerate() {
            let region = Region::ALL[k];
            let wk = w[k];
            let mut dlogit = 0.0;
            for c in 0..3 {
                let col = blob.color[c];
                dp[layout::param_index(region, Field::Red) + c] += wk * gp[c] * col * (1.0 - col);
                dlogit += wk * (col - smp.value[c]) * gp[c];
            }
            let s = smp.s[k];
            let dq = -dlogit * blob.logit * self.beta * s * (1.0 - s);
            if dq == 0.0 {
                continue;
            }
            let (dx, dy) = (px - blob.cx, py - blob.cy);
            let u1 = blob.cos * dx + blob.sin * dy;
            let u2 = -blob.sin * dx + blob.cos * dy;
            let (a2, b2) = (blob.a * blob.a, blob.b * blob.b);
            let dq_du1 = 2.0 * u1 / a2;
            let dq_du2 = 2.0 * u2 / b2;
            dp[layout::param_index(region, Field::Cx)] += dq * (-blob.cos * dq_du1 + blob.sin * dq_du2);
            dp[layout::param_index(region, Field::Cy)] += dq * (-blob.sin * dq_du1 - blob.cos * dq_du2);
            dp[layout::param_index(region, Field::LogA)] += dq * (-2.0 * u1 * u1 / a2);
            dp[layout::param_index(region, Field::LogB)] += dq * (-2.0 * u2 * u2 / b2);
            dp[layout::param_index(region, Field::Theta)] += dq * 2.0 * u1 * u2 * (1.0 / a2 - 1.0 / b2);
        }
    }
}

struct Sample {
    s: [f64; BLOB_COUNT],
    w: [f64; BLOB_COUNT + 1],
    bg: [f64; 3],
    value: [f64; 3],
}

/// Background color `σ(logit_c + ramp_x·x + ramp_y·y)` over centered
/// coordinates in `[-1, 1]`.
struct Background {
    logits: [f64; 3],
    ramp: [f64; 2],
    /// Global translation; the ramps move with the face.
    offset: [f64; 2],
    half: f64,
}

impl Background {
    fn coords(&self, px: f64, py: f64) -> (f64, f64) {
        (
            (px + 0.5 - self.offset[0]) / self.half - 1.0,
            (py + 0.5 - self.offset[1]) / self.half - 1.0,
        )
    }

    fn color(&self, px: f64, py: f64) -> [f64; 3] {
        let (x, y) = self.coords(px, py);
        let shift = self.ramp[0] * x + self.ramp[1] * y;
        self.logits.map(|l| sigmoid(l + shift))
    }
}

struct RenderState {
    blobs: [Blob; BLOB_COUNT],
    bg: Background,
    image: Vec<f64>,
}

struct RenderLin<'a> {
    renderer: &'a Renderer,
    state: RenderState,
}

impl Linearization for RenderLin<'_> {
    fn value(&self) -> &[f64] {
        &self.state.image
    }
    fn vjp(&self, cot: &[f64]) -> Result<Vec<f64>> {
        ensure_len("renderer cotangent", self.state.image.len(), cot)?;
        Ok(self.renderer.pullback(&self.state, cot))
    }
}

impl DiffMap for Renderer {
    fn in_dim(&self) -> usize {
        self.style_dim
    }
    fn out_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("style code", self.style_dim, x)?;
        ensure_finite("style code", x)?;
        Ok(Box::new(RenderLin {
            renderer: self,
            state: self.forward(x),
        }))
    }
}

/// The input → style mapper `s = A₂·tanh(A₁·z)`.
pub struct Mapper {
    first: Matrix,
    second: Matrix,
}

impl Mapper {
    fn new(params: &GeneratorParams, seed: u64) -> Result<Self> {
        let (din, dstyle) = (params.input_dim, params.style_dim);
        let mut rng = stream(seed, "mapper");
        let gauss = Matrix::new(din, din, normal_vec(&mut rng, din * din, 1.0))?;
        let first = orthonormalize(&gauss, 1e-12)?.basis;
        if first.cols() != din {
            return Err(Error::Degenerate("mapper rotation is rank deficient".into()));
        }
        let groups = layout::mapper_groups();
        let mut cols = Vec::with_capacity(din);
        for j in 0..din {
            let mut d = vec![0.0; dstyle];
            for &i in &groups[j % groups.len()] {
                d[i] = normal_vec(&mut rng, 1, 1.0)[0];
            }
            let dn = crate::linalg::norm(&d);
            let leak = normal_vec(&mut rng, dstyle, 1.0);
            let ln = crate::linalg::norm(&leak);
            let gain = 1.0 - 0.7 * j as f64 / (din.max(2) - 1) as f64;
            let mut col: Vec<f64> = d.iter().zip(&leak).map(|(a, b)| a / dn + params.mapper_leak * b / ln).collect();
            let cn = crate::linalg::norm(&col);
            col.iter_mut().for_each(|v| *v *= gain / cn);
            cols.push(col);
        }
        Ok(Mapper {
            first,
            second: Matrix::from_cols(dstyle, &cols)?,
        })
    }
}

impl DiffMap for Mapper {
    fn in_dim(&self) -> usize {
        self.first.cols()
    }
    fn out_dim(&self) -> usize {
        self.second.rows()
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("input code", self.in_dim(), x)?;
        ensure_finite("input code", x)?;
        let hidden: Vec<f64> = self.first.mat_vec(x)?.into_iter().map(f64::tanh).collect();
        let y = self.second.mat_vec(&hidden)?;
        Ok(Lin::boxed(y, move |c: &[f64]| {
            let mut dh = self.second.tr_mat_vec(c)?;
            dh.iter_mut().zip(&hidden).for_each(|(d, h)| *d *= 1.0 - h * h);
            self.first.tr_mat_vec(&dh)
        }))
    }
}

/// The toy generator: renderer plus mapper, both fixed by the seed.
#[derive(Clone)]
pub struct ToyGenerator {
    pub params: GeneratorParams,
    pub seed: u64,
    renderer: Arc<Renderer>,
    mapper: Arc<Mapper>,
}

impl ToyGenerator {
    pub fn new(params: GeneratorParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(ToyGenerator {
            renderer: Arc::new(Renderer::new(&params)),
            mapper: Arc::new(Mapper::new(&params, seed)?),
            params,
            seed,
        })
    }

    pub fn size(&self) -> usize {
        self.params.image_size
    }

    pub fn space(&self, space: LatentSpace) -> LatentSpaceSpec {
        let dim = match space {
            LatentSpace::Input => self.params.input_dim,
            LatentSpace::Style => self.params.style_dim,
        };
        LatentSpaceSpec { space, dim }
    }

    pub fn renderer(&self) -> MapRef {
        self.renderer.clone()
    }

    pub fn mapper(&self) -> MapRef {
        self.mapper.clone()
    }

    /// The generator as a map from the given latent space to image values.
    pub fn map(&self, space: LatentSpace) -> MapRef {
        match space {
            LatentSpace::Style => self.renderer(),
            LatentSpace::Input => compose(self.renderer(), self.mapper()).expect("mapper output matches renderer input"),
        }
    }

    pub fn generate(&self, code: &LatentCode) -> Result<Image> {
        let expected = self.space(code.space.space);
        ensure_len("latent code", expected.dim, &code.u)?;
        let values = self.map(code.space.space).eval(&code.u)?;
        Ok(Image {
            height: self.size(),
            width: self.size(),
            values,
        })
    }

    pub fn render_style(&self, style: &[f64]) -> Result<Image> {
        self.generate(&LatentCode::new(self.space(LatentSpace::Style), style.to_vec())?)
    }

    /// Seeded codes with i.i.d. normal entries of the given standard deviation.
    pub fn sample_codes(&self, space: LatentSpace, count: usize, std: f64, seed: u64, stream_name: &str) -> Vec<Vec<f64>> {
        let dim = self.space(space).dim;
        let mut rng = stream(seed, stream_name);
        (0..count).map(|_| normal_vec(&mut rng, dim, std)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::vjp_check;

    fn generator() -> ToyGenerator {
        ToyGenerator::new(GeneratorParams::default(), 7).unwrap()
    }

    #[test]
    fn zero_style_is_canonical_and_deterministic() {
        let g = generator();
        let a = g.render_style(&[0.0; 60]).unwrap();
        let b = g.render_style(&[0.0; 60]).unwrap();
        assert_eq!(a, b);
        // background corner, skin at the cheek, lips below the nose
        let bg = a.rgb(0);
        for c in 0..3 {
            assert!((bg[c] - layout::BACKGROUND_COLOR[c]).abs() < 1e-3, "{bg:?}");
        }
        let cheek = a.rgb(40 * 64 + 22);
        assert!((cheek[0] - 0.95).abs() < 0.02 && (cheek[1] - 0.80).abs() < 0.02, "{cheek:?}");
        let lip = a.rgb(51 * 64 + 32);
        assert!(lip[0] > 0.6 && lip[1] < 0.3, "{lip:?}");
    }

    #[test]
    fn pixels_stay_inside_unit_interval() {
        let g = generator();
        for code in g.sample_codes(LatentSpace::Style, 4, 1.5, 1, "range") {
            let code: Vec<f64> = code.into_iter().map(|v: f64| v.clamp(-3.0, 3.0)).collect();
            let img = g.render_style(&code).unwrap();
            assert!(img.values.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn renderer_vjp_matches_finite_differences() {
        let g = generator();
        let codes = g.sample_codes(LatentSpace::Style, 2, 0.5, 3, "vjp");
        let cot = normal_vec(&mut stream(3, "cot"), 64 * 64 * 3, 1.0);
        for u in codes {
            let err = vjp_check(g.renderer().as_ref(), &u, &cot, 1e-5).unwrap();
            assert!(err < 1e-4, "relative vjp error {err}");
        }
    }

    #[test]
    fn input_space_vjp_matches_finite_differences() {
        let g = generator();
        let z = g.sample_codes(LatentSpace::Input, 1, 0.5, 4, "vjp").remove(0);
        let cot = normal_vec(&mut stream(4, "cot"), 64 * 64 * 3, 1.0);
        let err = vjp_check(g.map(LatentSpace::Input).as_ref(), &z, &cot, 1e-5).unwrap();
        assert!(err < 1e-4, "relative vjp error {err}");
        assert_eq!(g.mapper().eval(&vec![0.0; 24]).unwrap(), vec![0.0; 60]);
    }

    #[test]
    fn wrong_code_length_is_rejected() {
        let g = generator();
        assert!(g.render_style(&[0.0; 59]).is_err());
        assert!(ToyGenerator::new(GeneratorParams { style_dim: 61, ..Default::default() }, 1).is_err());
    }
}
