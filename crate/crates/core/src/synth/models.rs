//! Differentiable stand-ins for the face analysis networks.
//!
//! Everything here works from a fixed table of region colors. The parser adds
//! position priors and takes a hard argmax (its masks are constants). The
//! landmark detector is a color-only soft classifier whose per-region soft
//! moments give a centroid and four principal-axis endpoints per region.

use std::sync::Arc;

use crate::autodiff::{compose, Affine, DiffMap, Lin, Linearization, MapRef, Select};
use crate::criteria::PixelMask;
use crate::error::{ensure_len, Error, Result};
use crate::image::Image;
use crate::linalg::{orthonormalize, Matrix};
use crate::rng::{normal_vec, stream};

use super::layout::{self, Region, CANONICAL};
use super::{sigmoid, GaussianBlur, GeneratorParams};

/// Parser classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseRegion {
    Background,
    Hair,
    Skin,
    LeftEye,
    RightEye,
    Nose,
    Lips,
    Mouth,
}

impl ParseRegion {
    pub const ALL: [ParseRegion; 8] = [
        ParseRegion::Background,
        ParseRegion::Hair,
        ParseRegion::Skin,
        ParseRegion::LeftEye,
        ParseRegion::RightEye,
        ParseRegion::Nose,
        ParseRegion::Lips,
        ParseRegion::Mouth,
    ];

    fn blob(self) -> Option<Region> {
        match self {
            ParseRegion::Background => None,
            ParseRegion::Hair => Some(Region::Hair),
            ParseRegion::Skin => Some(Region::Skin),
            ParseRegion::LeftEye => Some(Region::LeftEye),
            ParseRegion::RightEye => Some(Region::RightEye),
            ParseRegion::Nose => Some(Region::Nose),
            ParseRegion::Lips => Some(Region::Lips),
            ParseRegion::Mouth => Some(Region::Mouth),
        }
    }

    /// Position prior width at 64×64, `None` for no prior.
    fn prior_width(self) -> Option<f64> {
        match self {
            ParseRegion::Background => None,
            ParseRegion::Hair | ParseRegion::Skin => Some(25.0),
            ParseRegion::LeftEye | ParseRegion::RightEye | ParseRegion::Nose => Some(8.0),
            ParseRegion::Lips | ParseRegion::Mouth => Some(10.0),
        }
    }
}

/// Named masks understood by [`Parsing::mask`]; prefix `!` for the complement.
pub const MASK_NAMES: [&str; 10] = [
    "background",
    "hair",
    "skin",
    "left_eye",
    "right_eye",
    "eye",
    "nose",
    "lip",
    "mouth",
    "face",
];

/// Hard per-pixel labels of one image.
#[derive(Debug, Clone)]
pub struct Parsing {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<ParseRegion>,
}

impl Parsing {
    pub fn region_mask(&self, regions: &[ParseRegion]) -> PixelMask {
        PixelMask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|l| regions.contains(l)).collect(),
        }
    }

    pub fn mask(&self, name: &str) -> Result<PixelMask> {
        if let Some(rest) = name.strip_prefix('!') {
            return Ok(self.mask(rest)?.complement());
        }
        use ParseRegion::*;
        let regions: &[ParseRegion] = match name {
            "background" => &[Background],
            "hair" => &[Hair],
            "skin" => &[Skin],
            "left_eye" => &[LeftEye],
            "right_eye" => &[RightEye],
            "eye" => &[LeftEye, RightEye],
            "nose" => &[Nose],
            "lip" => &[Lips],
            "mouth" => &[Lips, Mouth],
            "face" => &[Skin, LeftEye, RightEye, Nose, Lips, Mouth],
            other => return Err(Error::UnknownRegion(other.to_string())),
        };
        Ok(self.region_mask(regions))
    }
}

/// Regions carrying five landmarks each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LandmarkRegion {
    Face,
    LeftEye,
    RightEye,
    Nose,
    Mouth,
}

impl LandmarkRegion {
    pub const ALL: [LandmarkRegion; 5] = [
        LandmarkRegion::Face,
        LandmarkRegion::LeftEye,
        LandmarkRegion::RightEye,
        LandmarkRegion::Nose,
        LandmarkRegion::Mouth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LandmarkRegion::Face => "face",
            LandmarkRegion::LeftEye => "left_eye",
            LandmarkRegion::RightEye => "right_eye",
            LandmarkRegion::Nose => "nose",
            LandmarkRegion::Mouth => "mouth",
        }
    }

    /// Landmark indices: centroid, +x, −x, +y, −y endpoints.
    pub fn landmarks(self) -> std::ops::Range<usize> {
        let r = self as usize;
        r * POINTS_PER_REGION..(r + 1) * POINTS_PER_REGION
    }

    /// Landmark regions named by a selector (`eye` covers both eyes).
    pub fn parse_selector(name: &str) -> Result<Vec<LandmarkRegion>> {
        use LandmarkRegion::*;
        Ok(match name {
            "face" => vec![Face],
            "left_eye" => vec![LeftEye],
            "right_eye" => vec![RightEye],
            "eye" => vec![LeftEye, RightEye],
            "nose" => vec![Nose],
            "mouth" => vec![Mouth],
            other => return Err(Error::UnknownRegion(other.to_string())),
        })
    }
}

pub const POINTS_PER_REGION: usize = 5;
pub const LANDMARK_COUNT: usize = 25;

/// Pure color classes of the soft detector.
const PURE: usize = 7;
const C_SKIN: usize = 2;
const C_EYE: usize = 3;
const C_NOSE: usize = 4;
const C_LIPS: usize = 5;
const C_MOUTH: usize = 6;
/// Pairs of classes whose colors blend along shared edges.
const NEIGHBOURS: [(usize, usize); 9] = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (2, 5), (2, 6), (5, 6)];

/// The color segment between two class prototypes.
///
/// A pixel is scored by its distance to each segment. Its weight on the
/// segment is then split between the two classes by a smoothstep of the
/// projected mixing fraction. A pixel of exactly one class color therefore
/// carries no weight for any other class, and weights vary smoothly across
/// blurred edges.
#[derive(Debug, Clone, Copy)]
struct Segment {
    a: usize,
    b: usize,
    start: [f64; 3],
    dir: [f64; 3],
    len2: f64,
}

fn segments() -> Vec<Segment> {
    let c = |r: Region| CANONICAL[r.index()].color;
    let pure = [
        layout::BACKGROUND_COLOR,
        c(Region::Hair),
        c(Region::Skin),
        c(Region::LeftEye),
        c(Region::Nose),
        c(Region::Lips),
        c(Region::Mouth),
    ];
    NEIGHBOURS
        .iter()
        .map(|&(a, b)| {
            let dir = [0, 1, 2].map(|i| pure[b][i] - pure[a][i]);
            Segment {
                a,
                b,
                start: pure[a],
                dir,
                len2: dir.iter().map(|v| v * v).sum(),
            }
        })
        .collect()
}

/// Mixing fractions within this distance of either end count as pure, so a
/// slightly shaded background carries no weight for its neighbours.
const DEAD_ZONE: f64 = 0.15;

fn dead(t: f64) -> f64 {
    ((t - DEAD_ZONE) / (1.0 - 2.0 * DEAD_ZONE)).clamp(0.0, 1.0)
}

fn smoothstep(t: f64) -> f64 {
    let s = dead(t);
    s * s * (3.0 - 2.0 * s)
}

fn smoothstep_grad(t: f64) -> f64 {
    let s = dead(t);
    6.0 * s * (1.0 - s) / (1.0 - 2.0 * DEAD_ZONE)
}

/// Per-pixel segment probabilities and geometry, plus the class shares.
struct SoftColors {
    segs: usize,
    probs: Vec<f64>,
    dists: Vec<f64>,
    fracs: Vec<f64>,
    shares: Vec<[f64; PURE]>,
}

impl SoftColors {
    fn prob(&self, pixel: usize, class: usize) -> f64 {
        self.shares[pixel][class]
    }
}

fn project(seg: &Segment, px: &[f64]) -> (f64, [f64; 3]) {
    let raw = (0..3).map(|i| (px[i] - seg.start[i]) * seg.dir[i]).sum::<f64>() / seg.len2;
    let t = raw.clamp(0.0, 1.0);
    (t, [0, 1, 2].map(|i| px[i] - seg.start[i] - t * seg.dir[i]))
}

fn soft_colors(segs: &[Segment], tau: f64, x: &[f64]) -> SoftColors {
    let n = x.len() / 3;
    let k = segs.len();
    let mut probs = vec![0.0; n * k];
    let mut dists = vec![0.0; n * k];
    let mut fracs = vec![0.0; n * k];
    let mut shares = vec![[0.0; PURE]; n];
    for p in 0..n {
        let px = &x[3 * p..3 * p + 3];
        for (j, seg) in segs.iter().enumerate() {
            let (t, r) = project(seg, px);
            fracs[p * k + j] = t;
            dists[p * k + j] = (r.iter().map(|v| v * v).sum::<f64>() + 1e-6).sqrt();
        }
        let d = &dists[p * k..(p + 1) * k];
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let pr = &mut probs[p * k..(p + 1) * k];
        let mut total = 0.0;
        for (pj, dj) in pr.iter_mut().zip(d) {
            *pj = (-(dj - dmin) / tau).exp();
            total += *pj;
        }
        pr.iter_mut().for_each(|v| *v /= total);
        for (j, seg) in segs.iter().enumerate() {
            let g = smoothstep(fracs[p * k + j]);
            shares[p][seg.a] += pr[j] * (1.0 - g);
            shares[p][seg.b] += pr[j] * g;
        }
    }
    SoftColors {
        segs: k,
        probs,
        dists,
        fracs,
        shares,
    }
}

/// Pulls per-pixel cotangents on the class shares back to image values.
fn soft_colors_pullback(segs: &[Segment], tau: f64, x: &[f64], soft: &SoftColors, gshare: &[[f64; PURE]]) -> Vec<f64> {
    let k = soft.segs;
    let mut gx = vec![0.0; x.len()];
    let mut gprob = vec![0.0; k];
    for (p, g) in gshare.iter().enumerate() {
        let px = &x[3 * p..3 * p + 3];
        let pr = &soft.probs[p * k..(p + 1) * k];
        for (j, seg) in segs.iter().enumerate() {
            let t = soft.fracs[p * k + j];
            let gs = smoothstep(t);
            gprob[j] = g[seg.a] * (1.0 - gs) + g[seg.b] * gs;
            if t > 0.0 && t < 1.0 {
                let gt = pr[j] * (g[seg.b] - g[seg.a]) * smoothstep_grad(t) / seg.len2;
                for i in 0..3 {
                    gx[3 * p + i] += gt * seg.dir[i];
                }
            }
        }
        let mean: f64 = pr.iter().zip(&gprob).map(|(a, b)| a * b).sum();
        for (j, seg) in segs.iter().enumerate() {
            let gz = pr[j] * (gprob[j] - mean);
            if gz == 0.0 {
                continue;
            }
            // the residual is orthogonal to the segment, so only it moves d
            let (_, r) = project(seg, px);
            let gd = -gz / tau / soft.dists[p * k + j];
            for i in 0..3 {
                gx[3 * p + i] += gd * r[i];
            }
        }
    }
    gx
}

/// Width (px) of the soft left/right eye split around the face centroid.
const EYE_SPLIT: f64 = 0.5;
const COV_FLOOR: f64 = 1e-3;
const MIN_WEIGHT: f64 = 1e-9;

/// Zeroth, first and second soft moments of a weight map.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    w: f64,
    mx: f64,
    my: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl Moments {
    fn of(weights: &[f64], size: usize) -> Moments {
        let mut m = Moments::default();
        for (i, &w) in weights.iter().enumerate() {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            m.w += w;
            m.mx += w * x;
            m.my += w * y;
            m.sxx += w * x * x;
            m.sxy += w * x * y;
            m.syy += w * y * y;
        }
        m
    }

    /// `∂/∂weight(p)` given cotangents on the moments.
    fn pixel_grad(&self, i: usize, size: usize) -> f64 {
        let (x, y) = ((i % size) as f64, (i / size) as f64);
        self.w + self.mx * x + self.my * y + self.sxx * x * x + self.sxy * x * y + self.syy * y * y
    }
}

/// Centroid, regularized covariance and its square root `R`.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    mu: [f64; 2],
    c: [f64; 3],
    s: f64,
    t: f64,
    r: [[f64; 2]; 2],
}

impl Geometry {
    fn of(m: &Moments, region: LandmarkRegion) -> Result<Geometry> {
        if !(m.w >= MIN_WEIGHT) {
            return Err(Error::DegenerateLandmark(region.name()));
        }
        let mu = [m.mx / m.w, m.my / m.w];
        let c = [
            m.sxx / m.w - mu[0] * mu[0] + COV_FLOOR,
            m.sxy / m.w - mu[0] * mu[1],
            m.syy / m.w - mu[1] * mu[1] + COV_FLOOR,
        ];
        // closed-form square root of a 2×2 SPD matrix
        let s = (c[0] * c[2] - c[1] * c[1]).max(0.0).sqrt();
        let t = (c[0] + c[2] + 2.0 * s).sqrt();
        let r = [[(c[0] + s) / t, c[1] / t], [c[1] / t, (c[2] + s) / t]];
        Ok(Geometry { mu, c, s, t, r })
    }

    fn points(&self) -> [[f64; 2]; POINTS_PER_REGION] {
        let end = |col: usize, sign: f64| [self.mu[0] + sign * 2.0 * self.r[0][col], self.mu[1] + sign * 2.0 * self.r[1][col]];
        [self.mu, end(0, 1.0), end(0, -1.0), end(1, 1.0), end(1, -1.0)]
    }

    /// Cotangents on the five points (plus extra centroid cotangent) → moment cotangents.
    fn pullback(&self, m: &Moments, g: &[[f64; 2]; POINTS_PER_REGION], extra_mu: [f64; 2]) -> Moments {
        let mut gmu = extra_mu;
        for p in g {
            gmu[0] += p[0];
            gmu[1] += p[1];
        }
        let a = [
            [2.0 * (g[1][0] - g[2][0]), 2.0 * (g[3][0] - g[4][0])],
            [2.0 * (g[1][1] - g[2][1]), 2.0 * (g[3][1] - g[4][1])],
        ];
        let (t, s, c) = (self.t, self.s, self.c);
        let mut gc = [a[0][0] / t, (a[0][1] + a[1][0]) / t, a[1][1] / t];
        let mut gs = (a[0][0] + a[1][1]) / t;
        let gt = -(a[0][0] * self.r[0][0] + a[0][1] * self.r[0][1] + a[1][0] * self.r[1][0] + a[1][1] * self.r[1][1]) / t;
        let gtr = gt / (2.0 * t);
        gs += gt / t;
        gc[0] += gtr;
        gc[2] += gtr;
        if s > 0.0 {
            let gdet = gs / (2.0 * s);
            gc[0] += gdet * c[2];
            gc[2] += gdet * c[0];
            gc[1] -= 2.0 * gdet * c[1];
        }
        let w = m.w;
        let mu = self.mu;
        gmu[0] += -2.0 * mu[0] * gc[0] - mu[1] * gc[1];
        gmu[1] += -2.0 * mu[1] * gc[2] - mu[0] * gc[1];
        Moments {
            w: -(gc[0] * m.sxx + gc[1] * m.sxy + gc[2] * m.syy) / (w * w) - (gmu[0] * mu[0] + gmu[1] * mu[1]) / w,
            mx: gmu[0] / w,
            my: gmu[1] / w,
            sxx: gc[0] / w,
            sxy: gc[1] / w,
            syy: gc[2] / w,
        }
    }
}

/// Image → 2·25 landmark coordinates.
pub struct LandmarkDetector {
    size: usize,
    tau: f64,
    segs: Vec<Segment>,
    pre: GaussianBlur,
}

/// Pre-smoothing applied by the detector before color classification (px at 64×64).
const DETECTOR_BLUR: f64 = 0.85;

/// Window width (px at 64×64) of the second moment pass, per landmark region.
fn window_width(region: LandmarkRegion) -> f64 {
    match region {
        LandmarkRegion::Face => 20.0,
        LandmarkRegion::Mouth => 7.0,
        LandmarkRegion::LeftEye | LandmarkRegion::RightEye | LandmarkRegion::Nose => 6.0,
    }
}

/// Two-pass soft moments of one region: a plain centroid, then moments of the
/// weights under a Gaussian window around it. The window keeps stray weight
/// far from the region out of the second moments.
struct RegionPass {
    first: Moments,
    center: [f64; 2],
    sigma: f64,
    window: Vec<f64>,
    moments: Moments,
    geometry: Geometry,
}

impl RegionPass {
    fn run(raw: &[f64], size: usize, sigma: f64, region: LandmarkRegion) -> Result<RegionPass> {
        let first = Moments::of(raw, size);
        if !(first.w >= MIN_WEIGHT) {
            return Err(Error::DegenerateLandmark(region.name()));
        }
        let center = [first.mx / first.w, first.my / first.w];
        let window: Vec<f64> = (0..raw.len())
            .map(|i| {
                let (dx, dy) = ((i % size) as f64 - center[0], (i / size) as f64 - center[1]);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let weighted: Vec<f64> = raw.iter().zip(&window).map(|(r, w)| r * w).collect();
        let moments = Moments::of(&weighted, size);
        let geometry = Geometry::of(&moments, region)?;
        Ok(RegionPass {
            first,
            center,
            sigma,
            window,
            moments,
            geometry,
        })
    }

    /// Cotangent on the raw weights given cotangents on the windowed moments.
    fn pullback(&self, raw: &[f64], size: usize, g: &Moments) -> Vec<f64> {
        let mut graw = vec![0.0; raw.len()];
        let mut gc = [0.0; 2];
        let s2 = self.sigma * self.sigma;
        for (i, gr) in graw.iter_mut().enumerate() {
            let gw = g.pixel_grad(i, size);
            *gr = gw * self.window[i];
            let (dx, dy) = ((i % size) as f64 - self.center[0], (i / size) as f64 - self.center[1]);
            let k = gw * raw[i] * self.window[i] / s2;
            gc[0] += k * dx;
            gc[1] += k * dy;
        }
        for (i, gr) in graw.iter_mut().enumerate() {
            let (dx, dy) = ((i % size) as f64 - self.center[0], (i / size) as f64 - self.center[1]);
            *gr += (gc[0] * dx + gc[1] * dy) / self.first.w;
        }
        graw
    }
}

struct DetectorState {
    smoothed: Vec<f64>,
    soft: SoftColors,
    split: Vec<f64>,
    raw: Vec<Vec<f64>>,
    passes: Vec<RegionPass>,
    clamped: Vec<bool>,
    out: Vec<f64>,
}

impl LandmarkDetector {
    fn forward(&self, x: &[f64]) -> Result<DetectorState> {
        let n = self.size;
        let scale = n as f64 / layout::CANVAS;
        let smoothed = self.pre.apply(x, false);
        let soft = soft_colors(&self.segs, self.tau, &smoothed);
        let face_raw: Vec<f64> = (0..n * n).map(|i| soft.prob(i, C_SKIN)).collect();
        let face = RegionPass::run(&face_raw, n, window_width(LandmarkRegion::Face) * scale, LandmarkRegion::Face)?;
        let split: Vec<f64> = (0..n * n)
            .map(|i| sigmoid((face.geometry.mu[0] - (i % n) as f64) / EYE_SPLIT))
            .collect();
        let mut raw = vec![face_raw];
        let mut passes = vec![face];
        for r in &LandmarkRegion::ALL[1..] {
            let w: Vec<f64> = split
                .iter()
                .enumerate()
                .map(|(i, &sl)| match r {
                    LandmarkRegion::Face => unreachable!(),
                    LandmarkRegion::LeftEye => soft.prob(i, C_EYE) * sl,
                    LandmarkRegion::RightEye => soft.prob(i, C_EYE) * (1.0 - sl),
                    LandmarkRegion::Nose => soft.prob(i, C_NOSE),
                    LandmarkRegion::Mouth => soft.prob(i, C_LIPS) + soft.prob(i, C_MOUTH),
                })
                .collect();
            passes.push(RegionPass::run(&w, n, window_width(*r) * scale, *r)?);
            raw.push(w);
        }
        let hi = (n - 1) as f64;
        let mut out = Vec::with_capacity(2 * LANDMARK_COUNT);
        let mut clamped = Vec::with_capacity(2 * LANDMARK_COUNT);
        for pass in &passes {
            for p in pass.geometry.points() {
                for v in p {
                    clamped.push(!(0.0..=hi).contains(&v));
                    out.push(v.clamp(0.0, hi));
                }
            }
        }
        Ok(DetectorState {
            smoothed,
            soft,
            split,
            raw,
            passes,
            clamped,
            out,
        })
    }

    fn pullback(&self, st: &DetectorState, cot: &[f64]) -> Vec<f64> {
        let n = self.size;
        let npix = n * n;
        let point_cot = |k: usize| -> [[f64; 2]; POINTS_PER_REGION] {
            let mut g = [[0.0; 2]; POINTS_PER_REGION];
            for (j, gj) in g.iter_mut().enumerate() {
                for (c, v) in gj.iter_mut().enumerate() {
                    let i = 2 * (k * POINTS_PER_REGION + j) + c;
                    if !st.clamped[i] {
                        *v = cot[i];
                    }
                }
            }
            g
        };
        let graw: Vec<Vec<f64>> = (1..5)
            .map(|k| {
                let pass = &st.passes[k];
                let gm = pass.geometry.pullback(&pass.moments, &point_cot(k), [0.0, 0.0]);
                pass.pullback(&st.raw[k], n, &gm)
            })
            .collect();
        let mut gshare = vec![[0.0; PURE]; npix];
        let mut gcx = 0.0;
        for i in 0..npix {
            let eye = st.soft.prob(i, C_EYE);
            let sl = st.split[i];
            let (gl, gr) = (graw[0][i], graw[1][i]);
            gshare[i][C_EYE] = gl * sl + gr * (1.0 - sl);
            gcx += eye * (gl - gr) * sl * (1.0 - sl) / EYE_SPLIT;
            gshare[i][C_NOSE] = graw[2][i];
            gshare[i][C_LIPS] = graw[3][i];
            gshare[i][C_MOUTH] = graw[3][i];
        }
        let face = &st.passes[0];
        let gm = face.geometry.pullback(&face.moments, &point_cot(0), [gcx, 0.0]);
        for (g, v) in gshare.iter_mut().zip(face.pullback(&st.raw[0], n, &gm)) {
            g[C_SKIN] = v;
        }
        let g = soft_colors_pullback(&self.segs, self.tau, &st.smoothed, &st.soft, &gshare);
        self.pre.apply(&g, true)
    }
}

struct DetectorLin<'a> {
    det: &'a LandmarkDetector,
    state: DetectorState,
}

impl Linearization for DetectorLin<'_> {
    fn value(&self) -> &[f64] {
        &self.state.out
    }
    fn vjp(&self, cot: &[f64]) -> Result<Vec<f64>> {
        ensure_len("landmark cotangent", 2 * LANDMARK_COUNT, cot)?;
        Ok(self.det.pullback(&self.state, cot))
    }
}

impl DiffMap for LandmarkDetector {
    fn in_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn out_dim(&self) -> usize {
        2 * LANDMARK_COUNT
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("detector image", self.in_dim(), x)?;
        Ok(Box::new(DetectorLin {
            det: self,
            state: self.forward(x)?,
        }))
    }
}

/// `scale · Σ_p P(eye | x(p))`.
pub struct EyeArea {
    size: usize,
    tau: f64,
    scale: f64,
    segs: Vec<Segment>,
}

impl DiffMap for EyeArea {
    fn in_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn out_dim(&self) -> usize {
        1
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("eye area image", self.in_dim(), x)?;
        let soft = soft_colors(&self.segs, self.tau, x);
        let value = self.scale * (0..x.len() / 3).map(|i| soft.prob(i, C_EYE)).sum::<f64>();
        let x = x.to_vec();
        Ok(Lin::boxed(vec![value], move |c: &[f64]| {
            let mut g = [0.0; PURE];
            g[C_EYE] = self.scale * c[0];
            let gprob = vec![g; x.len() / 3];
            Ok(soft_colors_pullback(&self.segs, self.tau, &x, &soft, &gprob))
        }))
    }
}

/// Image → unit vector in ℝ¹⁶ from a fixed projection of windowed 4×4-pooled pixels.
pub struct IdentityEmbedder {
    size: usize,
    window: Vec<f64>,
    projection: Matrix,
}

pub const EMBED_DIM: usize = 16;
const POOL: usize = 4;

impl IdentityEmbedder {
    fn new(size: usize, seed: u64) -> Result<Self> {
        let scale = size as f64 / layout::CANVAS;
        let (cx, cy, sigma) = (32.0 * scale, 38.0 * scale, 14.0 * scale);
        let window: Vec<f64> = (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 - cx, (i / size) as f64 - cy);
                (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let features = (size / POOL) * (size / POOL) * 3;
        // Rows are made blind to uniform per-channel shifts of the image.
        let mut patterns = Vec::new();
        for c in 0..3 {
            let mut img = vec![0.0; 3 * size * size];
            for i in 0..size * size {
                img[3 * i + c] = 1.0;
            }
            patterns.push(pool(size, &window, &img));
        }
        let basis = orthonormalize(&Matrix::from_cols(features, &patterns)?, 1e-12)?.basis;
        let mut rng = stream(seed, "identity-embedder");
        let mut rows = Vec::with_capacity(EMBED_DIM);
        for _ in 0..EMBED_DIM {
            let mut row = normal_vec(&mut rng, features, 1.0 / (features as f64).sqrt());
            for b in basis.columns() {
                let d = crate::linalg::dot(&row, &b);
                row.iter_mut().zip(&b).for_each(|(r, bv)| *r -= d * bv);
            }
            rows.push(row);
        }
        Ok(IdentityEmbedder {
            size,
            window,
            projection: Matrix::from_rows(&rows)?,
        })
    }
}

fn pool(size: usize, window: &[f64], x: &[f64]) -> Vec<f64> {
    let cells = size / POOL;
    let mut f = vec![0.0; cells * cells * 3];
    let norm = 1.0 / (POOL * POOL) as f64;
    for y in 0..size {
        for xx in 0..size {
            let i = y * size + xx;
            let cell = (y / POOL) * cells + xx / POOL;
            for c in 0..3 {
                f[3 * cell + c] += norm * window[i] * x[3 * i + c];
            }
        }
    }
    f
}

impl DiffMap for IdentityEmbedder {
    fn in_dim(&self) -> usize {
        3 * self.size * self.size
    }
    fn out_dim(&self) -> usize {
        EMBED_DIM
    }
    fn linearize(&self, x: &[f64]) -> Result<Box<dyn Linearization + '_>> {
        ensure_len("embedder image", self.in_dim(), x)?;
        let y = self.projection.mat_vec(&pool(self.size, &self.window, x))?;
        let len = crate::linalg::norm(&y);
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::ZeroNormalization);
        }
        let out: Vec<f64> = y.iter().map(|v| v / len).collect();
        let unit = out.clone();
        Ok(Lin::boxed(out, move |c: &[f64]| {
            let along = crate::linalg::dot(&unit, c);
            let gy: Vec<f64> = c.iter().zip(&unit).map(|(ci, ui)| (ci - along * ui) / len).collect();
            let gf = self.projection.tr_mat_vec(&gy)?;
            let cells = self.size / POOL;
            let norm = 1.0 / (POOL * POOL) as f64;
            let mut gx = vec![0.0; self.in_dim()];
            for i in 0..self.size * self.size {
                let cell = ((i / self.size) / POOL) * cells + (i % self.size) / POOL;
                for ch in 0..3 {
                    gx[3 * i + ch] = norm * self.window[i] * gf[3 * cell + ch];
                }
            }
            Ok(gx)
        }))
    }
}

pub const CLASSIFIERS: [&str; 3] = ["lip_redness", "eye_area", "mouth_curvature"];
pub const LIP_REDNESS_SCALE: f64 = 10.0;
pub const EYE_AREA_SCALE: f64 = 0.05;
/// Lip window `[x0, x1] × [y0, y1]` at 64×64, inclusive.
pub const LIP_WINDOW: [usize; 4] = [27, 36, 50, 51];

/// The fixed analysis models paired with one generator configuration.
#[derive(Clone)]
pub struct AnalysisModels {
    size: usize,
    tau: f64,
    segs: Vec<Segment>,
    detector: Arc<LandmarkDetector>,
    embedder: Arc<IdentityEmbedder>,
}

impl AnalysisModels {
    pub fn new(params: &GeneratorParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let size = params.image_size;
        let segs = segments();
        Ok(AnalysisModels {
            size,
            tau: params.tau,
            segs: segs.clone(),
            detector: Arc::new(LandmarkDetector {
                size,
                tau: params.tau,
                segs: segs.clone(),
                pre: GaussianBlur::new(size, DETECTOR_BLUR * size as f64 / layout::CANVAS),
            }),
            embedder: Arc::new(IdentityEmbedder::new(size, seed)?),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn parse(&self, image: &Image) -> Parsing {
        let n = self.size;
        let scale = n as f64 / layout::CANVAS;
        let scores: Vec<([f64; 3], Option<([f64; 2], f64)>)> = ParseRegion::ALL
            .iter()
            .map(|r| match r.blob() {
                None => (layout::BACKGROUND_COLOR, None),
                Some(b) => {
                    let blob = &CANONICAL[b.index()];
                    let prior = r
                        .prior_width()
                        .map(|w| ([blob.center[0] * scale, blob.center[1] * scale], w * scale));
                    (blob.color, prior)
                }
            })
            .collect();
        let labels = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                let px = image.rgb(i);
                let mut best = (f64::NEG_INFINITY, ParseRegion::Background);
                for (r, (color, prior)) in ParseRegion::ALL.iter().zip(&scores) {
                    let d = (0..3).map(|c| (px[c] - color[c]).powi(2)).sum::<f64>().sqrt();
                    let mut s = -d / self.tau;
                    if let Some((pos, rho)) = prior {
                        s -= ((x - pos[0]).powi(2) + (y - pos[1]).powi(2)) / (2.0 * rho * rho);
                    }
                    if s > best.0 {
                        best = (s, *r);
                    }
                }
                best.1
            })
            .collect();
        Parsing {
            height: n,
            width: n,
            labels,
        }
    }

    pub fn detector(&self) -> MapRef {
        self.detector.clone()
    }

    pub fn embedder(&self) -> MapRef {
        self.embedder.clone()
    }

    pub fn detect(&self, image: &Image) -> Result<Vec<f64>> {
        self.detector.eval(&image.values)
    }

    pub fn embed(&self, image: &Image) -> Result<Vec<f64>> {
        self.embedder.eval(&image.values)
    }

    /// Scalar classifier over images.
    pub fn classifier(&self, name: &str) -> Result<MapRef> {
        let n = self.size;
        match name {
            "lip_redness" => {
                let s = n as f64 / layout::CANVAS;
                let [x0, x1, y0, y1] = LIP_WINDOW.map(|v| (v as f64 * s).round() as usize);
                let count = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
                let k = LIP_REDNESS_SCALE / count;
                let mut row = vec![0.0; 3 * n * n];
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let i = 3 * (y * n + x);
                        row[i] = k;
                        row[i + 1] = -0.5 * k;
                        row[i + 2] = -0.5 * k;
                    }
                }
                Ok(Arc::new(Affine::linear(Matrix::new(1, 3 * n * n, row)?)))
            }
            "eye_area" => Ok(Arc::new(EyeArea {
                size: n,
                tau: self.tau,
                scale: EYE_AREA_SCALE,
                segs: self.segs.clone(),
            })),
            "mouth_curvature" => {
                let base = 2 * LandmarkRegion::Mouth.landmarks().start;
                let mouth: MapRef = Arc::new(Select::new(self.detector(), (base..base + 10).collect())?);
                compose(Arc::new(mouth_curvature_map()), mouth)
            }
            other => Err(Error::UnknownClassifier(other.to_string())),
        }
    }
}

/// `(‖w‖² − ‖h‖²)/32` for the mouth's width vector `w` and height vector `h`.
fn mouth_curvature_map() -> impl DiffMap {
    const K: f64 = 1.0 / 32.0;
    crate::autodiff::FnMap {
        in_dim: 10,
        out_dim: 1,
        eval: |q: &[f64]| {
            let w = [q[2] - q[4], q[3] - q[5]];
            let h = [q[6] - q[8], q[7] - q[9]];
            vec![K * (w[0] * w[0] + w[1] * w[1] - h[0] * h[0] - h[1] * h[1])]
        },
        vjp: |q: &[f64], c: &[f64]| {
            let mut g = vec![0.0; 10];
            for i in 0..2 {
                let w = 2.0 * K * c[0] * (q[2 + i] - q[4 + i]);
                let h = -2.0 * K * c[0] * (q[6 + i] - q[8 + i]);
                g[2 + i] = w;
                g[4 + i] = -w;
                g[6 + i] = h;
                g[8 + i] = -h;
            }
            g
        },
    }
}
